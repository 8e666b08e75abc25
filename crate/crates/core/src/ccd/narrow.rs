//! Narrow-phase sufficiency tests and penalty responses for
//! vertex-face and edge-edge encounters.

use nalgebra::Vector3;

type V3 = Vector3<f64>;

/// Barycentric containment of a coplanar vertex in a triangle, with a small
/// tolerance band so points on edges and corners count as inside.
/// A face with area below `area_tol` cannot contain anything.
pub fn vf_sufficiency(v: V3, f: [V3; 3], containment_tol: f64, area_tol: f64) -> bool {
    let e1 = f[1] - f[0];
    let e2 = f[2] - f[0];
    let d = v - f[0];
    let n = e1.cross(&e2);
    let nn = n.norm_squared();
    if nn <= (2.0 * area_tol).powi(2) {
        return false;
    }
    let l1 = d.cross(&e2).dot(&n) / nn;
    let l2 = e1.cross(&d).dot(&n) / nn;
    let l0 = 1.0 - l1 - l2;
    l0 >= -containment_tol && l1 >= -containment_tol && l2 >= -containment_tol
}

/// True when the directions of the two segments are parallel to within
/// `parallel_tol` (a bound on the sine of the angle between them).
fn directions_parallel(da: V3, db: V3, parallel_tol: f64) -> bool {
    let cross = da.cross(&db).norm_squared();
    cross <= parallel_tol * parallel_tol * da.norm_squared() * db.norm_squared()
}

/// Coplanar segment intersection with both line parameters required inside
/// [0, 1] (tolerance-banded). Parallel and collinear pairs return false:
/// genuinely crossing geometry in those configurations is caught by the
/// vertex-face tests instead, and treating collinear contact as edge-edge
/// produces spurious hits.
pub fn ee_sufficiency(
    a0: V3,
    a1: V3,
    b0: V3,
    b1: V3,
    containment_tol: f64,
    parallel_tol: f64,
) -> bool {
    let da = a1 - a0;
    let db = b1 - b0;
    if da.norm_squared() == 0.0 || db.norm_squared() == 0.0 {
        return false;
    }
    if directions_parallel(da, db, parallel_tol) {
        return false;
    }
    let r = b0 - a0;
    let n = da.cross(&db);
    let nn = n.norm_squared();
    let u = r.cross(&db).dot(&n) / nn;
    let w = r.cross(&da).dot(&n) / nn;
    let lo = -containment_tol;
    let hi = 1.0 + containment_tol;
    u >= lo && u <= hi && w >= lo && w <= hi
}

/// The historical segment test without the collinearity guard: each
/// segment's endpoints must lie on opposite sides (non-strictly) of the
/// other segment's line. Collinear configurations make every side test
/// vanish and therefore report an intersection even for disjoint segments.
pub fn ee_sufficiency_unmodified(a0: V3, a1: V3, b0: V3, b1: V3, parallel_tol: f64) -> bool {
    let da = a1 - a0;
    let db = b1 - b0;
    if da.norm_squared() == 0.0 || db.norm_squared() == 0.0 {
        return false;
    }
    let r = b0 - a0;
    if directions_parallel(da, db, parallel_tol) {
        // Side tests degenerate; segments meet iff the supporting lines
        // coincide.
        let off = r.cross(&da).norm_squared();
        return off <= parallel_tol * parallel_tol * r.norm_squared() * da.norm_squared()
            || r.norm_squared() == 0.0;
    }
    let n = da.cross(&db);
    let side_b0 = da.cross(&(b0 - a0)).dot(&n);
    let side_b1 = da.cross(&(b1 - a0)).dot(&n);
    let side_a0 = db.cross(&(a0 - b0)).dot(&n);
    let side_a1 = db.cross(&(a1 - b0)).dot(&n);
    side_b0 * side_b1 <= 0.0 && side_a0 * side_a1 <= 0.0
}

/// Orthogonal distance from a vertex to the supporting plane of a face.
/// Returns (0, true) when the face is degenerate at this configuration.
pub fn vf_response(v: V3, f: [V3; 3], area_tol: f64) -> (f64, bool) {
    let n = (f[1] - f[0]).cross(&(f[2] - f[0]));
    let norm = n.norm();
    if norm <= 2.0 * area_tol {
        return (0.0, true);
    }
    (((v - f[0]).dot(&n) / norm).abs(), false)
}

/// Distance between the two segment midpoints.
pub fn ee_response(a0: V3, a1: V3, b0: V3, b1: V3) -> f64 {
    (0.5 * (a0 + a1) - 0.5 * (b0 + b1)).norm()
}

/// Gradient of `vf_response` with respect to [v, f0, f1, f2].
/// None when the face is degenerate (the response is clamped to zero there).
pub fn vf_response_grad(v: V3, f: [V3; 3], area_tol: f64) -> Option<[V3; 4]> {
    let e1 = f[1] - f[0];
    let e2 = f[2] - f[0];
    let d = v - f[0];
    let n = e1.cross(&e2);
    let norm = n.norm();
    if norm <= 2.0 * area_tol {
        return None;
    }
    let nh = n / norm;
    let dn = d.dot(&n);
    let sg = if dn >= 0.0 { 1.0 } else { -1.0 };
    let rho = (dn / norm).abs();

    // rho = sg * (d . n) / |n|; d depends on v and f0, n on f0, f1, f2.
    // dD/de1 = e2 x d, dD/de2 = d x e1 (triple-product cyclic derivative);
    // dN/de1 = e2 x nh, dN/de2 = nh x e1.
    let dd_e1 = e2.cross(&d);
    let dd_e2 = d.cross(&e1);
    let dn_e1 = e2.cross(&nh);
    let dn_e2 = nh.cross(&e1);

    let g_v = sg * nh;
    let g_f1 = (sg / norm) * dd_e1 - (rho / norm) * dn_e1;
    let g_f2 = (sg / norm) * dd_e2 - (rho / norm) * dn_e2;
    let g_f0 = (sg / norm) * (-n - dd_e1 - dd_e2) - (rho / norm) * (-dn_e1 - dn_e2);
    Some([g_v, g_f0, g_f1, g_f2])
}

/// Gradient of `ee_response` with respect to [a0, a1, b0, b1]; zero at the
/// nondifferentiable coincident-midpoint point.
pub fn ee_response_grad(a0: V3, a1: V3, b0: V3, b1: V3) -> [V3; 4] {
    let delta = 0.5 * (a0 + a1) - 0.5 * (b0 + b1);
    let rho = delta.norm();
    if rho == 0.0 {
        return [V3::zeros(); 4];
    }
    let g = delta / (2.0 * rho);
    [g, g, -g, -g]
}
