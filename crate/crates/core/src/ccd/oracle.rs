//! Sampling-based reference detector: static triangle-triangle
//! intersection evaluated on a dense time grid.
//!
//! Independent of the root-solving pipeline, so it can act as its oracle.
//! It under-detects contacts that exist only at isolated instants between
//! samples; the `margin` parameter (erode / inflate about each triangle's
//! centroid) turns that into a controlled tolerance band.

use nalgebra::Vector3;

use super::ContactScene;

type V3 = Vector3<f64>;

/// Signed-area orientation with a dead zone: 0 means "collinear within eps".
fn orient2d(a: [f64; 2], b: [f64; 2], c: [f64; 2], eps: f64) -> i8 {
    let v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if v > eps {
        1
    } else if v < -eps {
        -1
    } else {
        0
    }
}

fn bbox_overlap_1d(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64, eps: f64) -> bool {
    a_lo.min(a_hi) <= b_lo.max(b_hi) + eps && b_lo.min(b_hi) <= a_lo.max(a_hi) + eps
}

fn seg2d_intersect(p0: [f64; 2], p1: [f64; 2], q0: [f64; 2], q1: [f64; 2], eps: f64) -> bool {
    let len = |a: [f64; 2], b: [f64; 2]| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let eps_area = eps * (len(p0, p1) + len(q0, q1)).max(eps);
    let d1 = orient2d(q0, q1, p0, eps_area);
    let d2 = orient2d(q0, q1, p1, eps_area);
    let d3 = orient2d(p0, p1, q0, eps_area);
    let d4 = orient2d(p0, p1, q1, eps_area);
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    // Touching or collinear cases: a zero orientation plus bounding-box
    // overlap on both axes.
    for (d, a, b, p) in [(d1, q0, q1, p0), (d2, q0, q1, p1), (d3, p0, p1, q0), (d4, p0, p1, q1)] {
        if d == 0
            && bbox_overlap_1d(a[0], b[0], p[0], p[0], eps)
            && bbox_overlap_1d(a[1], b[1], p[1], p[1], eps)
        {
            return true;
        }
    }
    false
}

fn point_in_tri2d(p: [f64; 2], t: [[f64; 2]; 3], eps: f64) -> bool {
    let scale = t
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1.0);
    let eps_area = eps * scale;
    let d0 = orient2d(t[0], t[1], p, eps_area);
    let d1 = orient2d(t[1], t[2], p, eps_area);
    let d2 = orient2d(t[2], t[0], p, eps_area);
    let has_pos = d0 > 0 || d1 > 0 || d2 > 0;
    let has_neg = d0 < 0 || d1 < 0 || d2 < 0;
    !(has_pos && has_neg)
}

fn project2d(p: V3, drop_axis: usize) -> [f64; 2] {
    match drop_axis {
        0 => [p.y, p.z],
        1 => [p.x, p.z],
        _ => [p.x, p.y],
    }
}

fn coplanar_tri_tri(a: [V3; 3], b: [V3; 3], n: V3, eps: f64) -> bool {
    let drop = if n.x.abs() >= n.y.abs() && n.x.abs() >= n.z.abs() {
        0
    } else if n.y.abs() >= n.z.abs() {
        1
    } else {
        2
    };
    let a2 = [project2d(a[0], drop), project2d(a[1], drop), project2d(a[2], drop)];
    let b2 = [project2d(b[0], drop), project2d(b[1], drop), project2d(b[2], drop)];
    for i in 0..3 {
        for j in 0..3 {
            if seg2d_intersect(a2[i], a2[(i + 1) % 3], b2[j], b2[(j + 1) % 3], eps) {
                return true;
            }
        }
    }
    a2.iter().any(|&p| point_in_tri2d(p, b2, eps))
        || b2.iter().any(|&p| point_in_tri2d(p, a2, eps))
}

/// Signed distances of three points to a plane through `origin` with unit
/// normal `n`, flattened to exactly zero inside eps.
fn plane_dists(t: [V3; 3], origin: V3, n: V3, eps: f64) -> [f64; 3] {
    let mut d = [0.0; 3];
    for (k, p) in t.iter().enumerate() {
        let x = n.dot(&(p - origin));
        d[k] = if x.abs() <= eps { 0.0 } else { x };
    }
    d
}

/// Parametric footprint of a triangle on the intersection line (projection
/// onto `dir`): plane-crossing points of its edges plus on-plane vertices.
fn line_interval(t: [V3; 3], d: [f64; 3], dir: V3) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut any = false;
    for i in 0..3 {
        if d[i] == 0.0 {
            let x = dir.dot(&t[i]);
            lo = lo.min(x);
            hi = hi.max(x);
            any = true;
        }
        let j = (i + 1) % 3;
        if d[i] * d[j] < 0.0 {
            let f = d[i] / (d[i] - d[j]);
            let p = t[i] + f * (t[j] - t[i]);
            let x = dir.dot(&p);
            lo = lo.min(x);
            hi = hi.max(x);
            any = true;
        }
    }
    any.then_some((lo, hi))
}

/// Static triangle-triangle intersection (closed: shared points count).
/// `eps` is an absolute geometric tolerance in length units. Degenerate
/// (zero-normal) triangles report no intersection.
pub fn tri_tri_intersect(a: [V3; 3], b: [V3; 3], eps: f64) -> bool {
    let na = (a[1] - a[0]).cross(&(a[2] - a[0]));
    let nb = (b[1] - b[0]).cross(&(b[2] - b[0]));
    if na.norm() == 0.0 || nb.norm() == 0.0 {
        return false;
    }
    let nah = na / na.norm();
    let nbh = nb / nb.norm();

    let da = plane_dists(a, b[0], nbh, eps);
    if da.iter().all(|&x| x > 0.0) || da.iter().all(|&x| x < 0.0) {
        return false;
    }
    let db = plane_dists(b, a[0], nah, eps);
    if db.iter().all(|&x| x > 0.0) || db.iter().all(|&x| x < 0.0) {
        return false;
    }

    if da == [0.0; 3] {
        return coplanar_tri_tri(a, b, nbh, eps);
    }

    let dir = nah.cross(&nbh);
    if dir.norm() <= 1e-9 {
        // Parallel but not coplanar planes: the earlier sign tests would
        // have rejected unless everything sits inside eps; treat as the
        // coplanar case.
        return coplanar_tri_tri(a, b, nbh, eps);
    }
    let (Some((alo, ahi)), Some((blo, bhi))) = (line_interval(a, da, dir), line_interval(b, db, dir))
    else {
        return false;
    };
    let eps_line = eps * dir.norm();
    alo.max(blo) <= ahi.min(bhi) + eps_line
}

/// Moves each vertex of a triangle along the ray from its centroid:
/// positive margin inflates, negative erodes (clamped at the centroid).
pub fn morph_triangle(t: [V3; 3], margin: f64) -> [V3; 3] {
    if margin == 0.0 {
        return t;
    }
    let c = (t[0] + t[1] + t[2]) / 3.0;
    t.map(|p| {
        let r = p - c;
        let len = r.norm();
        if len == 0.0 {
            return p;
        }
        let shift = margin.max(-len);
        p + (shift / len) * r
    })
}

/// Dense-time reference detector. Evaluates static intersections at
/// `samples` uniformly spaced instants across [0, dt] (endpoints included)
/// and returns a per-triangle contact flag. `margin` erodes (< 0) or
/// inflates (> 0) every triangle before testing.
pub fn oracle_detect(scene: &ContactScene, samples: usize, margin: f64) -> Vec<bool> {
    assert!(samples >= 2, "need at least the two endpoint samples");
    let dt = scene.traj.dt;
    let times: Vec<f64> = (0..samples)
        .map(|k| dt * k as f64 / (samples - 1) as f64)
        .collect();
    oracle_detect_at_times(scene, &times, margin)
}

/// Same as `oracle_detect` on an explicit list of sample times. A single
/// end-of-step time makes this the static "did anything end up
/// intersecting" check.
pub fn oracle_detect_at_times(scene: &ContactScene, times: &[f64], margin: f64) -> Vec<bool> {
    let nt = scene.triangles.len();
    let mut flags = vec![false; nt];
    let eps = 1e-12 * scene.scale().max(1e-300);
    let pairs: Vec<(usize, usize)> = (0..nt)
        .flat_map(|i| ((i + 1)..nt).map(move |j| (i, j)))
        .filter(|&(i, j)| scene.admissible(i, j))
        .collect();
    for &s in times {
        if flags.iter().all(|&f| f) {
            break;
        }
        for &(i, j) in &pairs {
            if flags[i] && flags[j] {
                continue;
            }
            let at = morph_triangle(
                scene.triangles[i].map(|n| scene.traj.position(n, s)),
                margin,
            );
            let bt = morph_triangle(
                scene.triangles[j].map(|n| scene.traj.position(n, s)),
                margin,
            );
            if tri_tri_intersect(at, bt, eps) {
                flags[i] = true;
                flags[j] = true;
            }
        }
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccd::Trajectory;

    fn v(x: f64, y: f64, z: f64) -> V3 {
        V3::new(x, y, z)
    }

    const EPS: f64 = 1e-12;

    #[test]
    fn separated_triangles_do_not_intersect() {
        let a = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)];
        let b = [v(0.0, 0.0, 1.0), v(1.0, 0.0, 1.0), v(0.0, 1.0, 1.0)];
        assert!(!tri_tri_intersect(a, b, EPS));
    }

    #[test]
    fn edge_through_face_intersects() {
        let a = [v(-2.0, -2.0, 0.0), v(2.0, -2.0, 0.0), v(0.0, 2.0, 0.0)];
        let b = [v(0.0, 0.0, -1.0), v(0.0, 0.0, 1.0), v(3.0, 0.0, 1.0)];
        assert!(tri_tri_intersect(a, b, EPS));
        assert!(tri_tri_intersect(b, a, EPS));
    }

    #[test]
    fn vertex_touch_counts_as_intersection() {
        let a = [v(-1.0, -1.0, 0.0), v(1.0, -1.0, 0.0), v(0.0, 1.0, 0.0)];
        // Vertex of b exactly on a's surface.
        let b = [v(0.0, 0.0, 0.0), v(0.0, 0.0, 1.0), v(1.0, 0.0, 1.0)];
        assert!(tri_tri_intersect(a, b, EPS));
    }

    #[test]
    fn coplanar_overlap_and_miss() {
        let a = [v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(0.0, 2.0, 0.0)];
        let b = [v(0.5, 0.5, 0.0), v(1.5, 0.5, 0.0), v(0.5, 1.5, 0.0)];
        assert!(tri_tri_intersect(a, b, EPS), "overlapping coplanar");
        let c = [v(5.0, 5.0, 0.0), v(6.0, 5.0, 0.0), v(5.0, 6.0, 0.0)];
        assert!(!tri_tri_intersect(a, c, EPS), "disjoint coplanar");
        // Fully contained coplanar triangle has no edge crossings.
        let d = [v(0.2, 0.2, 0.0), v(0.6, 0.2, 0.0), v(0.2, 0.6, 0.0)];
        assert!(tri_tri_intersect(a, d, EPS), "contained coplanar");
    }

    #[test]
    fn morph_moves_vertices_radially() {
        let t = [v(0.0, 0.0, 0.0), v(3.0, 0.0, 0.0), v(0.0, 3.0, 0.0)];
        let shrunk = morph_triangle(t, -0.5);
        let grown = morph_triangle(t, 0.5);
        let c = (t[0] + t[1] + t[2]) / 3.0;
        for k in 0..3 {
            let r = (t[k] - c).norm();
            assert!(((shrunk[k] - c).norm() - (r - 0.5)).abs() < 1e-12);
            assert!(((grown[k] - c).norm() - (r + 0.5)).abs() < 1e-12);
        }
        // Erosion clamps at the centroid instead of inverting.
        let flat = morph_triangle(t, -100.0);
        for k in 0..3 {
            assert!((flat[k] - c).norm() < 1e-12);
        }
    }

    #[test]
    fn margin_splits_grazing_contact() {
        let a = [v(-2.0, -2.0, 0.0), v(2.0, -2.0, 0.0), v(0.0, 2.0, 0.0)];
        // Touches a's plane exactly at the origin vertex.
        let b = [v(0.0, 0.0, 0.0), v(0.5, 0.0, 1.0), v(0.0, 0.5, 1.0)];
        assert!(tri_tri_intersect(a, b, EPS));
        let b_shrunk = morph_triangle(b, -0.05);
        assert!(!tri_tri_intersect(a, b_shrunk, EPS), "eroded pair separates");
        let b_grown = morph_triangle(b, 0.05);
        assert!(tri_tri_intersect(a, b_grown, EPS), "inflated pair still hits");
    }

    #[test]
    fn dense_sampling_catches_transient_crossing() {
        let floor = Trajectory {
            r0: vec![v(-5.0, -5.0, 0.0), v(5.0, -5.0, 0.0), v(0.0, 5.0, 0.0)],
            v: vec![V3::zeros(); 3],
            dt: 1.0,
        };
        let bullet = Trajectory {
            r0: vec![v(-0.2, -0.2, 1.0), v(0.2, -0.2, 1.0), v(0.0, 0.2, 1.0)],
            v: vec![v(0.0, 0.0, -2.0); 3],
            dt: 1.0,
        };
        let scene =
            ContactScene::two_body(&floor, &[[0, 1, 2]], &bullet, &[[0, 1, 2]]).unwrap();
        let flags = oracle_detect(&scene, 101, 0.0);
        assert_eq!(flags, vec![true, true]);
        // End-time-only check misses the tunneling pair.
        let flags = oracle_detect_at_times(&scene, &[1.0], 0.0);
        assert_eq!(flags, vec![false, false]);
    }
}
