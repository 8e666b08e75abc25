//! Coplanarity cubics for linearly moving point quadruples and a
//! safeguarded root finder over one time step.

use nalgebra::Vector3;

fn triple(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> f64 {
    a.dot(&b.cross(&c))
}

/// Coefficients [c0, c1, c2, c3] of the scalar triple product
/// det[q1(s)-q0(s), q2(s)-q0(s), q3(s)-q0(s)] with qi(s) = p[i] + s*w[i].
/// The four points are coplanar exactly at the roots of this cubic.
pub fn coplanarity_cubic(p: [Vector3<f64>; 4], w: [Vector3<f64>; 4]) -> [f64; 4] {
    let a1 = p[1] - p[0];
    let a2 = p[2] - p[0];
    let a3 = p[3] - p[0];
    let b1 = w[1] - w[0];
    let b2 = w[2] - w[0];
    let b3 = w[3] - w[0];
    [
        triple(a1, a2, a3),
        triple(b1, a2, a3) + triple(a1, b2, a3) + triple(a1, a2, b3),
        triple(a1, b2, b3) + triple(b1, a2, b3) + triple(b1, b2, a3),
        triple(b1, b2, b3),
    ]
}

/// Expanded monic-style coefficients for a cubic with three real roots:
/// scale * (s - r0)(s - r1)(s - r2). Handy for planting known roots.
pub fn cubic_from_roots(scale: f64, roots: [f64; 3]) -> [f64; 4] {
    let [r0, r1, r2] = roots;
    [
        -scale * r0 * r1 * r2,
        scale * (r0 * r1 + r0 * r2 + r1 * r2),
        -scale * (r0 + r1 + r2),
        scale,
    ]
}

/// scale * (s - r)(s^2 + p s + q); with p^2 < 4q the only real root is r.
pub fn cubic_with_one_real_root(scale: f64, r: f64, p: f64, q: f64) -> [f64; 4] {
    [
        -scale * r * q,
        scale * (q - r * p),
        scale * (p - r),
        scale,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub enum CubicRoots {
    /// Sorted, deduplicated coplanarity instants within [0, dt].
    Roots(Vec<f64>),
    /// The polynomial vanishes identically (at the supplied coefficient
    /// scale): the quadruple stays coplanar for the whole step.
    AlwaysCoplanar,
}

#[derive(Debug, Clone, Copy)]
pub struct RootConfig {
    /// Residual tolerance, relative to the coefficient scale.
    pub root_tol: f64,
    /// Leading-coefficient threshold for demoting cubic -> quadratic ->
    /// linear, relative to the largest coefficient.
    pub degeneracy_tol: f64,
    /// Fixed Newton iteration count per bracketed root.
    pub newton_iters: u32,
}

impl Default for RootConfig {
    fn default() -> Self {
        RootConfig {
            root_tol: 1e-10,
            degeneracy_tol: 1e-12,
            newton_iters: 32,
        }
    }
}

/// Value and derivative of c0 + c1 x + c2 x^2 + c3 x^3 by Horner's scheme.
pub fn horner(c: &[f64; 4], x: f64) -> (f64, f64) {
    let p = ((c[3] * x + c[2]) * x + c[1]) * x + c[0];
    let dp = (3.0 * c[3] * x + 2.0 * c[2]) * x + c[1];
    (p, dp)
}

/// All real roots of the cubic inside the closed interval [0, dt].
///
/// `coeff_scale` is an optional external magnitude for the coefficients
/// (e.g. scene_length^3 for a coplanarity cubic); coefficients that are all
/// negligible against it collapse to `AlwaysCoplanar`. Pass 0.0 to treat
/// only the exactly-zero polynomial as degenerate.
///
/// Internally the problem is rescaled to the unit interval, split at the
/// analytic critical points into monotonic pieces, and each sign change is
/// refined by a fixed number of Newton steps that fall back to bisection
/// whenever an iterate leaves its bracket. Every reported root t satisfies
/// |p(t)| <= root_tol * max|coeff| * max(1, dt)^3.
pub fn cubic_roots_in_interval(
    coeffs: [f64; 4],
    dt: f64,
    cfg: &RootConfig,
    coeff_scale: f64,
) -> CubicRoots {
    assert!(dt > 0.0, "time step must be positive");
    // Normalized time x = s / dt on [0, 1].
    let c = [
        coeffs[0],
        coeffs[1] * dt,
        coeffs[2] * dt * dt,
        coeffs[3] * dt * dt * dt,
    ];
    let magnitude = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let reference = magnitude.max(coeff_scale);
    if magnitude <= cfg.degeneracy_tol * reference {
        return CubicRoots::AlwaysCoplanar;
    }

    let lead_tol = cfg.degeneracy_tol * magnitude;
    let res_tol = cfg.root_tol * magnitude;
    let slack = cfg.root_tol;

    let mut candidates: Vec<f64> = Vec::new();

    if c[3].abs() > lead_tol {
        // Monotonic pieces split at the critical points of the cubic.
        let mut cuts = vec![0.0];
        for xc in quadratic_roots(3.0 * c[3], 2.0 * c[2], c[1]) {
            if xc > 0.0 && xc < 1.0 {
                cuts.push(xc);
            }
        }
        cuts.push(1.0);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());

        for &x in &cuts {
            if horner(&c, x).0.abs() <= res_tol {
                candidates.push(x);
            }
        }
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let plo = horner(&c, lo).0;
            let phi = horner(&c, hi).0;
            if plo.abs() > res_tol && phi.abs() > res_tol && plo.signum() != phi.signum() {
                candidates.push(refine_bracket(&c, lo, hi, plo, cfg.newton_iters));
            }
        }
    } else if c[2].abs() > lead_tol {
        let roots = quadratic_roots(c[2], c[1], c[0]);
        if roots.is_empty() {
            // A tangency can sit just below the axis; accept the vertex if
            // the residual is inside tolerance.
            let xv = -c[1] / (2.0 * c[2]);
            if xv >= -slack && xv <= 1.0 + slack && horner(&c, xv).0.abs() <= res_tol {
                candidates.push(xv);
            }
        }
        for x in roots {
            if x >= -slack && x <= 1.0 + slack {
                candidates.push(x);
            }
        }
    } else if c[1].abs() > lead_tol {
        let x = -c[0] / c[1];
        if x >= -slack && x <= 1.0 + slack {
            candidates.push(x);
        }
    }
    // else: effectively a nonzero constant, no roots.

    candidates.retain(|&x| {
        let xc = x.clamp(0.0, 1.0);
        horner(&c, xc).0.abs() <= res_tol
    });
    let mut roots: Vec<f64> = candidates.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|b, a| (*b - *a).abs() <= 10.0 * cfg.root_tol);
    CubicRoots::Roots(roots.into_iter().map(|x| x * dt).collect())
}

/// Real roots of a x^2 + b x + c via the numerically stable split form.
/// Returns an empty vec for negative discriminants and a single root for
/// the (near-)linear case a == 0.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        if b == 0.0 {
            return vec![];
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let sq = disc.sqrt();
    if b == 0.0 {
        let r = (-c / a).max(0.0).sqrt();
        return if r == 0.0 { vec![0.0] } else { vec![-r, r] };
    }
    let q = -0.5 * (b + b.signum() * sq);
    let mut out = vec![q / a];
    if q != 0.0 {
        out.push(c / q);
    }
    out
}

/// Newton iteration on a bracketed sign change, with bisection whenever the
/// step leaves the bracket. Runs a fixed iteration count and returns the
/// iterate with the smallest residual, so late bisection steps cannot
/// overwrite an already-converged Newton result.
fn refine_bracket(c: &[f64; 4], lo: f64, hi: f64, plo: f64, iters: u32) -> f64 {
    let mut a = lo;
    let mut b = hi;
    let sign_a = plo.signum();
    let mut x = 0.5 * (a + b);
    let mut best = x;
    let mut best_abs = f64::INFINITY;
    for _ in 0..iters {
        let (p, dp) = horner(c, x);
        if p.abs() < best_abs {
            best_abs = p.abs();
            best = x;
        }
        if p == 0.0 {
            return x;
        }
        // Bracket updates preserve the endpoint signs, so sign_a is fixed.
        if p.signum() == sign_a {
            a = x;
        } else {
            b = x;
        }
        let next = x - p / dp;
        x = if dp != 0.0 && next > a && next < b {
            next
        } else {
            0.5 * (a + b)
        };
    }
    best
}
