//! Real roots of polynomials up to degree three, in closed form.

use std::f64::consts::PI;

/// Real roots of `a x^3 + b x^2 + c x + d`, ascending, with repeated roots
/// reported once. Falls back to the quadratic and linear formulas when the
/// leading coefficients vanish. Returns an empty vector for a constant.
pub fn real_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    if a == 0.0 {
        return quadratic_roots(b, c, d);
    }
    // Monic form x^3 + p x^2 + q x + r.
    let (p, q, r) = (b / a, c / a, d / a);
    if !(p.is_finite() && q.is_finite() && r.is_finite()) {
        return Vec::new();
    }
    // Depressed form t^3 + pp t + qq with x = t - p/3.
    let shift = p / 3.0;
    let pp = q - p * p / 3.0;
    let qq = 2.0 * p * p * p / 27.0 - p * q / 3.0 + r;
    let disc = (qq / 2.0).powi(2) + (pp / 3.0).powi(3);

    let mut roots = if pp == 0.0 {
        vec![(-qq).cbrt()]
    } else if disc > 0.0 {
        // One real root. Pick the cube-root branch that avoids cancellation.
        let sq = disc.sqrt();
        let u = (-qq / 2.0 - qq.signum() * sq).cbrt();
        let t = if u == 0.0 { 0.0 } else { u - pp / (3.0 * u) };
        vec![t]
    } else if disc == 0.0 {
        vec![3.0 * qq / pp, -3.0 * qq / (2.0 * pp)]
    } else {
        let m = 2.0 * (-pp / 3.0).sqrt();
        let arg = (3.0 * qq / (pp * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (phi - 2.0 * PI * k as f64 / 3.0).cos())
            .collect()
    };
    for t in &mut roots {
        *t -= shift;
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    roots
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { Vec::new() } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    if disc == 0.0 {
        return vec![-b / (2.0 * a)];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let q = if q == 0.0 { -0.5 * disc.sqrt() } else { q };
    let mut roots = vec![q / a, c / q];
    roots.sort_by(f64::total_cmp);
    roots
}
