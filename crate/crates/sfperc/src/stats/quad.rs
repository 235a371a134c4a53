//! Adaptive Simpson quadrature for the reference-law CDFs.

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Plain recursive Simpson with Richardson acceptance; the integrands used
/// here (gamma densities times smooth CDFs) are smooth and the recursion
/// stays shallow. The depth cap is a safety net, not a tuning knob.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let got = adaptive_simpson(&|x| x * x * x, 0.0, 2.0, 1e-12);
        assert!((got - 4.0).abs() < 1e-10);
    }

    #[test]
    fn exponential_tail() {
        let got = adaptive_simpson(&|x: f64| (-x).exp(), 0.0, 40.0, 1e-10);
        assert!((got - 1.0).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn oscillatory_integrand() {
        let got = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-10);
        assert!((got - 2.0).abs() < 1e-9);
    }
}
