//! Distribution of the Kolmogorov–Smirnov statistic.
//!
//! Two regimes: the exact finite-`n` distribution of `D_n` via the
//! Marsaglia–Tsang–Wang matrix method (used for small samples, where the
//! asymptotic formula is visibly off), and the asymptotic Kolmogorov tail
//! with the Stephens small-sample correction for everything else.

/// Sample sizes below this use the exact matrix method.
pub const EXACT_LIMIT: usize = 35;

/// Exact `P(D_n < d)` for the one-sample two-sided statistic.
///
/// Matrix method: with `k = ceil(n d)` and `h = k - n d`, build the
/// `(2k-1) x (2k-1)` matrix `H` of scaled binomial-tail entries; the answer is
/// `(n!/n^n) * (H^n)[k-1][k-1]`. Powers are taken with explicit rescaling so
/// the intermediate entries stay inside f64 range.
pub fn ks_cdf_exact(n: usize, d: f64) -> f64 {
    assert!(n >= 1, "need at least one sample");
    if d <= 0.5 / n as f64 {
        // D_n >= 1/(2n) always.
        return 0.0;
    }
    if d >= 1.0 {
        return 1.0;
    }

    let nd = n as f64 * d;
    let k = nd.ceil() as usize;
    let h = k as f64 - nd;
    let m = 2 * k - 1;

    let mut hm = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..m {
            if i + 1 >= j {
                hm[i * m + j] = 1.0;
            }
        }
    }
    for i in 0..m {
        hm[i * m] -= h.powi(i as i32 + 1);
        hm[(m - 1) * m + i] -= h.powi((m - i) as i32);
    }
    hm[(m - 1) * m] += if 2.0 * h - 1.0 > 0.0 {
        (2.0 * h - 1.0).powi(m as i32)
    } else {
        0.0
    };
    for i in 0..m {
        for j in 0..m {
            if i + 1 > j {
                for g in 1..=(i + 1 - j) {
                    hm[i * m + j] /= g as f64;
                }
            }
        }
    }

    let (power, mut exponent) = matrix_power(&hm, m, n);
    let mut s = power[(k - 1) * m + (k - 1)];
    for i in 1..=n {
        s *= i as f64 / n as f64;
        if s < 1e-140 {
            s *= 1e140;
            exponent -= 140;
        }
    }
    (s * 10f64.powi(exponent)).clamp(0.0, 1.0)
}

/// `a^p` for an `m x m` matrix with a base-10 exponent carried separately.
fn matrix_power(a: &[f64], m: usize, p: usize) -> (Vec<f64>, i32) {
    if p == 1 {
        return (a.to_vec(), 0);
    }
    let (half, mut exponent) = matrix_power(a, m, p / 2);
    let mut out = mat_mul(&half, &half, m);
    exponent *= 2;
    if p % 2 == 1 {
        out = mat_mul(&out, a, m);
    }
    let center = out[(m / 2) * m + (m / 2)];
    if center > 1e140 {
        for v in &mut out {
            *v *= 1e-140;
        }
        exponent += 140;
    }
    (out, exponent)
}

fn mat_mul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; m * m];
    for i in 0..m {
        for l in 0..m {
            let v = a[i * m + l];
            if v == 0.0 {
                continue;
            }
            for j in 0..m {
                c[i * m + j] += v * b[l * m + j];
            }
        }
    }
    c
}

/// Complement of the asymptotic Kolmogorov distribution,
/// `Q(z) = 2 * sum_{j>=1} (-1)^{j-1} exp(-2 j^2 z^2)`.
///
/// For small `z` the theta-inversion series converges faster; the crossover
/// at 1.18 keeps both branches at full f64 accuracy.
pub fn kolmogorov_complement(z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    let q = if z < 1.18 {
        let t = (-std::f64::consts::PI.powi(2) / (8.0 * z * z)).exp();
        let sum = t * (1.0 + t.powi(8) * (1.0 + t.powi(16) * (1.0 + t.powi(24))));
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / z * sum
    } else {
        let t = (-2.0 * z * z).exp();
        2.0 * (t - t.powi(4) + t.powi(9))
    };
    q.clamp(0.0, 1.0)
}

/// P-value of an observed one-sample statistic `d` at sample size `n`:
/// exact below [`EXACT_LIMIT`], otherwise the asymptotic tail at the
/// Stephens-corrected argument `(sqrt(n) + 0.12 + 0.11/sqrt(n)) * d`.
pub fn p_value(n: usize, d: f64) -> f64 {
    if n < EXACT_LIMIT {
        1.0 - ks_cdf_exact(n, d)
    } else {
        let root = (n as f64).sqrt();
        kolmogorov_complement((root + 0.12 + 0.11 / root) * d)
    }
}

/// P-value for a two-sample statistic via the effective sample size
/// `n m / (n + m)`. The exact matrix method does not apply to the two-sample
/// walk, so this always uses the corrected asymptotic tail.
pub fn p_value_two_sample(n: usize, m: usize, d: f64) -> f64 {
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let root = ne.sqrt();
    kolmogorov_complement((root + 0.12 + 0.11 / root) * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn exact_n1_is_linear() {
        // For one sample D_1 = max(U, 1-U), so P(D_1 < d) = 2d - 1 on [1/2, 1].
        for d in [0.55, 0.6, 0.75, 0.9, 0.99] {
            let got = ks_cdf_exact(1, d);
            assert!((got - (2.0 * d - 1.0)).abs() < 1e-12, "d = {d}, got {got}");
        }
        assert_eq!(ks_cdf_exact(1, 0.4), 0.0);
        assert_eq!(ks_cdf_exact(1, 1.0), 1.0);
    }

    #[test]
    fn exact_matches_tabulated_critical_values() {
        // Classical two-sided critical values: P(D_n >= d) = alpha.
        for (n, d, alpha) in [
            (10, 0.40925, 0.05),
            (10, 0.48893, 0.01),
            (20, 0.29408, 0.05),
            (30, 0.24170, 0.05),
        ] {
            let tail = 1.0 - ks_cdf_exact(n, d);
            assert!(
                (tail - alpha).abs() < 5e-4,
                "n = {n}, d = {d}: tail = {tail}"
            );
        }
    }

    #[test]
    fn exact_matches_monte_carlo() {
        // Independent oracle: simulate D_10 directly from sorted uniforms.
        let mut rng = crate::rng::trial_rng(1234, 0);
        let n = 10;
        let reps = 200_000;
        let ds: Vec<f64> = (0..reps)
            .map(|_| {
                let mut u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                u.sort_by(f64::total_cmp);
                let mut d = 0.0f64;
                for (i, &x) in u.iter().enumerate() {
                    d = d.max((i as f64 + 1.0) / n as f64 - x);
                    d = d.max(x - i as f64 / n as f64);
                }
                d
            })
            .collect();
        for q in [0.2, 0.3, 0.4, 0.5] {
            let frac = ds.iter().filter(|&&d| d < q).count() as f64 / reps as f64;
            let exact = ks_cdf_exact(n, q);
            // 5 sigma of a binomial proportion at 2e5 replications.
            let tol = 5.0 * (exact * (1.0 - exact) / reps as f64).sqrt() + 1e-4;
            assert!(
                (frac - exact).abs() < tol,
                "q = {q}: mc = {frac}, exact = {exact}"
            );
        }
    }

    #[test]
    fn exact_approaches_asymptotic_at_the_switch() {
        // At n = 34 the corrected asymptotic tail tracks the exact one to
        // about a percent mid-range and much closer out in the tail, so the
        // hand-over at EXACT_LIMIT never moves a verdict materially.
        let n = 34;
        for d in [0.15, 0.2, 0.25, 0.3] {
            let exact = 1.0 - ks_cdf_exact(n, d);
            let root = (n as f64).sqrt();
            let asym = kolmogorov_complement((root + 0.12 + 0.11 / root) * d);
            assert!(
                (exact - asym).abs() < 0.012,
                "d = {d}: exact {exact}, asym {asym}"
            );
        }
    }

    #[test]
    fn complement_reference_points() {
        // Q(0.8275...) ~ 0.5; classical fixed points of the Kolmogorov law.
        assert!((kolmogorov_complement(0.82757) - 0.5).abs() < 1e-4);
        assert!((kolmogorov_complement(1.2238) - 0.1).abs() < 1e-4);
        assert!((kolmogorov_complement(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_complement(1.6276) - 0.01).abs() < 1e-4);
        assert!(kolmogorov_complement(0.0) == 1.0);
        assert!(kolmogorov_complement(8.0) < 1e-15);
    }

    #[test]
    fn complement_is_continuous_at_branch_point() {
        // |dQ/dz| ~ 0.58 near 1.18, so the two evaluations legitimately
        // differ by ~1.2e-9 from the slope alone; anything beyond 1e-8
        // would mean the series branches disagree.
        let lo = kolmogorov_complement(1.18 - 1e-9);
        let hi = kolmogorov_complement(1.18 + 1e-9);
        assert!((lo - hi).abs() < 1e-8, "lo = {lo}, hi = {hi}");
    }
}
