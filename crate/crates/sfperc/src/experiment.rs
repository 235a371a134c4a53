//! Batch orchestration: many independent trials, each on its own random
//! stream, run in parallel but collected in fixed trial order so results are
//! identical regardless of worker count.
//!
//! Full decompositions of large trees are too heavy to keep per trial, so
//! every pipeline reduces a trial to a compact summary the statistical
//! checks and the command line both consume.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bp::{simulate_bp, BpConfig, BpError, StopRule};
use crate::percolation::{
    decompose, p_of_n, percolate, sorted_nonroot_sizes, ClusterDecomposition, PercError,
};
use crate::rng::trial_rng;
use crate::tree::{grow_timed_tree_until, grow_tree, GrowthParams, TreeError};

/// How many generation-1 cluster sizes a summary retains (birth order).
pub const GEN1_SUMMARY_LEN: usize = 8;

/// Vertex ceiling for time-stopped growth; far beyond any horizon used here,
/// it only guards against a pathological draw running away.
pub const TIMED_TREE_CAP: usize = 1 << 24;

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Percolation(#[from] PercError),
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error("at least one trial is required")]
    NoTrials,
}

/// Everything the statistical checks need from one percolated tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: u64,
    /// Tree size parameter (the tree has `n + 1` vertices).
    pub n: usize,
    /// Root-cluster share `C0 / n`.
    pub c0_over_n: f64,
    /// The `k` largest non-root clusters: size rescaled by `ln(n) / n`,
    /// paired with birth rank (1 = oldest cut).
    pub top: Vec<(f64, u32)>,
    /// Rescaled sizes of the first [`GEN1_SUMMARY_LEN`] generation-1
    /// clusters in birth order.
    pub gen1_scaled: Vec<f64>,
    /// Non-root clusters of generation at least 2.
    pub delta: u32,
    pub n_clusters_nonroot: u32,
    pub n_generation1: u32,
}

/// Reduces a decomposition to the summary retained per trial.
pub fn summarize(trial: u64, n: usize, k: usize, decomp: &ClusterDecomposition) -> TrialSummary {
    let scale = (n as f64).ln() / n as f64;
    let top = sorted_nonroot_sizes(decomp)
        .into_iter()
        .take(k)
        .map(|(size, rank)| (size as f64 * scale, rank))
        .collect();
    let gen1_scaled = decomp
        .clusters()
        .iter()
        .filter(|c| c.generation == 1)
        .take(GEN1_SUMMARY_LEN)
        .map(|c| c.size as f64 * scale)
        .collect();
    TrialSummary {
        trial,
        n,
        c0_over_n: decomp.clusters()[0].size as f64 / n as f64,
        top,
        gen1_scaled,
        delta: decomp.delta(),
        n_clusters_nonroot: decomp.n_clusters_nonroot(),
        n_generation1: decomp.n_generation1(),
    }
}

/// Grows, percolates at `p(n) = 1 - c / ln n`, and decomposes `trials`
/// independent trees of size `n`; trial `t` draws from stream `(seed, t)`.
pub fn percolation_rung(
    beta: f64,
    c: f64,
    n: usize,
    trials: usize,
    seed: u64,
    k: usize,
) -> Result<Vec<TrialSummary>, ExperimentError> {
    if trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    let params = GrowthParams::new(beta, n)?;
    let p = p_of_n(c, n)?;
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let tree = grow_tree(&params, &mut rng);
            let marks = percolate(&tree, p, &mut rng)?;
            let decomp = decompose(&tree, &marks, beta)?;
            Ok(summarize(t, n, k, &decomp))
        })
        .collect()
}

/// Root-cluster shares, one per trial.
pub fn c0_shares(summaries: &[TrialSummary]) -> Vec<f64> {
    summaries.iter().map(|s| s.c0_over_n).collect()
}

/// Per-trial descending rescaled sizes of the top non-root clusters, the
/// input shape of the spacing check.
pub fn spacing_inputs(summaries: &[TrialSummary]) -> Vec<Vec<f64>> {
    summaries
        .iter()
        .map(|s| s.top.iter().map(|&(x, _)| x).collect())
        .collect()
}

/// Per-trial birth ranks in descending size order, the input shape of the
/// age-ordering check.
pub fn top_ranks(summaries: &[TrialSummary]) -> Vec<Vec<u32>> {
    summaries
        .iter()
        .map(|s| s.top.iter().map(|&(_, r)| r).collect())
        .collect()
}

/// Rescaled size of the `i`-th oldest generation-1 cluster (1-based) from
/// every trial that has one.
pub fn gen1_scaled_column(summaries: &[TrialSummary], i: usize) -> Vec<f64> {
    assert!((1..=GEN1_SUMMARY_LEN).contains(&i));
    summaries
        .iter()
        .filter_map(|s| s.gen1_scaled.get(i - 1).copied())
        .collect()
}

/// Deep-generation excess on trees stopped at a doubly logarithmic time.
#[derive(Debug, Clone, Serialize)]
pub struct GapRung {
    pub n: usize,
    /// Growth horizon `ln(ln n) / (2 + beta) + r`.
    pub time: f64,
    pub p: f64,
    /// Per-trial count of non-root clusters deeper than generation 1.
    pub deltas: Vec<u32>,
}

impl GapRung {
    pub fn mean_delta(&self) -> f64 {
        self.deltas.iter().map(|&d| d as f64).sum::<f64>() / self.deltas.len() as f64
    }
}

/// Grows to continuous time `ln(ln n) / (2 + beta) + r`, percolates at
/// `p(n)`, and records how many clusters sit deeper than generation 1.
pub fn gap_rung(
    beta: f64,
    c: f64,
    n: usize,
    r: f64,
    trials: usize,
    seed: u64,
) -> Result<GapRung, ExperimentError> {
    if trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    let p = p_of_n(c, n)?;
    let time = (n as f64).ln().ln() / (2.0 + beta) + r;
    let deltas = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let timed = grow_timed_tree_until(beta, time, TIMED_TREE_CAP, &mut rng)?;
            let marks = percolate(&timed.tree, p, &mut rng)?;
            Ok(decompose(&timed.tree, &marks, beta)?.delta())
        })
        .collect::<Result<Vec<u32>, ExperimentError>>()?;
    Ok(GapRung {
        n,
        time,
        p,
        deltas,
    })
}

/// Tree weights `Y(t)` at a fixed continuous time, one per trial.
pub fn yule_weight_trials(
    beta: f64,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>, ExperimentError> {
    if trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let timed = grow_timed_tree_until(beta, t, TIMED_TREE_CAP, &mut rng)?;
            Ok(timed.weight_at(t, beta))
        })
        .collect()
}

/// Rescaled mutation birth times of the ancestral type.
#[derive(Debug, Clone, Serialize)]
pub struct BirthScalingRun {
    pub retention_p: f64,
    /// Simulation horizon `ln(1 / (1 - p)) / m1p + 3`.
    pub horizon: f64,
    /// Row `t` holds `(1 - p) / m1 * W_hat * exp(m1p * b_i)` for the
    /// mutations `i = 1, 2, ...` trial `t` produced; in the rare-mutation
    /// limit the `i`-th value approaches Gamma(i, 1).
    pub per_trial: Vec<Vec<f64>>,
}

impl BirthScalingRun {
    /// Values for the `i`-th mutation (1-based) from every trial that has one.
    pub fn column(&self, i: usize) -> Vec<f64> {
        assert!(i >= 1);
        self.per_trial
            .iter()
            .filter_map(|row| row.get(i - 1).copied())
            .collect()
    }
}

fn mutation_horizon(config: &BpConfig) -> f64 {
    (1.0 / (1.0 - config.retention_p())).ln() / config.m1p() + 3.0
}

/// Simulates the mutation process at retention `p` and rescales the first
/// `i_max` ancestral mutation times by the terminal martingale estimate
/// `W_hat = Z(T) e^{-m1 T}`.
pub fn birth_scaling_run(
    beta: f64,
    p: f64,
    i_max: usize,
    trials: usize,
    seed: u64,
) -> Result<BirthScalingRun, ExperimentError> {
    if trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    assert!(i_max >= 1);
    let config = BpConfig::yule_matched(beta, p)?;
    let horizon = mutation_horizon(&config);
    let stop = StopRule::at_time(horizon);
    let m1 = config.m1();
    let m1p = config.m1p();

    let per_trial: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let traj = simulate_bp(&config, &stop, &mut rng)?;
            let w_hat = traj.total_mass() * (-m1 * horizon).exp();
            let scaled = traj
                .gen1_birth_times()
                .into_iter()
                .take(i_max)
                .map(|b| (1.0 - p) / m1 * w_hat * (m1p * b).exp())
                .collect();
            Ok::<Vec<f64>, ExperimentError>(scaled)
        })
        .collect::<Result<_, _>>()?;

    Ok(BirthScalingRun {
        retention_p: p,
        horizon,
        per_trial,
    })
}

/// Terminal discounted masses of the first `i_max` mutant populations,
/// rescaled to the ratio-law variables `Z_i(T) e^{-m1p T} / ((1 - p) W_hat)`.
///
/// In the rare-mutation limit column `i - 1` approaches the law of
/// `U / S_i` with `U ~ Gamma((1 + beta) / m1, 1)` and `S_i ~ Gamma(i, 1)`
/// independent. `settle` is the time allowed past the expected first
/// mutation; later mutants need a few extra units for their own discounted
/// mass to stabilize, at a run cost exponential in the extension.
pub fn label_ratio_run(
    beta: f64,
    p: f64,
    i_max: usize,
    trials: usize,
    seed: u64,
    settle: f64,
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    if trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    assert!(i_max >= 1);
    assert!(settle.is_finite() && settle >= 0.0);
    let config = BpConfig::yule_matched(beta, p)?;
    let horizon = (1.0 / (1.0 - p)).ln() / config.m1p() + settle;
    let stop = StopRule::at_time(horizon);
    let m1 = config.m1();
    let m1p = config.m1p();

    let per_trial: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let traj = simulate_bp(&config, &stop, &mut rng)?;
            let w_hat = traj.total_mass() * (-m1 * horizon).exp();
            let ratios = traj
                .populations()
                .iter()
                .filter(|pop| pop.parent == Some(0))
                .take(i_max)
                .map(|pop| pop.mass * (-m1p * horizon).exp() / ((1.0 - p) * w_hat))
                .collect();
            Ok::<Vec<f64>, ExperimentError>(ratios)
        })
        .collect::<Result<_, _>>()?;

    let mut columns = vec![Vec::new(); i_max];
    for trial in &per_trial {
        for (i, &v) in trial.iter().enumerate() {
            columns[i].push(v);
        }
    }
    Ok(columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_se;

    #[test]
    fn rung_is_deterministic_and_consistent() {
        let a = percolation_rung(0.0, 0.5, 400, 20, 42, 3).unwrap();
        let b = percolation_rung(0.0, 0.5, 400, 20, 42, 3).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!(s.c0_over_n > 0.0 && s.c0_over_n <= (s.n as f64 + 1.0) / s.n as f64);
            assert!(s.top.windows(2).all(|w| w[0].0 >= w[1].0));
            assert!(s.top.len() <= 3);
            assert_eq!(s.delta, s.n_clusters_nonroot - s.n_generation1);
            assert!(s.gen1_scaled.len() <= GEN1_SUMMARY_LEN);
        }
        // Column accessors line up with the summaries.
        assert_eq!(c0_shares(&a)[0], a[0].c0_over_n);
        assert_eq!(spacing_inputs(&a)[0].len(), a[0].top.len());
        assert_eq!(top_ranks(&a)[0][0], a[0].top[0].1);
    }

    #[test]
    fn rung_is_worker_count_invariant() {
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool2 = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap();
        let a = pool1.install(|| percolation_rung(0.5, 0.4, 300, 16, 9, 2).unwrap());
        let b = pool2.install(|| percolation_rung(0.5, 0.4, 300, 16, 9, 2).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_trials_is_an_error() {
        assert_eq!(
            percolation_rung(0.0, 0.5, 100, 0, 0, 3).unwrap_err(),
            ExperimentError::NoTrials
        );
        assert_eq!(
            gap_rung(0.0, 0.5, 100, 1.0, 0, 0).unwrap_err(),
            ExperimentError::NoTrials
        );
        assert_eq!(
            yule_weight_trials(0.0, 1.0, 0, 0).unwrap_err(),
            ExperimentError::NoTrials
        );
    }

    #[test]
    fn gap_rung_reports_its_horizon() {
        let rung = gap_rung(0.0, std::f64::consts::LN_2, 10_000, 1.0, 30, 5).unwrap();
        let expect = (10_000f64).ln().ln() / 2.0 + 1.0;
        assert!((rung.time - expect).abs() < 1e-12);
        assert_eq!(rung.deltas.len(), 30);
        assert!(rung.mean_delta() >= 0.0);
    }

    #[test]
    fn yule_weights_track_the_growth_curve() {
        // E Y(t) = 2 (1 + beta) e^{(2 + beta) t}.
        let t = 2.0;
        let samples = yule_weight_trials(0.0, t, 2000, 11).unwrap();
        let (mean, se) = mean_se(&samples);
        let expect = 2.0 * (2.0 * t).exp();
        assert!(
            (mean - expect).abs() < 4.0 * se,
            "mean = {mean}, expect = {expect}, se = {se}"
        );
    }

    #[test]
    fn birth_scaling_columns_are_positive_and_monotone() {
        let run = birth_scaling_run(0.0, 0.9, 3, 60, 21).unwrap();
        assert_eq!(run.per_trial.len(), 60);
        let expect = (10.0f64).ln() / 1.9 + 3.0;
        assert!((run.horizon - expect).abs() < 1e-12);
        // Later mutations happen later, so the exponential rescaling keeps
        // per-trial monotonicity: column means must increase in i.
        let m1: f64 = mean_se(&run.column(1)).0;
        let m3: f64 = mean_se(&run.column(3)).0;
        assert!(m1 > 0.0 && m3 > m1, "means {m1} vs {m3}");
        assert!(run.column(1).len() >= run.column(3).len());
    }

    #[test]
    fn label_ratios_are_positive() {
        let cols = label_ratio_run(0.0, 0.9, 2, 50, 33, 3.0).unwrap();
        assert_eq!(cols.len(), 2);
        assert!(!cols[0].is_empty());
        for col in &cols {
            assert!(col.iter().all(|&x| x.is_finite() && x > 0.0));
        }
    }
}
