//! Preferential-attachment tree growth.
//!
//! A tree on vertices `{0, ..., n}` is grown one vertex at a time: the start
//! is the single edge `0 - 1`, and the newcomer `j` attaches to an existing
//! vertex `i` with probability proportional to `degree(i) + beta`. The offset
//! `beta > -1` interpolates between uniform attachment (`beta` large) and pure
//! degree-proportional attachment (`beta = 0`).
//!
//! [`grow_timed_tree`] additionally embeds the growth in continuous time:
//! while the tree has `m + 1` vertices the next arrival waits an exponential
//! time with rate `2m + beta * (m + 1)`, which is exactly the total attachment
//! weight. Under this embedding the weight process is a pure-birth (Yule-type)
//! process with deterministic jumps `2 + beta`; see [`yule_value`].

use std::io::{self, Write};

use rand::Rng as _;
use rand_distr::Exp1;
use thiserror::Error;

use crate::rng::{side_channel, Rng};

/// Offset below which `beta` is considered to sit on the boundary `-1`.
pub const BETA_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    /// `beta` must be a finite real strictly greater than `-1` (with a small
    /// numerical guard band).
    #[error("beta = {0} is out of range (must be finite and > -1 + 1e-9)")]
    InvalidBeta(f64),
    /// Trees have at least one non-root vertex.
    #[error("n must be at least 1")]
    InvalidN,
    /// Vertex label outside `{0, ..., n}`.
    #[error("vertex {label} out of range (tree has vertices 0..={max})")]
    LabelOutOfRange { label: u32, max: u32 },
    /// A parent array that no attachment sequence can produce.
    #[error("invalid parent array: {0}")]
    InvalidParentArray(String),
    /// Tree sizes below 2 have no Yule weight.
    #[error("size {0} is below the minimal tree size 2")]
    SizeTooSmall(usize),
}

/// Parameters of one growth run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthParams {
    beta: f64,
    n: usize,
}

impl GrowthParams {
    /// Validates `beta > -1` (rejecting values within `1e-9` of the boundary,
    /// where attachment weights of leaves vanish) and `n >= 1`.
    pub fn new(beta: f64, n: usize) -> Result<Self, TreeError> {
        if !beta.is_finite() || beta <= -1.0 + BETA_MARGIN {
            return Err(TreeError::InvalidBeta(beta));
        }
        if n < 1 {
            return Err(TreeError::InvalidN);
        }
        Ok(Self { beta, n })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of non-root vertices; the grown tree has `n + 1` vertices.
    pub fn n(&self) -> usize {
        self.n
    }
}

/// A rooted tree on vertices `{0, ..., n}` in arrival order.
///
/// Storage is one `u32` parent per non-root vertex plus one `u32` degree per
/// vertex (8 bytes per vertex), so trees with ten million vertices stay well
/// under 100 MiB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    /// `parents[j - 1]` is the attachment vertex of vertex `j`, `j = 1..=n`.
    parents: Vec<u32>,
    /// `degrees[i]` is the degree of vertex `i`, `i = 0..=n`.
    degrees: Vec<u32>,
}

impl Tree {
    /// Builds a tree from a raw parent array (`parents[j - 1] < j` required,
    /// and vertex 1 must attach to vertex 0).
    pub fn from_parents(parents: Vec<u32>) -> Result<Self, TreeError> {
        if parents.is_empty() {
            return Err(TreeError::InvalidParentArray(
                "parent array is empty".into(),
            ));
        }
        if parents[0] != 0 {
            return Err(TreeError::InvalidParentArray(format!(
                "vertex 1 must attach to vertex 0, got {}",
                parents[0]
            )));
        }
        for (idx, &p) in parents.iter().enumerate() {
            let j = idx as u32 + 1;
            if p >= j {
                return Err(TreeError::InvalidParentArray(format!(
                    "vertex {j} attaches to {p}, which is not an earlier vertex"
                )));
            }
        }
        let mut degrees = vec![0u32; parents.len() + 1];
        for (idx, &p) in parents.iter().enumerate() {
            degrees[p as usize] += 1;
            degrees[idx + 1] += 1;
        }
        Ok(Self { parents, degrees })
    }

    /// Number of non-root vertices (= number of edges).
    pub fn n(&self) -> usize {
        self.parents.len()
    }

    /// Number of vertices, `n + 1`.
    pub fn num_vertices(&self) -> usize {
        self.parents.len() + 1
    }

    /// Attachment vertex of `j` (`1 <= j <= n`).
    pub fn parent(&self, j: u32) -> u32 {
        self.parents[j as usize - 1]
    }

    pub fn parents(&self) -> &[u32] {
        &self.parents
    }

    pub fn degree(&self, i: u32) -> u32 {
        self.degrees[i as usize]
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    /// Edges in label order: edge `j` connects `j` to its parent, `j = 1..=n`.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .map(|(idx, &p)| (idx as u32 + 1, p))
    }

    /// Golden-test serialization: line `j` holds the parent of vertex `j`.
    pub fn write_parents<W: Write>(&self, mut out: W) -> io::Result<()> {
        for &p in &self.parents {
            writeln!(out, "{p}")?;
        }
        Ok(())
    }
}

/// A tree together with the arrival time of every vertex.
///
/// `birth_time[0] = birth_time[1] = 0`; vertex `j >= 2` arrives at the `j`-th
/// jump of the embedded continuous-time chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedTree {
    pub tree: Tree,
    birth_times: Vec<f64>,
}

impl TimedTree {
    pub fn birth_time(&self, i: u32) -> f64 {
        self.birth_times[i as usize]
    }

    pub fn birth_times(&self) -> &[f64] {
        &self.birth_times
    }

    /// Arrival time of the last vertex, i.e. the time the tree reached its
    /// final size.
    pub fn final_time(&self) -> f64 {
        *self.birth_times.last().unwrap()
    }

    /// Number of vertices present at time `t` (vertices 0 and 1 are present
    /// from time 0 on).
    pub fn size_at(&self, t: f64) -> usize {
        debug_assert!(t >= 0.0);
        // birth_times is nondecreasing; count entries <= t.
        let count = self.birth_times.partition_point(|&b| b <= t);
        count.max(2)
    }

    /// Total attachment weight at time `t`; see [`yule_value`].
    pub fn weight_at(&self, t: f64, beta: f64) -> f64 {
        yule_value(self.size_at(t), beta).expect("size_at is always >= 2")
    }

    /// Serialization with a second column holding the birth time of vertex
    /// `j`, printed with 17 significant digits.
    pub fn write_parents_and_times<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (idx, &p) in self.tree.parents.iter().enumerate() {
            writeln!(out, "{p} {}", crate::cli::fmt_f64(self.birth_times[idx + 1]))?;
        }
        Ok(())
    }
}

/// Total attachment weight of a tree of the given size:
/// `2 * (size - 1) + beta * size`.
///
/// Consecutive sizes differ by exactly `2 + beta`, which is the jump size of
/// the embedded pure-birth process.
pub fn yule_value(size: usize, beta: f64) -> Result<f64, TreeError> {
    if size < 2 {
        return Err(TreeError::SizeTooSmall(size));
    }
    Ok(2.0 * (size as f64 - 1.0) + beta * size as f64)
}

/// Attachment probability of vertex `i` in `tree`:
/// `(degree(i) + beta) / (2m + beta * (m + 1))` for a tree on `{0, ..., m}`.
pub fn attach_prob(tree: &Tree, i: u32, beta: f64) -> Result<f64, TreeError> {
    let m = tree.n();
    if i as usize > m {
        return Err(TreeError::LabelOutOfRange {
            label: i,
            max: m as u32,
        });
    }
    let total = 2.0 * m as f64 + beta * (m as f64 + 1.0);
    Ok((tree.degree(i) as f64 + beta) / total)
}

/// Incremental growth state shared by the plain and the timed generator.
struct Growth {
    beta: f64,
    parents: Vec<u32>,
    degrees: Vec<u32>,
}

impl Growth {
    fn with_capacity(beta: f64, n: usize) -> Self {
        let mut parents = Vec::with_capacity(n);
        let mut degrees = Vec::with_capacity(n + 1);
        parents.push(0);
        degrees.extend_from_slice(&[1, 1]);
        Self {
            beta,
            parents,
            degrees,
        }
    }

    /// Current number of edges (`m` for a tree on `{0, ..., m}`).
    fn m(&self) -> usize {
        self.parents.len()
    }

    /// Total attachment weight `2m + beta (m + 1)`.
    fn total_weight(&self) -> f64 {
        let m = self.m() as f64;
        2.0 * m + self.beta * (m + 1.0)
    }

    /// Samples the attachment vertex for the next arrival.
    ///
    /// A uniformly random endpoint of a uniformly random edge is a vertex
    /// chosen with probability `degree / 2m`, so for `beta >= 0` mixing that
    /// with a uniform vertex (weight `beta` each) realizes the attachment law
    /// without any per-vertex weight structure. For `beta in (-1, 0)` the
    /// degree-proportional proposal is thinned by `(degree + beta) / degree`;
    /// the acceptance rate is at least `1 + beta` per round.
    fn sample_attachment(&self, rng: &mut Rng) -> u32 {
        let m = self.m();
        if self.beta >= 0.0 {
            let degree_part = 2.0 * m as f64;
            if rng.gen::<f64>() * self.total_weight() < degree_part {
                self.random_endpoint(rng)
            } else {
                rng.gen_range(0..=m as u32)
            }
        } else {
            loop {
                let v = self.random_endpoint(rng);
                let d = self.degrees[v as usize] as f64;
                if rng.gen::<f64>() * d < d + self.beta {
                    return v;
                }
            }
        }
    }

    /// Uniform endpoint of a uniform edge: vertex `i` with probability
    /// `degree(i) / 2m`. Edge `j` connects `j` and `parents[j - 1]`.
    fn random_endpoint(&self, rng: &mut Rng) -> u32 {
        let j = rng.gen_range(1..=self.m() as u32);
        if rng.gen::<bool>() {
            j
        } else {
            self.parents[j as usize - 1]
        }
    }

    fn attach(&mut self, v: u32) {
        self.degrees[v as usize] += 1;
        self.degrees.push(1);
        self.parents.push(v);
    }

    fn into_tree(self) -> Tree {
        Tree {
            parents: self.parents,
            degrees: self.degrees,
        }
    }
}

/// Grows the discrete chain to `n + 1` vertices.
pub fn grow_tree(params: &GrowthParams, rng: &mut Rng) -> Tree {
    let mut growth = Growth::with_capacity(params.beta, params.n);
    while growth.m() < params.n {
        let v = growth.sample_attachment(rng);
        growth.attach(v);
    }
    growth.into_tree()
}

/// Grows the continuous-time embedding to `n + 1` vertices.
///
/// Holding times come from a reserved side stream of `rng`, so the embedded
/// discrete chain consumes exactly the draws [`grow_tree`] would: with the
/// same generator state both functions produce bit-identical parent arrays.
pub fn grow_timed_tree(params: &GrowthParams, rng: &mut Rng) -> TimedTree {
    let mut clock = side_channel(rng);
    let mut growth = Growth::with_capacity(params.beta, params.n);
    let mut birth_times = Vec::with_capacity(params.n + 1);
    birth_times.extend_from_slice(&[0.0, 0.0]);
    let mut t = 0.0;
    while growth.m() < params.n {
        let holding: f64 = clock.sample::<f64, _>(Exp1) / growth.total_weight();
        t += holding;
        let v = growth.sample_attachment(rng);
        growth.attach(v);
        birth_times.push(t);
    }
    TimedTree {
        tree: growth.into_tree(),
        birth_times,
    }
}

/// Grows the continuous-time embedding until the next arrival would land
/// after `t_max` (or until a safety cap of `max_n` non-root vertices).
///
/// This is the right tool for observing the weight process at a fixed time:
/// the returned tree is exactly the population alive at `t_max`, with no
/// truncation bias from a size-based stop.
pub fn grow_timed_tree_until(
    beta: f64,
    t_max: f64,
    max_n: usize,
    rng: &mut Rng,
) -> Result<TimedTree, TreeError> {
    let params = GrowthParams::new(beta, max_n.max(1))?;
    if t_max.is_nan() || t_max < 0.0 {
        return Err(TreeError::InvalidParentArray(format!(
            "t_max = {t_max} must be nonnegative"
        )));
    }
    let mut clock = side_channel(rng);
    let mut growth = Growth::with_capacity(params.beta, 16);
    let mut birth_times = vec![0.0, 0.0];
    let mut t = 0.0;
    while growth.m() < max_n {
        let holding: f64 = clock.sample::<f64, _>(Exp1) / growth.total_weight();
        if t + holding > t_max {
            break;
        }
        t += holding;
        let v = growth.sample_attachment(rng);
        growth.attach(v);
        birth_times.push(t);
    }
    Ok(TimedTree {
        tree: growth.into_tree(),
        birth_times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;

    fn chain(parents: &[u32]) -> Tree {
        Tree::from_parents(parents.to_vec()).unwrap()
    }

    #[test]
    fn params_reject_bad_beta() {
        assert!(GrowthParams::new(-1.0, 5).is_err());
        assert!(GrowthParams::new(-1.0 + 1e-10, 5).is_err());
        assert!(GrowthParams::new(f64::NAN, 5).is_err());
        assert!(GrowthParams::new(f64::INFINITY, 5).is_err());
        assert!(GrowthParams::new(-0.999_999, 5).is_ok());
        assert!(GrowthParams::new(0.0, 0).is_err());
    }

    #[test]
    fn attach_prob_two_leaves() {
        // Tree 0-1: both endpoints have degree 1, so any beta gives 1/2.
        let t = chain(&[0]);
        for beta in [0.0, 1.0, -0.5, 10.0] {
            assert_eq!(attach_prob(&t, 0, beta).unwrap(), 0.5);
        }
    }

    #[test]
    fn attach_prob_star() {
        // Tree {0-1, 0-2} at beta = 0: center 1/2, leaves 1/4.
        let t = chain(&[0, 0]);
        assert_eq!(attach_prob(&t, 0, 0.0).unwrap(), 0.5);
        assert_eq!(attach_prob(&t, 1, 0.0).unwrap(), 0.25);
        assert_eq!(attach_prob(&t, 2, 0.0).unwrap(), 0.25);
    }

    #[test]
    fn attach_prob_beta_one_path() {
        // Tree {0-1, 0-2, 1-3} at beta = 1: vertex 1 has degree 2, total
        // weight 2*3 + 1*4 = 10.
        let t = chain(&[0, 0, 1]);
        assert_eq!(attach_prob(&t, 1, 1.0).unwrap(), 0.3);
        let sum: f64 = (0..4).map(|i| attach_prob(&t, i, 1.0).unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attach_prob_rejects_out_of_range() {
        let t = chain(&[0]);
        assert_eq!(
            attach_prob(&t, 2, 0.0),
            Err(TreeError::LabelOutOfRange { label: 2, max: 1 })
        );
    }

    #[test]
    fn from_parents_validates() {
        assert!(Tree::from_parents(vec![]).is_err());
        assert!(Tree::from_parents(vec![1]).is_err());
        assert!(Tree::from_parents(vec![0, 2]).is_err());
        assert!(Tree::from_parents(vec![0, 0, 3]).is_err());
        let t = Tree::from_parents(vec![0, 0, 1]).unwrap();
        assert_eq!(t.degrees(), &[2, 2, 1, 1]);
    }

    #[test]
    fn trivial_tree_needs_no_randomness() {
        let params = GrowthParams::new(0.7, 1).unwrap();
        let before = trial_rng(3, 0);
        let mut rng = before.clone();
        let t = grow_tree(&params, &mut rng);
        assert_eq!(t.parents(), &[0]);
        assert_eq!(rng, before, "n = 1 must not consume randomness");
    }

    #[test]
    fn growth_is_deterministic_per_stream() {
        let params = GrowthParams::new(0.5, 200).unwrap();
        let a = grow_tree(&params, &mut trial_rng(11, 4));
        let b = grow_tree(&params, &mut trial_rng(11, 4));
        let c = grow_tree(&params, &mut trial_rng(11, 5));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn degree_sum_is_twice_edge_count() {
        for (beta, n, trial) in [(0.0, 500, 0), (2.5, 500, 1), (-0.8, 300, 2)] {
            let params = GrowthParams::new(beta, n).unwrap();
            let t = grow_tree(&params, &mut trial_rng(1, trial));
            let sum: u64 = t.degrees().iter().map(|&d| d as u64).sum();
            assert_eq!(sum, 2 * n as u64);
        }
    }

    #[test]
    fn first_attachment_is_a_fair_coin() {
        // On the edge 0-1 both endpoints are exchangeable, so vertex 2 picks
        // its parent uniformly; check the frequency at beta = 0 and beta = 3.
        for (beta, trial_base) in [(0.0, 0u64), (3.0, 1_000_000)] {
            let params = GrowthParams::new(beta, 2).unwrap();
            let trials = 100_000u64;
            let mut zeros = 0u64;
            for t in 0..trials {
                let tree = grow_tree(&params, &mut trial_rng(42, trial_base + t));
                if tree.parent(2) == 0 {
                    zeros += 1;
                }
            }
            let freq = zeros as f64 / trials as f64;
            // 5 sigma at p = 1/2: 5 * 0.5 / sqrt(1e5) = 0.0079
            assert!((freq - 0.5).abs() < 0.008, "freq = {freq} at beta = {beta}");
        }
    }

    #[test]
    fn timed_tree_matches_plain_tree() {
        let params = GrowthParams::new(1.5, 400).unwrap();
        let plain = grow_tree(&params, &mut trial_rng(9, 2));
        let timed = grow_timed_tree(&params, &mut trial_rng(9, 2));
        assert_eq!(timed.tree, plain);
        let bt = timed.birth_times();
        assert_eq!(bt[0], 0.0);
        assert_eq!(bt[1], 0.0);
        assert!(bt.windows(2).all(|w| w[0] <= w[1]));
        assert!(timed.final_time() > 0.0);
    }

    #[test]
    fn first_holding_time_has_mean_half_at_beta_zero() {
        // From the two-vertex tree the arrival rate is 2*1 + 0*2 = 2.
        let params = GrowthParams::new(0.0, 2).unwrap();
        let trials = 100_000u64;
        let mut sum = 0.0;
        for t in 0..trials {
            let timed = grow_timed_tree(&params, &mut trial_rng(5, t));
            sum += timed.birth_time(2);
        }
        let mean = sum / trials as f64;
        // sd of Exp(2) is 1/2; 5 sigma over 1e5 trials is 0.0079.
        assert!((mean - 0.5).abs() < 0.008, "mean = {mean}");
    }

    #[test]
    fn yule_value_examples() {
        assert_eq!(yule_value(2, 0.0).unwrap(), 2.0);
        assert_eq!(yule_value(2, 1.0).unwrap(), 4.0);
        assert_eq!(yule_value(10, -0.5).unwrap(), 13.0);
        assert_eq!(yule_value(1, 0.0), Err(TreeError::SizeTooSmall(1)));
    }

    #[test]
    fn yule_jumps_are_constant() {
        for beta in [0.0, 1.0, 0.5, -0.25] {
            for size in 2..2000 {
                let jump = yule_value(size + 1, beta).unwrap() - yule_value(size, beta).unwrap();
                assert_eq!(jump, 2.0 + beta, "size {size}, beta {beta}");
            }
        }
    }

    #[test]
    fn size_at_counts_arrivals() {
        let params = GrowthParams::new(0.0, 50).unwrap();
        let timed = grow_timed_tree(&params, &mut trial_rng(8, 0));
        assert_eq!(timed.size_at(0.0), 2);
        assert_eq!(timed.size_at(timed.final_time()), 51);
        let t3 = timed.birth_time(3);
        assert_eq!(timed.size_at(t3), 4);
        assert_eq!(timed.size_at(t3 * (1.0 - 1e-12)), 3);
    }

    #[test]
    fn until_variant_truncates_consistently() {
        // Growing until a time t and truncating a full run at t must agree in
        // law; with the shared side channel they agree path by path as long as
        // the cap is not hit.
        let params = GrowthParams::new(0.5, 300).unwrap();
        let full = grow_timed_tree(&params, &mut trial_rng(13, 1));
        let t_cut = full.birth_time(150);
        let partial = grow_timed_tree_until(0.5, t_cut, 300, &mut trial_rng(13, 1)).unwrap();
        assert_eq!(partial.tree.num_vertices(), 151);
        assert_eq!(
            partial.tree.parents(),
            &full.tree.parents()[..150],
            "prefix of the jump chain"
        );
        assert_eq!(partial.birth_times(), &full.birth_times()[..151]);
    }

    #[test]
    fn until_variant_respects_cap() {
        let capped = grow_timed_tree_until(0.0, 1e9, 40, &mut trial_rng(2, 0)).unwrap();
        assert_eq!(capped.tree.n(), 40);
    }

    #[test]
    fn serialization_golden() {
        let params = GrowthParams::new(0.0, 5).unwrap();
        let tree = grow_tree(&params, &mut trial_rng(1, 0));
        let mut buf = Vec::new();
        tree.write_parents(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next(), Some("0"));
        // Every line is a bare integer smaller than its line number.
        for (idx, line) in text.lines().enumerate() {
            let p: u32 = line.parse().unwrap();
            assert!(p <= idx as u32);
        }
    }
}
