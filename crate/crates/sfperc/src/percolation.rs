//! Bernoulli bond percolation on a grown tree and its cluster decomposition.
//!
//! Every edge keeps an independent uniform mark; edge `j` stays intact when
//! its mark is below the retention probability `p`. In the supercritical
//! regime studied here `p` is tied to the target size through
//! [`p_of_n`]: `p(n) = 1 - c / ln n`.
//!
//! Cutting an edge splits it at the midpoint: both endpoints keep their
//! degree, and each side of the cut carries a dangling *half-edge*. A cluster
//! therefore has weight `2 * (size - 1) + half_edges + beta * size`, and the
//! weights of all clusters add up to the weight of the unpercolated tree.

use std::io::{self, Write};

use rand::Rng as _;
use thiserror::Error;

use crate::rng::Rng;
use crate::tree::Tree;

#[derive(Debug, Error, PartialEq)]
pub enum PercError {
    /// `1 - c / ln n` is only a probability when `ln n > c`.
    #[error("supercritical retention undefined: ln({n}) = {log_n:.4} <= c = {c}")]
    SupercriticalRange { c: f64, n: usize, log_n: f64 },
    #[error("c must be a positive real, got {0}")]
    InvalidC(f64),
    #[error("n must be at least 2, got {0}")]
    InvalidN(usize),
    #[error("retention probability {0} is outside [0, 1]")]
    InvalidP(f64),
    #[error("mark array has length {got}, tree has {expected} edges")]
    MarkLengthMismatch { expected: usize, got: usize },
}

/// Retention probability together with the supercriticality constant that
/// produced it (when it was derived from a target size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercolationParams {
    p: f64,
    c: Option<f64>,
}

impl PercolationParams {
    /// Derives `p = 1 - c / ln n`.
    pub fn from_c(c: f64, n: usize) -> Result<Self, PercError> {
        Ok(Self {
            p: p_of_n(c, n)?,
            c: Some(c),
        })
    }

    /// Uses an explicitly chosen retention probability in `(0, 1)`.
    pub fn explicit(p: f64) -> Result<Self, PercError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(PercError::InvalidP(p));
        }
        Ok(Self { p, c: None })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn c(&self) -> Option<f64> {
        self.c
    }
}

/// Supercritical retention probability `1 - c / ln n`.
pub fn p_of_n(c: f64, n: usize) -> Result<f64, PercError> {
    if !c.is_finite() || c <= 0.0 {
        return Err(PercError::InvalidC(c));
    }
    if n < 2 {
        return Err(PercError::InvalidN(n));
    }
    let log_n = (n as f64).ln();
    if log_n <= c {
        return Err(PercError::SupercriticalRange { c, n, log_n });
    }
    Ok(1.0 - c / log_n)
}

/// Draws one uniform per edge in label order; entry `j - 1` is `true` when
/// edge `j` stays intact (probability exactly `p`).
pub fn percolate(tree: &Tree, p: f64, rng: &mut Rng) -> Result<Vec<bool>, PercError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(PercError::InvalidP(p));
    }
    Ok((0..tree.n()).map(|_| rng.gen::<f64>() < p).collect())
}

/// One connected component of the percolated forest.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Number of vertices.
    pub size: u64,
    /// Dangling half-edges left by cut edges incident to the cluster.
    pub half_edges: u32,
    /// `2 * (size - 1) + half_edges + beta * size`.
    pub y_value: f64,
    /// 0 for the cluster of vertex 0; cluster `i >= 1` was created by the
    /// `i`-th cut edge in label order.
    pub birth_rank: u32,
    /// Number of cut edges on the path from `root_vertex` to vertex 0.
    pub generation: u32,
    /// Smallest-label vertex, i.e. the lower endpoint of the cut edge that
    /// created the cluster (vertex 0 for the root cluster).
    pub root_vertex: u32,
}

/// Full cluster decomposition of one percolation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDecomposition {
    /// Vertex -> index into `clusters`; indices coincide with birth ranks.
    cluster_of: Vec<u32>,
    clusters: Vec<Cluster>,
    n_generation1: u32,
}

impl ClusterDecomposition {
    /// Clusters in birth order (`clusters()[i].birth_rank == i`).
    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster_of(&self, vertex: u32) -> u32 {
        self.cluster_of[vertex as usize]
    }

    pub fn cluster_assignment(&self) -> &[u32] {
        &self.cluster_of
    }

    /// Number of non-root clusters (equals the number of cut edges).
    pub fn n_clusters_nonroot(&self) -> u32 {
        self.clusters.len() as u32 - 1
    }

    /// Number of clusters at unit distance from the root cluster.
    pub fn n_generation1(&self) -> u32 {
        self.n_generation1
    }

    /// Clusters separated from the root cluster by two or more cuts.
    pub fn delta(&self) -> u32 {
        self.n_clusters_nonroot() - self.n_generation1
    }
}

/// Decomposes a percolated tree into clusters.
///
/// One pass in label order suffices: the parent of `j` has a smaller label,
/// so its cluster assignment and generation are already final when `j` is
/// processed — the union-find this implements never has to merge.
pub fn decompose(
    tree: &Tree,
    marks: &[bool],
    beta: f64,
) -> Result<ClusterDecomposition, PercError> {
    let n = tree.n();
    if marks.len() != n {
        return Err(PercError::MarkLengthMismatch {
            expected: n,
            got: marks.len(),
        });
    }

    let mut cluster_of = Vec::with_capacity(n + 1);
    cluster_of.push(0u32);
    let mut clusters = vec![Cluster {
        size: 1,
        half_edges: 0,
        y_value: 0.0,
        birth_rank: 0,
        generation: 0,
        root_vertex: 0,
    }];

    for j in 1..=n {
        let parent_cluster = cluster_of[tree.parent(j as u32) as usize];
        if marks[j - 1] {
            clusters[parent_cluster as usize].size += 1;
            cluster_of.push(parent_cluster);
        } else {
            let rank = clusters.len() as u32;
            let parent = &mut clusters[parent_cluster as usize];
            parent.half_edges += 1;
            let generation = parent.generation + 1;
            clusters.push(Cluster {
                size: 1,
                half_edges: 1,
                y_value: 0.0,
                birth_rank: rank,
                generation,
                root_vertex: j as u32,
            });
            cluster_of.push(rank);
        }
    }

    let mut n_generation1 = 0;
    for cluster in &mut clusters {
        cluster.y_value = 2.0 * (cluster.size as f64 - 1.0)
            + cluster.half_edges as f64
            + beta * cluster.size as f64;
        if cluster.generation == 1 {
            n_generation1 += 1;
        }
    }

    Ok(ClusterDecomposition {
        cluster_of,
        clusters,
        n_generation1,
    })
}

/// All cluster sizes sorted descending; ties broken by birth rank ascending.
pub fn sorted_cluster_sizes(decomp: &ClusterDecomposition) -> Vec<u64> {
    let mut order: Vec<&Cluster> = decomp.clusters.iter().collect();
    // Stable sort + birth-order storage gives the tie-break for free.
    order.sort_by_key(|c| std::cmp::Reverse(c.size));
    order.iter().map(|c| c.size).collect()
}

/// Non-root cluster sizes sorted descending (ties by birth rank), together
/// with each cluster's birth rank.
pub fn sorted_nonroot_sizes(decomp: &ClusterDecomposition) -> Vec<(u64, u32)> {
    let mut order: Vec<&Cluster> = decomp.clusters.iter().skip(1).collect();
    order.sort_by_key(|c| std::cmp::Reverse(c.size));
    order.iter().map(|c| (c.size, c.birth_rank)).collect()
}

/// Cluster report used by the `percolate` command: one row per cluster in
/// birth order.
pub fn write_cluster_csv<W: Write>(decomp: &ClusterDecomposition, mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "cluster_index,birth_rank,generation,size,half_edges,y_value,root_vertex"
    )?;
    for (idx, c) in decomp.clusters().iter().enumerate() {
        writeln!(
            out,
            "{idx},{},{},{},{},{},{}",
            c.birth_rank,
            c.generation,
            c.size,
            c.half_edges,
            crate::cli::fmt_f64(c.y_value),
            c.root_vertex
        )?;
    }
    Ok(())
}
