//! Monte Carlo laboratory for supercritical Bernoulli bond percolation on
//! scale-free preferential-attachment random trees.
//!
//! The crate grows random trees by linear preferential attachment (with an
//! affinity offset `beta`), percolates their edges at a retention probability
//! close to one, decomposes the outcome into clusters, and runs the companion
//! branching-process-with-mutations model. The [`stats`] module turns the raw
//! samples into verdicts against the analytic limit laws (giant-cluster
//! fraction, Poisson spacing of rescaled cluster sizes, gamma martingale
//! limits, birth-time scaling).
//!
//! Everything is deterministic given a 64-bit seed: trial `t` of an experiment
//! draws from an independent stream `(seed, t)`, so results do not depend on
//! how trials are scheduled across workers.

pub mod bp;
pub mod cli;
pub mod experiment;
pub mod percolation;
pub mod rng;
pub mod stats;
pub mod tree;
