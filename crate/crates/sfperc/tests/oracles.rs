//! Cross-checks of the cluster decomposition and the growth chain against
//! brute-force oracles, plus randomized structural invariants.

mod common;

use common::{assert_matches_oracle, enumerate_tree_probs, for_each_increasing_tree};
use proptest::prelude::*;
use sfperc::percolation::{decompose, percolate};
use sfperc::rng::trial_rng;
use sfperc::stats::{chi_square_gof, Verdict};
use sfperc::tree::{grow_tree, yule_value, GrowthParams, Tree};

/// Dyadic offsets make every cluster weight exactly representable, so the
/// comparisons below can demand bit equality.
const DYADIC_BETAS: [f64; 3] = [0.0, 0.5, -0.25];

#[test]
fn exhaustive_small_trees_all_masks() {
    let mut checks = 0u64;
    for &beta in &DYADIC_BETAS {
        for n in 1..=6 {
            for_each_increasing_tree(n, |parents| {
                let tree = Tree::from_parents(parents.to_vec()).unwrap();
                for mask in 0u32..1 << n {
                    let marks: Vec<bool> = (0..n).map(|j| mask >> j & 1 == 1).collect();
                    let decomp = decompose(&tree, &marks, beta).unwrap();
                    assert_matches_oracle(&decomp, &tree, &marks, beta);
                    checks += 1;
                }
            });
        }
    }
    // sum over n <= 6 of n! * 2^n, for each offset
    assert_eq!(checks, 3 * 50_362);
}

#[test]
fn random_grown_trees_match_oracle() {
    for trial in 0..30u64 {
        let beta = DYADIC_BETAS[trial as usize % 3];
        let n = 40 + 31 * trial as usize;
        let p = 0.3 + 0.02 * trial as f64;
        let mut rng = trial_rng(9_000 + trial, 0);
        let tree = grow_tree(&GrowthParams::new(beta, n).unwrap(), &mut rng);
        let marks = percolate(&tree, p, &mut rng).unwrap();
        let decomp = decompose(&tree, &marks, beta).unwrap();
        assert_matches_oracle(&decomp, &tree, &marks, beta);
    }
}

#[test]
fn growth_chain_matches_enumerated_tree_probabilities() {
    const REPLAYS: u64 = 100_000;
    for (case, &beta) in [0.0, 0.7, -0.4].iter().enumerate() {
        let table = enumerate_tree_probs(5, beta);
        assert_eq!(table.len(), 120);
        let total: f64 = table.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12, "chain law must normalize");

        let index: std::collections::HashMap<Vec<u32>, usize> = table
            .iter()
            .enumerate()
            .map(|(i, (parents, _))| (parents.clone(), i))
            .collect();
        let params = GrowthParams::new(beta, 5).unwrap();
        let mut observed = vec![0u64; table.len()];
        for t in 0..REPLAYS {
            let mut rng = trial_rng(777 + case as u64, t);
            let tree = grow_tree(&params, &mut rng);
            observed[index[tree.parents()]] += 1;
        }
        let probs: Vec<f64> = table.iter().map(|&(_, p)| p).collect();
        let report = chi_square_gof(&observed, &probs, 0.01);
        assert_eq!(
            report.verdict,
            Verdict::Pass,
            "offset {beta}: {}",
            report.to_json()
        );
    }
}

/// Parent arrays with `parents[j] <= j`, i.e. arbitrary recursive trees that
/// need not be reachable by the growth chain.
fn arb_tree(max_n: usize) -> impl Strategy<Value = Vec<u32>> {
    (1..=max_n)
        .prop_flat_map(|n| proptest::collection::vec(any::<u32>(), n))
        .prop_map(|raw| {
            raw.iter()
                .enumerate()
                .map(|(j, &r)| r % (j as u32 + 1))
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn arbitrary_trees_match_oracle(
        parents in arb_tree(24),
        mask in any::<u32>(),
        beta_idx in 0usize..3,
    ) {
        let beta = DYADIC_BETAS[beta_idx];
        let n = parents.len();
        let marks: Vec<bool> = (0..n).map(|j| mask >> (j % 32) & 1 == 1).collect();
        let tree = Tree::from_parents(parents).unwrap();
        let decomp = decompose(&tree, &marks, beta).unwrap();
        assert_matches_oracle(&decomp, &tree, &marks, beta);
    }

    #[test]
    fn decomposition_invariants_hold_on_grown_trees(
        seed in any::<u64>(),
        n in 2usize..150,
        beta_idx in 0usize..3,
        p in 0.0f64..=1.0,
    ) {
        let beta = DYADIC_BETAS[beta_idx];
        let mut rng = trial_rng(seed, 0);
        let tree = grow_tree(&GrowthParams::new(beta, n).unwrap(), &mut rng);
        let marks = percolate(&tree, p, &mut rng).unwrap();
        let decomp = decompose(&tree, &marks, beta).unwrap();
        let clusters = decomp.clusters();

        // Clusters partition the vertex set and come in birth order.
        let size_sum: u64 = clusters.iter().map(|c| c.size).sum();
        prop_assert_eq!(size_sum, n as u64 + 1);
        for (i, c) in clusters.iter().enumerate() {
            prop_assert_eq!(c.birth_rank as usize, i);
            prop_assert!(c.size >= 1);
        }
        prop_assert_eq!(
            clusters.len() as u32,
            marks.iter().filter(|&&keep| !keep).count() as u32 + 1
        );

        // Cutting moves weight around but never creates or destroys it.
        let weight_sum: f64 = clusters.iter().map(|c| c.y_value).sum();
        prop_assert_eq!(weight_sum, yule_value(n + 1, beta).unwrap());

        // Retained edges stay inside a cluster, cut edges always cross.
        for (idx, &keep) in marks.iter().enumerate() {
            let child = (idx + 1) as u32;
            let parent = tree.parent(child);
            if keep {
                prop_assert_eq!(decomp.cluster_of(child), decomp.cluster_of(parent));
            } else {
                prop_assert_ne!(decomp.cluster_of(child), decomp.cluster_of(parent));
            }
        }

        // Each cluster sits one generation below the cluster of its root
        // vertex's parent.
        for c in &clusters[1..] {
            let above = decomp.cluster_of(tree.parent(c.root_vertex));
            prop_assert_eq!(c.generation, clusters[above as usize].generation + 1);
        }
    }
}
