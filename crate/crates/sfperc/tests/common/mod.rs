//! Brute-force reference implementations shared by the integration suites.
//!
//! Everything here favors obvious correctness over speed: components are
//! found by flood fill, probabilities by full enumeration. The production
//! code must match these oracles exactly.

use sfperc::percolation::ClusterDecomposition;
use sfperc::tree::{attach_prob, Tree};

/// One cluster as the oracle sees it; field meanings mirror the production
/// decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCluster {
    pub size: u64,
    pub half_edges: u32,
    pub y_value: f64,
    pub birth_rank: u32,
    pub generation: u32,
    pub root_vertex: u32,
}

/// Exhaustive component search over the retained edges. Returns clusters in
/// birth order together with the vertex-to-cluster assignment.
pub fn oracle_decompose(tree: &Tree, marks: &[bool], beta: f64) -> (Vec<OracleCluster>, Vec<u32>) {
    let n = tree.n();
    let v_count = n + 1;
    assert_eq!(marks.len(), n);

    // Undirected adjacency restricted to retained edges.
    let mut adj = vec![Vec::new(); v_count];
    for (idx, &keep) in marks.iter().enumerate() {
        if keep {
            let child = (idx + 1) as u32;
            let parent = tree.parent(child);
            adj[child as usize].push(parent);
            adj[parent as usize].push(child);
        }
    }

    // Flood fill from increasing seeds, so component ids are ordered by
    // smallest member.
    const UNSET: u32 = u32::MAX;
    let mut comp = vec![UNSET; v_count];
    let mut minimum = Vec::new();
    for seed in 0..v_count as u32 {
        if comp[seed as usize] != UNSET {
            continue;
        }
        let id = minimum.len() as u32;
        minimum.push(seed);
        let mut queue = vec![seed];
        comp[seed as usize] = id;
        while let Some(v) = queue.pop() {
            for &w in &adj[v as usize] {
                if comp[w as usize] == UNSET {
                    comp[w as usize] = id;
                    queue.push(w);
                }
            }
        }
    }

    // The cluster born of the j-th cut edge (label order) has the cut edge's
    // child endpoint as its smallest member; the root cluster comes first.
    let cut_children: Vec<u32> = marks
        .iter()
        .enumerate()
        .filter(|&(_, &keep)| !keep)
        .map(|(idx, _)| (idx + 1) as u32)
        .collect();
    let mut birth_of_comp = vec![UNSET; minimum.len()];
    birth_of_comp[comp[0] as usize] = 0;
    for (j, &child) in cut_children.iter().enumerate() {
        birth_of_comp[comp[child as usize] as usize] = (j + 1) as u32;
    }

    let mut clusters = vec![
        OracleCluster {
            size: 0,
            half_edges: 0,
            y_value: 0.0,
            birth_rank: 0,
            generation: 0,
            root_vertex: 0,
        };
        minimum.len()
    ];
    for (id, &root_vertex) in minimum.iter().enumerate() {
        let rank = birth_of_comp[id];
        assert_ne!(rank, UNSET, "every component stems from vertex 0 or a cut");
        let size = comp.iter().filter(|&&c| c == id as u32).count() as u64;

        let mut half_edges = 0;
        for &child in &cut_children {
            let parent = tree.parent(child);
            if comp[child as usize] == id as u32 {
                half_edges += 1;
            }
            if comp[parent as usize] == id as u32 {
                half_edges += 1;
            }
        }

        let mut generation = 0;
        let mut v = root_vertex;
        while v != 0 {
            if !marks[v as usize - 1] {
                generation += 1;
            }
            v = tree.parent(v);
        }

        clusters[rank as usize] = OracleCluster {
            size,
            half_edges,
            y_value: 2.0 * (size as f64 - 1.0) + half_edges as f64 + beta * size as f64,
            birth_rank: rank,
            generation,
            root_vertex,
        };
    }

    let assignment = comp
        .iter()
        .map(|&id| birth_of_comp[id as usize])
        .collect();
    (clusters, assignment)
}

/// Asserts that a production decomposition agrees with the oracle, field by
/// field and with zero tolerance.
pub fn assert_matches_oracle(
    decomp: &ClusterDecomposition,
    tree: &Tree,
    marks: &[bool],
    beta: f64,
) {
    let (expected, assignment) = oracle_decompose(tree, marks, beta);
    let got = decomp.clusters();
    assert_eq!(got.len(), expected.len(), "cluster count");
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!(g.size, e.size, "size of cluster {}", e.birth_rank);
        assert_eq!(g.half_edges, e.half_edges, "half edges of {}", e.birth_rank);
        assert_eq!(g.birth_rank, e.birth_rank, "birth rank");
        assert_eq!(g.generation, e.generation, "generation of {}", e.birth_rank);
        assert_eq!(g.root_vertex, e.root_vertex, "root vertex of {}", e.birth_rank);
        assert_eq!(g.y_value, e.y_value, "weight of cluster {}", e.birth_rank);
    }
    assert_eq!(decomp.cluster_assignment(), assignment.as_slice());
}

/// Calls `f` with the parent array of every tree on `n + 1` vertices in
/// which vertex `j` attaches to some earlier vertex (`n!` trees in total).
pub fn for_each_increasing_tree(n: usize, mut f: impl FnMut(&[u32])) {
    assert!(n >= 1);
    let mut parents = vec![0u32; n];
    loop {
        f(&parents);
        // Mixed-radix increment: the digit for vertex j + 1 runs over 0..=j.
        let mut j = 0;
        loop {
            if j == n {
                return;
            }
            if (parents[j] as usize) < j {
                parents[j] += 1;
                break;
            }
            parents[j] = 0;
            j += 1;
        }
    }
}

/// Every tree shape on `n + 1` vertices with its exact growth probability,
/// chained from the one-step attachment law.
pub fn enumerate_tree_probs(n: usize, beta: f64) -> Vec<(Vec<u32>, f64)> {
    let mut out = Vec::new();
    for_each_increasing_tree(n, |parents| {
        let mut prob = 1.0;
        for m in 1..n {
            let prefix = Tree::from_parents(parents[..m].to_vec()).unwrap();
            prob *= attach_prob(&prefix, parents[m], beta).unwrap();
        }
        out.push((parents.to_vec(), prob));
    });
    out
}
