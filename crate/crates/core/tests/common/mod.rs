#![allow(dead_code)]

use survtree::meld::{simulate_cohort, SimConfig};
use survtree::partition::{Branch, Tree};
use survtree::Dataset;

/// Topology and split rules of a tree, node by node.
pub fn shape(tree: &Tree) -> Vec<(usize, usize, Option<Branch>)> {
    tree.nodes
        .iter()
        .map(|n| (n.id, n.depth, n.branch().cloned()))
        .collect()
}

pub fn cohort(seed: u64, n: usize, hazard_ratio: f64) -> Dataset {
    let cfg = SimConfig {
        n,
        seed,
        hazard_ratio,
        ..SimConfig::default()
    };
    simulate_cohort(&cfg).expect("valid config")
}

pub fn fmt_rate(hits: usize, total: usize) -> String {
    format!("{hits}/{total}")
}
