//! Recursive binary partitioning by conditional inference.
//!
//! At every node the log-rank scores are recomputed from the node's own
//! observations and each covariate is tested for independence from them.
//! The node becomes a leaf unless the smallest Bonferroni-adjusted p-value
//! is at most `alpha`; otherwise the winning covariate is split where the
//! standardized two-sample statistic is largest, and both children are
//! grown the same way. Nodes are numbered in level order from 1.

use std::collections::VecDeque;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    subset_weights, CaseWeights, Covariate, CovariateInfo, CovariateKind, Dataset, Observation,
    Split,
};
use crate::error::{Error, Result};
use crate::influence::{encode_covariate, logrank_scores, InfluenceScores};
use crate::km::{km_estimate, KmCurve};
use crate::permstat::{adjust_pvalues, independence_test, SplitTest, TestMethod, VARIANCE_TOL};

/// Categorical covariates with more levels than this are rejected.
pub const MAX_CATEGORICAL_LEVELS: usize = 10;

/// Relative margin a candidate split must win by to displace an earlier one.
const SPLIT_TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub alpha: f64,
    /// Minimum node weight for attempting a test.
    pub minsplit: f64,
    /// Minimum weight of each child.
    pub minbucket: f64,
    pub max_depth: Option<usize>,
    /// For Monte Carlo, the test of covariate `j` at node `id` uses the
    /// seed `stream_seed(seed, id, j)`.
    pub test: TestMethod,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            alpha: 0.05,
            minsplit: 20.0,
            minbucket: 7.0,
            max_depth: None,
            test: TestMethod::Asymptotic,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.minbucket >= 1.0) {
            return bad(format!("minbucket must be at least 1, got {}", self.minbucket));
        }
        if !(self.minsplit >= 2.0 * self.minbucket) {
            return bad(format!(
                "minsplit ({}) must be at least twice minbucket ({})",
                self.minsplit, self.minbucket
            ));
        }
        if let TestMethod::MonteCarlo { replicates: 0, .. } = self.test {
            return bad("Monte Carlo test needs at least one replicate".into());
        }
        Ok(())
    }
}

/// Per-test seed for Monte Carlo p-values (SplitMix64 finalizer).
pub fn stream_seed(seed: u64, node: usize, covariate: usize) -> u64 {
    let mut z = seed
        ^ (node as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (covariate as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    /// Smallest adjusted p-value exceeded alpha.
    NotSignificant { min_p_adjusted: f64 },
    MinSplit,
    MaxDepth,
    /// No cut-off of the selected covariate leaves `minbucket` on both sides.
    NoAdmissibleSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub covariate: String,
    pub split: Split,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Internal { branch: Branch, p_adjusted: f64 },
    Leaf { reason: StopReason },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub depth: usize,
    pub weights: CaseWeights,
    pub km: KmCurve,
    /// One entry per covariate, in declaration order; empty if untested.
    pub tests: Vec<SplitTest>,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn branch(&self) -> Option<&Branch> {
        match &self.kind {
            NodeKind::Internal { branch, .. } => Some(branch),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn stop_reason(&self) -> Option<&StopReason> {
        match &self.kind {
            NodeKind::Leaf { reason } => Some(reason),
            NodeKind::Internal { .. } => None,
        }
    }

    pub fn n_effective(&self) -> f64 {
        self.km.n_effective
    }

    pub fn events(&self) -> f64 {
        self.km.events
    }

    /// Selected adjusted p-value, or the smallest one for a tested leaf.
    pub fn p_adjusted(&self) -> Option<f64> {
        match &self.kind {
            NodeKind::Internal { p_adjusted, .. } => Some(*p_adjusted),
            NodeKind::Leaf { .. } => self.tests.iter().map(|t| t.p_adjusted).reduce(f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub covariates: Vec<CovariateInfo>,
    pub nodes: Vec<Node>,
    pub config: FitConfig,
}

/// Follows split rules from node 1 until a leaf.
pub fn route<'a>(
    covariates: &[CovariateInfo],
    branch_of: impl Fn(usize) -> Option<&'a Branch>,
    obs: &Observation,
) -> Result<usize> {
    let mut id = 1;
    while let Some(b) = branch_of(id) {
        let info = covariates
            .iter()
            .find(|c| c.name == b.covariate)
            .ok_or_else(|| Error::UnknownCovariate(b.covariate.clone()))?;
        let value = obs
            .get(&b.covariate)
            .ok_or_else(|| Error::MissingValue(b.covariate.clone()))?;
        id = if info.goes_left(&b.split, value)? {
            b.left
        } else {
            b.right
        };
    }
    Ok(id)
}

impl Tree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> Option<&Node> {
        id.checked_sub(1).and_then(|i| self.nodes.get(i))
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn split_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Covariates split on at the given depth, in node order.
    pub fn split_covariates_at(&self, depth: usize) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| n.depth == depth)
            .filter_map(|n| n.branch().map(|b| b.covariate.as_str()))
            .collect()
    }

    /// Leaf id reached by `obs`.
    pub fn predict_node(&self, obs: &Observation) -> Result<usize> {
        route(&self.covariates, |id| self.node(id).and_then(Node::branch), obs)
    }
}

pub fn fit(ds: &Dataset, cfg: &FitConfig) -> Result<Tree> {
    fit_weighted(ds, &CaseWeights::unit(ds.n()), cfg)
}

pub fn fit_weighted(ds: &Dataset, w: &CaseWeights, cfg: &FitConfig) -> Result<Tree> {
    cfg.validate()?;
    if w.len() != ds.n() {
        return Err(Error::LengthMismatch {
            expected: ds.n(),
            got: w.len(),
        });
    }
    if ds.m() == 0 {
        return Err(Error::InvalidConfig("no covariates to partition on".into()));
    }
    for c in ds.covariates() {
        if let CovariateKind::Categorical { levels } = c.kind() {
            if levels.len() > MAX_CATEGORICAL_LEVELS {
                return Err(Error::TooManyLevels {
                    name: c.name().to_string(),
                    levels: levels.len(),
                    max: MAX_CATEGORICAL_LEVELS,
                });
            }
        }
    }
    let has_event = ds
        .response()
        .iter()
        .zip(w.as_slice())
        .any(|(s, &wi)| s.event && wi > 0.0);
    if !has_event {
        return Err(Error::NoEvents);
    }

    let encoded: Vec<Array2<f64>> = ds.covariates().iter().map(encode_covariate).collect();
    let mut nodes = Vec::new();
    let mut queue = VecDeque::from([(1usize, 0usize, w.clone())]);
    let mut next_id = 2;

    while let Some((id, depth, weights)) = queue.pop_front() {
        let (kind, tests) = grow(ds, &encoded, &weights, id, depth, cfg, &mut next_id)?;
        if let NodeKind::Internal { branch, .. } = &kind {
            let (l, r) = subset_weights(ds, &weights, &branch.covariate, &branch.split)?;
            queue.push_back((branch.left, depth + 1, l));
            queue.push_back((branch.right, depth + 1, r));
        }
        let km = km_estimate(ds.response(), &weights)?;
        nodes.push(Node {
            id,
            depth,
            weights,
            km,
            tests,
            kind,
        });
    }
    debug_assert!(nodes.iter().enumerate().all(|(i, n)| n.id == i + 1));

    Ok(Tree {
        covariates: ds.infos(),
        nodes,
        config: *cfg,
    })
}

fn grow(
    ds: &Dataset,
    encoded: &[Array2<f64>],
    w: &CaseWeights,
    id: usize,
    depth: usize,
    cfg: &FitConfig,
    next_id: &mut usize,
) -> Result<(NodeKind, Vec<SplitTest>)> {
    let leaf = |reason| Ok((NodeKind::Leaf { reason }, Vec::new()));
    if cfg.max_depth == Some(depth) {
        return leaf(StopReason::MaxDepth);
    }
    if w.total() < cfg.minsplit {
        return leaf(StopReason::MinSplit);
    }

    let scores = logrank_scores(ds.response(), w)?;
    let raw = encoded
        .par_iter()
        .enumerate()
        .map(|(j, g)| {
            let method = match cfg.test {
                TestMethod::MonteCarlo { replicates, seed } => TestMethod::MonteCarlo {
                    replicates,
                    seed: stream_seed(seed, id, j),
                },
                m => m,
            };
            independence_test(g.view(), &scores, w, method)
        })
        .collect::<Result<Vec<_>>>()?;
    let p_adj = adjust_pvalues(&raw.iter().map(|r| r.1).collect::<Vec<_>>());
    let tests: Vec<SplitTest> = ds
        .covariates()
        .iter()
        .zip(&raw)
        .zip(&p_adj)
        .map(|((c, &(c_max, p_raw)), &p_adjusted)| SplitTest {
            covariate: c.name().to_string(),
            c_max,
            p_raw,
            p_adjusted,
            method: cfg.test.label().to_string(),
        })
        .collect();

    // first minimum wins: declaration order breaks ties
    let mut best = 0;
    for j in 1..p_adj.len() {
        if p_adj[j] < p_adj[best] {
            best = j;
        }
    }
    if p_adj[best] > cfg.alpha {
        return Ok((
            NodeKind::Leaf {
                reason: StopReason::NotSignificant {
                    min_p_adjusted: p_adj[best],
                },
            },
            tests,
        ));
    }

    let cov = &ds.covariates()[best];
    let Some(candidate) = best_split(w, cov, &scores, cfg) else {
        return Ok((
            NodeKind::Leaf {
                reason: StopReason::NoAdmissibleSplit,
            },
            tests,
        ));
    };
    let branch = Branch {
        covariate: cov.name().to_string(),
        split: candidate.split,
        left: *next_id,
        right: *next_id + 1,
    };
    *next_id += 2;
    Ok((
        NodeKind::Internal {
            branch,
            p_adjusted: p_adj[best],
        },
        tests,
    ))
}

/// A split with its standardized two-sample statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSplit {
    pub split: Split,
    pub statistic: f64,
}

/// Standardized statistic of the indicator `g_i = 1{i goes left}` given the
/// left-side weight and score sum. For a 0/1 covariate the conditional
/// variance reduces to `V n_L n_R / (n - 1)`.
struct TwoSample {
    total: f64,
    mean: f64,
    var: f64,
}

impl TwoSample {
    fn new(w: &[f64], a: &[f64]) -> Self {
        let total: f64 = w.iter().sum();
        let mean = w.iter().zip(a).map(|(w, a)| w * a).sum::<f64>() / total;
        let var = w
            .iter()
            .zip(a)
            .map(|(w, a)| w * (a - mean) * (a - mean))
            .sum::<f64>()
            / total;
        TwoSample { total, mean, var }
    }

    fn statistic(&self, n_left: f64, sum_left: f64) -> f64 {
        let n_right = self.total - n_left;
        let variance = self.var * n_left * n_right / (self.total - 1.0);
        if variance <= VARIANCE_TOL {
            return 0.0;
        }
        (sum_left - n_left * self.mean).abs() / variance.sqrt()
    }
}

fn improves(stat: f64, best: &Option<CandidateSplit>) -> bool {
    match best {
        None => true,
        Some(b) => stat > b.statistic * (1.0 + SPLIT_TIE_TOL),
    }
}

/// Best binary split of `cov` for the node with weights `w`.
///
/// Numeric and ordinal covariates try every observed distinct value except
/// the largest as cut-off `c` in `x <= c`; ties go to the smaller cut-off.
/// Categorical covariates try every subset of the levels present in the node
/// that contains the first present level (`2^(K-1) - 1` candidates); levels
/// absent from the node go right. Both children must keep `minbucket`.
pub fn best_split(
    w: &CaseWeights,
    cov: &Covariate,
    scores: &InfluenceScores,
    cfg: &FitConfig,
) -> Option<CandidateSplit> {
    let ws = w.as_slice();
    let a = scores.as_slice();
    let idx: Vec<usize> = (0..ws.len()).filter(|&i| ws[i] > 0.0).collect();
    if idx.len() < 2 {
        return None;
    }
    let node_w: Vec<f64> = idx.iter().map(|&i| ws[i]).collect();
    let node_a: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
    let stats = TwoSample::new(&node_w, &node_a);
    let feasible =
        |n_left: f64| n_left >= cfg.minbucket && stats.total - n_left >= cfg.minbucket;

    match cov.kind() {
        CovariateKind::Numeric | CovariateKind::Ordinal { .. } => {
            let mut order = idx;
            order.sort_by(|&i, &j| cov.score(i).total_cmp(&cov.score(j)));
            let mut best: Option<CandidateSplit> = None;
            let (mut n_left, mut sum_left) = (0.0, 0.0);
            for (k, &i) in order.iter().enumerate() {
                n_left += ws[i];
                sum_left += ws[i] * a[i];
                let x = cov.score(i);
                let Some(&next) = order.get(k + 1) else { break };
                if cov.score(next) == x || !feasible(n_left) {
                    continue;
                }
                let stat = stats.statistic(n_left, sum_left);
                if improves(stat, &best) {
                    best = Some(CandidateSplit {
                        split: Split::LessEq { cutoff: x },
                        statistic: stat,
                    });
                }
            }
            best
        }
        CovariateKind::Categorical { levels } => {
            let mut n_level = vec![0.0; levels.len()];
            let mut s_level = vec![0.0; levels.len()];
            for &i in &idx {
                let c = cov.code(i).expect("categorical codes");
                n_level[c] += ws[i];
                s_level[c] += ws[i] * a[i];
            }
            let present: Vec<usize> = (0..levels.len()).filter(|&l| n_level[l] > 0.0).collect();
            if present.len() < 2 {
                return None;
            }
            let rest = present.len() - 1;
            let mut best: Option<CandidateSplit> = None;
            for mask in 0u32..(1u32 << rest) - 1 {
                let left: Vec<usize> = std::iter::once(present[0])
                    .chain((0..rest).filter(|b| mask >> b & 1 == 1).map(|b| present[b + 1]))
                    .collect();
                let n_left: f64 = left.iter().map(|&l| n_level[l]).sum();
                if !feasible(n_left) {
                    continue;
                }
                let sum_left: f64 = left.iter().map(|&l| s_level[l]).sum();
                let stat = stats.statistic(n_left, sum_left);
                if improves(stat, &best) {
                    best = Some(CandidateSplit {
                        split: Split::InLevels {
                            levels: left.iter().map(|&l| levels[l].clone()).collect(),
                        },
                        statistic: stat,
                    });
                }
            }
            best
        }
    }
}
