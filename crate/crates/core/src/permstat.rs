//! Conditional-inference permutation tests for the linear statistic
//! `T = vec(sum_i w_i g(x_i) a_i^T)`.
//!
//! Moments of `T` are the conditional expectation and covariance under
//! random permutation of the scores given the weights. Association is
//! summarized by the maximum absolute standardized coordinate `c_max`, whose
//! p-value comes from a normal approximation, Monte Carlo resampling, or
//! full enumeration.
//!
//! Monte Carlo replicate `b` draws its permutation from ChaCha20 keyed with
//! `seed` (via `SeedableRng::seed_from_u64`) on stream `b`, so a p-value
//! depends only on the inputs, the seed and the replicate count.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CaseWeights;
use crate::error::{Error, Result};
use crate::influence::InfluenceScores;
use crate::normal;

/// Coordinates whose conditional variance is at or below this are skipped.
pub const VARIANCE_TOL: f64 = 1e-10;

/// Largest sample (after expanding integer weights) accepted by [`pvalue_exact`].
pub const MAX_EXACT_N: usize = 10;

/// Relative slack when deciding whether a resampled statistic ties the observed one.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TestMethod {
    Asymptotic,
    MonteCarlo { replicates: usize, seed: u64 },
    Exact,
}

impl TestMethod {
    pub fn label(&self) -> &'static str {
        match self {
            TestMethod::Asymptotic => "asymptotic",
            TestMethod::MonteCarlo { .. } => "montecarlo",
            TestMethod::Exact => "exact",
        }
    }
}

/// `T` with its conditional expectation `mu` and covariance `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStatistic {
    pub t: Array1<f64>,
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
}

/// Outcome of testing one covariate against the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTest {
    pub covariate: String,
    pub c_max: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub method: String,
}

fn check_dims(g: &ArrayView2<f64>, a: &InfluenceScores, w: &CaseWeights) -> Result<()> {
    let n = g.nrows();
    if a.len() != n || w.len() != n {
        return Err(Error::Dimension(format!(
            "g has {n} rows, scores {}, weights {}",
            a.len(),
            w.len()
        )));
    }
    Ok(())
}

/// Computes `T`, `mu` and `sigma` for a one-dimensional influence function.
///
/// With `w. = sum w_i`, `E = sum w_i a_i / w.` and `V = sum w_i (a_i - E)^2 / w.`:
/// `mu = (sum w_i g_i) E` and
/// `sigma = V w./(w.-1) sum w_i g_i g_i^T - V/(w.-1) (sum w_i g_i)(sum w_i g_i)^T`.
/// The covariance is accumulated in the equivalent centered form
/// `V w./(w.-1) sum w_i (g_i - gbar)(g_i - gbar)^T`, which is exactly zero
/// for a covariate that is constant within the weighted sample.
pub fn linear_statistic(
    g: ArrayView2<f64>,
    a: &InfluenceScores,
    w: &CaseWeights,
) -> Result<LinearStatistic> {
    check_dims(&g, a, w)?;
    let p = g.ncols();
    let ws = w.as_slice();
    let a = a.as_slice();
    let total = w.total();
    if total < 2.0 {
        return Err(Error::InsufficientWeight {
            total,
            required: 2.0,
        });
    }

    let mean_a = ws.iter().zip(a).map(|(w, a)| w * a).sum::<f64>() / total;
    let var_a = ws
        .iter()
        .zip(a)
        .map(|(w, a)| w * (a - mean_a) * (a - mean_a))
        .sum::<f64>()
        / total;

    let mut t = Array1::zeros(p);
    let mut sum_g = Array1::zeros(p);
    for (i, row) in g.outer_iter().enumerate() {
        if ws[i] == 0.0 {
            continue;
        }
        t.scaled_add(ws[i] * a[i], &row);
        sum_g.scaled_add(ws[i], &row);
    }
    let g_bar = &sum_g / total;

    let mut cross = Array2::<f64>::zeros((p, p));
    for (i, row) in g.outer_iter().enumerate() {
        if ws[i] == 0.0 {
            continue;
        }
        let d = &row - &g_bar;
        for k in 0..p {
            for l in 0..=k {
                cross[[k, l]] += ws[i] * d[k] * d[l];
            }
        }
    }
    for k in 0..p {
        for l in 0..k {
            cross[[l, k]] = cross[[k, l]];
        }
    }

    let mu = &sum_g * mean_a;
    let sigma = cross * (var_a * total / (total - 1.0));
    Ok(LinearStatistic { t, mu, sigma })
}

/// `max_k |T_k - mu_k| / sqrt(sigma_kk)` over coordinates with
/// `sigma_kk > VARIANCE_TOL`; zero when every coordinate is degenerate.
pub fn standardize_max(ls: &LinearStatistic) -> f64 {
    (0..ls.t.len())
        .filter(|&k| ls.sigma[[k, k]] > VARIANCE_TOL)
        .map(|k| (ls.t[k] - ls.mu[k]).abs() / ls.sigma[[k, k]].sqrt())
        .fold(0.0, f64::max)
}

/// Number of non-degenerate coordinates, counting perfectly correlated
/// coordinates once (e.g. the two one-hot columns of a binary factor).
pub fn effective_dof(ls: &LinearStatistic) -> usize {
    let s = &ls.sigma;
    let mut kept: Vec<usize> = Vec::new();
    for k in 0..ls.t.len() {
        if s[[k, k]] <= VARIANCE_TOL {
            continue;
        }
        let duplicate = kept.iter().any(|&j| {
            let r = s[[j, k]] / (s[[j, j]] * s[[k, k]]).sqrt();
            r.abs() >= 1.0 - 1e-9
        });
        if !duplicate {
            kept.push(k);
        }
    }
    kept.len()
}

/// `1 - (2 Phi(c) - 1)^dof`, treating coordinates as independent normals.
pub fn pvalue_asymptotic(c_max: f64, dof: usize) -> f64 {
    if dof == 0 || c_max <= 0.0 {
        return 1.0;
    }
    let tail = 2.0 * normal::sf(c_max);
    // 1 - (1 - tail)^dof without cancellation for tiny tails
    let p = -(dof as f64 * (-tail).ln_1p()).exp_m1();
    p.clamp(0.0, 1.0)
}

/// Positively-weighted observations expanded by integer weight, with the
/// covariate centered so that `sum_i gc_i a_perm(i) = T_perm - mu`.
struct Expanded {
    gc: Vec<f64>,
    p: usize,
    a: Vec<f64>,
    sd: Vec<Option<f64>>,
}

impl Expanded {
    fn new(g: &ArrayView2<f64>, a: &InfluenceScores, w: &CaseWeights, ls: &LinearStatistic) -> Result<Self> {
        if !w.is_integral() {
            return Err(Error::NonIntegerWeights);
        }
        let p = g.ncols();
        let total = w.total();
        let mut g_bar = vec![0.0; p];
        for (i, row) in g.outer_iter().enumerate() {
            for k in 0..p {
                g_bar[k] += w.as_slice()[i] * row[k];
            }
        }
        for v in &mut g_bar {
            *v /= total;
        }
        let mut gc = Vec::new();
        let mut scores = Vec::new();
        for (i, row) in g.outer_iter().enumerate() {
            let copies = w.as_slice()[i] as usize;
            for _ in 0..copies {
                gc.extend((0..p).map(|k| row[k] - g_bar[k]));
                scores.push(a.as_slice()[i]);
            }
        }
        let sd = (0..p)
            .map(|k| {
                let v = ls.sigma[[k, k]];
                (v > VARIANCE_TOL).then(|| v.sqrt())
            })
            .collect();
        Ok(Expanded {
            gc,
            p,
            a: scores,
            sd,
        })
    }

    fn len(&self) -> usize {
        self.a.len()
    }

    fn statistic(&self, scores: &[f64]) -> f64 {
        let mut best = 0.0f64;
        for (k, sd) in self.sd.iter().enumerate() {
            let Some(sd) = sd else { continue };
            let dev: f64 = scores
                .iter()
                .enumerate()
                .map(|(i, a)| self.gc[i * self.p + k] * a)
                .sum();
            best = best.max(dev.abs() / sd);
        }
        best
    }
}

fn ties_or_exceeds(stat: f64, observed: f64) -> bool {
    stat + TIE_TOL * observed.max(1.0) >= observed
}

/// Observed statistic and the `replicates` resampled statistics.
pub fn montecarlo_statistics(
    g: ArrayView2<f64>,
    a: &InfluenceScores,
    w: &CaseWeights,
    replicates: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if replicates == 0 {
        return Err(Error::InvalidConfig("Monte Carlo needs at least one replicate".into()));
    }
    let ls = linear_statistic(g.view(), a, w)?;
    let ex = Expanded::new(&g, a, w, &ls)?;
    let observed = ex.statistic(&ex.a);
    let stats = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut perm = ex.a.clone();
            perm.shuffle(&mut rng);
            ex.statistic(&perm)
        })
        .collect();
    Ok((observed, stats))
}

/// `(1 + #{b : c_b >= c_obs}) / (B + 1)` over score permutations among the
/// positively-weighted observations; integer weights expand to repeated rows.
pub fn pvalue_montecarlo(
    g: ArrayView2<f64>,
    a: &InfluenceScores,
    w: &CaseWeights,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    let (observed, stats) = montecarlo_statistics(g, a, w, replicates, seed)?;
    let hits = stats.iter().filter(|&&s| ties_or_exceeds(s, observed)).count();
    Ok((1 + hits) as f64 / (replicates + 1) as f64)
}

/// Share of all `n!` score permutations whose statistic ties or exceeds the
/// observed one. Integer weights expand to repeated rows; at most
/// [`MAX_EXACT_N`] rows after expansion.
pub fn pvalue_exact(g: ArrayView2<f64>, a: &InfluenceScores, w: &CaseWeights) -> Result<f64> {
    let ls = linear_statistic(g.view(), a, w)?;
    let ex = Expanded::new(&g, a, w, &ls)?;
    let n = ex.len();
    if n > MAX_EXACT_N {
        return Err(Error::TooManyObservations {
            n,
            max: MAX_EXACT_N,
        });
    }
    let observed = ex.statistic(&ex.a);
    if observed == 0.0 {
        return Ok(1.0);
    }

    // Heap's algorithm, iterative form
    let mut perm = ex.a.clone();
    let mut c = vec![0usize; n];
    let mut hits = u64::from(ties_or_exceeds(ex.statistic(&perm), observed));
    let mut total = 1u64;
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            total += 1;
            hits += u64::from(ties_or_exceeds(ex.statistic(&perm), observed));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Bonferroni: `min(1, m p_j)`.
pub fn adjust_pvalues(p_raw: &[f64]) -> Vec<f64> {
    let m = p_raw.len() as f64;
    p_raw.iter().map(|p| (m * p).min(1.0)).collect()
}

/// `c_max` and raw p-value of one covariate under `method`.
pub fn independence_test(
    g: ArrayView2<f64>,
    a: &InfluenceScores,
    w: &CaseWeights,
    method: TestMethod,
) -> Result<(f64, f64)> {
    let ls = linear_statistic(g.view(), a, w)?;
    let c_max = standardize_max(&ls);
    let p = match method {
        TestMethod::Asymptotic => pvalue_asymptotic(c_max, effective_dof(&ls)),
        TestMethod::MonteCarlo { replicates, seed } => {
            pvalue_montecarlo(g, a, w, replicates, seed)?
        }
        TestMethod::Exact => pvalue_exact(g, a, w)?,
    };
    Ok((c_max, p))
}
