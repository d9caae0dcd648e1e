//! Influence functions for the response and transformations for covariates:
//! the two factors of the linear association statistic.

use ndarray::Array2;

use crate::data::{CaseWeights, Covariate, CovariateKind, Surv};
use crate::error::{Error, Result};
use crate::km::event_table;

/// Per-observation scores `h(Y_i, (Y_1, ..., Y_n))`; one dimension only.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceScores(Vec<f64>);

impl InfluenceScores {
    pub fn new(a: Vec<f64>) -> Self {
        InfluenceScores(a)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Log-rank scores `a_i = delta_i - Lambda(t_i)` with `Lambda` the weighted
/// Nelson-Aalen cumulative hazard.
///
/// Tied times form one distinct time point. Observations censored at an
/// event time are still at risk for that event. Zero-weight observations
/// receive a score but do not contribute to `Lambda`.
pub fn logrank_scores(response: &[Surv], w: &CaseWeights) -> Result<InfluenceScores> {
    if w.len() != response.len() {
        return Err(Error::LengthMismatch {
            expected: response.len(),
            got: w.len(),
        });
    }
    if w.total() <= 0.0 {
        return Err(Error::InsufficientWeight {
            total: w.total(),
            required: f64::MIN_POSITIVE,
        });
    }
    let table = event_table(response, w.as_slice());
    let mut cumhaz = Vec::with_capacity(table.len());
    let mut acc = 0.0;
    for row in &table {
        acc += row.events / row.at_risk;
        cumhaz.push(acc);
    }
    let scores = response
        .iter()
        .map(|s| {
            let k = table.partition_point(|row| row.time <= s.time);
            let lambda = if k == 0 { 0.0 } else { cumhaz[k - 1] };
            f64::from(u8::from(s.event)) - lambda
        })
        .collect();
    Ok(InfluenceScores(scores))
}

pub fn identity_scores(y: &[f64]) -> InfluenceScores {
    InfluenceScores(y.to_vec())
}

/// `g_j` applied to every observation: an `n x p_j` matrix.
///
/// Numeric covariates map to themselves (`p_j = 1`), ordinal covariates to
/// their level index, and categorical covariates to a one-hot row with
/// columns in declared level order.
pub fn encode_covariate(c: &Covariate) -> Array2<f64> {
    let n = c.len();
    match c.kind() {
        CovariateKind::Numeric | CovariateKind::Ordinal { .. } => {
            Array2::from_shape_fn((n, 1), |(i, _)| c.score(i))
        }
        CovariateKind::Categorical { levels } => {
            let mut g = Array2::zeros((n, levels.len()));
            for i in 0..n {
                g[[i, c.code(i).expect("categorical codes")]] = 1.0;
            }
            g
        }
    }
}
