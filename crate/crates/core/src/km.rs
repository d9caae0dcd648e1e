//! Weighted Kaplan-Meier curves used as leaf summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{CaseWeights, Surv};
use crate::error::{Error, Result};

/// One distinct event time with weighted at-risk and event totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EventRow {
    pub time: f64,
    pub at_risk: f64,
    pub events: f64,
}

/// Distinct times with positive weighted events, ascending. Censored
/// observations tied with an event time count as at risk at that time.
pub(crate) fn event_table(response: &[Surv], w: &[f64]) -> Vec<EventRow> {
    let mut order: Vec<usize> = (0..response.len()).filter(|&i| w[i] > 0.0).collect();
    order.sort_by(|&a, &b| response[a].time.total_cmp(&response[b].time));

    // (time, total weight, event weight) per distinct time
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    for &i in &order {
        let s = response[i];
        let d = if s.event { w[i] } else { 0.0 };
        match groups.last_mut() {
            Some(g) if g.0 == s.time => {
                g.1 += w[i];
                g.2 += d;
            }
            _ => groups.push((s.time, w[i], d)),
        }
    }

    let mut at_risk = 0.0;
    let mut rows = Vec::new();
    for &(time, total, events) in groups.iter().rev() {
        at_risk += total;
        if events > 0.0 {
            rows.push(EventRow {
                time,
                at_risk,
                events,
            });
        }
    }
    rows.reverse();
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    /// `(time, survival)` at each distinct event time; survival is 1 before the first.
    pub steps: Vec<(f64, f64)>,
    pub n_effective: f64,
    pub events: f64,
    pub median: Option<f64>,
}

impl KmCurve {
    /// Right-continuous evaluation of the step function.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.steps.partition_point(|&(s, _)| s <= t);
        if k == 0 {
            1.0
        } else {
            self.steps[k - 1].1
        }
    }

    /// Writes `time,survival` rows, starting from `(0, 1)`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "survival"])?;
        w.write_record(["0", "1"])?;
        for &(t, s) in &self.steps {
            w.write_record([format!("{t}"), format!("{s}")])?;
        }
        w.flush().map_err(|e| Error::io("<km output>", e))?;
        Ok(())
    }
}

pub fn km_estimate(response: &[Surv], w: &CaseWeights) -> Result<KmCurve> {
    if w.len() != response.len() {
        return Err(Error::LengthMismatch {
            expected: response.len(),
            got: w.len(),
        });
    }
    let total = w.total();
    if total <= 0.0 {
        return Err(Error::InsufficientWeight {
            total,
            required: f64::MIN_POSITIVE,
        });
    }
    let table = event_table(response, w.as_slice());
    let mut s = 1.0;
    let mut steps = Vec::with_capacity(table.len());
    for row in &table {
        // exact zero once everyone at risk has died
        s = if row.events >= row.at_risk {
            0.0
        } else {
            s * (1.0 - row.events / row.at_risk)
        };
        steps.push((row.time, s));
    }
    let median = steps.iter().find(|&&(_, s)| s <= 0.5).map(|&(t, _)| t);
    let events = table.iter().map(|r| r.events).sum();
    Ok(KmCurve {
        steps,
        n_effective: total,
        events,
        median,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surv(times: &[f64], events: &[bool]) -> Vec<Surv> {
        times.iter().zip(events).map(|(&t, &e)| Surv::new(t, e)).collect()
    }

    #[test]
    fn uncensored_product_limit() {
        let r = surv(&[1.0, 2.0, 3.0, 4.0], &[true; 4]);
        let km = km_estimate(&r, &CaseWeights::unit(4)).unwrap();
        let expected = [(1.0, 0.75), (2.0, 0.5), (3.0, 0.25), (4.0, 0.0)];
        for (a, b) in km.steps.iter().zip(expected) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
        assert_eq!(km.median, Some(2.0));
        assert_eq!(km.events, 4.0);
    }

    #[test]
    fn all_censored_is_flat() {
        let r = surv(&[1.0, 2.0], &[false, false]);
        let km = km_estimate(&r, &CaseWeights::unit(2)).unwrap();
        assert!(km.steps.is_empty());
        assert_eq!(km.survival_at(100.0), 1.0);
        assert_eq!(km.median, None);
    }

    #[test]
    fn one_event_one_censored() {
        let r = surv(&[2.0, 5.0], &[true, false]);
        let km = km_estimate(&r, &CaseWeights::unit(2)).unwrap();
        assert_eq!(km.survival_at(1.9), 1.0);
        assert_eq!(km.survival_at(2.0), 0.5);
        assert_eq!(km.survival_at(10.0), 0.5);
        assert_eq!(km.median, Some(2.0));
    }

    #[test]
    fn zero_weight_rejected() {
        let r = surv(&[2.0], &[true]);
        assert!(km_estimate(&r, &CaseWeights::new(vec![0.0]).unwrap()).is_err());
    }

    #[test]
    fn csv_starts_at_one() {
        let r = surv(&[2.0, 5.0], &[true, false]);
        let km = km_estimate(&r, &CaseWeights::unit(2)).unwrap();
        let mut buf = Vec::new();
        km.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,survival\n0,1\n2,0.5\n");
    }

    fn weighted_sample() -> impl Strategy<Value = (Vec<Surv>, Vec<f64>)> {
        prop::collection::vec((1u32..30, prop::bool::ANY, 0u32..4), 1..50).prop_map(|v| {
            let r = v.iter().map(|&(t, e, _)| Surv::new(t as f64, e)).collect();
            let mut w: Vec<f64> = v.iter().map(|&(_, _, w)| w as f64).collect();
            w[0] += 1.0;
            (r, w)
        })
    }

    proptest! {
        #[test]
        fn uncensored_matches_empirical((r, w) in weighted_sample()) {
            let r: Vec<Surv> = r.into_iter().map(|s| Surv::new(s.time, true)).collect();
            let km = km_estimate(&r, &CaseWeights::new(w.clone()).unwrap()).unwrap();
            let total: f64 = w.iter().sum();
            for t in 0..32 {
                let t = t as f64 + 0.5 * (t % 2) as f64;
                let above: f64 = r.iter().zip(&w).filter(|(s, _)| s.time > t).map(|(_, w)| w).sum();
                prop_assert!((km.survival_at(t) - above / total).abs() < 1e-12);
            }
        }

        #[test]
        fn scale_invariant_and_bounded((r, w) in weighted_sample(), k in 0.1f64..50.0) {
            let a = km_estimate(&r, &CaseWeights::new(w.clone()).unwrap()).unwrap();
            let b = km_estimate(&r, &CaseWeights::new(w.iter().map(|x| x * k).collect()).unwrap()).unwrap();
            prop_assert_eq!(a.steps.len(), b.steps.len());
            let mut prev = 1.0;
            for (x, y) in a.steps.iter().zip(&b.steps) {
                prop_assert!((x.1 - y.1).abs() < 1e-12);
                prop_assert!(x.1 >= 0.0 && x.1 <= prev);
                prev = x.1;
            }
        }
    }
}
