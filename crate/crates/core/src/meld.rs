//! MELD score and a synthetic liver-transplant waitlist cohort.
//!
//! The generator draws the covariates of each patient independently, then an
//! exponential survival time whose hazard is piecewise constant:
//!
//! ```text
//! h = base_hazard * hazard_ratio^[meld >= meld_threshold]
//!                 * age_ratio^[age >= age_threshold]   (optional)
//!                 * hcc_ratio^[hcc = 1]                (optional)
//! ```
//!
//! Follow-up ends at the earliest of death, an independent exponential
//! drop-out time, and `max_follow_up` days. The drop-out rate is solved by
//! bisection so that the expected event fraction equals
//! `1 - censor_fraction_target`.
//!
//! Default MELD values come from a log-normal with median 15 and log-scale
//! SD 0.35, truncated to [6, 40] and rounded to one decimal; about 43% of
//! patients sit at or above 16. In [`MeldMode::FromLabs`] bilirubin, INR and
//! creatinine are drawn from log-normals (medians 3.0, 1.5, 1.1; log-scale SDs
//! 0.9, 0.2, 0.35) and passed through [`meld_score`].

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};

use crate::data::{ColumnKind, ColumnSpec, Covariate, Dataset, Schema, Surv};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeldRecord {
    /// mg/dL
    pub bilirubin: f64,
    pub inr: f64,
    /// mg/dL
    pub creatinine: f64,
    /// 0 for cholestatic or alcoholic disease, 1 otherwise.
    pub etiology_flag: u8,
}

fn check_lab(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveLab { name, value })
    }
}

/// `3.8 ln(bilirubin) + 11.2 ln(INR) + 9.6 ln(creatinine) + 6.4 etiology`.
pub fn meld_score(r: &MeldRecord) -> Result<f64> {
    check_lab("bilirubin", r.bilirubin)?;
    check_lab("inr", r.inr)?;
    check_lab("creatinine", r.creatinine)?;
    if r.etiology_flag > 1 {
        return Err(Error::InvalidConfig(format!(
            "etiology flag must be 0 or 1, got {}",
            r.etiology_flag
        )));
    }
    Ok(3.8 * r.bilirubin.ln()
        + 11.2 * r.inr.ln()
        + 9.6 * r.creatinine.ln()
        + 6.4 * f64::from(r.etiology_flag))
}

/// [`meld_score`] with lab values below 1.0 raised to 1.0.
pub fn meld_score_clamped(r: &MeldRecord) -> Result<f64> {
    meld_score(r)?;
    meld_score(&MeldRecord {
        bilirubin: r.bilirubin.max(1.0),
        inr: r.inr.max(1.0),
        creatinine: r.creatinine.max(1.0),
        etiology_flag: r.etiology_flag,
    })
}

pub const SEX_LEVELS: [&str; 2] = ["F", "M"];
pub const BLOOD_LEVELS: [&str; 4] = ["A", "AB", "B", "O"];
pub const BLOOD_MIX: [f64; 4] = [0.38, 0.04, 0.11, 0.47];
pub const ETIOLOGY_LEVELS: [&str; 5] = ["alcoholic", "cholestatic", "cryptogenic", "hcv", "other"];
pub const HCC_LEVELS: [&str; 2] = ["0", "1"];

pub const TIME_COLUMN: &str = "time";
pub const EVENT_COLUMN: &str = "event";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeldMode {
    Direct,
    FromLabs,
}

impl fmt::Display for MeldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeldMode::Direct => "direct",
            MeldMode::FromLabs => "labs",
        })
    }
}

/// Hazard multiplier for patients with `age >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeEffect {
    pub threshold: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    pub meld_threshold: f64,
    pub hazard_ratio: f64,
    /// Deaths per patient-day below the MELD threshold.
    pub base_hazard: f64,
    pub censor_fraction_target: f64,
    /// Administrative end of follow-up, in days.
    pub max_follow_up: f64,
    pub male_fraction: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    /// Probabilities in [`ETIOLOGY_LEVELS`] order.
    pub etiology_mix: [f64; 5],
    pub hcc_prevalence: f64,
    pub age_effect: Option<AgeEffect>,
    /// Hazard multiplier for patients with HCC.
    pub hcc_effect: Option<f64>,
    pub meld_mode: MeldMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 529,
            seed: 1,
            meld_threshold: 16.0,
            hazard_ratio: 3.0,
            base_hazard: 1.0 / 1500.0,
            censor_fraction_target: 0.64,
            max_follow_up: 3165.0,
            male_fraction: 0.61,
            age_mean: 51.0,
            age_sd: 13.0,
            etiology_mix: [0.17, 0.10, 0.10, 0.47, 0.16],
            hcc_prevalence: 0.2,
            age_effect: None,
            hcc_effect: None,
            meld_mode: MeldMode::Direct,
        }
    }
}

/// Keys accepted by [`SimConfig::set`] and config files.
pub const CONFIG_KEYS: [&str; 17] = [
    "n",
    "seed",
    "meld_threshold",
    "hazard_ratio",
    "base_hazard",
    "censor_fraction",
    "max_follow_up",
    "male_fraction",
    "age_mean",
    "age_sd",
    "etiology_mix",
    "hcc_prevalence",
    "age_effect_threshold",
    "age_effect_ratio",
    "hcc_effect_ratio",
    "meld_mode",
    "age_effect",
];

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if !(self.hazard_ratio > 0.0 && self.hazard_ratio.is_finite()) {
            return bad(format!("hazard_ratio must be positive, got {}", self.hazard_ratio));
        }
        if !(self.base_hazard > 0.0 && self.base_hazard.is_finite()) {
            return bad(format!("base_hazard must be positive, got {}", self.base_hazard));
        }
        if !(self.censor_fraction_target > 0.0 && self.censor_fraction_target < 1.0) {
            return bad(format!(
                "censor fraction must lie in (0, 1), got {}",
                self.censor_fraction_target
            ));
        }
        if !(self.max_follow_up > 0.0) {
            return bad("max_follow_up must be positive".into());
        }
        if !prob(self.male_fraction) || !prob(self.hcc_prevalence) {
            return bad("male_fraction and hcc_prevalence must lie in [0, 1]".into());
        }
        if !(self.age_sd >= 0.0) || !self.age_mean.is_finite() {
            return bad("age_sd must be non-negative".into());
        }
        let total: f64 = self.etiology_mix.iter().sum();
        if self.etiology_mix.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-6 {
            return bad(format!("etiology_mix must be non-negative and sum to 1, got {total}"));
        }
        if let Some(a) = self.age_effect {
            if !(a.ratio > 0.0) {
                return bad("age effect ratio must be positive".into());
            }
        }
        if let Some(r) = self.hcc_effect {
            if !(r > 0.0) {
                return bad("hcc effect ratio must be positive".into());
            }
        }
        Ok(())
    }

    /// Sets one `key=value` setting; see [`CONFIG_KEYS`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("{key}: `{value}` is not a number")))
        };
        let int = || -> Result<u64> {
            value
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidConfig(format!("{key}: `{value}` is not an integer")))
        };
        match key.trim() {
            "n" => self.n = int()? as usize,
            "seed" => self.seed = int()?,
            "meld_threshold" => self.meld_threshold = num()?,
            "hazard_ratio" => self.hazard_ratio = num()?,
            "base_hazard" => self.base_hazard = num()?,
            "censor_fraction" => self.censor_fraction_target = num()?,
            "max_follow_up" => self.max_follow_up = num()?,
            "male_fraction" => self.male_fraction = num()?,
            "age_mean" => self.age_mean = num()?,
            "age_sd" => self.age_sd = num()?,
            "hcc_prevalence" => self.hcc_prevalence = num()?,
            "etiology_mix" => {
                let parts = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::InvalidConfig(format!("etiology_mix: `{value}`")))?;
                self.etiology_mix = parts.try_into().map_err(|_| {
                    Error::InvalidConfig("etiology_mix needs five comma-separated values".into())
                })?;
            }
            "age_effect" => {
                if !matches!(value.trim(), "none" | "off") {
                    return Err(Error::InvalidConfig(format!("age_effect: `{value}`")));
                }
                self.age_effect = None;
            }
            "age_effect_threshold" => {
                let t = num()?;
                let ratio = self.age_effect.map_or(1.0, |a| a.ratio);
                self.age_effect = Some(AgeEffect { threshold: t, ratio });
            }
            "age_effect_ratio" => {
                let r = num()?;
                let threshold = self.age_effect.map_or(33.2, |a| a.threshold);
                self.age_effect = Some(AgeEffect { threshold, ratio: r });
            }
            "hcc_effect_ratio" => self.hcc_effect = Some(num()?),
            "meld_mode" => {
                self.meld_mode = match value.trim() {
                    "direct" => MeldMode::Direct,
                    "labs" => MeldMode::FromLabs,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "meld_mode must be `direct` or `labs`, got `{other}`"
                        )))
                    }
                }
            }
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file over `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }
}

/// Schema that reads a generated cohort back with its declared levels.
pub fn cohort_schema() -> Schema {
    let levels = |l: &[&str]| Some(l.iter().map(|s| s.to_string()).collect());
    Schema {
        time: TIME_COLUMN.into(),
        event: EVENT_COLUMN.into(),
        weights: None,
        covariates: vec![
            ColumnSpec::categorical("sex", levels(&SEX_LEVELS)),
            ColumnSpec::numeric("age"),
            ColumnSpec::categorical("blood_type", levels(&BLOOD_LEVELS)),
            ColumnSpec::numeric("bmi"),
            ColumnSpec::categorical("etiology", levels(&ETIOLOGY_LEVELS)),
            ColumnSpec::categorical("hcc", levels(&HCC_LEVELS)),
            ColumnSpec {
                name: "meld".into(),
                kind: ColumnKind::Numeric,
            },
        ],
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (x * k).round() / k
}

fn draw_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Expected event fraction when drop-out has rate `rate`.
fn expected_event_fraction(hazards: &[f64], rate: f64, horizon: f64) -> f64 {
    hazards
        .iter()
        .map(|&h| h / (h + rate) * -(-(h + rate) * horizon).exp_m1())
        .sum::<f64>()
        / hazards.len() as f64
}

/// Drop-out rate giving the target event fraction, by bisection.
fn solve_dropout_rate(hazards: &[f64], target_events: f64, horizon: f64) -> Result<f64> {
    let ceiling = expected_event_fraction(hazards, 0.0, horizon);
    if ceiling < target_events {
        return Err(Error::InfeasibleCensoring(format!(
            "administrative censoring at {horizon} days alone limits the event fraction to {ceiling:.3}, below the target {target_events:.3}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = hazards.iter().cloned().fold(0.0, f64::max).max(1e-12);
    while expected_event_fraction(hazards, hi, horizon) > target_events {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_event_fraction(hazards, mid, horizon) > target_events {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draws a synthetic cohort; identical seeds give identical datasets.
pub fn simulate_cohort(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let age_dist = Normal::new(cfg.age_mean, cfg.age_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let bmi_dist = Normal::<f64>::new(25.5, 4.5).expect("valid normal");
    let meld_dist = LogNormal::<f64>::new(15f64.ln(), 0.35).expect("valid log-normal");
    let bili = LogNormal::new(3f64.ln(), 0.9).expect("valid log-normal");
    let inr = LogNormal::new(1.5f64.ln(), 0.2).expect("valid log-normal");
    let creat = LogNormal::new(1.1f64.ln(), 0.35).expect("valid log-normal");

    let n = cfg.n;
    let mut sex = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut blood = Vec::with_capacity(n);
    let mut bmi = Vec::with_capacity(n);
    let mut etiology = Vec::with_capacity(n);
    let mut hcc = Vec::with_capacity(n);
    let mut meld = Vec::with_capacity(n);
    let mut hazards = Vec::with_capacity(n);

    for _ in 0..n {
        let male = rng.random::<f64>() < cfg.male_fraction;
        let a = if cfg.age_sd > 0.0 {
            round_to(age_dist.sample(&mut rng).clamp(18.0, 80.0), 1)
        } else {
            cfg.age_mean
        };
        let b = draw_index(&mut rng, &BLOOD_MIX);
        let body = round_to(bmi_dist.sample(&mut rng).clamp(15.0, 45.0), 1);
        let e = draw_index(&mut rng, &cfg.etiology_mix);
        let tumour = rng.random::<f64>() < cfg.hcc_prevalence;
        let score = match cfg.meld_mode {
            MeldMode::Direct => meld_dist.sample(&mut rng).clamp(6.0, 40.0),
            MeldMode::FromLabs => {
                let flag = u8::from(!matches!(ETIOLOGY_LEVELS[e], "cholestatic" | "alcoholic"));
                meld_score(&MeldRecord {
                    bilirubin: bili.sample(&mut rng),
                    inr: inr.sample(&mut rng),
                    creatinine: creat.sample(&mut rng),
                    etiology_flag: flag,
                })?
            }
        };
        let score = round_to(score, 1);

        let mut h = cfg.base_hazard;
        if score >= cfg.meld_threshold {
            h *= cfg.hazard_ratio;
        }
        if let Some(effect) = cfg.age_effect {
            if a >= effect.threshold {
                h *= effect.ratio;
            }
        }
        if let (Some(ratio), true) = (cfg.hcc_effect, tumour) {
            h *= ratio;
        }

        sex.push(usize::from(male));
        age.push(a);
        blood.push(b);
        bmi.push(body);
        etiology.push(e);
        hcc.push(usize::from(tumour));
        meld.push(score);
        hazards.push(h);
    }

    let dropout = solve_dropout_rate(&hazards, 1.0 - cfg.censor_fraction_target, cfg.max_follow_up)?;
    let response = hazards
        .iter()
        .map(|&h| {
            let death = Exp::new(h).expect("positive hazard").sample(&mut rng);
            let leave = if dropout > 0.0 {
                Exp::new(dropout).expect("positive rate").sample(&mut rng)
            } else {
                f64::INFINITY
            };
            let end = leave.min(cfg.max_follow_up);
            let event = death <= end;
            let days = death.min(end).ceil().max(1.0);
            Surv::new(days, event)
        })
        .collect();

    let strings = |l: &[&str]| l.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Dataset::new(
        vec![
            Covariate::categorical("sex", strings(&SEX_LEVELS), sex)?,
            Covariate::numeric("age", age)?,
            Covariate::categorical("blood_type", strings(&BLOOD_LEVELS), blood)?,
            Covariate::numeric("bmi", bmi)?,
            Covariate::categorical("etiology", strings(&ETIOLOGY_LEVELS), etiology)?,
            Covariate::categorical("hcc", strings(&HCC_LEVELS), hcc)?,
            Covariate::numeric("meld", meld)?,
        ],
        response,
    )
}

/// Event fraction and MELD quartiles of a generated cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSummary {
    pub n: usize,
    pub event_fraction: f64,
    pub male_fraction: f64,
    pub age_mean: f64,
    /// Lower quartile, median, upper quartile.
    pub meld_quartiles: [f64; 3],
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // type-7 interpolation
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(ds: &Dataset) -> Result<CohortSummary> {
    let meld = ds.covariate("meld")?;
    let mut m: Vec<f64> = (0..ds.n()).map(|i| meld.score(i)).collect();
    m.sort_by(f64::total_cmp);
    let sex = ds.covariate("sex")?;
    let age = ds.covariate("age")?;
    let n = ds.n() as f64;
    Ok(CohortSummary {
        n: ds.n(),
        event_fraction: ds.event_count() as f64 / n,
        male_fraction: (0..ds.n()).filter(|&i| sex.code(i) == Some(1)).count() as f64 / n,
        age_mean: (0..ds.n()).map(|i| age.score(i)).sum::<f64>() / n,
        meld_quartiles: [quantile(&m, 0.25), quantile(&m, 0.5), quantile(&m, 0.75)],
    })
}

impl fmt::Display for CohortSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "patients:        {}", self.n)?;
        writeln!(f, "event fraction:  {:.3}", self.event_fraction)?;
        writeln!(f, "male fraction:   {:.3}", self.male_fraction)?;
        writeln!(f, "mean age:        {:.1}", self.age_mean)?;
        write!(
            f,
            "MELD quartiles:  {:.1} / {:.1} / {:.1}",
            self.meld_quartiles[0], self.meld_quartiles[1], self.meld_quartiles[2]
        )
    }
}
