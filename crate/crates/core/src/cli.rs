//! The `survtree` command line.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 invalid flags or
//! flag values, 3 input data or tree document errors, 4 fitting errors.
//! Outputs are written to a temporary file and renamed into place, so a
//! failing command never leaves a partial file behind.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::data::{
    is_missing, parse_finite, parse_response, read_csv, CaseWeights, ColumnKind, ColumnSpec,
    CovariateInfo, Observation, Schema, Surv,
};
use crate::document::{Provenance, TreeDocument};
use crate::error::Error;
use crate::km::km_estimate;
use crate::meld::{simulate_cohort, summarize, SimConfig, EVENT_COLUMN, TIME_COLUMN};
use crate::partition::{fit_weighted, FitConfig};
use crate::permstat::TestMethod;
use crate::render::{render_dot, render_text};

#[derive(Debug, Parser)]
#[command(name = "survtree", version, about = "Conditional-inference survival trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a tree to a CSV file and write its JSON document.
    Fit(FitArgs),
    /// Assign rows of a CSV file to leaves of a fitted tree.
    Predict(PredictArgs),
    /// Convert a tree document to Graphviz DOT.
    ExportDot(ExportDotArgs),
    /// Write one Kaplan-Meier curve per leaf.
    Km(KmArgs),
    /// Generate a synthetic waitlist cohort.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Survival time column.
    #[arg(long)]
    pub time: String,
    /// Event indicator column (1 = death, 0 = censored).
    #[arg(long)]
    pub event: String,
    /// Comma-separated covariate columns, numeric unless declared otherwise.
    #[arg(long, value_delimiter = ',', required = true)]
    pub covariates: Vec<String>,
    /// Categorical covariate, `name` or `name:level1|level2|...`.
    #[arg(long, value_name = "SPEC")]
    pub categorical: Vec<String>,
    /// Ordinal covariate, `name:lowest|...|highest`.
    #[arg(long, value_name = "SPEC")]
    pub ordinal: Vec<String>,
    /// Case-weight column.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 20.0)]
    pub minsplit: f64,
    #[arg(long, default_value_t = 7.0)]
    pub minbucket: f64,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// `asymptotic`, `exact` or `mc:REPLICATES:SEED`.
    #[arg(long, default_value = "asymptotic", value_parser = parse_test)]
    pub test: TestMethod,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportDotArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KmArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub time: String,
    #[arg(long)]
    pub event: String,
    #[arg(long)]
    pub weights: Option<String>,
    /// Directory receiving `leaf_<id>.csv` files.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of patients [default: 529].
    #[arg(long)]
    pub n: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// MELD hazard threshold [default: 16].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Hazard multiplier for MELD at or above the threshold [default: 3].
    #[arg(long)]
    pub hazard_ratio: Option<f64>,
    /// Target censored fraction [default: 0.64].
    #[arg(long)]
    pub censor_frac: Option<f64>,
    /// Hazard multiplier for patients at or above `--age-threshold`.
    #[arg(long)]
    pub age_ratio: Option<f64>,
    /// Age cut-off of the age effect [default: 33.2].
    #[arg(long)]
    pub age_threshold: Option<f64>,
    /// Hazard multiplier for patients with HCC.
    #[arg(long)]
    pub hcc_ratio: Option<f64>,
    /// `direct` or `labs`.
    #[arg(long)]
    pub meld_mode: Option<String>,
    /// Flat `key = value` file applied before the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Display) -> Self {
        CliError {
            code,
            message: message.to_string(),
        }
    }

    fn usage(message: impl Display) -> Self {
        Self::new(2, message)
    }

    fn data(message: impl Display) -> Self {
        Self::new(3, message)
    }

    fn fit(message: impl Display) -> Self {
        Self::new(4, message)
    }

    fn output(message: impl Display) -> Self {
        Self::new(1, message)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parse_test(s: &str) -> std::result::Result<TestMethod, String> {
    match s {
        "asymptotic" => return Ok(TestMethod::Asymptotic),
        "exact" => return Ok(TestMethod::Exact),
        _ => {}
    }
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["mc", b, seed] => {
            let replicates = b
                .parse::<usize>()
                .ok()
                .filter(|&b| b > 0)
                .ok_or_else(|| format!("invalid replicate count `{b}`"))?;
            let seed = seed.parse::<u64>().map_err(|_| format!("invalid seed `{seed}`"))?;
            Ok(TestMethod::MonteCarlo { replicates, seed })
        }
        _ => Err(format!("expected asymptotic, exact or mc:B:seed, got `{s}`")),
    }
}

fn split_levels(spec: &str) -> (String, Option<Vec<String>>) {
    match spec.split_once(':') {
        None => (spec.trim().to_string(), None),
        Some((name, levels)) => (
            name.trim().to_string(),
            Some(levels.split('|').map(|l| l.trim().to_string()).collect()),
        ),
    }
}

fn build_schema(args: &FitArgs) -> CliResult<Schema> {
    let mut kinds: BTreeMap<String, ColumnKind> = BTreeMap::new();
    for spec in &args.categorical {
        let (name, levels) = split_levels(spec);
        kinds.insert(name, ColumnKind::Categorical(levels));
    }
    for spec in &args.ordinal {
        let (name, levels) = split_levels(spec);
        let levels = levels
            .ok_or_else(|| CliError::usage(format!("--ordinal {spec}: levels are required")))?;
        if kinds.insert(name.clone(), ColumnKind::Ordinal(levels)).is_some() {
            return Err(CliError::usage(format!("`{name}` declared twice")));
        }
    }
    let names: Vec<String> = args.covariates.iter().map(|c| c.trim().to_string()).collect();
    if let Some(extra) = kinds.keys().find(|k| !names.contains(k)) {
        return Err(CliError::usage(format!(
            "`{extra}` is declared categorical/ordinal but not listed in --covariates"
        )));
    }
    let mut covariates = Vec::with_capacity(names.len());
    for name in names {
        if name.is_empty() || covariates.iter().any(|c: &ColumnSpec| c.name == name) {
            return Err(CliError::usage(format!("invalid or duplicate covariate `{name}`")));
        }
        let kind = kinds.remove(&name).unwrap_or(ColumnKind::Numeric);
        covariates.push(ColumnSpec { name, kind });
    }
    Ok(Schema {
        time: args.time.clone(),
        event: args.event.clone(),
        weights: args.weights.clone(),
        covariates,
    })
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::data(Error::io(path, e)))
}

fn read_document(path: &Path) -> CliResult<TreeDocument> {
    let bytes = read_input(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::data(format!("{}: not UTF-8", path.display())))?;
    TreeDocument::from_json(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let fail = |e: std::io::Error| CliError::output(format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::ExportDot(a) => cmd_export_dot(&a),
        Command::Km(a) => cmd_km(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let schema = build_schema(args)?;
    let cfg = FitConfig {
        alpha: args.alpha,
        minsplit: args.minsplit,
        minbucket: args.minbucket,
        max_depth: args.max_depth,
        test: args.test,
    };
    cfg.validate().map_err(CliError::usage)?;

    let bytes = read_input(&args.data)?;
    let loaded = read_csv(bytes.as_slice(), &schema)
        .map_err(|e| CliError::data(format!("{}: {e}", args.data.display())))?;
    if loaded.dropped > 0 {
        eprintln!(
            "excluded {} of {} rows with missing or unusable values",
            loaded.dropped, loaded.raw_rows
        );
    }
    let tree = fit_weighted(&loaded.dataset, &loaded.weights, &cfg).map_err(CliError::fit)?;
    let seed = match cfg.test {
        TestMethod::MonteCarlo { seed, .. } => Some(seed),
        _ => None,
    };
    let doc = TreeDocument::from_tree(&tree, Provenance::new(Some(sha256_hex(&bytes)), seed));
    let json = doc.to_json().map_err(CliError::fit)?;
    write_atomic(&args.out, json.as_bytes())?;
    print!("{}", render_text(&doc));
    Ok(())
}

/// Header index of each split covariate.
fn split_columns<'a>(
    doc: &'a TreeDocument,
    header: &csv::StringRecord,
    path: &Path,
) -> CliResult<Vec<(&'a CovariateInfo, usize)>> {
    doc.split_covariates()
        .into_iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c.name)
                .map(|i| (c, i))
                .ok_or_else(|| CliError::data(format!("{}: {}", path.display(), Error::MissingColumn(c.name.clone()))))
        })
        .collect()
}

fn observation(columns: &[(&CovariateInfo, usize)], rec: &csv::StringRecord) -> Observation {
    let mut obs = Observation::new();
    for (info, i) in columns {
        if let Some(v) = info.parse_cell(rec.get(*i).unwrap_or("")) {
            obs.insert(info.name.clone(), v);
        }
    }
    obs
}

fn open_csv<'a>(bytes: &'a [u8], path: &Path) -> CliResult<(csv::Reader<&'a [u8]>, csv::StringRecord)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header = rdr
        .headers()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        .clone();
    Ok((rdr, header))
}

fn report_row_errors(errors: &[String]) -> CliResult<()> {
    if errors.is_empty() {
        return Ok(());
    }
    for e in errors {
        eprintln!("{e}");
    }
    Err(CliError::data(format!("{} row(s) could not be routed", errors.len())))
}

fn cmd_predict(args: &PredictArgs) -> CliResult<()> {
    let doc = read_document(&args.tree)?;
    let bytes = read_input(&args.data)?;
    let (mut rdr, header) = open_csv(&bytes, &args.data)?;
    let columns = split_columns(&doc, &header, &args.data)?;

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| CliError::data(format!("{}: {e}", args.data.display())))?;
        match doc.predict(&observation(&columns, &rec)) {
            Ok(leaf) => rows.push((row, leaf)),
            Err(e) => errors.push(format!("row {row}: {e}")),
        }
    }
    report_row_errors(&errors)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let out_err = |e: csv::Error| CliError::output(e);
    w.write_record(["row", "leaf", "median"]).map_err(out_err)?;
    for (row, leaf) in rows {
        let median = doc
            .node(leaf)
            .and_then(|n| n.median)
            .map(|m| format!("{m}"))
            .unwrap_or_default();
        w.write_record([row.to_string(), leaf.to_string(), median])
            .map_err(out_err)?;
    }
    let buf = w.into_inner().map_err(|e| CliError::output(e.error()))?;
    write_atomic(&args.out, &buf)
}

fn cmd_export_dot(args: &ExportDotArgs) -> CliResult<()> {
    let doc = read_document(&args.tree)?;
    write_atomic(&args.out, render_dot(&doc).as_bytes())
}

fn cmd_km(args: &KmArgs) -> CliResult<()> {
    let doc = read_document(&args.tree)?;
    let bytes = read_input(&args.data)?;
    let (mut rdr, header) = open_csv(&bytes, &args.data)?;
    let columns = split_columns(&doc, &header, &args.data)?;
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::data(format!("{}: {}", args.data.display(), Error::MissingColumn(name.into())))
        })
    };
    let time_idx = col(&args.time)?;
    let event_idx = col(&args.event)?;
    let weight_idx = args.weights.as_deref().map(col).transpose()?;

    let mut groups: BTreeMap<usize, (Vec<Surv>, Vec<f64>)> =
        doc.leaves().map(|l| (l.id, (Vec::new(), Vec::new()))).collect();
    let mut errors = Vec::new();
    let mut dropped = 0;
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| CliError::data(format!("{}: {e}", args.data.display())))?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let surv = parse_response(row, get(time_idx), get(event_idx)).map_err(CliError::data)?;
        let weight = match weight_idx {
            None => Some(1.0),
            Some(i) if is_missing(get(i)) => None,
            Some(i) => match parse_finite(get(i)) {
                Some(w) if w >= 0.0 => Some(w),
                _ => return Err(CliError::data(format!("row {row}: invalid case weight `{}`", get(i)))),
            },
        };
        let (Some(surv), Some(weight)) = (surv, weight) else {
            dropped += 1;
            continue;
        };
        match doc.predict(&observation(&columns, &rec)) {
            Ok(leaf) => {
                let g = groups.get_mut(&leaf).expect("route ends in a leaf");
                g.0.push(surv);
                g.1.push(weight);
            }
            Err(e) => errors.push(format!("row {row}: {e}")),
        }
    }
    report_row_errors(&errors)?;
    if dropped > 0 {
        eprintln!("excluded {dropped} rows with missing time, event or weight");
    }

    let mut files = Vec::new();
    for (leaf, (response, w)) in groups {
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            eprintln!("leaf {leaf}: no observations, no curve written");
            continue;
        }
        let w = CaseWeights::new(w).map_err(CliError::data)?;
        let curve = km_estimate(&response, &w).map_err(CliError::data)?;
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).map_err(CliError::output)?;
        files.push((args.out_dir.join(format!("leaf_{leaf}.csv")), buf));
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::output(format!("cannot create {}: {e}", args.out_dir.display())))?;
    for (path, buf) in files {
        write_atomic(&path, &buf)?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg = SimConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_config_text(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    }
    let num = |v: Option<f64>| v.map(|x| x.to_string());
    let overrides = [
        ("n", args.n.map(|x| x.to_string())),
        ("seed", args.seed.map(|x| x.to_string())),
        ("meld_threshold", num(args.threshold)),
        ("hazard_ratio", num(args.hazard_ratio)),
        ("censor_fraction", num(args.censor_frac)),
        ("age_effect_threshold", num(args.age_threshold)),
        ("age_effect_ratio", num(args.age_ratio)),
        ("hcc_effect_ratio", num(args.hcc_ratio)),
        ("meld_mode", args.meld_mode.clone()),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v).map_err(CliError::usage)?;
        }
    }
    cfg.validate().map_err(CliError::usage)?;
    let ds = simulate_cohort(&cfg).map_err(CliError::usage)?;
    let mut buf = Vec::new();
    ds.write_csv(&mut buf, TIME_COLUMN, EVENT_COLUMN)
        .map_err(CliError::output)?;
    write_atomic(&args.out, &buf)?;
    let summary = summarize(&ds).map_err(CliError::output)?;
    println!("{summary}");
    Ok(())
}
