//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use common::{cohort, fmt_rate, shape};
use survtree::data::{Covariate, Split};
use survtree::influence::{encode_covariate, logrank_scores, InfluenceScores};
use survtree::meld::{meld_score, simulate_cohort, AgeEffect, MeldRecord, SimConfig};
use survtree::partition::best_split;
use survtree::permstat::{linear_statistic, pvalue_exact, pvalue_montecarlo, standardize_max};
use survtree::{fit, fit_weighted, CaseWeights, Dataset, FitConfig, Surv};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn meld_root_cutoff(ds: &Dataset) -> Option<f64> {
    let tree = fit(ds, &FitConfig::default()).expect("fit");
    match tree.root().branch() {
        Some(b) if b.covariate == "meld" => match b.split {
            Split::LessEq { cutoff } => Some(cutoff),
            Split::InLevels { .. } => None,
        },
        _ => None,
    }
}

fn meld_recovery() -> Outcome {
    let start = Instant::now();
    let cutoffs: Vec<Option<f64>> = (1..=100u64)
        .into_par_iter()
        .map(|seed| meld_root_cutoff(&cohort(seed, 529, 3.0)))
        .collect();
    let on_meld = cutoffs.iter().flatten().count();
    let in_range = cutoffs
        .iter()
        .flatten()
        .filter(|&&c| (15.0..=17.0).contains(&c))
        .count();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        on_meld >= 95 && in_range >= 90 && secs < 300.0,
        format!(
            "root on meld {} (need 95), cut-off in [15, 17] {} (need 90), {secs:.1}s",
            fmt_rate(on_meld, 100),
            fmt_rate(in_range, 100)
        ),
    )
}

fn second_level_rate(cfg: impl Fn(u64) -> SimConfig + Sync, covariates: &[&str], target: &str) -> (usize, usize) {
    let hits: Vec<(bool, bool)> = (1..=100u64)
        .into_par_iter()
        .map(|seed| {
            let ds = simulate_cohort(&cfg(seed)).expect("simulate");
            let ds = ds.select(covariates).expect("select");
            let tree = fit(&ds, &FitConfig::default()).expect("fit");
            let second = tree.split_covariates_at(1);
            let root_meld = tree.root().branch().is_some_and(|b| b.covariate == "meld");
            let hit = tree.depth() >= 2 && second.contains(&target);
            (hit, hit && root_meld)
        })
        .collect();
    (
        hits.iter().filter(|h| h.0).count(),
        hits.iter().filter(|h| h.1).count(),
    )
}

fn interaction_age() -> Outcome {
    let (hits, under_meld) = second_level_rate(
        |seed| SimConfig {
            seed,
            age_effect: Some(AgeEffect {
                threshold: 33.2,
                ratio: 2.0,
            }),
            ..SimConfig::default()
        },
        &["meld", "age"],
        "age",
    );
    outcome(
        hits >= 80,
        format!(
            "age at second level {} (need 80; {under_meld} below a meld root)",
            fmt_rate(hits, 100)
        ),
    )
}

fn interaction_hcc() -> Outcome {
    let (hits, under_meld) = second_level_rate(
        |seed| SimConfig {
            seed,
            hcc_effect: Some(2.0),
            ..SimConfig::default()
        },
        &["meld", "hcc"],
        "hcc",
    );
    outcome(
        hits >= 80,
        format!(
            "hcc at second level {} (need 80; {under_meld} below a meld root)",
            fmt_rate(hits, 100)
        ),
    )
}

/// Exact permutation p-value by enumerating all `n!` orderings, with the
/// null moments taken from the enumerated distribution itself.
fn brute_force_exact(g: &Array2<f64>, a: &[f64]) -> f64 {
    let n = a.len();
    let p = g.ncols();
    let mut perms = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    permutations(&mut idx, 0, &mut perms);

    let stats: Vec<Vec<f64>> = perms
        .iter()
        .map(|perm| {
            (0..p)
                .map(|k| (0..n).map(|i| g[[i, k]] * a[perm[i]]).sum())
                .collect()
        })
        .collect();
    let count = stats.len() as f64;
    let mean: Vec<f64> = (0..p).map(|k| stats.iter().map(|t| t[k]).sum::<f64>() / count).collect();
    let var: Vec<f64> = (0..p)
        .map(|k| stats.iter().map(|t| (t[k] - mean[k]).powi(2)).sum::<f64>() / count)
        .collect();
    let cmax = |t: &[f64]| {
        (0..p)
            .filter(|&k| var[k] > 1e-10)
            .map(|k| (t[k] - mean[k]).abs() / var[k].sqrt())
            .fold(0.0, f64::max)
    };
    let observed = cmax(&stats[0]);
    if observed == 0.0 {
        return 1.0;
    }
    let hits = stats
        .iter()
        .filter(|t| cmax(t) + 1e-9 * observed.max(1.0) >= observed)
        .count();
    hits as f64 / count
}

fn permutations(idx: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == idx.len() {
        out.push(idx.clone());
        return;
    }
    for i in k..idx.len() {
        idx.swap(k, i);
        permutations(idx, k + 1, out);
        idx.swap(k, i);
    }
}

fn random_instance(rng: &mut ChaCha20Rng) -> (Array2<f64>, InfluenceScores) {
    let n = rng.random_range(3..=8);
    let response: Vec<Surv> = (0..n)
        .map(|i| Surv::new(rng.random_range(1..=10) as f64, i == 0 || rng.random_bool(0.7)))
        .collect();
    let scores = logrank_scores(&response, &CaseWeights::unit(n)).expect("scores");
    let cov = if rng.random_bool(0.5) {
        Covariate::numeric("x", (0..n).map(|_| rng.random_range(0..6) as f64).collect())
    } else {
        let levels = vec!["a".to_string(), "b".into(), "c".into()];
        Covariate::categorical("x", levels, (0..n).map(|_| rng.random_range(0..3)).collect())
    }
    .expect("covariate");
    (encode_covariate(&cov), scores)
}

fn exact_oracle() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let instances: Vec<_> = (0..200).map(|_| random_instance(&mut rng)).collect();
    let results: Vec<(bool, f64)> = instances
        .par_iter()
        .enumerate()
        .map(|(i, (g, a))| {
            let w = CaseWeights::unit(a.len());
            let exact = pvalue_exact(g.view(), a, &w).expect("exact");
            let mc = pvalue_montecarlo(g.view(), a, &w, 9999, i as u64).expect("mc");
            let se = (exact * (1.0 - exact) / 9999.0).sqrt();
            let brute = brute_force_exact(g, a.as_slice());
            ((mc - exact).abs() <= 3.0 * se, (exact - brute).abs())
        })
        .collect();
    let within = results.iter().filter(|r| r.0).count();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(
        within >= 198 && worst <= 1e-12,
        format!(
            "MC within 3 SE {} (need 198), max |exact - brute force| = {worst:.1e}",
            fmt_rate(within, 200)
        ),
    )
}

fn logrank_correctness() -> Outcome {
    let r = [Surv::new(1.0, true), Surv::new(2.0, true), Surv::new(3.0, true)];
    let a = logrank_scores(&r, &CaseWeights::unit(3)).expect("scores");
    let expected = [2.0 / 3.0, 1.0 / 6.0, -5.0 / 6.0];
    let example_err = a
        .as_slice()
        .iter()
        .zip(expected)
        .map(|(x, e)| (x - e).abs())
        .fold(0.0, f64::max);

    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let discrete = rng.random_bool(0.5);
        let response: Vec<Surv> = (0..n)
            .map(|_| {
                let t = if discrete {
                    rng.random_range(1..=20) as f64
                } else {
                    rng.random::<f64>() * 100.0
                };
                Surv::new(t, rng.random_bool(0.6))
            })
            .collect();
        let a = logrank_scores(&response, &CaseWeights::unit(n)).expect("scores");
        worst_sum = worst_sum.max(a.as_slice().iter().sum::<f64>().abs());
    }
    outcome(
        example_err <= 1e-12 && worst_sum <= 1e-10,
        format!("worked example error {example_err:.1e}, max |sum a| over 1000 datasets {worst_sum:.1e}"),
    )
}

fn null_calibration() -> Outcome {
    let split: usize = (1..=1000u64)
        .into_par_iter()
        .map(|seed| {
            let tree = fit(&cohort(seed, 529, 1.0), &FitConfig::default()).expect("fit");
            usize::from(tree.split_count() > 0)
        })
        .sum();
    let rate = split as f64 / 1000.0;
    let bound = 0.05 + 2.0 * (0.05f64 * 0.95 / 1000.0).sqrt();
    outcome(
        rate <= bound,
        format!("trees with a split {} = {rate:.3} (bound {bound:.4})", fmt_rate(split, 1000)),
    )
}

fn invariance_data(seed: u64) -> Dataset {
    let cfg = SimConfig {
        n: 200,
        seed: 5000 + seed,
        hcc_effect: Some(2.0),
        ..SimConfig::default()
    };
    simulate_cohort(&cfg).expect("simulate")
}

fn monotone_invariance() -> (usize, usize, usize) {
    let f = |x: f64| x.ln();
    let results: Vec<(bool, bool)> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let ds = invariance_data(s);
            let moved = ds.map_covariate("meld", f).expect("map");
            let cfg = FitConfig::default();
            let a = fit(&ds, &cfg).expect("fit");
            let b = fit(&moved, &cfg).expect("fit");
            let (sa, sb) = (shape(&a), shape(&b));
            let same_tree = sa.len() == sb.len()
                && sa.iter().zip(&sb).all(|(x, y)| {
                    x.0 == y.0
                        && x.1 == y.1
                        && match (&x.2, &y.2) {
                            (None, None) => true,
                            (Some(p), Some(q)) => {
                                p.covariate == q.covariate
                                    && p.left == q.left
                                    && match (&p.split, &q.split) {
                                        (Split::LessEq { cutoff: c }, Split::LessEq { cutoff: d })
                                            if p.covariate == "meld" =>
                                        {
                                            f(*c) == *d
                                        }
                                        (s, t) => s == t,
                                    }
                            }
                            _ => false,
                        }
                });

            let w = CaseWeights::unit(ds.n());
            let scores = logrank_scores(ds.response(), &w).expect("scores");
            let cut = |d: &Dataset| {
                best_split(&w, d.covariate("meld").expect("meld"), &scores, &cfg).map(|c| c.split)
            };
            let same_cut = match (cut(&ds), cut(&moved)) {
                (Some(Split::LessEq { cutoff: c }), Some(Split::LessEq { cutoff: d })) => f(c) == d,
                (x, y) => x == y,
            };
            (same_tree, same_cut)
        })
        .collect();
    (
        results.iter().filter(|r| r.0).count(),
        results.len(),
        results.iter().filter(|r| r.1).count(),
    )
}

fn permutation_invariance() -> (usize, usize) {
    let results: Vec<bool> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let ds = invariance_data(s);
            let mut rows: Vec<usize> = (0..ds.n()).collect();
            rows.shuffle(&mut ChaCha20Rng::seed_from_u64(s));
            let cfg = FitConfig::default();
            let a = fit(&ds, &cfg).expect("fit");
            let b = fit(&ds.take_rows(&rows), &cfg).expect("fit");
            shape(&a) == shape(&b)
        })
        .collect();
    (results.iter().filter(|&&r| r).count(), results.len())
}

fn affine_invariance() -> (usize, usize, f64) {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut ok = 0;
    for s in 0..50u64 {
        let ds = invariance_data(s);
        let a = logrank_scores(ds.response(), &CaseWeights::unit(ds.n())).expect("scores");
        let w = CaseWeights::unit(ds.n());
        let scale = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.01..100.0);
        let shift = rng.random_range(-1000.0..1000.0);
        let mut dev: f64 = 0.0;
        for name in ["meld", "age", "bmi"] {
            let stat = |d: &Dataset| {
                let g = encode_covariate(d.covariate(name).expect("covariate"));
                standardize_max(&linear_statistic(g.view(), &a, &w).expect("statistic"))
            };
            let moved = ds.map_covariate(name, |x| scale * x + shift).expect("map");
            dev = dev.max((stat(&ds) - stat(&moved)).abs());
        }
        worst = worst.max(dev);
        if dev <= 1e-9 {
            ok += 1;
        }
    }
    (ok, 50, worst)
}

fn replication_invariance() -> (usize, usize) {
    let trees: Vec<bool> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let ds = invariance_data(s);
            let mut rng = ChaCha20Rng::seed_from_u64(700 + s);
            let w: Vec<f64> = (0..ds.n()).map(|_| rng.random_range(0..=3) as f64).collect();
            let rows: Vec<usize> = (0..ds.n())
                .flat_map(|i| std::iter::repeat_n(i, w[i] as usize))
                .collect();
            let cfg = FitConfig::default();
            let a = fit_weighted(&ds, &CaseWeights::new(w).expect("weights"), &cfg).expect("fit");
            let b = fit(&ds.take_rows(&rows), &cfg).expect("fit");
            shape(&a) == shape(&b)
        })
        .collect();

    // exact p-values on small weighted samples against their replicated form
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut exact_ok = 0;
    for _ in 0..50 {
        let n = rng.random_range(3..=5);
        let w: Vec<f64> = (0..n).map(|i| if i < 2 { 1.0 } else { rng.random_range(0..=2) as f64 }).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let r: Vec<Surv> = (0..n)
            .map(|i| Surv::new(rng.random_range(1..=8) as f64, i == 0 || rng.random_bool(0.7)))
            .collect();
        let rows: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, w[i] as usize)).collect();
        let cw = CaseWeights::new(w).expect("weights");
        let g = Array2::from_shape_vec((n, 1), x.clone()).expect("shape");
        let a = logrank_scores(&r, &cw).expect("scores");
        let p_weighted = pvalue_exact(g.view(), &a, &cw).expect("exact");

        let rx: Vec<f64> = rows.iter().map(|&i| x[i]).collect();
        let rr: Vec<Surv> = rows.iter().map(|&i| r[i]).collect();
        let rg = Array2::from_shape_vec((rows.len(), 1), rx).expect("shape");
        let rw = CaseWeights::unit(rows.len());
        let ra = logrank_scores(&rr, &rw).expect("scores");
        let p_replicated = pvalue_exact(rg.view(), &ra, &rw).expect("exact");
        if (p_weighted - p_replicated).abs() < 1e-12 {
            exact_ok += 1;
        }
    }
    (trees.iter().filter(|&&t| t).count(), exact_ok)
}

fn invariance_monotone() -> Outcome {
    let (trees, n, cutoffs) = monotone_invariance();
    outcome(
        trees == n,
        format!(
            "ln(meld) gives identical trees {} (root meld cut-off search maps through ln in {})",
            fmt_rate(trees, n),
            fmt_rate(cutoffs, n)
        ),
    )
}

fn invariance_permutation() -> Outcome {
    let (ok, n) = permutation_invariance();
    outcome(ok == n, format!("identical trees {}", fmt_rate(ok, n)))
}

fn invariance_affine() -> Outcome {
    let (ok, n, worst) = affine_invariance();
    outcome(
        ok == n,
        format!("affine c_max within 1e-9 {} (max deviation {worst:.1e})", fmt_rate(ok, n)),
    )
}

fn invariance_replication() -> Outcome {
    let (trees, exact) = replication_invariance();
    outcome(
        trees == 50 && exact == 50,
        format!(
            "trees {}, exact p-values {}",
            fmt_rate(trees, 50),
            fmt_rate(exact, 50)
        ),
    )
}

fn meld_formula() -> Outcome {
    let rec = |b: f64, i: f64, c: f64, e: u8| MeldRecord {
        bilirubin: b,
        inr: i,
        creatinine: c,
        etiology_flag: e,
    };
    let score = |r: MeldRecord| meld_score(&r).expect("score");
    let examples = [
        (score(rec(1.0, 1.0, 1.0, 0)), 0.0),
        (score(rec(1.0, 1.0, 1.0, 1)), 6.4),
        (score(rec(2.0, 1.5, 1.2, 1)), 15.325),
    ];
    let examples_ok = examples.iter().all(|(v, e)| (v - e).abs() <= 1e-3);

    let grid: Vec<f64> = (0..10).map(|k| 0.4 + 0.5 * k as f64).collect();
    let mut violations = 0;
    for e in [0u8, 1] {
        for (i, &b) in grid.iter().enumerate() {
            for (j, &r) in grid.iter().enumerate() {
                for (k, &c) in grid.iter().enumerate() {
                    let v = score(rec(b, r, c, e));
                    if i > 0 && score(rec(grid[i - 1], r, c, e)) >= v {
                        violations += 1;
                    }
                    if j > 0 && score(rec(b, grid[j - 1], c, e)) >= v {
                        violations += 1;
                    }
                    if k > 0 && score(rec(b, r, grid[k - 1], e)) >= v {
                        violations += 1;
                    }
                    if e == 1 && (v - score(rec(b, r, c, 0)) - 6.4).abs() > 1e-12 {
                        violations += 1;
                    }
                }
            }
        }
    }
    outcome(
        examples_ok && violations == 0,
        format!(
            "examples {:.4} / {:.4} / {:.4}, monotonicity violations on 10x10x10 grid: {violations}",
            examples[0].0, examples[1].0, examples[2].0
        ),
    )
}

fn run_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_survtree");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).current_dir(dir).output().expect("spawn");
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let sim = run(&["simulate", "--seed", "11", "--out", "cohort.csv"]);
    let text = run(&[
        "fit", "--data", "cohort.csv", "--time", "time", "--event", "event",
        "--covariates", "sex,age,blood_type,bmi,etiology,hcc,meld",
        "--categorical", "sex", "--categorical", "blood_type", "--categorical", "etiology",
        "--categorical", "hcc", "--test", "mc:999:5", "--out", "tree.json",
    ]);
    run(&["export-dot", "--tree", "tree.json", "--out", "tree.dot"]);
    run(&["predict", "--tree", "tree.json", "--data", "cohort.csv", "--out", "pred.csv"]);
    run(&[
        "km", "--tree", "tree.json", "--data", "cohort.csv", "--time", "time", "--event", "event",
        "--out-dir", "km",
    ]);
    let mut files = vec![("simulate stdout".to_string(), sim), ("fit stdout".to_string(), text)];
    for name in ["cohort.csv", "tree.json", "tree.dot", "pred.csv"] {
        files.push((name.into(), std::fs::read(dir.join(name)).expect("read")));
    }
    let mut leaves: Vec<_> = std::fs::read_dir(dir.join("km"))
        .expect("km dir")
        .map(|e| e.expect("entry").path())
        .collect();
    leaves.sort();
    for p in leaves {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        files.push((name, std::fs::read(&p).expect("read")));
    }
    files
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    let fa = run_pipeline(a.path());
    let fb = run_pipeline(b.path());
    let same = fa == fb;
    outcome(
        same,
        format!(
            "{} artifacts compared ({}), {}",
            fa.len(),
            fa.iter().map(|f| f.0.as_str()).collect::<Vec<_>>().join(", "),
            if same { "byte-identical" } else { "differ" }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("1 MELD-16 recovery", meld_recovery),
        ("2a interaction recovery (age)", interaction_age),
        ("2b interaction recovery (HCC)", interaction_hcc),
        ("3 exact-test oracle equivalence", exact_oracle),
        ("4 log-rank score correctness", logrank_correctness),
        ("5 null calibration", null_calibration),
        ("6a invariance: monotone transform", invariance_monotone),
        ("6b invariance: row permutation", invariance_permutation),
        ("6c invariance: affine c_max", invariance_affine),
        ("6d invariance: weight replication", invariance_replication),
        ("7 MELD formula", meld_formula),
        ("8 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} criterion {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
