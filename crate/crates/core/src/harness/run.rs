//! End-to-end simulation driver: sample, partition, fit per machine, inject
//! failures, aggregate with each requested method, score, and emit CSV rows.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::aggregate::{
    coat, coat_from_distances, dfmr_with_coat, mm_reduce, mm_reduce_restarts, trim, CoatResult,
    LocalEstimateSet, MmOptions, ReduceOptions,
};
use crate::byzantine::{inject, select_failure_set, FailureKind};
use crate::divergence::CostKind;
use crate::em::{kmeanspp_init_gamma, kmeanspp_init_gaussian, pmle_em_gamma, pmle_em_gaussian};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, InitPolicy, Method};
use crate::metrics::{ari, cluster_assign, w1};
use crate::mixture::{align, partition, Family, MixingDistribution, MAX_ALIGN_ORDER};
use crate::seed::{self, stream};

/// Held-out test-set size cap for the clustering score.
const TEST_SIZE_CAP: usize = 100_000;

/// One scored aggregation: a CSV row.
#[derive(Debug, Clone)]
pub struct ResultRecord {
    pub rep: usize,
    pub method: Method,
    pub failure: FailureKind,
    pub alpha: f64,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub rho: f64,
    pub w1: f64,
    pub ari: f64,
    pub fit_ms: f64,
    pub agg_ms: f64,
}

/// A repetition that aborted; the batch continues without it.
#[derive(Debug, Clone)]
pub struct RepetitionFailure {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub method: Method,
    pub failure: FailureKind,
    pub alpha: f64,
    pub count: usize,
    pub w1_median: f64,
    pub w1_iqr: f64,
    pub ari_median: f64,
    pub ari_iqr: f64,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<ResultRecord>,
    pub failures: Vec<RepetitionFailure>,
    pub csv_path: PathBuf,
    pub summary: Vec<SummaryRow>,
}

/// Reduction cost for the family: KL for Gaussians, squared Euclidean on
/// `(shape, scale)` for Gammas.
pub fn default_cost(family: Family) -> CostKind {
    match family {
        Family::Gaussian => CostKind::Kl,
        Family::Gamma => CostKind::SqEuclidean,
    }
}

/// Sample `n * m` observations from the truth, partition them, and fit the
/// penalized MLE on each chunk (in parallel). Deterministic in `rep_master`.
pub fn fit_local_estimates(
    cfg: &ExperimentConfig,
    truth: &MixingDistribution,
    rep_master: u64,
) -> Result<Vec<MixingDistribution>> {
    let total = cfg
        .n
        .checked_mul(cfg.m)
        .ok_or_else(|| Error::config("n", "n * m overflows"))?;
    let data = truth.sample(total, &mut seed::rng(rep_master, &[stream::DATA]))?;
    let chunks = partition(&data, cfg.m, &mut seed::rng(rep_master, &[stream::PARTITION]))?;
    chunks
        .par_iter()
        .enumerate()
        .map(|(i, chunk)| {
            let init = match cfg.init {
                InitPolicy::Truth => truth.clone(),
                InitPolicy::Kmeanspp => {
                    let mut rng = seed::rng(rep_master, &[stream::INIT, i as u64]);
                    match cfg.family {
                        Family::Gaussian => kmeanspp_init_gaussian(chunk, cfg.k, &mut rng)?,
                        Family::Gamma => kmeanspp_init_gamma(chunk, cfg.k, &mut rng)?,
                    }
                }
            };
            let fit = match cfg.family {
                Family::Gaussian => pmle_em_gaussian(chunk, cfg.k, &init, &cfg.em)?,
                Family::Gamma => pmle_em_gamma(chunk, cfg.k, &init, &cfg.em)?,
            };
            Ok(fit.estimate)
        })
        .collect()
}

/// Apply the failure model: replace the estimates of machines in the failure
/// set with injected values, each drawn from its own noise stream.
pub fn transmit(
    fits: &[MixingDistribution],
    kind: FailureKind,
    alpha: f64,
    rep_master: u64,
) -> Result<LocalEstimateSet> {
    let m = fits.len();
    let failed = select_failure_set(
        m,
        alpha,
        &mut seed::rng(rep_master, &[stream::FAILURE_SELECT, alpha.to_bits()]),
    )?;
    let mut mask = vec![false; m];
    for &i in &failed {
        mask[i] = true;
    }
    let kind_tag = kind.as_str().as_bytes()[0] as u64;
    let transmitted: Vec<MixingDistribution> = fits
        .iter()
        .enumerate()
        .map(|(i, fit)| {
            if mask[i] {
                let mut rng = seed::rng(
                    rep_master,
                    &[stream::FAILURE_NOISE, kind_tag, alpha.to_bits(), i as u64],
                );
                inject(kind, fit, &mut rng)
            } else {
                Ok(fit.clone())
            }
        })
        .collect::<Result<_>>()?;
    LocalEstimateSet::new(transmitted, vec![1.0 / m as f64; m], Some(mask))
}

/// Run one aggregation method against the transmitted set. The COAT passed
/// in is shared across methods; the oracle recomputes it on the failure-free
/// subset.
pub fn run_method(
    method: Method,
    set: &LocalEstimateSet,
    shared_coat: &CoatResult,
    cfg: &ExperimentConfig,
) -> Result<MixingDistribution> {
    let mm = MmOptions {
        cost: default_cost(cfg.family),
        tol: cfg.mm_tol,
        max_iters: cfg.mm_max_iters,
    };
    let opts = ReduceOptions {
        mm: mm.clone(),
        restarts: cfg.restarts,
        restart_seed: cfg.master_seed,
    };
    match method {
        Method::Vanilla => {
            Ok(dfmr_with_coat(set, shared_coat.clone(), f64::INFINITY, cfg.k, &opts)?.estimate)
        }
        Method::Dfmr => {
            Ok(dfmr_with_coat(set, shared_coat.clone(), cfg.rho, cfg.k, &opts)?.estimate)
        }
        Method::Dfmr1 => {
            Ok(dfmr_with_coat(set, shared_coat.clone(), 1.0, cfg.k, &opts)?.estimate)
        }
        Method::Coat => Ok(set.estimates()[shared_coat.index].clone()),
        Method::Trim => {
            let init = &set.estimates()[shared_coat.index];
            Ok(trim(set, cfg.eta, cfg.k, init, mm.cost)?.estimate)
        }
        Method::Oracle => {
            let mask = set
                .failure_mask()
                .ok_or_else(|| Error::Aggregation("oracle needs a failure mask".into()))?;
            let clean: Vec<usize> = (0..set.len()).filter(|&i| !mask[i]).collect();
            if clean.len() == set.len() {
                // No failures: identical to the vanilla reduction.
                return Ok(dfmr_with_coat(set, shared_coat.clone(), f64::INFINITY, cfg.k, &opts)?
                    .estimate);
            }
            let sub = set.subset(&clean)?;
            let sub_coat = if clean.len() >= 2 {
                coat(&sub)?
            } else {
                coat_from_distances(nalgebra::DMatrix::zeros(1, 1))
                    .unwrap_or_else(|_| unreachable!())
            };
            let init = &sub.estimates()[sub_coat.index];
            let pooled = sub.pooled_atoms();
            let result = if cfg.restarts == 0 {
                mm_reduce(&pooled, cfg.k, init, &mm)?
            } else {
                let mut rng = seed::rng(cfg.master_seed, &[stream::RESTART]);
                mm_reduce_restarts(&pooled, cfg.k, init, &mm, cfg.restarts, &mut rng)?
            };
            Ok(result.estimate)
        }
    }
}

fn rho_used(method: Method, cfg: &ExperimentConfig) -> f64 {
    match method {
        Method::Dfmr1 => 1.0,
        _ => cfg.rho,
    }
}

/// One full repetition: fit once, then score every (alpha, failure, method)
/// combination. Record order is deterministic: alphas, then failure kinds,
/// then methods, in config order.
pub fn run_repetition(
    cfg: &ExperimentConfig,
    truth: &MixingDistribution,
    rep: usize,
    dump_dir: Option<&Path>,
) -> Result<Vec<ResultRecord>> {
    let rep_master = seed::derive(cfg.master_seed, &[stream::REPETITION, rep as u64]);

    let t_fit = Instant::now();
    let fits = fit_local_estimates(cfg, truth, rep_master)?;
    let fit_ms = t_fit.elapsed().as_secs_f64() * 1e3;

    let test_size = (cfg.n * cfg.m).min(TEST_SIZE_CAP);
    let test = truth.sample(test_size, &mut seed::rng(rep_master, &[stream::HELD_OUT]))?;
    let truth_labels = cluster_assign(truth, &test)?;

    let mut records = Vec::new();
    for &alpha in &cfg.alphas {
        for &kind in &cfg.failures {
            let set = transmit(&fits, kind, alpha, rep_master)?;
            let t_coat = Instant::now();
            let shared_coat = coat(&set)?;
            let coat_ms = t_coat.elapsed().as_secs_f64() * 1e3;
            for &method in &cfg.methods {
                let t_agg = Instant::now();
                let estimate = run_method(method, &set, &shared_coat, cfg)?;
                // The shared distance matrix is part of every method's
                // aggregation except the oracle's, which builds its own.
                let agg_ms = t_agg.elapsed().as_secs_f64() * 1e3
                    + if method == Method::Oracle { 0.0 } else { coat_ms };

                let aligned = if cfg.k <= MAX_ALIGN_ORDER {
                    let alignment = align(&estimate, truth)?;
                    estimate.permuted(&alignment.permutation)?
                } else {
                    estimate.clone()
                };
                let w1_value = w1(&aligned, truth)?;
                let labels = cluster_assign(&aligned, &test)?;
                let ari_value = ari(&labels, &truth_labels)?;

                if let Some(dir) = dump_dir {
                    let name = format!(
                        "rep{rep}_{}_{}_{}.json",
                        kind.as_str(),
                        alpha,
                        method.as_str()
                    );
                    crate::mixture::json::write_file(&aligned, &dir.join(name))?;
                }

                records.push(ResultRecord {
                    rep,
                    method,
                    failure: kind,
                    alpha,
                    m: cfg.m,
                    n: cfg.n,
                    k: cfg.k,
                    d: cfg.d,
                    rho: rho_used(method, cfg),
                    w1: w1_value,
                    ari: ari_value,
                    fit_ms,
                    agg_ms,
                });
            }
        }
    }
    Ok(records)
}

pub const CSV_HEADER: &str = "rep,method,failure,alpha,m,n,K,d,rho,w1,ari,fit_ms,agg_ms";

pub fn csv_row(r: &ResultRecord, timings: bool) -> String {
    let (fit, agg) = if timings {
        (r.fit_ms, r.agg_ms)
    } else {
        (0.0, 0.0)
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{:.3},{:.3}",
        r.rep,
        r.method.as_str(),
        r.failure.as_str(),
        r.alpha,
        r.m,
        r.n,
        r.k,
        r.d,
        r.rho,
        r.w1,
        r.ari,
        fit,
        agg
    )
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

pub fn summarize(records: &[ResultRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<(Method, FailureKind, f64)> = Vec::new();
    for r in records {
        let key = (r.method, r.failure, r.alpha);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    groups
        .iter()
        .map(|&(method, failure, alpha)| {
            let mut w1s: Vec<f64> = Vec::new();
            let mut aris: Vec<f64> = Vec::new();
            for r in records {
                if r.method == method && r.failure == failure && r.alpha == alpha {
                    w1s.push(r.w1);
                    aris.push(r.ari);
                }
            }
            w1s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            aris.sort_by(|a, b| a.partial_cmp(b).unwrap());
            SummaryRow {
                method,
                failure,
                alpha,
                count: w1s.len(),
                w1_median: quantile(&w1s, 0.5),
                w1_iqr: quantile(&w1s, 0.75) - quantile(&w1s, 0.25),
                ari_median: quantile(&aris, 0.5),
                ari_iqr: quantile(&aris, 0.75) - quantile(&aris, 0.25),
            }
        })
        .collect()
}

pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:<11} {:>6} {:>5} {:>12} {:>12} {:>9} {:>9}\n",
        "method", "failure", "alpha", "reps", "w1_median", "w1_iqr", "ari_med", "ari_iqr"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<8} {:<11} {:>6} {:>5} {:>12.6} {:>12.6} {:>9.4} {:>9.4}\n",
            r.method.as_str(),
            r.failure.as_str(),
            r.alpha,
            r.count,
            r.w1_median,
            r.w1_iqr,
            r.ari_median,
            r.ari_iqr
        ));
    }
    out
}

/// Run all repetitions (in parallel), write the CSV, and summarize. A failed
/// repetition becomes a structured entry in `failures` and `errors.txt`
/// rather than aborting the batch.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let truth = cfg.resolve_truth()?;
    std::fs::create_dir_all(&cfg.out)?;
    let csv_path = cfg.out.join("results.csv");
    // Open the output before any computation.
    let mut csv = std::fs::File::create(&csv_path)?;
    let dump_dir = if cfg.dump_estimates {
        let dir = cfg.out.join("estimates");
        std::fs::create_dir_all(&dir)?;
        Some(dir)
    } else {
        None
    };

    let mut results: Vec<(usize, Result<Vec<ResultRecord>>)> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| (rep, run_repetition(cfg, &truth, rep, dump_dir.as_deref())))
        .collect();
    results.sort_by_key(|(rep, _)| *rep);

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, result) in results {
        match result {
            Ok(rows) => records.extend(rows),
            Err(e) => failures.push(RepetitionFailure {
                rep,
                message: e.to_string(),
            }),
        }
    }

    writeln!(csv, "{CSV_HEADER}")?;
    for r in &records {
        writeln!(csv, "{}", csv_row(r, cfg.timings))?;
    }
    csv.flush()?;

    if !failures.is_empty() {
        let mut err_file = std::fs::File::create(cfg.out.join("errors.txt"))?;
        for f in &failures {
            writeln!(err_file, "rep {}: {}", f.rep, f.message)?;
        }
    }

    let summary = summarize(&records);
    Ok(ExperimentOutcome {
        records,
        failures,
        csv_path,
        summary,
    })
}
