//! Monte Carlo benchmark harness: seeded replicates of the simulation
//! designs, each fit by several methods and scored against the generating
//! labels.
//!
//! Every replicate derives its own seed from the base seed and its index,
//! so reports are deterministic no matter how replicates are scheduled
//! across workers. Errors are reported in percent.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tnmm::deem::{self, DeemConfig};
use tnmm::em::{self, EmConfig};
use tnmm::init::{self, KmeansConfig};
use tnmm::model::{self, TnmmParams};
use tnmm::sim::{self, LabeledDataset, SimSpec};

use crate::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Assignment by the generating parameters; the floor every estimator
    /// is judged against. Needs simulated data.
    Optimal,
    /// The k-means labels that initialize the other estimators.
    Kmeans,
    /// Unpenalized EM with flip-flop covariance updates.
    Em,
    /// Doubly-enhanced EM with the penalty level tuned by BIC.
    Deem,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Optimal, Method::Kmeans, Method::Em, Method::Deem];

    pub fn name(self) -> &'static str {
        match self {
            Method::Optimal => "optimal",
            Method::Kmeans => "kmeans",
            Method::Em => "em",
            Method::Deem => "deem",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "optimal" => Ok(Method::Optimal),
            "kmeans" => Ok(Method::Kmeans),
            "em" => Ok(Method::Em),
            "deem" => Ok(Method::Deem),
            other => Err(format!("unknown method '{other}'; expected optimal, kmeans, em, or deem")),
        }
    }
}

pub fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let m: Method = name.parse().map_err(CliError::Usage)?;
        if out.contains(&m) {
            return Err(CliError::Usage(format!("method '{m}' listed twice")));
        }
        out.push(m);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    /// Worker threads; 0 picks the rayon default for the machine.
    pub workers: usize,
}

/// One (model, method) aggregate. Means and standard errors are percents
/// over the replicates that succeeded; a cell where every replicate failed
/// has no mean. The standard error needs at least two successes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_se: Option<f64>,
    pub replicates_ok: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
    /// Mean outer-iteration count, for the iterative methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_iters: Option<f64>,
    /// Seconds inside this method's own fitting code, summed over
    /// replicates. The shared k-means initialization is accounted to the
    /// kmeans row.
    pub wall_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub k: usize,
    pub dims: Vec<usize>,
    pub n: usize,
    pub cells: Vec<CellReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub replicates: usize,
    pub models: Vec<ModelReport>,
}

/// One separation level of the sweep: the scale factor `a`, the two error
/// aggregates, and how many iterations the tuned fit needed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deem_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deem_se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deem_mean_iters: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub replicates: usize,
    pub rows: Vec<SweepRow>,
}

/// Splitmix64-style scramble of (seed, replicate). Consecutive replicate
/// indices land far apart, and replicate 17 of seed 3 never collides with
/// replicate 3 of seed 17 in any systematic way.
fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    let mut z = seed ^ (replicate as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct MethodOutcome {
    error: f64,
    iters: Option<usize>,
    secs: f64,
}

type MethodResult = std::result::Result<MethodOutcome, String>;

fn optimal_outcome(ds: &LabeledDataset, k: usize) -> MethodResult {
    let t0 = Instant::now();
    let run = || -> tnmm::Result<f64> {
        let discs = model::discriminants(&ds.truth)?;
        let mut labels = Vec::with_capacity(ds.data.len());
        for x in &ds.data {
            labels.push(model::optimal_assign(x, &ds.truth, &discs)?);
        }
        sim::clustering_error(&labels, &ds.labels, k)
    };
    run()
        .map(|error| MethodOutcome { error, iters: None, secs: t0.elapsed().as_secs_f64() })
        .map_err(|e| e.to_string())
}

fn em_outcome(ds: &LabeledDataset, k: usize, start: &TnmmParams) -> MethodResult {
    let t0 = Instant::now();
    em::em_fit(&ds.data, k, &EmConfig::default(), start)
        .and_then(|fit| {
            let error = sim::clustering_error(&fit.labels, &ds.labels, k)?;
            Ok(MethodOutcome {
                error,
                iters: Some(fit.iters),
                secs: t0.elapsed().as_secs_f64(),
            })
        })
        .map_err(|e| e.to_string())
}

fn deem_outcome(ds: &LabeledDataset, k: usize, start: &TnmmParams, seed: u64) -> MethodResult {
    let t0 = Instant::now();
    let config = DeemConfig { rng_seed: seed, ..DeemConfig::default() };
    let grid = deem::default_lambda_grid(start);
    deem::tune(&ds.data, k, &grid, &config, start)
        .and_then(|t| {
            let error = sim::clustering_error(&t.fit.labels, &ds.labels, k)?;
            Ok(MethodOutcome {
                error,
                iters: Some(t.fit.iters),
                secs: t0.elapsed().as_secs_f64(),
            })
        })
        .map_err(|e| e.to_string())
}

/// Generates one replicate's data and runs every requested method on it.
/// The estimation methods share one k-means initialization.
fn run_replicate(spec: &SimSpec, methods: &[Method]) -> Vec<MethodResult> {
    let ds = match sim::generate(spec) {
        Ok(ds) => ds,
        Err(e) => return methods.iter().map(|_| Err(format!("generate: {e}"))).collect(),
    };
    let k = spec.k;
    let mut init_state: Option<std::result::Result<(Vec<usize>, TnmmParams, f64), String>> =
        None;
    if methods.iter().any(|m| *m != Method::Optimal) {
        let t0 = Instant::now();
        let km = KmeansConfig { seed: spec.seed, ..KmeansConfig::default() };
        let res = init::kmeans_labels(&ds.data, k, &km)
            .and_then(|labels| {
                let params = init::init_params(&ds.data, &labels, k)?;
                Ok((labels, params))
            })
            .map(|(labels, params)| (labels, params, t0.elapsed().as_secs_f64()))
            .map_err(|e| format!("init: {e}"));
        init_state = Some(res);
    }

    methods
        .iter()
        .map(|&m| match m {
            Method::Optimal => optimal_outcome(&ds, k),
            Method::Kmeans => match init_state.as_ref().unwrap() {
                Ok((labels, _, secs)) => sim::clustering_error(labels, &ds.labels, k)
                    .map(|error| MethodOutcome { error, iters: None, secs: *secs })
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            },
            Method::Em => match init_state.as_ref().unwrap() {
                Ok((_, start, _)) => em_outcome(&ds, k, start),
                Err(e) => Err(e.clone()),
            },
            Method::Deem => match init_state.as_ref().unwrap() {
                Ok((_, start, _)) => deem_outcome(&ds, k, start, spec.seed),
                Err(e) => Err(e.clone()),
            },
        })
        .collect()
}

fn mean_and_se(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

fn aggregate(model: &str, spec: &SimSpec, rows: &[Vec<MethodResult>], methods: &[Method]) -> ModelReport {
    let mut cells = Vec::with_capacity(methods.len());
    for (mi, &method) in methods.iter().enumerate() {
        let mut errs = Vec::new();
        let mut iters = Vec::new();
        let mut failures = Vec::new();
        let mut wall = 0.0;
        for (r, row) in rows.iter().enumerate() {
            match &row[mi] {
                Ok(out) => {
                    errs.push(out.error * 100.0);
                    if let Some(it) = out.iters {
                        iters.push(it as f64);
                    }
                    wall += out.secs;
                }
                Err(msg) => failures.push(format!("replicate {r}: {msg}")),
            }
        }
        let (error_mean, error_se) = mean_and_se(&errs);
        let note = match (errs.len(), error_se) {
            (0, _) => Some("every replicate failed".to_string()),
            (1, None) => Some("standard error needs at least two replicates".to_string()),
            _ => None,
        };
        let mean_iters =
            (!iters.is_empty()).then(|| iters.iter().sum::<f64>() / iters.len() as f64);
        cells.push(CellReport {
            method,
            error_mean,
            error_se,
            replicates_ok: errs.len(),
            failures,
            mean_iters,
            wall_secs: wall,
            note,
        });
    }
    ModelReport {
        model: model.to_string(),
        k: spec.k,
        dims: spec.dims.clone(),
        n: spec.k * spec.n_per_cluster,
        cells,
    }
}

fn make_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("worker pool: {e}")))
}

fn check_common(opts: &BenchOptions) -> Result<()> {
    if opts.replicates == 0 {
        return Err(CliError::Usage("replicates must be at least 1".into()));
    }
    if opts.methods.is_empty() {
        return Err(CliError::Usage("no methods requested".into()));
    }
    Ok(())
}

/// Runs the named benchmark designs. Per-replicate failures land in the
/// report; only an unknown model name or an empty grid aborts the run.
pub fn run_benchmark(models: &[String], opts: &BenchOptions) -> Result<BenchmarkReport> {
    let mut specs = Vec::with_capacity(models.len());
    for name in models {
        specs.push((name.to_ascii_lowercase(), sim::model_spec(name, 0)?));
    }
    run_benchmark_specs(&specs, opts)
}

/// As [`run_benchmark`] but over explicit designs; the benchmark models are
/// just named presets of this.
pub fn run_benchmark_specs(
    specs: &[(String, SimSpec)],
    opts: &BenchOptions,
) -> Result<BenchmarkReport> {
    check_common(opts)?;
    if specs.is_empty() {
        return Err(CliError::Usage("no models requested".into()));
    }
    let pool = make_pool(opts.workers)?;
    let mut reports = Vec::with_capacity(specs.len());
    for (name, base) in specs {
        let rows: Vec<Vec<MethodResult>> = pool.install(|| {
            (0..opts.replicates)
                .into_par_iter()
                .map(|r| {
                    let spec =
                        SimSpec { seed: replicate_seed(opts.seed, r), ..base.clone() };
                    run_replicate(&spec, &opts.methods)
                })
                .collect()
        });
        reports.push(aggregate(name, base, &rows, &opts.methods));
    }
    Ok(BenchmarkReport { seed: opts.seed, replicates: opts.replicates, models: reports })
}

/// Error and iteration profile of the two-cluster benchmark design as its
/// separation is scaled by `a` (the mean generator is scaled by sqrt(a)).
/// Replicate seeds are shared across levels, so the comparison between
/// levels uses common random numbers.
pub fn run_delta_sweep(a_values: &[f64], opts: &BenchOptions) -> Result<SweepReport> {
    let base = sim::model_spec("m1", 0)?;
    run_delta_sweep_with(&base, a_values, opts)
}

pub fn run_delta_sweep_with(
    base: &SimSpec,
    a_values: &[f64],
    opts: &BenchOptions,
) -> Result<SweepReport> {
    check_common(opts)?;
    if a_values.is_empty() {
        return Err(CliError::Usage("no separation scales requested".into()));
    }
    for &a in a_values {
        if !(a.is_finite() && a > 0.0) {
            return Err(CliError::Usage(format!(
                "separation scale must be positive and finite, got {a}"
            )));
        }
    }
    let methods = [Method::Optimal, Method::Deem];
    let sweep_opts = BenchOptions { methods: methods.to_vec(), ..opts.clone() };
    let pool = make_pool(opts.workers)?;
    let mut rows_out = Vec::with_capacity(a_values.len());
    for &a in a_values {
        let scaled = base.with_mean_scale(a.sqrt());
        let rows: Vec<Vec<MethodResult>> = pool.install(|| {
            (0..opts.replicates)
                .into_par_iter()
                .map(|r| {
                    let spec =
                        SimSpec { seed: replicate_seed(opts.seed, r), ..scaled.clone() };
                    run_replicate(&spec, &sweep_opts.methods)
                })
                .collect()
        });
        let agg = aggregate("m1", &scaled, &rows, &sweep_opts.methods);
        let optimal = &agg.cells[0];
        let deem = &agg.cells[1];
        let mut failures = optimal.failures.clone();
        failures.extend(deem.failures.iter().cloned());
        rows_out.push(SweepRow {
            a,
            optimal_error: optimal.error_mean,
            optimal_se: optimal.error_se,
            deem_error: deem.error_mean,
            deem_se: deem.error_se,
            deem_mean_iters: deem.mean_iters,
            failures,
        });
    }
    Ok(SweepReport { seed: opts.seed, replicates: opts.replicates, rows: rows_out })
}
