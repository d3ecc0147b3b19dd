//! `deem`: simulate, fit, tune, and benchmark tensor normal mixture models
//! from the command line. Datasets are CSV payloads with JSON sidecars;
//! results and reports are JSON.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use deem_cli::bench::{self, BenchOptions, Method};
use deem_cli::dataset::{self, DatasetMeta, Truth};
use deem_cli::{CliError, Result};
use tnmm::deem::{self, DeemConfig};
use tnmm::em::{self, EmConfig};
use tnmm::init::{self, KmeansConfig};
use tnmm::sim::{self, SimSpec};

/// Model-based clustering for tensor observations, with a simulation and
/// benchmarking harness.
#[derive(Parser)]
#[command(name = "deem", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a dataset from a generator design and write it with sidecars.
    Simulate(SimulateArgs),
    /// Fit one dataset with one method and write a result summary.
    Fit(FitArgs),
    /// Replicated clustering-error benchmark of the built-in designs.
    Benchmark(BenchmarkArgs),
    /// Benchmark the two-cluster design as its separation is scaled.
    DeltaSweep(DeltaSweepArgs),
    /// Pick the cluster count by the smallest tuned information score.
    SelectK(SelectKArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator design as a JSON file (the library's SimSpec layout).
    #[arg(long, conflicts_with = "model")]
    spec: Option<PathBuf>,
    /// Built-in design name, m1 through m7.
    #[arg(long)]
    model: Option<String>,
    /// Seed for the built-in design; a --spec file carries its own.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Payload path; the .meta.json and .truth.json sidecars go next to it.
    #[arg(long)]
    out: PathBuf,
    /// Allow layouts with more than 20000 entries per observation.
    #[arg(long)]
    large: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset payload path (its .meta.json sidecar must exist).
    #[arg(long)]
    data: PathBuf,
    /// Number of clusters to fit.
    #[arg(long)]
    k: usize,
    /// One of deem, em, kmeans.
    #[arg(long, default_value = "deem")]
    method: String,
    /// Comma-separated penalty levels for deem; the default is a 20-level
    /// grid scaled to the initializer.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Seed for the k-means initializer.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Comma-separated design names, each m1 through m7.
    #[arg(long, required = true, value_delimiter = ',')]
    models: Vec<String>,
    /// Comma-separated subset of optimal,kmeans,em,deem; default all four.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 picks the machine default.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Allow designs with more than 20000 entries per observation (m7).
    #[arg(long)]
    large: bool,
    /// Report JSON path; stdout gets a summary either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DeltaSweepArgs {
    /// Comma-separated positive separation scales.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0, 4.0])]
    a_values: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 picks the machine default.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Report JSON path; stdout gets a summary either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectKArgs {
    /// Dataset payload path (its .meta.json sidecar must exist).
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated candidate cluster counts.
    #[arg(long, required = true, value_delimiter = ',')]
    k_grid: Vec<usize>,
    /// Comma-separated penalty levels; default is per-count automatic.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Seed for the per-count k-means initializers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Simulate(a) => run_simulate(a),
        Cmd::Fit(a) => run_fit(a),
        Cmd::Benchmark(a) => run_benchmark(a),
        Cmd::DeltaSweep(a) => run_delta_sweep(a),
        Cmd::SelectK(a) => run_select_k(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Observations above this many entries are refused without --large.
const LARGE_P: usize = 20_000;

fn guard_large(dims: &[usize], large: bool) -> Result<()> {
    let p: usize = dims.iter().product();
    if p > LARGE_P && !large {
        return Err(CliError::Usage(format!(
            "layout {dims:?} has {p} entries per observation; pass --large to proceed \
             (working memory stays in the per-mode factors, low hundreds of megabytes, \
             but runtime grows accordingly)"
        )));
    }
    Ok(())
}

fn emit<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    match out {
        Some(path) => dataset::write_json(path, value),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(value).expect("report serialization")
            );
            Ok(())
        }
    }
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let spec: SimSpec = match (&args.spec, &args.model) {
        (Some(path), None) => dataset::read_json(path)?,
        (None, Some(name)) => sim::model_spec(name, args.seed)?,
        _ => return Err(CliError::Usage("exactly one of --spec and --model is required".into())),
    };
    guard_large(&spec.dims, args.large)?;
    let ds = sim::generate(&spec)?;
    let meta = DatasetMeta {
        dims: spec.dims.clone(),
        n: ds.data.len(),
        k_true: Some(spec.k),
        seed: Some(spec.seed),
    };
    dataset::write_dataset(&args.out, &ds.data, &meta)?;
    dataset::write_json(
        &dataset::truth_path(&args.out),
        &Truth { labels: ds.labels, params: ds.truth },
    )?;
    println!(
        "wrote {} observations of shape {:?} to {}",
        meta.n,
        meta.dims,
        args.out.display()
    );
    Ok(())
}

/// What `fit` serializes. Fields the method does not produce are omitted:
/// kmeans gives labels only, em has no penalty level.
#[derive(Serialize)]
struct FitOutput {
    method: Method,
    k: usize,
    dims: Vec<usize>,
    n: usize,
    labels: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pis: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    support_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    /// Permutation-minimized error against the truth sidecar, when the
    /// dataset has one for the same cluster count.
    #[serde(skip_serializing_if = "Option::is_none")]
    error_vs_truth: Option<f64>,
}

fn run_fit(args: FitArgs) -> Result<()> {
    let method: Method = args.method.parse().map_err(CliError::Usage)?;
    if method == Method::Optimal {
        return Err(CliError::Usage(
            "the optimal rule needs generating parameters; it runs inside `benchmark`".into(),
        ));
    }
    if args.lambda_grid.is_some() && method != Method::Deem {
        return Err(CliError::Usage(format!(
            "--lambda-grid only applies to the deem method, not {method}"
        )));
    }
    let (data, meta) = dataset::read_dataset(&args.data)?;
    if args.k < 2 {
        return Err(CliError::Usage("--k must be at least 2".into()));
    }

    let km = KmeansConfig { seed: args.seed, ..KmeansConfig::default() };
    let labels = init::kmeans_labels(&data, args.k, &km)?;
    let mut out = FitOutput {
        method,
        k: args.k,
        dims: meta.dims.clone(),
        n: data.len(),
        labels,
        pis: None,
        bic: None,
        support_size: None,
        iters: None,
        lambda: None,
        error_vs_truth: None,
    };
    match method {
        Method::Kmeans => {}
        Method::Em => {
            let start = init::init_params(&data, &out.labels, args.k)?;
            let fit = em::em_fit(&data, args.k, &EmConfig::default(), &start)?;
            out.labels = fit.labels;
            out.pis = Some(fit.params.pis);
            out.bic = Some(fit.bic);
            out.support_size = Some(fit.support.len());
            out.iters = Some(fit.iters);
        }
        Method::Deem => {
            let start = init::init_params(&data, &out.labels, args.k)?;
            let grid = match &args.lambda_grid {
                Some(g) => g.clone(),
                None => deem::default_lambda_grid(&start),
            };
            let config = DeemConfig { rng_seed: args.seed, ..DeemConfig::default() };
            let tuned = deem::tune(&data, args.k, &grid, &config, &start)?;
            out.labels = tuned.fit.labels;
            out.pis = Some(tuned.fit.params.pis);
            out.bic = Some(tuned.fit.bic);
            out.support_size = Some(tuned.fit.support.len());
            out.iters = Some(tuned.fit.iters);
            out.lambda = Some(tuned.lambda);
        }
        Method::Optimal => unreachable!("rejected above"),
    }
    if let Some(truth) = dataset::read_truth(&args.data)? {
        if truth.params.k() == args.k {
            out.error_vs_truth = Some(sim::clustering_error(&out.labels, &truth.labels, args.k)?);
        }
    }
    emit(&args.out, &out)
}

fn percent(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}%"),
        None => "-".to_string(),
    }
}

fn run_benchmark(args: BenchmarkArgs) -> Result<()> {
    let methods = match &args.methods {
        Some(names) => bench::parse_methods(names)?,
        None => Method::ALL.to_vec(),
    };
    for name in &args.models {
        let spec = sim::model_spec(name, 0)?;
        guard_large(&spec.dims, args.large)?;
    }
    let opts = BenchOptions {
        methods,
        replicates: args.replicates,
        seed: args.seed,
        workers: args.workers,
    };
    let report = bench::run_benchmark(&args.models, &opts)?;
    for model in &report.models {
        for cell in &model.cells {
            println!(
                "{} {}: {} (se {}) over {} replicates, {:.1}s",
                model.model,
                cell.method,
                percent(cell.error_mean),
                percent(cell.error_se),
                cell.replicates_ok,
                cell.wall_secs
            );
        }
    }
    if let Some(path) = &args.out {
        dataset::write_json(path, &report)?;
    }
    Ok(())
}

fn run_delta_sweep(args: DeltaSweepArgs) -> Result<()> {
    let opts = BenchOptions {
        methods: vec![Method::Optimal, Method::Deem],
        replicates: args.replicates,
        seed: args.seed,
        workers: args.workers,
    };
    let report = bench::run_delta_sweep(&args.a_values, &opts)?;
    for row in &report.rows {
        println!(
            "a={}: optimal {} deem {} iters {}",
            row.a,
            percent(row.optimal_error),
            percent(row.deem_error),
            row.deem_mean_iters.map_or("-".to_string(), |v| format!("{v:.1}"))
        );
    }
    if let Some(path) = &args.out {
        dataset::write_json(path, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SelectKOutput {
    k: usize,
    lambda: f64,
    bic: f64,
    support_size: usize,
    labels: Vec<usize>,
    scores: Vec<deem::KScore>,
}

fn run_select_k(args: SelectKArgs) -> Result<()> {
    let (data, _) = dataset::read_dataset(&args.data)?;
    let config = DeemConfig { rng_seed: args.seed, ..DeemConfig::default() };
    let res = deem::select_k(&data, &args.k_grid, args.lambda_grid.as_deref(), &config)?;
    let out = SelectKOutput {
        k: res.k,
        lambda: res.lambda,
        bic: res.fit.bic,
        support_size: res.fit.support.len(),
        labels: res.fit.labels,
        scores: res.scores,
    };
    if args.out.is_some() {
        println!("selected k = {} at lambda = {}", out.k, out.lambda);
    }
    emit(&args.out, &out)
}
