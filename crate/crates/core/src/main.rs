//! Command-line driver for split-and-conquer mixture experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mixagg::aggregate::{coat, dfmr, LocalEstimateSet, ReduceOptions};
use mixagg::divergence::CostKind;
use mixagg::error::{Error, Result};
use mixagg::harness::{render_summary, run_experiment, ExperimentConfig, Method};
use mixagg::metrics::max_omega;
use mixagg::mixture::{json, Family};
use mixagg::seed;

#[derive(Parser)]
#[command(name = "mixagg", version, about = "Byzantine-tolerant split-and-conquer learning of finite mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment from a TOML config.
    Run(RunArgs),
    /// Print the pairwise L2 distance matrix and the COAT index for a
    /// directory of mixture JSON files.
    Distances {
        /// Directory of *.json mixture estimates.
        estimates_dir: PathBuf,
    },
    /// One-shot aggregation of a directory of mixture JSON files.
    Reduce(ReduceArgs),
    /// Monte-Carlo estimate of the maximum pairwise overlap of a mixture.
    Maxomega {
        /// Mixture JSON file.
        mixture: PathBuf,
        /// Monte-Carlo draws per component.
        #[arg(long, default_value_t = 10_000)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated method list; overrides the config.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Comma-separated failure fractions; overrides the config.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
}

#[derive(Args)]
struct ReduceArgs {
    /// Directory of *.json mixture estimates.
    estimates_dir: PathBuf,
    /// Output mixture order.
    #[arg(long)]
    k: usize,
    /// Inflation factor; `inf` disables filtering.
    #[arg(long, default_value_t = 1.3)]
    rho: f64,
    /// Write the aggregated mixture here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Distances { estimates_dir } => cmd_distances(&estimates_dir),
        Command::Reduce(args) => cmd_reduce(args),
        Command::Maxomega { mixture, n_mc, seed: s } => cmd_maxomega(&mixture, n_mc, s),
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config {
                field: "threads".into(),
                message: e.to_string(),
            })?;
    }
    let mut cfg = ExperimentConfig::from_toml_file(&args.config)?;
    if let Some(out) = args.out {
        cfg.out = out;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(methods) = args.methods {
        cfg.methods = methods
            .iter()
            .map(|s| Method::parse(s))
            .collect::<Result<_>>()?;
    }
    if let Some(alphas) = args.alpha {
        for &a in &alphas {
            if !(0.0..0.5).contains(&a) {
                return Err(Error::config("alpha", format!("fraction {a} outside [0, 0.5)")));
            }
        }
        cfg.alphas = alphas;
    }
    let outcome = run_experiment(&cfg)?;
    print!("{}", render_summary(&outcome.summary));
    println!("wrote {} rows to {}", outcome.records.len(), outcome.csv_path.display());
    for f in &outcome.failures {
        eprintln!("repetition {} failed: {}", f.rep, f.message);
    }
    if outcome.records.is_empty() {
        return Err(Error::Aggregation("no repetition produced results".into()));
    }
    Ok(())
}

fn load_estimates(dir: &PathBuf) -> Result<LocalEstimateSet> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "no .json mixtures in {}",
            dir.display()
        )));
    }
    let estimates = paths
        .iter()
        .map(|p| json::read_file(p))
        .collect::<Result<Vec<_>>>()?;
    LocalEstimateSet::uniform(estimates)
}

fn cmd_distances(dir: &PathBuf) -> Result<()> {
    let set = load_estimates(dir)?;
    let result = coat(&set)?;
    let m = set.len();
    for i in 0..m {
        let row: Vec<String> = (0..m)
            .map(|j| format!("{}", result.distance_matrix[(i, j)]))
            .collect();
        println!("{}", row.join(","));
    }
    println!("coat_index,{}", result.index);
    println!("coat_radius,{}", result.r_coat);
    Ok(())
}

fn cmd_reduce(args: ReduceArgs) -> Result<()> {
    let set = load_estimates(&args.estimates_dir)?;
    let mut opts = ReduceOptions::default();
    opts.mm.cost = match set.family() {
        Family::Gaussian => CostKind::Kl,
        Family::Gamma => CostKind::SqEuclidean,
    };
    let result = dfmr(&set, args.rho, args.k, &opts)?;
    eprintln!(
        "coat index {}, selected {}/{} machines",
        result.coat.index,
        result.selected.len(),
        set.len()
    );
    let text = json::to_json(&result.estimate);
    match args.out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_maxomega(path: &PathBuf, n_mc: usize, s: u64) -> Result<()> {
    let mixture = json::read_file(path)?;
    let mut rng = seed::rng(s, &[seed::stream::TRUTH, 2]);
    let est = max_omega(&mixture, n_mc, &mut rng)?;
    println!("maxomega,{}", est.value);
    println!("std_error,{}", est.std_error);
    Ok(())
}
