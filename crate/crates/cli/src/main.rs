#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use insdvl_core::datagen::{build_dataset, generate_baselines, DatasetFile};
use insdvl_core::harness::{monte_carlo, run_filter};
use insdvl_core::par::derive_seed;
use insdvl_core::trees::{fit_ensemble, mean_predictor_mse, TreeEnsemble};
use insdvl_core::{Exec, QStrategy, StrategySpec};
use log::info;
use serde::Serialize;

mod config;

use config::Config;

#[derive(Parser, Debug)]
#[command(
    name = "insdvl",
    version,
    about = "INS/DVL filter with learned process-noise tuning"
)]
struct Cli {
    /// TOML configuration file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the train/test feature datasets.
    Generate,
    /// Fit the tree ensemble on a generated dataset.
    Train {
        /// Directory holding train.csv and test.csv (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Monte-Carlo comparison of process-noise strategies.
    Evaluate {
        #[arg(long)]
        runs: Option<usize>,
        /// Repeatable: constant:<q_f>,<q_w> | adaptive:<xi> | learned[:<rate_s>]
        #[arg(long = "strategy")]
        strategies: Vec<String>,
        #[arg(long)]
        trajectory: Option<String>,
        /// Model file (defaults to <out>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// One filter run with per-epoch output.
    Run {
        #[arg(long, default_value = "constant:0.01,0.001")]
        strategy: String,
        #[arg(long)]
        trajectory: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Index of the noise realization.
        #[arg(long, default_value_t = 0)]
        run: u64,
    },
}

#[derive(Serialize)]
struct TrainReport {
    format_version: u32,
    seed: u64,
    n_trees: usize,
    min_leaf: usize,
    n_train: usize,
    n_test: usize,
    test_mse: f64,
    mean_predictor_mse: f64,
    mse_ratio: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;

    match cli.command {
        Command::Generate => generate(&cfg, &cli.out, exec),
        Command::Train { data } => train(&cfg, data.as_deref().unwrap_or(&cli.out), &cli.out, exec),
        Command::Evaluate {
            runs,
            strategies,
            trajectory,
            model,
        } => {
            if let Some(r) = runs {
                cfg.evaluate.runs = r;
            }
            if !strategies.is_empty() {
                cfg.evaluate.strategies = strategies;
            }
            if let Some(t) = trajectory {
                cfg.evaluate.trajectory = t;
            }
            evaluate(&cfg, &cli.out, model, exec)
        }
        Command::Run {
            strategy,
            trajectory,
            model,
            run,
        } => {
            if let Some(t) = trajectory {
                cfg.evaluate.trajectory = t;
            }
            single_run(&cfg, &cli.out, &strategy, model, run)
        }
    }
}

fn generate(cfg: &Config, out: &Path, exec: Exec) -> Result<()> {
    let t0 = Instant::now();
    let recipe = cfg.recipe()?;
    let baselines = generate_baselines(recipe.rate_hz, recipe.duration_s)?;
    let (train, test) = build_dataset(&baselines, &recipe, exec)?;
    train.save(&out.join("train.csv"))?;
    test.save(&out.join("test.csv"))?;
    println!(
        "wrote {} training and {} test rows to {} in {:.1} s (seed {})",
        train.rows.len(),
        test.rows.len(),
        out.display(),
        t0.elapsed().as_secs_f64(),
        cfg.seed
    );
    Ok(())
}

fn train(cfg: &Config, data: &Path, out: &Path, exec: Exec) -> Result<()> {
    let t0 = Instant::now();
    let load = |name: &str| {
        let p = data.join(name);
        DatasetFile::load(&p).with_context(|| format!("loading {}", p.display()))
    };
    let (train_file, test_file) = (load("train.csv")?, load("test.csv")?);
    let window_len = train_file
        .window_len()
        .context("training set has no window_len metadata")?;
    let train = train_file.examples();
    let test = test_file.examples();
    info!("fitting on {} examples", train.len());
    let params = cfg.ensemble_params(window_len);
    let model = fit_ensemble(&train, &params, exec)?;
    model.save(&out.join("model.json"))?;

    let test_mse = model.evaluate_mse(&test)?;
    let base = mean_predictor_mse(&train, &test);
    let report = TrainReport {
        format_version: 1,
        seed: cfg.seed,
        n_trees: params.n_trees,
        min_leaf: params.min_leaf,
        n_train: train.len(),
        n_test: test.len(),
        test_mse,
        mean_predictor_mse: base,
        mse_ratio: test_mse / base,
    };
    fs::write(out.join("train_report.toml"), toml::to_string(&report)?)?;
    println!(
        "test MSE {test_mse:.6e}, mean predictor {base:.6e} (ratio {:.4}); {} trees in {:.1} s",
        test_mse / base,
        params.n_trees,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_model_if_needed(
    specs: &[StrategySpec],
    out: &Path,
    model: Option<PathBuf>,
) -> Result<Option<Arc<TreeEnsemble>>> {
    if !specs
        .iter()
        .any(|s| matches!(s, StrategySpec::Learned { .. }))
    {
        return Ok(None);
    }
    let path = model.unwrap_or_else(|| out.join("model.json"));
    let m = TreeEnsemble::load(&path)
        .with_context(|| format!("loading model {} (run `train` first)", path.display()))?;
    Ok(Some(Arc::new(m)))
}

fn evaluate(cfg: &Config, out: &Path, model: Option<PathBuf>, exec: Exec) -> Result<()> {
    let t0 = Instant::now();
    let specs = cfg.strategies()?;
    let run_cfg = cfg.run_config()?;
    let ensemble = load_model_if_needed(&specs, out, model)?;
    let report = monte_carlo(
        &run_cfg,
        &specs,
        ensemble,
        cfg.evaluate.runs,
        cfg.seed,
        exec,
    )?;
    let f = fs::File::create(out.join("report.csv"))?;
    report.to_csv(std::io::BufWriter::new(f))?;
    print!("{}", report.to_table());
    info!("evaluation took {:.1} s", t0.elapsed().as_secs_f64());
    Ok(())
}

fn single_run(
    cfg: &Config,
    out: &Path,
    strategy: &str,
    model: Option<PathBuf>,
    run: u64,
) -> Result<()> {
    let spec: StrategySpec = strategy.parse()?;
    let run_cfg = cfg.run_config()?;
    let ensemble = load_model_if_needed(&[spec], out, model)?;
    let strat = QStrategy::resolve(&spec, &run_cfg.nominal_q, ensemble)?;
    let streams = run_cfg.synthesize(derive_seed(cfg.seed, &[run]))?;
    let m = run_filter(&run_cfg, strat, &streams)?;
    if m.errors.is_empty() {
        bail!("run produced no DVL epochs");
    }

    let mut s = String::new();
    writeln!(s, "# format_version=1")?;
    writeln!(s, "# seed={}", cfg.seed)?;
    writeln!(s, "# run={run}")?;
    writeln!(s, "# strategy={spec}")?;
    writeln!(s, "# trajectory={}", run_cfg.trajectory)?;
    writeln!(s, "t,err_n,err_e,err_d,innov_n,innov_e,innov_d,q_trace")?;
    let period = run_cfg.sensors.dvl_period;
    for (i, (e, nu)) in m.errors.iter().zip(&m.innovations).enumerate() {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            (i + 1) as f64 * period,
            e[0],
            e[1],
            e[2],
            nu[0],
            nu[1],
            nu[2],
            m.q_trace[i]
        )?;
    }
    fs::write(out.join("run.csv"), s)?;
    println!(
        "{spec} on {}: SRMSE {:.6} m/s, SMAE {:.6} m/s over {} fixes",
        run_cfg.trajectory,
        m.srmse,
        m.smae,
        m.errors.len()
    );
    Ok(())
}
