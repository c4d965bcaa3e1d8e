use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fedpg_core::experiment::{
    load_suite, mean_curve, run_suite, write_curve_csv, RunStatus, MANIFEST_FILE,
};
use fedpg_core::federation::RunConfig;
use fedpg_core::gradient::estimate_sigma;
use fedpg_core::policy::PolicyParams;
use fedpg_core::rng::{purpose, seeded, substream};
use fedpg_core::verify::{run_all, VerifyOptions};
use fedpg_core::{Algorithm, AttackType};

#[derive(Parser)]
#[command(
    name = "fedpg",
    version,
    about = "Fault-tolerant federated policy gradient simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over one or more seeds.
    Run(RunArgs),
    /// Check the implementation against the built-in oracles.
    Verify {
        /// Use the full problem sizes (slower).
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mean learning curve with a bootstrap band from a finished suite.
    Summarize {
        /// A manifest.json or the directory holding it.
        path: PathBuf,
        /// Output CSV; defaults to curve.csv next to the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        #[arg(long = "n_boot", default_value_t = 2000)]
        n_boot: usize,
    },
    /// Measure the spread of per-trajectory and batch gradients, to pick σ.
    Sigma {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 512)]
        trajectories: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "env_name")]
    env_name: Option<String>,
    /// fedpg_br, svrpg or gpomdp.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long = "num_worker")]
    num_worker: Option<usize>,
    #[arg(long = "num_Byzantine")]
    num_byzantine: Option<usize>,
    /// random-noise, random-action, sign-flip, fedpg or variance.
    #[arg(long = "attack_type")]
    attack_type: Option<String>,
    #[arg(long = "log_dir", default_value = "logs")]
    log_dir: PathBuf,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long = "multiple_run", default_value_t = 1)]
    multiple_run: u64,
    #[arg(long = "run_name")]
    run_name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-agent trajectory budget.
    #[arg(long = "max_trajectories")]
    max_trajectories: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let algorithm = self
            .algo
            .as_deref()
            .map(str::parse::<Algorithm>)
            .transpose()?;
        let num_agents = self.num_worker;
        let mut cfg = match &self.config {
            Some(path) => {
                RunConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?
            }
            None => {
                let alg = algorithm.unwrap_or(Algorithm::FedpgBr);
                let k = num_agents.unwrap_or(10);
                match self
                    .env_name
                    .as_deref()
                    .map(fedpg_core::env::normalize_env_id)
                    .as_deref()
                {
                    Some("chain") => RunConfig::chain(alg, k),
                    None | Some("cartpole") => RunConfig::cartpole(alg, k),
                    Some(other) => bail!("unknown environment {other:?}"),
                }
            }
        };
        if let Some(env) = &self.env_name {
            cfg.env.id = env.clone();
        }
        if let Some(alg) = algorithm {
            if alg != cfg.algorithm {
                let template = RunConfig::cartpole(alg, cfg.num_agents);
                cfg.batch = template.batch;
                cfg.inner_steps = template.inner_steps;
            }
            cfg.algorithm = alg;
        }
        if let Some(k) = num_agents {
            cfg.num_agents = k;
        }
        if let Some(n) = self.num_byzantine {
            cfg.num_byzantine = n;
        }
        if let Some(a) = &self.attack_type {
            cfg.attack = Some(a.parse::<AttackType>()?);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.max_trajectories {
            cfg.max_trajectories = m;
        }
        if let Some(s) = self.sigma {
            cfg.filter.sigma = s;
        }
        cfg.run_name = match &self.run_name {
            Some(name) => name.clone(),
            None if self.config.is_some() && !cfg.run_name.is_empty() => cfg.run_name.clone(),
            None => default_run_name(&cfg),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_run_name(cfg: &RunConfig) -> String {
    let mut name = format!(
        "{}_{}_k{}",
        fedpg_core::env::normalize_env_id(&cfg.env.id),
        cfg.algorithm,
        cfg.num_agents
    );
    if cfg.num_byzantine > 0 {
        if let Some(a) = cfg.attack {
            name.push_str(&format!("_{}{}", a.as_str(), cfg.num_byzantine));
        }
    }
    name
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.resolve()?;
    let seeds: Vec<u64> = (0..args.multiple_run.max(1))
        .map(|i| cfg.seed + i)
        .collect();
    let (manifest, path) = run_suite(&cfg, &seeds, &args.log_dir)?;
    let mut failed = false;
    for r in &manifest.runs {
        match r.status {
            RunStatus::Ok => println!(
                "seed {:>3}  rounds {:>5}  final mean return {:>8.2}",
                r.seed,
                r.rounds,
                r.final_mean_return.unwrap_or(f64::NAN)
            ),
            RunStatus::Failed => {
                failed = true;
                println!(
                    "seed {:>3}  FAILED  {}",
                    r.seed,
                    r.error.as_deref().unwrap_or("")
                );
            }
        }
    }
    println!("manifest: {}", path.display());
    Ok(if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_verify(full: bool, seed: u64) -> ExitCode {
    let opts = VerifyOptions {
        seed,
        ..if full {
            VerifyOptions::full()
        } else {
            VerifyOptions::quick()
        }
    };
    let results = run_all(&opts);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        println!(
            "{}  {:<width$}  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn cmd_summarize(path: &Path, out: Option<PathBuf>, level: f64, n_boot: usize) -> Result<()> {
    let manifest = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let (suite, runs) = load_suite(&manifest)?;
    let curve = mean_curve(&runs, level, n_boot, &mut seeded(0))?;
    let out = out.unwrap_or_else(|| manifest.with_file_name("curve.csv"));
    write_curve_csv(&out, &curve)?;
    let last = curve.last().context("empty curve")?;
    println!(
        "{}: {} runs, final mean return {:.2} [{:.2}, {:.2}] at {} trajectories",
        suite.run_name, last.n_runs, last.mean_return, last.ci_low, last.ci_high, last.trajectories
    );
    println!("curve: {}", out.display());
    Ok(())
}

fn cmd_sigma(args: &RunArgs, trajectories: usize, batch: usize) -> Result<()> {
    let cfg = args.resolve()?;
    let env = cfg.env.build()?;
    let spec = cfg.policy_spec(env.as_ref())?;
    let params = PolicyParams::init(spec, &mut substream(cfg.seed, &[purpose::INIT]))?;
    let estimator = cfg.estimator(env.spec().gamma);
    let report = estimate_sigma(
        env.as_ref(),
        &params,
        &estimator,
        trajectories,
        batch,
        &mut seeded(cfg.seed),
    )?;
    println!("trajectories        {}", report.n_trajectories);
    println!("max deviation       {:.6}", report.max_deviation);
    println!("mean deviation      {:.6}", report.mean_deviation);
    println!(
        "batch half-spread   {:.6}  (B = {})",
        report.batch_half_spread, report.batch_size
    );
    println!("configured sigma    {:.6}", cfg.filter.sigma);
    Ok(())
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(&args),
        Command::Verify { full, seed } => Ok(cmd_verify(full, seed)),
        Command::Summarize {
            path,
            out,
            level,
            n_boot,
        } => {
            cmd_summarize(&path, out, level, n_boot)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sigma {
            run,
            trajectories,
            batch,
        } => {
            cmd_sigma(&run, trajectories, batch)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
