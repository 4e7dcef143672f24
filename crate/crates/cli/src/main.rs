use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smac_core::envs::EnvKind;
use smac_core::error::Error;
use smac_core::harness::{self, ExperimentFile};
use smac_core::optim::OptimizerKind;
use smac_core::trainer::AgentConfig;
use smac_core::verify;

#[derive(Parser)]
#[command(name = "smac", version, about = "Rank-1 natural-gradient actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a grid of env × algorithm × seed runs and summarise them.
    Run(RunArgs),
    /// Compare per-transition updates (B = 1) with batch-mean updates (B = T).
    AblateBatch(AblateArgs),
    /// Rebuild summary tables and plots from a finished output directory.
    Plot(PlotArgs),
    /// Check the numerical kernels against reference implementations.
    Verify,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "env", value_name = "ENV")]
    envs: Vec<EnvKind>,
    #[arg(long = "opt", value_name = "OPT")]
    opts: Vec<OptimizerKind>,
    #[arg(long = "seed", value_name = "SEED")]
    seeds: Vec<u64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    timesteps: Option<usize>,
    /// Critic Adam steps per rollout.
    #[arg(long)]
    critic_epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value = "cartpole")]
    env: EnvKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    timesteps: Option<usize>,
    /// Batch sizes to compare; each must be 1 or the rollout length.
    #[arg(long, value_delimiter = ',', default_value = "1,1000")]
    sizes: Vec<usize>,
    #[arg(long, default_value = "results/ablation")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory written by `smac run`.
    #[arg(long, default_value = "results")]
    input: PathBuf,
    /// Where to write plots (defaults to <input>/plots).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::InvalidArgument(_))
}

fn run(args: RunArgs) -> Result<bool, Error> {
    let mut file = match &args.config {
        Some(path) => ExperimentFile::load(path)?,
        None => ExperimentFile::default(),
    };
    if !args.envs.is_empty() {
        file.envs = Some(args.envs);
    }
    if !args.opts.is_empty() {
        file.algorithms = Some(args.opts);
    }
    if !args.seeds.is_empty() {
        file.seeds = Some(args.seeds);
    }
    file.eta = args.eta.or(file.eta);
    file.lambda = args.lambda.or(file.lambda);
    file.total_timesteps = args.timesteps.or(file.total_timesteps);
    file.critic_epochs = args.critic_epochs.or(file.critic_epochs);
    file.out = args.out.or(file.out);
    file.jobs = args.jobs.or(file.jobs);

    let spec = file.to_spec();
    spec.validate()?;
    eprintln!("running {} runs with {} worker(s) into {}", spec.configs.len(), spec.jobs, spec.out_dir.display());
    let outcome = harness::run_experiment(&spec)?;
    for r in &outcome.records {
        if let smac_core::trainer::RunStatus::Failed { message } = &r.status {
            eprintln!("run {} failed: {message}", r.config.run_name());
        }
    }
    print!("{}", harness::summary_text(&outcome.summary));
    Ok(!outcome.any_failed())
}

fn ablate(args: AblateArgs) -> Result<bool, Error> {
    let mut base = AgentConfig::defaults_for(args.env, OptimizerKind::Smac, args.seed);
    if let Some(t) = args.timesteps {
        base.total_timesteps = t;
    }
    let report = harness::ablation_batch_size(&base, &args.sizes, Some(&args.out))?;
    print!("{}", report.to_text());
    Ok(true)
}

fn plot(args: PlotArgs) -> Result<bool, Error> {
    let runs = harness::load_runs(&args.input)?;
    if runs.is_empty() {
        return Err(Error::Config(format!("no runs found under {}", args.input.join("runs").display())));
    }
    let summary = harness::summarize_stored(&runs);
    harness::write_summary_csv(&args.input.join("summary.csv"), &summary)?;
    std::fs::write(args.input.join("summary.txt"), harness::summary_text(&summary))?;
    let out = args.out.unwrap_or_else(|| args.input.join("plots"));
    for path in harness::emit_plots(&runs, &out)? {
        println!("{}", path.display());
    }
    print!("{}", harness::summary_text(&summary));
    Ok(true)
}

fn verify_all() -> Result<bool, Error> {
    let checks = verify::run_all()?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::AblateBatch(a) => ablate(a),
        Command::Plot(a) => plot(a),
        Command::Verify => verify_all(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
