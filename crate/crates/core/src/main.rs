use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use hetjm::diagnostics::{posterior_predictive, summarize, variance_screen_dataset};
use hetjm::io::{self, RunConfig};
use hetjm::{sampler, simulate, Error, Result};

#[derive(Parser)]
#[command(
    name = "hetjm",
    version,
    about = "Joint longitudinal/survival model with heteroskedastic residual variance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort and write longitudinal.csv and survival.csv
    Simulate(SimulateArgs),
    /// Fit the joint model and write draws.csv and summary.csv
    Fit(FitArgs),
    /// Summarise draws (split-R̂, quantiles) and screen a dataset for heteroskedasticity
    Diagnose(DiagnoseArgs),
    /// Draw posterior predictive replicates of the longitudinal measurements
    Ppc(PpcArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArgs {
    /// Longitudinal file (subject_id,occasion,time,y,z)
    #[arg(long = "long")]
    long: PathBuf,
    /// Survival file (subject_id,time,event)
    #[arg(long = "surv")]
    surv: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_subjects: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    chains: Option<usize>,
    /// Iterations per chain including warmup
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Suppress progress lines
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: Common,
    /// Draws file written by `fit`
    #[arg(long)]
    draws: Option<PathBuf>,
    #[arg(long = "long", requires = "surv")]
    long: Option<PathBuf>,
    #[arg(long = "surv", requires = "long")]
    surv: Option<PathBuf>,
    /// Summary output file
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Per-subject variance-screen output file
    #[arg(long)]
    screen: Option<PathBuf>,
}

#[derive(Args)]
struct PpcArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    draws: PathBuf,
    #[arg(long)]
    replicates: Option<usize>,
    /// Replicate output file
    #[arg(long)]
    out: PathBuf,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.n_subjects {
        cfg.n_subjects = n;
    }
    let data = simulate::simulate_cohort(&cfg.sim_config()?)?;
    create_dir(&args.out)?;
    io::write_dataset(
        &data,
        &args.out.join("longitudinal.csv"),
        &args.out.join("survival.csv"),
    )?;
    let events = data.iter().filter(|s| s.event).count();
    let treated = data
        .iter()
        .filter(|s| s.treatment.iter().any(|&z| z))
        .count();
    println!(
        "simulated {} subjects: {events} events, {treated} treated",
        data.len()
    );
    Ok(())
}

fn run_fit(args: FitArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(v) = args.chains {
        cfg.chains = v;
    }
    if let Some(v) = args.iters {
        cfg.iters = v;
    }
    if let Some(v) = args.warmup {
        cfg.warmup = v;
    }
    if args.quiet {
        cfg.progress = false;
    }
    let sampler_cfg = cfg.sampler_config()?;
    let prior = cfg.prior_config()?;
    let data = io::read_dataset(&args.data.long, &args.data.surv)?;
    let fit = sampler::run(&data, &prior, &sampler_cfg)?;
    create_dir(&args.out)?;
    io::write_draws(&fit.draws, &args.out.join("draws.csv"))?;
    io::write_summary(&summarize(&fit.draws), &args.out.join("summary.csv"))?;
    println!(
        "{} subjects, {} events; {} chains × {} draws; {} divergent transitions",
        data.len(),
        fit.n_events,
        sampler_cfg.n_chains,
        sampler_cfg.n_draws(),
        fit.total_divergences()
    );
    Ok(())
}

fn run_diagnose(args: DiagnoseArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    if args.draws.is_none() && args.long.is_none() {
        return Err(Error::InvalidArgument(
            "diagnose needs --draws and/or --long/--surv".into(),
        ));
    }
    if let Some(path) = &args.draws {
        let draws = io::read_draws(path)?;
        let rows = summarize(&draws);
        match &args.summary {
            Some(out) => io::write_summary(&rows, out)?,
            None => {
                println!("{}", io::SUMMARY_HEADER.join(","));
                for r in &rows {
                    println!(
                        "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4}",
                        r.name, r.mean, r.sd, r.mcse, r.q2_5, r.q97_5, r.rhat
                    );
                }
            }
        }
        let worst = rows
            .iter()
            .map(|r| r.rhat)
            .filter(|r| r.is_finite())
            .fold(f64::NAN, f64::max);
        eprintln!("max split-R̂ over {} columns: {worst:.4}", rows.len());
    }
    if let (Some(long), Some(surv)) = (&args.long, &args.surv) {
        let data = io::read_dataset(long, surv)?;
        let screen = variance_screen_dataset(&data, cfg.screen_alpha)?;
        if let Some(out) = &args.screen {
            io::write_screen(&screen, out)?;
        }
        println!(
            "variance screen: {} subjects ({} excluded), A² = {:.4}, p = {:.4}, {} at α = {}",
            screen.subjects.len(),
            screen.excluded,
            screen.a2,
            screen.p_value,
            if screen.reject {
                "reject homoskedasticity"
            } else {
                "no evidence against homoskedasticity"
            },
            screen.alpha
        );
    }
    Ok(())
}

fn run_ppc(args: PpcArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let n_rep = args.replicates.unwrap_or(cfg.ppc_replicates);
    let data = io::read_dataset(&args.data.long, &args.data.surv)?;
    let draws = io::read_draws(&args.draws)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let reps = posterior_predictive(&draws, &data, n_rep, &mut rng)?;
    io::write_replicates(&reps, &data, &args.out)?;
    Ok(())
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("HETJM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("HETJM_THREADS must be a non-negative integer, got {raw:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Fit(a) => run_fit(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::Ppc(a) => run_ppc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
