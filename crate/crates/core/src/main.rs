use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use diffuse_slam::runner::{
    dump_scans_file, load_config, load_scans_file, run_config, write_outputs, LikelihoodMode,
    RunError,
};

#[derive(Parser)]
#[command(
    name = "diffuse-slam",
    about = "Multipath SLAM simulator and filter: PMBM mapping with diffuse-cluster likelihoods"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and run the filter over it.
    Run(RunArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    AllPaths,
    SpecularOnly,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config (JSON); defaults to the built-in four-wall scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the likelihood mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Override the particle count.
    #[arg(long)]
    particles: Option<usize>,
    /// Feed the filter the true vehicle state (mapping-only run).
    #[arg(long)]
    known_vehicle: bool,
    /// Directory for steps.csv and result.json.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also write the generated scans as JSON lines.
    #[arg(long)]
    dump_scans: Option<PathBuf>,
    /// Read scans from a JSON-lines dump instead of generating them.
    #[arg(long)]
    replay_scans: Option<PathBuf>,
}

fn run(args: RunArgs) -> Result<(), RunError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(mode) = args.mode {
        config.likelihood_mode = match mode {
            ModeArg::AllPaths => LikelihoodMode::AllPaths,
            ModeArg::SpecularOnly => LikelihoodMode::SpecularOnly,
        };
    }
    if let Some(particles) = args.particles {
        config.particle_count = particles;
    }
    config.validate()?;

    let replay = match &args.replay_scans {
        Some(path) => Some(load_scans_file(path)?),
        None => None,
    };

    let started = std::time::Instant::now();
    let output = run_config(config, args.known_vehicle, replay.as_deref())?;
    eprintln!(
        "ran {} steps with {} particles in {:.2} s",
        output.records.len(),
        if args.known_vehicle { 1 } else { output.config.particle_count },
        started.elapsed().as_secs_f64()
    );

    write_outputs(&args.out_dir, &output)?;
    if let Some(path) = &args.dump_scans {
        dump_scans_file(path, &output.scans)?;
    }

    if let Some(last) = output.records.last() {
        println!(
            "final step {}: position error {:.4} m, overall GOSPA {:.4}",
            last.step,
            (last.abs_error[0].powi(2) + last.abs_error[1].powi(2) + last.abs_error[2].powi(2))
                .sqrt(),
            last.gospa.total
        );
    }
    println!(
        "wrote {} and {}",
        args.out_dir.join("steps.csv").display(),
        args.out_dir.join("result.json").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                RunError::Config(_) | RunError::Parse(_) => ExitCode::from(2),
                RunError::Divergence(_) => ExitCode::from(3),
                RunError::Io(_) => ExitCode::FAILURE,
            }
        }
    }
}
