use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iges_dse::eval;
use iges_dse::model;
use iges_dse::pipeline::{self, Overrides, RunManifest};
use iges_dse::Error;

#[derive(Parser, Debug)]
#[command(name = "iges-dse", version, about = "Dynamic state estimation for integrated gas and electric systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate, measure, estimate and evaluate; writes all five outputs.
    Run(RunArgs),
    /// Write truth.csv and measurements.csv only.
    Simulate(CommonArgs),
    /// Estimate from an existing measurements.csv (and score against
    /// truth.csv when present).
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding measurements.csv.
        #[arg(long)]
        input: PathBuf,
    },
    /// Load and check a model file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    #[arg(long, required_unless_present = "manifest")]
    config: Option<PathBuf>,
    /// Noise preset: gaussian, biased, laplace or cauchy.
    #[arg(long)]
    scenario: Option<String>,
    /// Bias of the `biased` preset, normalized units.
    #[arg(long)]
    bias: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Gaussian std (normalized units).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Re-run the settings recorded in a manifest.json.
    #[arg(long, conflicts_with_all = ["config", "scenario", "bias", "seed", "steps", "sigma"])]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated presets, run as independent jobs under `out/<name>`.
    #[arg(long, value_delimiter = ',', conflicts_with = "scenario")]
    scenarios: Vec<String>,
    /// Concurrent jobs when several scenarios are given.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl CommonArgs {
    fn overrides(&self, scenario: Option<String>) -> Overrides {
        Overrides {
            scenario: scenario.or_else(|| self.scenario.clone()),
            sigma: self.sigma,
            bias: self.bias,
            seed: self.seed,
            steps: self.steps,
        }
    }

    fn load(&self) -> iges_dse::Result<iges_dse::IgesModel> {
        match &self.manifest {
            Some(m) => RunManifest::read(m)?.model(),
            None => pipeline::load_with(self.config.as_ref().expect("clap enforces --config"), &self.overrides(None)),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> iges_dse::Result<()> {
    match cmd {
        Command::Run(args) => cmd_run(&args),
        Command::Simulate(c) => {
            let p = pipeline::prepare(c.load()?)?;
            pipeline::simulate_to(&p, &c.out)?;
            println!("wrote {} steps to {}", p.model.scenario.horizon_steps, c.out.display());
            Ok(())
        }
        Command::Estimate { common, input } => {
            let p = pipeline::prepare(common.load()?)?;
            let (dse, report) = pipeline::estimate_from(&p, &input, &common.out)?;
            if let Some(r) = report {
                print!("{}", eval::format_summary(&r));
            }
            println!("mean KF step: {:.3} ms", dse.mean_step_seconds() * 1e3);
            Ok(())
        }
        Command::Validate { config } => {
            let m = model::load_model(&config)?;
            println!(
                "ok: {} gas nodes, {} pipelines, {} buses, {} branches, {} GTUs",
                m.gas.n_nodes(),
                m.gas.n_pipes(),
                m.grid.n_buses(),
                m.grid.n_branches(),
                m.gtus.len()
            );
            Ok(())
        }
    }
}

fn cmd_run(args: &RunArgs) -> iges_dse::Result<()> {
    let c = &args.common;
    if let Some(m) = &c.manifest {
        let manifest = RunManifest::read(m)?;
        let outcome = pipeline::run_manifest(&manifest, &c.out)?;
        print_outcome(&manifest.scenario, &outcome);
        return Ok(());
    }
    let config = c.config.clone().expect("clap enforces --config");
    if args.scenarios.len() <= 1 {
        let ov = c.overrides(args.scenarios.first().cloned());
        let outcome = pipeline::run_to(&config, &ov, &c.out)?;
        print_outcome(&ov.scenario_label(), &outcome);
        return Ok(());
    }
    let jobs = args.jobs.max(1);
    let mut results: Vec<(String, iges_dse::Result<pipeline::RunOutcome>)> = Vec::new();
    for chunk in args.scenarios.chunks(jobs) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|name| {
                    let ov = c.overrides(Some(name.clone()));
                    let out = c.out.join(name);
                    let config = config.as_path();
                    (name.clone(), s.spawn(move || run_one(config, &ov, &out)))
                })
                .collect();
            for (name, h) in handles {
                results.push((name, h.join().expect("scenario worker panicked")));
            }
        });
    }
    let mut first_err = None;
    for (name, r) in results {
        match r {
            Ok(o) => print_outcome(&name, &o),
            Err(e) => {
                eprintln!("{name}: error: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn run_one(config: &Path, ov: &Overrides, out: &Path) -> Result<pipeline::RunOutcome, Error> {
    pipeline::run_to(config, ov, out)
}

fn print_outcome(name: &str, o: &pipeline::RunOutcome) {
    println!("scenario {name}: {} steps", o.truth.len());
    print!("{}", eval::format_summary(&o.report));
    println!("mean KF step: {:.3} ms", o.dse.mean_step_seconds() * 1e3);
}
