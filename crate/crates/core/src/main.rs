use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anchored_opt::acceptance::{AcceptOptions, Suite, CRITERIA};
use anchored_opt::harness::{
    self, check_noise_model, config::Config, exit_code, run_experiment, run_rates, run_sweep, run_trajectories,
    validate_schedule, Overrides, EXIT_OK, EXIT_VALIDATION, NOISE_SAMPLES, OUT_ENV,
};
use anchored_opt::noise::RngStream;
use anchored_opt::{Error, Result};

#[derive(Parser)]
#[command(name = "anchored-opt", version, about = "Anchored stochastic gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; the ANCHORED_OPT_OUT environment variable wins.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    parallel: Option<usize>,
    /// Run even if the schedule fails validation.
    #[arg(long)]
    override_schedule: bool,
    /// Only require the coupling condition eventually.
    #[arg(long)]
    asymptotic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the schedule condition table.
    ValidateSchedule(Common),
    /// Estimate the noise moments at the start point.
    CheckNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = NOISE_SAMPLES)]
        samples: usize,
    },
    /// Run every seed and write per-run CSVs plus summary.json.
    Run(Common),
    /// Repeat `run` over values of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted key, e.g. `schedule.p`.
        #[arg(long)]
        axis: String,
        /// TOML array of values, e.g. `[0.7, 0.8, 0.9]`.
        #[arg(long)]
        values: String,
    },
    /// Residual rates of the Halpern and KM operator iterations.
    Rates(Common),
    /// Planar trajectories on a nonconvex benchmark.
    Trajectories(Common),
    /// Run the acceptance criteria.
    Accept {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only these criteria (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

impl Common {
    fn overrides(&self) -> Overrides {
        let env_out = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        Overrides {
            seeds: self.seeds,
            master_seed: self.master_seed,
            override_schedule: self.override_schedule,
            asymptotic: self.asymptotic,
            out: env_out.or_else(|| self.out.clone()),
        }
    }

    fn base(&self) -> PathBuf {
        self.config.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    fn load(&self) -> Result<Config> {
        let mut config = Config::load(&self.config)?;
        self.overrides().apply(&mut config);
        Ok(config)
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::ValidateSchedule(c) => {
            let exp = c.load()?.resolve(&c.base())?;
            let check = validate_schedule(&exp);
            print!("{}", check.text);
            Ok(if check.passed { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::CheckNoise { common, samples } => {
            let config = common.load()?;
            let exp = config.resolve(&common.base())?;
            let check = check_noise_model(&exp.noise, &exp.start(), &RngStream::new(exp.master_seed, exp.streams[0]), samples)?;
            print!("{}", check.to_text());
            Ok(if check.passed() { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Run(c) => {
            let config = c.load()?;
            let res = run_experiment(&config, &c.base(), c.parallel)?;
            let s = &res.summary;
            println!("{} on {}: {} runs, horizon {}", s.method, s.target, s.runs.len(), s.horizon);
            if let Some(a) = &s.aggregate {
                if let (Some(a0), Some(an)) = (a.a_hat_start, a.a_hat_final) {
                    println!("mean ‖x − x*‖²: {a0:.6e} at start, {an:.6e} at N");
                }
            }
            println!("final iterate mean: {:?}", s.final_iterate_mean);
            println!("wrote {}", harness::runner::output_dir(&config).display());
            Ok(EXIT_OK)
        }
        Command::Sweep { common, axis, values } => {
            let text = std::fs::read_to_string(&common.config)?;
            let template: toml::Value =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", common.config.display())))?;
            let parsed: toml::Value = toml::from_str(&format!("v = {values}"))
                .map_err(|e| Error::Config(format!("--values must be a TOML array: {e}")))?;
            let values = match parsed.get("v") {
                Some(toml::Value::Array(v)) if !v.is_empty() => v.clone(),
                _ => return Err(Error::Config("--values must be a nonempty TOML array".into())),
            };
            let rows = run_sweep(&template, &common.base(), &axis, &values, &common.overrides(), common.parallel)?;
            for r in &rows {
                println!(
                    "{axis} = {}: final dist {} ({})",
                    r.value,
                    r.final_dist_xstar.map_or("n/a".into(), |d| format!("{d:.6e}")),
                    r.out
                );
            }
            Ok(EXIT_OK)
        }
        Command::Rates(c) => {
            let report = run_rates(&c.load()?, &c.base())?;
            print!("{}", report.to_table());
            Ok(EXIT_OK)
        }
        Command::Trajectories(c) => {
            let config = c.load()?;
            let rows = run_trajectories(&config, &c.base())?;
            println!("{} rows written to {}", rows.len(), harness::runner::output_dir(&config).join("trajectories.csv").display());
            Ok(EXIT_OK)
        }
        Command::Accept { out, only } => {
            let out = std::env::var_os(OUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .or(out)
                .unwrap_or_else(|| PathBuf::from("out/accept"));
            let suite = Suite::new(AcceptOptions { out });
            let ids: Vec<u8> = if only.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { only };
            let mut all = true;
            for id in ids {
                let r = suite.criterion(id);
                println!("{}", r.line());
                print!("{}", r.details());
                all &= r.passed();
            }
            Ok(if all { EXIT_OK } else { EXIT_VALIDATION })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { harness::EXIT_CONFIG as u8 } else { EXIT_OK as u8 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
