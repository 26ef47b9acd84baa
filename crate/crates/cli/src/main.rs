use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use saferoa::gp::GpModel;
use saferoa::orchestrator::{
    report, run_learn, safe_angle_range, simulate_certificate, LearnConfig, LearnError, Plant,
};
use saferoa::roa::{synthesize, validate_certificate, Certificate, RobustModel};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_SAFETY: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "saferoa", version, about = "Certified regions of attraction with safe GP learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Certificate for the prior model only.
    Synthesize {
        /// Learning configuration; the pendulum benchmark when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the certificate JSON (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Full explore-and-refit loop.
    Learn {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Result directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Runs a certificate's controller on the true dynamics.
    Simulate {
        #[arg(long)]
        cert: PathBuf,
        /// Comma-separated initial state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        /// Configuration naming the plant; the pendulum benchmark when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 20.0)]
        horizon: f64,
        /// Trajectory CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerates CSVs and the summary of a result directory.
    Report {
        #[arg(long)]
        result: PathBuf,
    },
    /// Prints the default configuration.
    DefaultConfig,
}

enum Failure {
    Config(String),
    Infeasible(String),
    Safety(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Infeasible(_) => EXIT_INFEASIBLE,
            Failure::Safety(_) => EXIT_SAFETY,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Infeasible(m) | Failure::Safety(m) | Failure::Other(m) => m,
        }
    }
}

impl From<LearnError> for Failure {
    fn from(e: LearnError) -> Self {
        let m = e.to_string();
        match e {
            LearnError::Config(_) | LearnError::OutsideRegion { .. } | LearnError::Poly(_) => Failure::Config(m),
            LearnError::PriorInfeasible(_) => Failure::Infeasible(m),
            LearnError::SafetyViolation { .. } => Failure::Safety(m),
            _ => Failure::Other(m),
        }
    }
}

fn load_config(path: Option<&Path>, ov: Option<&Overrides>) -> Result<LearnConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            LearnConfig::from_json(&text)?
        }
        None => LearnConfig::default(),
    };
    if let Some(ov) = ov {
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(e) = ov.eta {
            cfg.eta = e;
        }
        if let Some(t) = ov.iters {
            cfg.iterations = t;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Other(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synthesize { config, out, overrides } => {
            let cfg = load_config(config.as_deref(), Some(&overrides))?;
            let plant = Plant::from_spec(&cfg.system)?;
            let ks: Vec<_> = plant.active.iter().map(|&a| (a, cfg.kernel.clone())).collect();
            let gp = GpModel::prior(plant.nx(), &ks, cfg.noise_reg).map_err(|e| Failure::Config(e.to_string()))?;
            let model = RobustModel::from_gp(plant.f.clone(), plant.g.clone(), &gp, cfg.eta)
                .map_err(|e| Failure::Config(e.to_string()))?;
            let opts = saferoa::roa::SynthesisOptions {
                seed: cfg.seed,
                ..cfg.synthesis.clone()
            };
            let cert = synthesize(&model, &opts).map_err(|e| Failure::Infeasible(e.to_string()))?;
            let rep = validate_certificate(&model, &cert, 10_000, cfg.seed);
            if rep.violations > 0 {
                return Err(Failure::Safety(format!("{} sampled violations", rep.violations)));
            }
            eprintln!("level {:.6e}", cert.gamma);
            if plant.angular {
                eprintln!("safe angle range +-{:.2} deg", safe_angle_range(&cert, 0.01));
            }
            write_or_print(out.as_deref(), &cert.to_json())
        }
        Command::Learn { config, out, overrides } => {
            let mut cfg = load_config(config.as_deref(), Some(&overrides))?;
            cfg.output_dir = Some(out.clone());
            let result = run_learn(&cfg)?;
            let summary = result.summary();
            for it in &summary.iterations {
                eprintln!(
                    "iteration {}: level {:.6e}, range {:.2} {}, volume {}",
                    it.index,
                    it.gamma,
                    it.safe_range,
                    summary.range_unit,
                    it.volume.map_or("n/a".into(), |v| format!("{v:.4e}"))
                );
            }
            eprintln!("results in {}", out.display());
            match result.stopped {
                Some(why) => Err(Failure::Infeasible(why)),
                None => Ok(()),
            }
        }
        Command::Simulate {
            cert,
            x0,
            config,
            dt,
            horizon,
            out,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let plant = Plant::from_spec(&cfg.system)?;
            let text = fs::read_to_string(&cert).map_err(|e| Failure::Config(format!("{}: {e}", cert.display())))?;
            let cert = Certificate::from_json(&text).map_err(|e| Failure::Config(e.to_string()))?;
            if !cert.contains(&x0) {
                return Err(Failure::Config(format!("x0 {x0:?} is outside the certified region")));
            }
            let (traj, rep) = simulate_certificate(&plant, &cert, &x0, dt, horizon)?;
            let mut buf = Vec::new();
            traj.to_csv(&mut buf).map_err(|e| Failure::Other(e.to_string()))?;
            write_or_print(out.as_deref(), String::from_utf8_lossy(&buf).trim_end())?;
            let last = traj.states.last().map_or(0.0, |x| x.iter().map(|v| v * v).sum::<f64>().sqrt());
            eprintln!("max V - level {:.3e}, final |x| {last:.3e}", rep.max_excess);
            if rep.excursion {
                return Err(Failure::Safety(format!(
                    "trajectory left the certified region at sample {}",
                    rep.first_violation.unwrap_or(0)
                )));
            }
            Ok(())
        }
        Command::Report { result } => {
            let summary = report(&result)?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| Failure::Other(e.to_string()))?);
            Ok(())
        }
        Command::DefaultConfig => {
            println!("{}", LearnConfig::default().to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.message());
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
