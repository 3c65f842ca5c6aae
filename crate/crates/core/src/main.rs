use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use lucbrank::complexity::ComplexityReport;
use lucbrank::env::{InstanceFile, Instance};
use lucbrank::harness::{builtin_instance, emit_report, run_experiment, ExperimentConfig, HarnessError};
use lucbrank::{ClusterSpec, ExplorationSchedule};

#[derive(Parser)]
#[command(name = "lucbrank", version, about = "Adaptive coarse ranking experiments and service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print sample-complexity bounds for an instance (file or builtin name).
    Complexity {
        instance: String,
        /// Cluster boundaries, e.g. `3,12,15`; the trailing K may be omitted.
        spec: String,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long)]
        optimize_anchors: bool,
    },
    /// Print a builtin instance as an instance file.
    Instance {
        name: String,
        #[arg(long)]
        emit: bool,
    },
    /// Serve human-in-the-loop ranking sessions over HTTP.
    #[cfg(feature = "service")]
    Serve {
        #[arg(long, env = "LUCBRANK_LISTEN", default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, env = "LUCBRANK_DATA_DIR", default_value = "sessions")]
        data_dir: PathBuf,
        /// Seconds before an unanswered query may be handed to another rater.
        #[arg(long, env = "LUCBRANK_TICKET_TIMEOUT", default_value_t = 300)]
        ticket_timeout: u64,
        /// Directory of static item payloads served under `/static`.
        #[arg(long, env = "LUCBRANK_STATIC_DIR")]
        static_dir: Option<PathBuf>,
        /// Events between state snapshots.
        #[arg(long, default_value_t = 100)]
        snapshot_every: u64,
    },
}

struct CliError {
    kind: &'static str,
    message: String,
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let kind = match &e {
            HarnessError::UnknownBuiltin(_) => "unknown_instance",
            HarnessError::Config(_) | HarnessError::Spec(_) | HarnessError::Math(_) => "invalid_config",
            HarnessError::Env(_) => "invalid_instance",
            HarnessError::AllTrialsFailed { .. } => "all_trials_failed",
            HarnessError::Io { .. } | HarnessError::Csv { .. } => "io",
            HarnessError::Json { .. } => "parse",
            HarnessError::Pool(_) => "internal",
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

fn err(kind: &'static str, message: impl ToString) -> CliError {
    CliError {
        kind,
        message: message.to_string(),
    }
}

fn load_instance(name: &str) -> Result<Instance, CliError> {
    let path = PathBuf::from(name);
    if path.exists() {
        InstanceFile::load(&path)
            .map(|f| f.instance)
            .map_err(|e| err("invalid_instance", e))
    } else {
        Ok(builtin_instance(name)?)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            trials,
            jobs,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if jobs.is_some() {
                cfg.jobs = jobs;
            }
            if out.is_some() {
                cfg.output_dir = out;
            }
            let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
            let results = run_experiment(&cfg)?;
            emit_report(&results, &dir)?;
            println!("{}", json!({ "output_dir": dir, "algorithms": cfg.algorithms.len(), "trials": cfg.trials }));
            Ok(())
        }
        Command::Complexity {
            instance,
            spec,
            epsilon,
            delta,
            optimize_anchors,
        } => {
            let env = load_instance(&instance)?
                .environment()
                .map_err(|e| err("invalid_instance", e))?;
            let means = env.true_means();
            let mut spec = ClusterSpec::parse(&spec)
                .map(|s| s.boundaries().to_vec())
                .or_else(|e| {
                    // A single inner boundary such as "3" is also accepted.
                    spec.trim().parse::<usize>().map(|b| vec![b]).map_err(|_| e)
                })
                .map_err(|e| err("invalid_spec", e))?;
            if spec.last().is_some_and(|&l| l < means.len()) {
                spec.push(means.len());
            }
            let spec = ClusterSpec::new(spec).map_err(|e| err("invalid_spec", e))?;
            spec.check_arms(means.len()).map_err(|e| err("invalid_spec", e))?;
            let schedule = ExplorationSchedule::with_delta(delta, means.len(), spec.num_clusters())
                .map_err(|e| err("invalid_argument", e))?;
            let report = ComplexityReport::compute(&means, &spec, epsilon, &schedule, optimize_anchors)
                .map_err(|e| err("complexity", e))?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Command::Instance { name, emit } => {
            let instance = builtin_instance(&name)?;
            let file = InstanceFile { instance, seed: None };
            if emit {
                println!("{}", file.to_json());
            } else {
                let env = file.instance.environment().map_err(|e| err("invalid_instance", e))?;
                println!("{}", json!({ "name": name, "items": env.num_arms(), "true_means": env.true_means() }));
            }
            Ok(())
        }
        #[cfg(feature = "service")]
        Command::Serve {
            listen,
            data_dir,
            ticket_timeout,
            static_dir,
            snapshot_every,
        } => {
            let config = lucbrank::session::ServiceConfig {
                data_dir,
                ticket_timeout: std::time::Duration::from_secs(ticket_timeout),
                static_dir,
                snapshot_every,
            };
            lucbrank::session::serve(&listen, config).map_err(|e| err("service", e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind, "message": e.message }));
            ExitCode::FAILURE
        }
    }
}
