use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unravel_cli::config::{MethodSpec, METHODS};
use unravel_cli::{divisibility_command, parse_config, run_command, ConfigError, RunConfig, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "unravel", about = "Quantum-jump unraveling benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured methods and the reference solution.
    Run {
        #[command(flatten)]
        common: Common,
        /// Methods to run, overriding the config.
        #[arg(long = "method", num_args = 1..)]
        methods: Vec<String>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (results do not depend on it).
        #[arg(long)]
        threads: Option<usize>,
        /// Only write the reference solution.
        #[arg(long)]
        oracle_only: bool,
    },
    /// Report CP and P divisibility over the grid.
    Divisibility {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    /// Output path prefix.
    #[arg(long)]
    out: Option<String>,
}

fn load(common: &Common) -> Result<RunConfig, String> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            parse_config(&text).map_err(|e| e.to_string())?
        }
        None => RunConfig::default(),
    };
    if let Some(dt) = common.dt {
        cfg.dt = dt;
    }
    if let Some(t) = common.t_max {
        cfg.t_max = t;
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    cfg.grid().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, methods, trajectories, seed, threads, oracle_only } => load(&common).and_then(|mut cfg| {
            if !methods.is_empty() {
                let configured = std::mem::take(&mut cfg.methods);
                for name in methods.iter().flat_map(|m| m.split(',')).map(str::trim) {
                    if !METHODS.contains(&name) {
                        return Err(ConfigError::UnknownMethod { name: name.into() }.to_string());
                    }
                    let params = configured.iter().find(|m| m.name == name).map(|m| m.params.clone()).unwrap_or_default();
                    cfg.methods.push(MethodSpec { name: name.into(), params });
                }
            }
            if let Some(n) = trajectories {
                if n == 0 {
                    return Err("--trajectories must be at least 1".into());
                }
                cfg.n_traj = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            run_command(&cfg, oracle_only, threads).map_err(|e| e.to_string())
        }),
        Command::Divisibility { common } => {
            load(&common).and_then(|cfg| divisibility_command(&cfg).map_err(|e| e.to_string()))
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
