use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvlab_cli::{run_experiment, suite, CliError, ExperimentConfig};
use mvlab_core::model_zoo::{self, verify_hypotheses, HypothesisGrid};

/// Monte Carlo verification of McKean-Vlasov SDE estimates.
#[derive(Parser)]
#[command(name = "mvlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the checks listed in a config file.
    Run {
        /// Config file (same as --config).
        config: Option<PathBuf>,
        #[arg(long = "config", value_name = "PATH")]
        config_flag: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Write one SVG plot per check.
        #[arg(long)]
        emit_svg: bool,
        /// Worker threads; results do not depend on it.
        #[arg(long, value_name = "N")]
        threads: Option<usize>,
    },
    /// List built-in models and their parameters.
    ListModels,
    /// List available checks and their config keys.
    ListChecks,
    /// Check the structural hypotheses of a built-in model on a grid.
    VerifyModel {
        id: String,
        /// Parameter overrides as name=value.
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = mvlab_cli::config::DEFAULT_SEED)]
        seed: u64,
    },
}

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn usage(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_USAGE)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, config_flag, seed, out, emit_svg, threads } => {
            let Some(path) = config_flag.or(config) else {
                return usage("run needs a config file");
            };
            let mut cfg = match ExperimentConfig::from_file(&path) {
                Ok(c) => c,
                Err(e) => return usage(e),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(t) = threads {
                if t == 0 {
                    return usage("--threads must be at least 1");
                }
                cfg.threads = Some(t);
            }
            match run_experiment(&cfg, emit_svg) {
                Ok(report) => {
                    for o in &report.outcomes {
                        let verdict = if o.pass { "pass" } else { "FAIL" };
                        match &o.error {
                            Some(e) => println!("{verdict} {}: {e}", o.name),
                            None => println!("{verdict} {}", o.name),
                        }
                    }
                    if report.all_pass() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_FAIL)
                    }
                }
                Err(e @ CliError::Config { .. }) => usage(e),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_FAIL)
                }
            }
        }
        Command::ListModels => {
            for id in model_zoo::builtin_ids() {
                let params = model_zoo::builtin_parameters(id).unwrap_or(&[]);
                let list: Vec<String> = params.iter().map(|(n, v)| format!("{n}={v}")).collect();
                println!("{id}\t{}", list.join(","));
            }
            ExitCode::SUCCESS
        }
        Command::ListChecks => {
            for c in suite::CHECKS {
                let keys: Vec<&str> = c.params().collect();
                println!("{}\t{}\t[{}]", c.name, c.description, keys.join(","));
            }
            ExitCode::SUCCESS
        }
        Command::VerifyModel { id, params, t, seed } => {
            let mut map = BTreeMap::new();
            for p in &params {
                let Some((k, v)) = p.split_once('=') else {
                    return usage(format!("--param expects NAME=VALUE, got '{p}'"));
                };
                match v.trim().parse::<f64>() {
                    Ok(v) => map.insert(k.trim().to_string(), v),
                    Err(_) => return usage(format!("--param {k}: expected a number, got '{v}'")),
                };
            }
            let model = match model_zoo::builtin_with(&id, &map) {
                Ok(m) => m,
                Err(e) => return usage(e),
            };
            match verify_hypotheses(&model, &HypothesisGrid::standard(model.dim, t, seed)) {
                Ok(rep) => {
                    for c in &rep.conditions {
                        let state = if c.skipped { "skip" } else if c.pass { "pass" } else { "FAIL" };
                        println!("{state}\t{}\tworst={:e}\tat {}", c.name, c.worst_residual, c.location);
                    }
                    println!("{}: {}", rep.model, if rep.verified { "verified" } else { "not verified" });
                    if rep.verified {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_FAIL)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_FAIL)
                }
            }
        }
    }
}
