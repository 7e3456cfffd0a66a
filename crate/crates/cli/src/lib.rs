//! Experiment runner: reads a config, runs the named checks in order and
//! writes a results CSV, a JSON summary, run metadata and optional plots.

pub mod config;
pub mod error;
pub mod output;
pub mod suite;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use suite::{CheckOutcome, ResultRow};

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub outcomes: Vec<CheckOutcome>,
    pub threads: usize,
}

impl RunReport {
    /// Every check is a hard gate.
    pub fn all_pass(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }
}

/// Run the configured checks on a dedicated thread pool. Output files are
/// written to `cfg.out` even when checks fail.
pub fn run_experiment(cfg: &ExperimentConfig, emit_svg: bool) -> Result<RunReport> {
    cfg.validate()?;
    let threads = cfg.threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    std::fs::create_dir_all(&cfg.out)?;
    let outcomes: Vec<CheckOutcome> = pool.install(|| {
        cfg.checks
            .iter()
            .map(|name| suite::run_check(suite::find(name).expect("validated"), cfg))
            .collect()
    });
    write_outputs(cfg, &outcomes, threads, emit_svg)?;
    Ok(RunReport { outcomes, threads })
}

fn write_outputs(cfg: &ExperimentConfig, outcomes: &[CheckOutcome], threads: usize, emit_svg: bool) -> Result<()> {
    let out: &Path = &cfg.out;
    output::write_results(outcomes, BufWriter::new(File::create(out.join(output::RESULTS_FILE))?))?;
    output::write_summary(outcomes, BufWriter::new(File::create(out.join(output::SUMMARY_FILE))?))?;
    output::write_metadata(cfg, threads, BufWriter::new(File::create(out.join(output::METADATA_FILE))?))?;
    if emit_svg {
        let dir = out.join("svg");
        std::fs::create_dir_all(&dir)?;
        for o in outcomes {
            output::write_svg(o, &dir.join(format!("{}.svg", o.name)))?;
        }
    }
    Ok(())
}
