//! Command-line driver for the citation-proximity pipeline: stage dispatch,
//! output-directory locking, and exit-code discipline. Exit codes: 0 success,
//! 2 input or configuration, 3 numerical, 4 I/O; failures also leave a
//! machine-readable `error.json` in the output directory.

mod config;
mod failure;
mod stages;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use proxcite::fsutil;

use crate::config::{Overrides, RunConfig};
use crate::failure::{Failure, StageResult};
use crate::stages::OutDir;

/// Citation-proximity pipeline driver.
///
/// Stages chain through dumps in the output directory: `ingest` (or `synth`)
/// writes the corpus, `graph` the co-authorship network, `pairs` the
/// estimation dataset, `fit` the model, and `sweep`, `ame`, `grid`, and
/// `report` the downstream artifacts. `all` runs the whole chain.
#[derive(Debug, Parser)]
#[command(name = "proxcite", version, about)]
struct Cli {
    /// TOML run configuration; flags override file values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (also settable as `out` in the config file).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for negative sampling and synthetic generation.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Network-distance search bound [default: 6].
    #[arg(long, global = true, value_name = "N")]
    cap: Option<u32>,
    /// Number of negative pairs to sample.
    #[arg(long, global = true, value_name = "N")]
    negatives: Option<u64>,
    /// Restrict negatives' cited side to documents cited in the positives.
    #[arg(long, global = true)]
    matched: bool,
    /// Distance-dummy cut-point [default: 6].
    #[arg(long, global = true, value_name = "N")]
    cutpoint: Option<usize>,
    /// Replace the distance dummies with one continuous covariate.
    #[arg(long, global = true)]
    continuous_distance: bool,
    /// Drop the interaction blocks from the model.
    #[arg(long, global = true)]
    no_interactions: bool,
    /// Add one intercept per cited article.
    #[arg(long, global = true)]
    group_effects: bool,
    /// Worker threads [default: all cores].
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    stage: Stage,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Stage {
    /// Load external corpus and embedding files and write the canonical dump.
    Ingest,
    /// Build the co-authorship graph from the corpus dump.
    Graph,
    /// Extract citing pairs, sample negatives, and assemble the dataset.
    Pairs,
    /// Fit the logistic citation-link model.
    Fit,
    /// Refit across distance cut-points plus the continuous baseline.
    Sweep,
    /// Average marginal effects on the probability scale.
    Ame,
    /// Predicted-probability surface over two covariates.
    Grid,
    /// Distribution tables, figures, and the run manifest.
    Report,
    /// Generate a synthetic corpus with known ground truth.
    Synth,
    /// Run every stage in order.
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(cli: Cli) -> StageResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::input(format!("thread pool setup failed: {e}")))?;
    }
    let mut config = RunConfig::load(cli.config.as_deref())?;
    config.apply_overrides(&Overrides {
        out: cli.out,
        seed: cli.seed,
        cap: cli.cap,
        negatives: cli.negatives,
        matched: cli.matched,
        cutpoint: cli.cutpoint,
        continuous_distance: cli.continuous_distance,
        no_interactions: cli.no_interactions,
        group_effects: cli.group_effects,
    });
    config.validate()?;
    let Some(root) = config.out.clone() else {
        return Err(Failure::input(
            "no output directory; pass --out DIR or set `out` in the config",
        ));
    };
    let out = OutDir::new(root)?;
    let _lock = Lock::acquire(&out)?;
    fsutil::atomic_write(&out.config_path(), config.resolved_toml().as_bytes())?;
    let result = dispatch(cli.stage, &config, &out);
    match &result {
        Ok(()) => {
            // A report from an earlier failed run must not outlive a success.
            let _ = std::fs::remove_file(out.error_path());
        }
        Err(f) => {
            if let Err(e) = fsutil::atomic_write(&out.error_path(), f.report_json().as_bytes()) {
                error!("could not write the error report: {e}");
            }
        }
    }
    result
}

fn dispatch(stage: Stage, config: &RunConfig, out: &OutDir) -> StageResult<()> {
    match stage {
        Stage::Ingest => stages::ingest(config, out),
        Stage::Graph => stages::graph(out),
        Stage::Pairs => stages::pairs(config, out),
        Stage::Fit => stages::fit(config, out),
        Stage::Sweep => stages::sweep(config, out),
        Stage::Ame => stages::ame(config, out),
        Stage::Grid => stages::grid(config, out),
        Stage::Report => stages::report(config, out),
        Stage::Synth => stages::synth(config, out),
        Stage::All => stages::all(config, out),
    }
}

/// Exclusive marker enforcing one run per output directory; removed on exit.
struct Lock {
    path: PathBuf,
}

impl Lock {
    fn acquire(out: &OutDir) -> StageResult<Lock> {
        let path = out.lock_path();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(Lock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Failure::input(format!(
                    "output directory is locked by another run ({} exists; remove it if that run is gone)",
                    path.display()
                )))
            }
            Err(e) => Err(Failure::io(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
