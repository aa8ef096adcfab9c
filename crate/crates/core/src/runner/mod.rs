//! Configuration, experiment orchestration and result emission.

pub mod config;
pub mod experiments;
pub mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub use config::ExperimentConfig;
pub use experiments::{
    run_ihp_experiment, run_kalman_comparison, run_mean_experiment, run_tradeoff, track_replication, StepRecord,
    Target,
};

use crate::error::{Error, Result};
use output::{summary_path, write_json, Columns, RunMetadata, SummaryDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Mean,
    Tradeoff,
    Ihp,
    Kalman,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Mean => "mean",
            Experiment::Tradeoff => "tradeoff",
            Experiment::Ihp => "ihp",
            Experiment::Kalman => "kalman",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Runs `experiment` and writes the table to `out` (stdout when absent).
/// With an output path the summary goes to `<out>.summary.json`, otherwise
/// to `summary_sink`.
pub fn execute(
    experiment: Experiment,
    cfg: &ExperimentConfig,
    format: Format,
    out: Option<&Path>,
    summary_sink: &mut dyn Write,
) -> Result<()> {
    let mut table: Vec<u8> = Vec::new();
    let metadata = RunMetadata::new(experiment.name(), cfg);
    let summary: Vec<u8> = match experiment {
        Experiment::Mean => {
            let r = run_mean_experiment(cfg)?;
            emit_records(&r.records, format, &mut table)?;
            summarize(metadata, cfg, &r.summary)?
        }
        Experiment::Ihp => {
            let r = run_ihp_experiment(cfg)?;
            emit_records(&r.records, format, &mut table)?;
            summarize(metadata, cfg, &r.summary)?
        }
        Experiment::Tradeoff => {
            let pts = run_tradeoff(cfg, &cfg.epsilons)?;
            match format {
                Format::Csv => output::write_tradeoff_csv(&pts, &mut table)?,
                Format::Json => write_json(&pts, &mut table)?,
            }
            summarize(metadata, cfg, &pts)?
        }
        Experiment::Kalman => {
            let r = run_kalman_comparison(cfg)?;
            match format {
                Format::Csv => {
                    emit_records(&r.records, format, &mut table)?;
                    if let Some(path) = out {
                        let mut p = path.as_os_str().to_owned();
                        p.push(".kalman.csv");
                        output::write_kalman_csv(&r.kalman, BufWriter::new(File::create(p)?))?;
                    }
                }
                Format::Json => write_json(&(&r.records, &r.kalman), &mut table)?,
            }
            summarize(metadata, cfg, &r.summary)?
        }
    };
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, &table)?;
            std::fs::write(summary_path(path), &summary)?;
        }
        None => {
            std::io::stdout().write_all(&table)?;
            summary_sink.write_all(&summary)?;
        }
    }
    Ok(())
}

fn emit_records(records: &[StepRecord], format: Format, out: &mut Vec<u8>) -> Result<()> {
    match format {
        Format::Csv => output::write_records_csv(records, Columns::of(records), out),
        Format::Json => write_json(records, out),
    }
}

fn summarize<S: serde::Serialize>(metadata: RunMetadata, cfg: &ExperimentConfig, summary: S) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_json(&SummaryDocument { metadata, config: cfg, summary }, &mut buf)?;
    Ok(buf)
}

/// Applies command-line overrides and re-validates.
pub fn with_overrides(mut cfg: ExperimentConfig, seed: Option<u64>, reps: Option<usize>) -> Result<ExperimentConfig> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = reps {
        cfg.reps = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::config("--format", format!("expected csv or json, got {other}"))),
        }
    }
}
