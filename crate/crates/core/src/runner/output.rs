use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::experiments::{KalmanStep, StepRecord, TradeoffPoint};
use crate::error::Result;

/// `%.9g`-style formatting: 9 significant digits, trailing zeros dropped.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}").to_lowercase();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig9).unwrap_or_default()
}

/// Which optional columns a tracking table carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Columns {
    pub eps_hat: bool,
    pub ihp_violation: bool,
}

impl Columns {
    pub fn of(records: &[StepRecord]) -> Self {
        Columns {
            eps_hat: records.iter().any(|r| r.eps_hat.is_some()),
            ihp_violation: records.iter().any(|r| r.ihp_violation.is_some()),
        }
    }
}

pub fn write_records_csv<W: Write>(records: &[StepRecord], cols: Columns, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["n", "rep", "K_n", "rho_hat", "rho_upper", "excess_est", "excess_true"];
    if cols.eps_hat {
        header.push("eps_hat");
    }
    if cols.ihp_violation {
        header.push("ihp_violation");
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.n.to_string(),
            r.rep.to_string(),
            r.k_n.to_string(),
            opt(r.rho_hat),
            opt(r.rho_upper),
            fmt_sig9(r.excess_est),
            fmt_sig9(r.excess_true),
        ];
        if cols.eps_hat {
            row.push(opt(r.eps_hat));
        }
        if cols.ihp_violation {
            row.push(r.ihp_violation.map(|v| (v as u8).to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tradeoff_csv<W: Write>(points: &[TradeoffPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epsilon", "K_star"])?;
    for p in points {
        w.write_record([fmt_sig9(p.epsilon), p.k_star.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_kalman_csv<W: Write>(steps: &[KalmanStep], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "rep", "K_n", "matched_est", "matched_true", "mismatch_est", "mismatch_true"])?;
    for s in steps {
        w.write_record([
            s.n.to_string(),
            s.rep.to_string(),
            s.k_n.to_string(),
            fmt_sig9(s.matched_est),
            fmt_sig9(s.matched_true),
            fmt_sig9(s.mismatch_est),
            fmt_sig9(s.mismatch_true),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Run metadata written next to every result table.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RunMetadata {
    pub experiment: String,
    pub seed: u64,
    pub reps: usize,
    pub config_hash: String,
    pub version: String,
}

impl RunMetadata {
    pub fn new(experiment: &str, cfg: &ExperimentConfig) -> Self {
        RunMetadata {
            experiment: experiment.to_string(),
            seed: cfg.seed,
            reps: cfg.reps,
            config_hash: cfg.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SummaryDocument<'a, S: Serialize> {
    #[serde(flatten)]
    pub metadata: RunMetadata,
    pub config: &'a ExperimentConfig,
    pub summary: S,
}

/// `<out>.summary.json` for an output path `<out>`.
pub fn summary_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".summary.json");
    PathBuf::from(s)
}

pub fn read_metadata(path: &Path) -> Result<RunMetadata> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
