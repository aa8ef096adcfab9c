use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rho_est::CombinerMode;
use crate::selector::DEFAULT_K_MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Deterministic,
    GaussianWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    RhoKnown,
    NoUpdatePast,
    UpdatePast,
}

/// How the drift estimate enters the selection rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlackKind {
    /// `rho^ + t_n`.
    TOnly,
    /// `rho^ + D_n + t_n`.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    MeanEuclid,
    MeanL2,
    WindowEuclid,
    WindowL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMode {
    Known,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    InverseStep,
    Lipschitz,
}

/// One experiment. `d`, `sigma_w_sq`, `sigma_e_sq` and `rho` must appear in
/// every config file; everything else has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub sigma_w_sq: f64,
    pub sigma_e_sq: f64,
    pub rho: f64,
    pub drift: DriftKind,
    pub domain_radius: f64,
    pub epsilon: f64,
    pub epsilons: Vec<f64>,
    pub ihp_t: f64,
    pub ihp_r: f64,
    pub ihp_iters: usize,
    pub selector: SelectorKind,
    pub slack: SlackKind,
    pub combiner: CombinerKind,
    pub window: usize,
    pub c_t: f64,
    pub k1: usize,
    pub k2: usize,
    pub horizon: usize,
    pub reps: usize,
    pub seed: u64,
    pub params: ParamMode,
    pub family: FamilyKind,
    pub c_par: f64,
    pub step_m: f64,
    pub k_max: usize,
    pub mc_samples: usize,
    pub probe_points: usize,
    pub probe_radius: f64,
    pub probe_separation: f64,
    pub kalman_p0: f64,
    pub mismatch_sigma_sq_factor: f64,
    pub mismatch_sigma_e_sq_factor: f64,
}

const REQUIRED: [&str; 4] = ["d", "sigma_w_sq", "sigma_e_sq", "rho"];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 2,
            sigma_w_sq: 0.5,
            sigma_e_sq: 0.5,
            rho: 1.0,
            drift: DriftKind::Deterministic,
            domain_radius: 10.0,
            epsilon: 0.01,
            epsilons: Vec::new(),
            ihp_t: 0.1,
            ihp_r: 0.25,
            ihp_iters: crate::ihp::DEFAULT_ITERS,
            selector: SelectorKind::UpdatePast,
            slack: SlackKind::TOnly,
            combiner: CombinerKind::WindowEuclid,
            window: 4,
            c_t: 0.1,
            k1: 50,
            k2: 50,
            horizon: 100,
            reps: 50,
            seed: 1,
            params: ParamMode::Estimated,
            family: FamilyKind::InverseStep,
            c_par: 0.05,
            step_m: 0.25,
            k_max: DEFAULT_K_MAX,
            mc_samples: 10_000,
            probe_points: 8,
            probe_radius: 0.35,
            probe_separation: 0.1,
            kalman_p0: 1.0,
            mismatch_sigma_sq_factor: 0.1,
            mismatch_sigma_e_sq_factor: 10.0,
        }
    }
}

impl ExperimentConfig {
    /// A config with default settings for the given model.
    pub fn new(d: usize, sigma_w_sq: f64, sigma_e_sq: f64, rho: f64) -> Result<Self> {
        let cfg = ExperimentConfig {
            d,
            sigma_w_sq,
            sigma_e_sq,
            rho,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let to_config_error = |e: toml::de::Error| {
            let field = e.message().split('`').nth(1).unwrap_or("<document>").to_string();
            Error::config(field, e.message().trim().to_string())
        };
        let table: toml::Table = toml::from_str(text).map_err(to_config_error)?;
        if let Some(name) = REQUIRED.iter().find(|k| !table.contains_key(**k)) {
            return Err(Error::config(*name, "required field is missing"));
        }
        let cfg: ExperimentConfig = toml::from_str(text).map_err(to_config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_w_sq", self.sigma_w_sq),
            ("domain_radius", self.domain_radius),
            ("epsilon", self.epsilon),
            ("ihp_t", self.ihp_t),
            ("ihp_r", self.ihp_r),
            ("c_t", self.c_t),
            ("step_m", self.step_m),
            ("probe_radius", self.probe_radius),
            ("probe_separation", self.probe_separation),
            ("kalman_p0", self.kalman_p0),
            ("mismatch_sigma_sq_factor", self.mismatch_sigma_sq_factor),
            ("mismatch_sigma_e_sq_factor", self.mismatch_sigma_e_sq_factor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [("sigma_e_sq", self.sigma_e_sq), ("rho", self.rho), ("c_par", self.c_par)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.d == 0 {
            return Err(Error::config("d", "must be >= 1"));
        }
        for (name, v) in [
            ("k1", self.k1),
            ("k2", self.k2),
            ("reps", self.reps),
            ("k_max", self.k_max),
            ("mc_samples", self.mc_samples),
            ("ihp_iters", self.ihp_iters),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        if self.probe_points < 2 {
            return Err(Error::config("probe_points", "need at least two probe points"));
        }
        if self.ihp_r > 1.0 {
            return Err(Error::config("ihp_r", format!("a probability, got {}", self.ihp_r)));
        }
        if let Some(bad) = self.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::config("epsilons", format!("entries must be > 0, got {bad}")));
        }
        if matches!(self.combiner, CombinerKind::WindowEuclid | CombinerKind::WindowL2) && self.window == 0 {
            return Err(Error::config("window", "must be >= 1"));
        }
        Ok(())
    }

    pub fn combiner_mode(&self) -> CombinerMode {
        let w = self.window;
        match self.combiner {
            CombinerKind::MeanEuclid => CombinerMode::MeanEuclid,
            CombinerKind::MeanL2 => CombinerMode::MeanL2,
            CombinerKind::WindowEuclid => CombinerMode::WindowEuclid { w },
            CombinerKind::WindowL2 => CombinerMode::WindowL2 { w },
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
