//! Online estimation of the drift bound `rho`.
//!
//! Each step contributes a one-step estimate
//! `rho~_i = ||x_i - x_{i-1}|| + ||G_i||/m + ||G_{i-1}||/m`, `i >= 2`.
//! The combiners average these directly, or average a window statistic
//! `h_W` over trailing windows. Slack terms `D_n` and `t_n` turn the average
//! into an eventual upper bound on `rho`.

use serde::{Deserialize, Serialize};

use crate::bounds::ExcessRiskBound;
use crate::error::{Error, Result};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OneStepEstimate {
    pub index: usize,
    pub rho_tilde: f64,
}

pub fn one_step(x_i: &Vector, x_prev: &Vector, g_i: &Vector, g_prev: &Vector, m: f64) -> Result<f64> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::invalid(format!("one-step estimate needs m > 0, got {m}")));
    }
    Ok((x_i - x_prev).norm() + g_i.norm() / m + g_prev.norm() / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombinerMode {
    MeanEuclid,
    MeanL2,
    /// Average of `(W+1)/W max` over trailing windows.
    WindowEuclid { w: usize },
    /// Square root of the average of `(W+2)/W max` over squared trailing windows.
    WindowL2 { w: usize },
}

impl CombinerMode {
    pub fn is_l2(&self) -> bool {
        matches!(self, CombinerMode::MeanL2 | CombinerMode::WindowL2 { .. })
    }

    pub fn window(&self) -> Option<usize> {
        match *self {
            CombinerMode::WindowEuclid { w } | CombinerMode::WindowL2 { w } => Some(w),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window() == Some(0) {
            return Err(Error::invalid("window length must be >= 1"));
        }
        Ok(())
    }

    /// `sum_j a_j` for the window statistic, 1 for the plain means.
    pub fn lipschitz_sum(&self) -> f64 {
        match *self {
            CombinerMode::WindowEuclid { w } => w as f64 * h_scale(w, false),
            CombinerMode::WindowL2 { w } => w as f64 * h_scale(w, true),
            _ => 1.0,
        }
    }
}

/// Scale in front of the maximum: `(W+1)/W`, or `(W+2)/W` for squared values.
pub fn h_scale(w: usize, squared: bool) -> f64 {
    let wf = w as f64;
    if squared {
        (wf + 2.0) / wf
    } else {
        (wf + 1.0) / wf
    }
}

/// Uniform-drift window statistic; the window length is `values.len()`.
pub fn h_uniform(values: &[f64], squared: bool) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("window statistic needs at least one value"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(h_scale(values.len(), squared) * max)
}

/// Per-coordinate Lipschitz constants of [`h_uniform`].
pub fn h_lipschitz_constants(w: usize, squared: bool) -> Vec<f64> {
    vec![h_scale(w, squared); w]
}

/// `rho^_n` from the one-step estimates `rho~_2, ..., rho~_n`.
pub fn combine(mode: CombinerMode, buffer: &[f64]) -> Result<f64> {
    mode.validate()?;
    if buffer.is_empty() {
        return Err(Error::State("no one-step estimates to combine".into()));
    }
    let n1 = buffer.len() as f64;
    Ok(match mode {
        CombinerMode::MeanEuclid => buffer.iter().sum::<f64>() / n1,
        CombinerMode::MeanL2 => (buffer.iter().map(|r| r * r).sum::<f64>() / n1).sqrt(),
        CombinerMode::WindowEuclid { w } => {
            let mut total = 0.0;
            for j in 0..buffer.len() {
                total += h_uniform(&buffer[j.saturating_sub(w - 1)..=j], false)?;
            }
            total / n1
        }
        CombinerMode::WindowL2 { w } => {
            let mut total = 0.0;
            for j in 0..buffer.len() {
                let sq: Vec<f64> = buffer[j.saturating_sub(w - 1)..=j].iter().map(|r| r * r).collect();
                total += h_uniform(&sq, true)?;
            }
            (total / n1).sqrt()
        }
    })
}

/// `t_n = c_t sqrt(ln(n+1)/(n-1))`.
pub fn t_schedule(n: usize, c_t: f64) -> Result<f64> {
    if !(c_t.is_finite() && c_t > 0.0) {
        return Err(Error::invalid(format!("c_t must be > 0, got {c_t}")));
    }
    if n < 2 {
        return Err(Error::State(format!("t_n is defined for n >= 2, got {n}")));
    }
    let nf = n as f64;
    Ok(c_t * ((nf + 1.0).ln() / (nf - 1.0)).sqrt())
}

/// Partial sum over `n = 2..=n_max` of the series whose finiteness the
/// slack schedule needs, with window constant `a_sum` (1 for plain means).
pub fn slack_series_partial_sum(c_t: f64, diam: f64, m: f64, g: f64, window: usize, a_sum: f64, n_max: usize) -> f64 {
    let mut total = 0.0;
    for n in 2..=n_max {
        let t = t_schedule(n, c_t).expect("c_t validated by caller");
        let nf = n as f64;
        let lead = if window <= 1 { nf - 1.0 } else { (nf - window as f64).max(0.0).powi(2) / (nf - 1.0) };
        let t2 = lead * t * t / (a_sum * a_sum);
        total += (-t2 / (18.0 * diam * diam)).exp() + 2.0 * (-m * m * t2 / (72.0 * g * g)).exp();
    }
    total
}

/// Per-step summand `(1 + M/m) C(K) + sqrt(sigma/K)` with `C(K) = (4/m) b(diam, K)`.
pub fn slack_term(k: usize, sigma: f64, bound: &ExcessRiskBound) -> Result<f64> {
    let p = bound.params();
    let c = 4.0 / p.m * bound.eval(p.diam, k)?;
    Ok((1.0 + p.big_m / p.m) * c + (sigma / k as f64).sqrt())
}

/// `D_n = [T_1 + 2 sum_{i=2}^{n-1} T_i + T_n] / (n - 1)` from per-step terms `T_1..T_n`.
pub fn slack_dn(terms: &[f64]) -> Result<f64> {
    let n = terms.len();
    if n < 2 {
        return Err(Error::State(format!("D_n needs n >= 2 steps, got {n}")));
    }
    let inner: f64 = terms[1..n - 1].iter().sum();
    Ok((terms[0] + 2.0 * inner + terms[n - 1]) / (n - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlackReport {
    pub rho_hat: f64,
    /// Scaled `D_n`, or `D~_n = 2 diam D_n` scaled, in L2 modes.
    pub d_term: f64,
    pub t_n: f64,
    /// `rho^ + D + t`, or `sqrt(rho^2 + D~ + t)`.
    pub upper: f64,
    /// The same composition without the `D` term.
    pub upper_t_only: f64,
}

/// Running estimator state, updated once per time step.
#[derive(Debug, Clone)]
pub struct RhoEstimator {
    mode: CombinerMode,
    c_t: f64,
    history: Vec<f64>,
    window_sum: f64,
    slack_terms: Vec<f64>,
}

impl RhoEstimator {
    pub fn new(mode: CombinerMode, c_t: f64) -> Result<Self> {
        mode.validate()?;
        t_schedule(2, c_t)?;
        Ok(RhoEstimator {
            mode,
            c_t,
            history: Vec::new(),
            window_sum: 0.0,
            slack_terms: Vec::new(),
        })
    }

    pub fn mode(&self) -> CombinerMode {
        self.mode
    }

    /// Number of steps recorded, `n`.
    pub fn steps(&self) -> usize {
        self.slack_terms.len()
    }

    pub fn one_step_history(&self) -> &[f64] {
        &self.history
    }

    /// Records step `n`: its slack summand, and its one-step estimate when `n >= 2`.
    pub fn record(&mut self, rho_tilde: Option<f64>, slack_term: f64) -> Result<()> {
        let n = self.slack_terms.len() + 1;
        match (n, rho_tilde) {
            (1, None) => {}
            (1, Some(_)) => return Err(Error::State("the first step has no one-step estimate".into())),
            (_, None) => return Err(Error::State(format!("step {n} needs a one-step estimate"))),
            (_, Some(r)) => {
                if !(r.is_finite() && r >= 0.0) {
                    return Err(Error::Numerical(format!("one-step estimate {r} at step {n}")));
                }
                self.history.push(r);
                self.window_sum += self.latest_window_value()?;
            }
        }
        self.slack_terms.push(slack_term);
        Ok(())
    }

    fn latest_window_value(&self) -> Result<f64> {
        let last = *self.history.last().expect("called after push");
        Ok(match self.mode {
            CombinerMode::MeanEuclid => last,
            CombinerMode::MeanL2 => last * last,
            CombinerMode::WindowEuclid { w } => {
                let start = self.history.len().saturating_sub(w);
                h_uniform(&self.history[start..], false)?
            }
            CombinerMode::WindowL2 { w } => {
                let start = self.history.len().saturating_sub(w);
                let sq: Vec<f64> = self.history[start..].iter().map(|r| r * r).collect();
                h_uniform(&sq, true)?
            }
        })
    }

    pub fn rho_hat(&self) -> Result<f64> {
        if self.history.is_empty() {
            return Err(Error::State("rho^ needs n >= 2".into()));
        }
        let mean = self.window_sum / self.history.len() as f64;
        Ok(if self.mode.is_l2() { mean.sqrt() } else { mean })
    }

    /// Slack and upper bound at the current step; `diam` enters only in L2 modes.
    pub fn current_upper(&self, diam: f64) -> Result<SlackReport> {
        let n = self.steps();
        let rho_hat = self.rho_hat()?;
        let dn = slack_dn(&self.slack_terms)?;
        let t_n = t_schedule(n, self.c_t)?;
        let scale = match self.mode.window() {
            Some(w) => (n as f64 - 1.0) / (n as f64 - w as f64).max(1.0) * self.mode.lipschitz_sum(),
            None => 1.0,
        };
        let (d_term, upper, upper_t_only) = if self.mode.is_l2() {
            let d = scale * 2.0 * diam * dn;
            (d, (rho_hat * rho_hat + d + t_n).sqrt(), (rho_hat * rho_hat + t_n).sqrt())
        } else {
            let d = scale * dn;
            (d, rho_hat + d + t_n, rho_hat + t_n)
        };
        Ok(SlackReport {
            rho_hat,
            d_term,
            t_n,
            upper,
            upper_t_only,
        })
    }
}
