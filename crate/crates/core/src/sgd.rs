//! Projected stochastic gradient descent over one time step.
//!
//! An epoch starts at the previous approximate minimizer, takes `K` projected
//! steps `x(k) = P_X[x(k-1) - mu(k) g(x(k-1), z(k))]` and returns a convex
//! combination of the iterates `x(0), ..., x(K)`. The mean of the epoch's
//! stochastic gradients re-evaluated at that output is returned alongside it,
//! since the drift estimator needs exactly that quantity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vector;

/// Closed convex feasible set with a closed-form Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// Ball of the given radius centred at the origin.
    Ball { radius: f64 },
    /// Axis-aligned box `lo <= x <= hi` (componentwise).
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Domain {
    pub fn ball(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::invalid(format!("ball radius must be finite and >= 0, got {radius}")));
        }
        Ok(Domain::Ball { radius })
    }

    pub fn diam(&self) -> f64 {
        match self {
            Domain::Ball { radius } => 2.0 * radius,
            Domain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| (h - l).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            Domain::Ball { radius } => x.norm() <= radius + tol,
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
        }
    }
}

/// Euclidean projection onto `domain`.
pub fn project(x: &Vector, domain: &Domain) -> Vector {
    match domain {
        Domain::Ball { radius } => {
            let norm = x.norm();
            if norm <= *radius {
                x.clone()
            } else if norm == 0.0 {
                x.clone()
            } else {
                x * (radius / norm)
            }
        }
        Domain::Box { lo, hi } => {
            Vector::from_iterator(x.len(), x.iter().enumerate().map(|(i, v)| v.clamp(lo[i], hi[i])))
        }
    }
}

/// Step-size schedule `mu(k)` for `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    /// `mu(k) = 1 / (m (k + 1))`.
    InverseTime { m: f64 },
    /// `mu(k) = c k^(-alpha)` with `alpha` in `[1/2, 1]`.
    PowerLaw { c: f64, alpha: f64 },
    /// `mu(k) = mu0`.
    Constant { mu0: f64 },
}

impl StepSchedule {
    pub fn inverse_time(m: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::invalid(format!("inverse-time schedule needs m > 0, got {m}")));
        }
        Ok(StepSchedule::InverseTime { m })
    }

    /// Power-law schedule; `c = None` picks `1/m`, which matches the
    /// inverse-time scale at `k = 1`.
    pub fn power_law(c: Option<f64>, alpha: f64, m: f64) -> Result<Self> {
        if !(0.5..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("power-law exponent must lie in [1/2, 1], got {alpha}")));
        }
        let c = match c {
            Some(c) => c,
            None if m > 0.0 => 1.0 / m,
            None => return Err(Error::invalid("default power-law scale needs m > 0")),
        };
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(format!("power-law scale must be > 0, got {c}")));
        }
        Ok(StepSchedule::PowerLaw { c, alpha })
    }

    /// Constant schedule. `mu0 = 0` is accepted as the degenerate
    /// no-movement schedule.
    pub fn constant(mu0: f64) -> Result<Self> {
        if !(mu0.is_finite() && mu0 >= 0.0) {
            return Err(Error::invalid(format!("constant step must be finite and >= 0, got {mu0}")));
        }
        Ok(StepSchedule::Constant { mu0 })
    }

    /// Step size at iteration `k` (1-based).
    #[inline]
    pub fn step(&self, k: usize) -> f64 {
        let k = k as f64;
        match *self {
            StepSchedule::InverseTime { m } => 1.0 / (m * (k + 1.0)),
            StepSchedule::PowerLaw { c, alpha } => c * k.powf(-alpha),
            StepSchedule::Constant { mu0 } => mu0,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::InverseTime { m } => m.is_finite() && m > 0.0,
            StepSchedule::PowerLaw { c, alpha } => c.is_finite() && c > 0.0 && (0.5..=1.0).contains(&alpha),
            StepSchedule::Constant { mu0 } => mu0.is_finite() && mu0 >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid step schedule {self:?}")))
        }
    }
}

/// How the epoch output is formed from the iterates `x(0..=K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AveragingScheme {
    LastIterate,
    /// `lambda(k)` proportional to `1 / mu(k + 1)`, `k = 0..=K`.
    InverseStepWeighted,
    /// `lambda(0) = 0`, `lambda(k) = 1/K` for `k >= 1`.
    UniformExcludingStart,
}

impl AveragingScheme {
    /// Convex weights over `x(0), ..., x(K)`.
    pub fn weights(&self, k: usize, schedule: &StepSchedule) -> Vec<f64> {
        let mut w = vec![0.0; k + 1];
        match self {
            AveragingScheme::LastIterate => w[k] = 1.0,
            AveragingScheme::UniformExcludingStart => {
                if k == 0 {
                    w[0] = 1.0;
                } else {
                    w[1..].iter_mut().for_each(|v| *v = 1.0 / k as f64);
                }
            }
            AveragingScheme::InverseStepWeighted => {
                for (i, v) in w.iter_mut().enumerate() {
                    let mu = schedule.step(i + 1);
                    *v = if mu > 0.0 { 1.0 / mu } else { 1.0 };
                }
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= total);
            }
        }
        w
    }
}

/// Source of i.i.d. samples and their stochastic gradients.
pub trait GradientOracle {
    type Sample;

    fn dim(&self) -> usize;

    /// Unbiased stochastic gradient at `x` for one sample.
    fn gradient(&self, x: &Vector, sample: &Self::Sample) -> Vector;
}

#[derive(Debug, Clone)]
pub struct EpochResult {
    /// The convex combination of the iterates.
    pub x_out: Vector,
    /// Mean stochastic gradient at `x_out` over the epoch's own samples.
    pub grad_mean: Vector,
    pub k_used: usize,
    /// `||x(k) - reference||` for `k = 0..=K`, when requested.
    pub iterate_trace: Option<Vec<f64>>,
}

/// Options for [`run_epoch`].
#[derive(Debug, Clone)]
pub struct EpochOptions<'a> {
    pub schedule: StepSchedule,
    pub averaging: AveragingScheme,
    pub domain: &'a Domain,
    /// When set, distances of every iterate to this point are recorded.
    pub trace_reference: Option<&'a Vector>,
}

/// Runs one epoch of projected SGD from `x0` over `samples`.
pub fn run_epoch<O: GradientOracle>(
    x0: &Vector,
    samples: &[O::Sample],
    oracle: &O,
    opts: &EpochOptions<'_>,
) -> Result<EpochResult> {
    let k = samples.len();
    if k == 0 {
        return Err(Error::invalid("an epoch needs K >= 1 samples"));
    }
    if x0.len() != oracle.dim() {
        return Err(Error::invalid(format!(
            "starting point has dimension {}, problem has {}",
            x0.len(),
            oracle.dim()
        )));
    }
    opts.schedule.validate()?;
    let weights = opts.averaging.weights(k, &opts.schedule);

    let mut x = x0.clone();
    let mut x_out = x0 * weights[0];
    let mut trace = opts.trace_reference.map(|r| {
        let mut t = Vec::with_capacity(k + 1);
        t.push((&x - r).norm());
        t
    });

    for (i, sample) in samples.iter().enumerate() {
        let step = i + 1;
        let g = oracle.gradient(&x, sample);
        x.axpy(-opts.schedule.step(step), &g, 1.0);
        x = project(&x, opts.domain);
        debug_assert!(opts.domain.contains(&x, 1e-9), "iterate left the domain");
        if weights[step] != 0.0 {
            x_out.axpy(weights[step], &x, 1.0);
        }
        if let (Some(t), Some(r)) = (trace.as_mut(), opts.trace_reference) {
            t.push((&x - r).norm());
        }
    }
    // Rounding in the convex combination can leave x_out a hair outside X.
    let x_out = project(&x_out, opts.domain);

    let mut grad_mean = Vector::zeros(x0.len());
    for sample in samples {
        grad_mean += oracle.gradient(&x_out, sample);
    }
    grad_mean /= k as f64;

    Ok(EpochResult {
        x_out,
        grad_mean,
        k_used: k,
        iterate_trace: trace,
    })
}
