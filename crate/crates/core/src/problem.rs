//! Synthetic drifting least-squares problem.
//!
//! Observations follow `y = eta^T w + e` with `w ~ N(0, sigma_w^2/d I)` and
//! `e ~ N(0, sigma_e^2)`. The loss `f(x) = E[(y - x^T w)^2] / 2` is minimized
//! at `eta`, which moves between time steps according to a [`DriftModel`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgd::{project, Domain, GradientOracle};
use crate::Vector;

const DIRECTION_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DriftModel {
    /// `||eta_{n+1} - eta_n|| = rho` exactly, random direction.
    DeterministicPath { rho: f64 },
    /// `eta_{n+1} - eta_n ~ N(0, (rho^2/d) I)`, so the L2 drift is `rho`.
    GaussianWalk { rho: f64 },
}

impl DriftModel {
    pub fn rho(&self) -> f64 {
        match *self {
            DriftModel::DeterministicPath { rho } | DriftModel::GaussianWalk { rho } => rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub w: Vector,
    pub e: f64,
    pub y: f64,
}

/// Constants of the gradient-growth and curvature conditions for this model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConstants {
    pub m: f64,
    pub a: f64,
    pub b: f64,
}

impl ModelConstants {
    /// `m = sigma_w^2/d`, `A = 2 sigma_e^2 sigma_w^2`, `B = 6 sigma_w^4`.
    pub fn closed_form(d: usize, sigma_w_sq: f64, sigma_e_sq: f64) -> Self {
        ModelConstants {
            m: sigma_w_sq / d as f64,
            a: 2.0 * sigma_e_sq * sigma_w_sq,
            b: 6.0 * sigma_w_sq * sigma_w_sq,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriftingProblem {
    d: usize,
    eta: Vector,
    sigma_w_sq: f64,
    sigma_e_sq: f64,
    drift: DriftModel,
    domain: Domain,
}

impl DriftingProblem {
    pub fn new(
        eta: Vector,
        sigma_w_sq: f64,
        sigma_e_sq: f64,
        drift: DriftModel,
        domain: Domain,
    ) -> Result<Self> {
        let d = eta.len();
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        for (name, v) in [("sigma_w_sq", sigma_w_sq), ("sigma_e_sq", sigma_e_sq), ("rho", drift.rho())] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let Domain::Box { lo, .. } = &domain {
            if lo.len() != d {
                return Err(Error::invalid("box bounds do not match the dimension"));
            }
        }
        if !domain.contains(&eta, 1e-12) {
            return Err(Error::invalid("initial eta lies outside the domain"));
        }
        Ok(DriftingProblem {
            d,
            eta,
            sigma_w_sq,
            sigma_e_sq,
            drift,
            domain,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn eta(&self) -> &Vector {
        &self.eta
    }

    pub fn sigma_w_sq(&self) -> f64 {
        self.sigma_w_sq
    }

    pub fn sigma_e_sq(&self) -> f64 {
        self.sigma_e_sq
    }

    pub fn drift(&self) -> DriftModel {
        self.drift
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn constants(&self) -> ModelConstants {
        ModelConstants::closed_form(self.d, self.sigma_w_sq, self.sigma_e_sq)
    }

    /// Moves `eta` to the next time step.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match self.drift {
            DriftModel::DeterministicPath { rho } => {
                if rho == 0.0 {
                    return;
                }
                for _ in 0..DIRECTION_ATTEMPTS {
                    let u = unit_direction(self.d, rng);
                    let candidate = &self.eta + u * rho;
                    if self.domain.contains(&candidate, 0.0) {
                        self.eta = candidate;
                        return;
                    }
                }
                // Near the boundary every random direction may exit; head inward.
                let norm = self.eta.norm();
                let inward = if norm > 0.0 {
                    -&self.eta / norm
                } else {
                    unit_direction(self.d, rng)
                };
                self.eta = project(&(&self.eta + inward * rho), &self.domain);
            }
            DriftModel::GaussianWalk { rho } => {
                let sd = rho / (self.d as f64).sqrt();
                let step = Vector::from_fn(self.d, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
                self.eta = project(&(&self.eta + step), &self.domain);
            }
        }
    }

    pub fn draw_samples<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<Sample>> {
        if k == 0 {
            return Err(Error::invalid("sample count must be >= 1"));
        }
        Ok((0..k).map(|_| self.draw_one(rng)).collect())
    }

    fn draw_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let sw = (self.sigma_w_sq / self.d as f64).sqrt();
        let w = Vector::from_fn(self.d, |_, _| sw * rng.sample::<f64, _>(StandardNormal));
        let e = self.sigma_e_sq.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let y = self.eta.dot(&w) + e;
        Sample { w, e, y }
    }

    pub fn stochastic_gradient(&self, x: &Vector, s: &Sample) -> Result<Vector> {
        self.check_dim(x)?;
        Ok(gradient(x, s))
    }

    /// `f(x) - f(eta) = sigma_w^2/(2d) ||x - eta||^2`.
    pub fn true_excess_risk(&self, x: &Vector) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.sigma_w_sq / (2.0 * self.d as f64) * (x - &self.eta).norm_squared())
    }

    /// Monte Carlo estimate of the excess risk from `t` fresh samples.
    pub fn mc_excess_risk_estimate<R: Rng + ?Sized>(&self, x: &Vector, t: usize, rng: &mut R) -> Result<f64> {
        self.check_dim(x)?;
        if t == 0 {
            return Err(Error::invalid("Monte Carlo sample count must be >= 1"));
        }
        let mut total = 0.0;
        for _ in 0..t {
            let s = self.draw_one(rng);
            let r = s.y - x.dot(&s.w);
            total += r * r;
        }
        Ok(0.5 * total / t as f64 - 0.5 * self.sigma_e_sq)
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::invalid(format!("point has dimension {}, expected {}", x.len(), self.d)));
        }
        Ok(())
    }
}

#[inline]
fn gradient(x: &Vector, s: &Sample) -> Vector {
    &s.w * (x.dot(&s.w) - s.y)
}

fn unit_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    loop {
        let v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

impl GradientOracle for DriftingProblem {
    type Sample = Sample;

    fn dim(&self) -> usize {
        self.d
    }

    fn gradient(&self, x: &Vector, sample: &Sample) -> Vector {
        gradient(x, sample)
    }
}
