//! Kalman-filter baseline for the Gaussian random-walk model: the state is
//! the minimizer `eta`, observed through `y = eta^T w + e`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problem::Sample;
use crate::Vector;

#[derive(Debug, Clone)]
pub struct KalmanState {
    pub eta_hat: Vector,
    pub p: DMatrix<f64>,
    /// Assumed per-step walk variance `sigma^2` of each coordinate.
    pub assumed_sigma_sq: f64,
    pub assumed_sigma_e_sq: f64,
}

impl KalmanState {
    pub fn new(eta_hat: Vector, p: DMatrix<f64>, assumed_sigma_sq: f64, assumed_sigma_e_sq: f64) -> Result<Self> {
        let d = eta_hat.len();
        if p.nrows() != d || p.ncols() != d {
            return Err(Error::invalid(format!("covariance is {}x{}, state has dimension {d}", p.nrows(), p.ncols())));
        }
        for (name, v) in [("assumed_sigma_sq", assumed_sigma_sq), ("assumed_sigma_e_sq", assumed_sigma_e_sq)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if (&p - p.transpose()).amax() > 1e-12 * (1.0 + p.amax()) {
            return Err(Error::invalid("initial covariance is not symmetric"));
        }
        Ok(KalmanState {
            eta_hat,
            p,
            assumed_sigma_sq,
            assumed_sigma_e_sq,
        })
    }

    pub fn dim(&self) -> usize {
        self.eta_hat.len()
    }

    /// Adds `sigma^2 I` to `P` at the start of an epoch; otherwise a no-op.
    pub fn predict(&mut self, is_epoch_start: bool) {
        if is_epoch_start {
            for i in 0..self.dim() {
                self.p[(i, i)] += self.assumed_sigma_sq;
            }
        }
    }

    /// Measurement update for one observation `(w, y)`.
    pub fn update(&mut self, w: &Vector, y: f64) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::invalid(format!("regressor has dimension {}, state {}", w.len(), self.dim())));
        }
        let pw = &self.p * w;
        let s = self.assumed_sigma_e_sq + w.dot(&pw);
        if w.iter().all(|v| *v == 0.0) {
            return Ok(());
        }
        if !(s > 0.0) {
            return Err(Error::Numerical(format!("innovation variance {s} is not positive")));
        }
        let gain = pw / s;
        let innovation = y - self.eta_hat.dot(w);
        self.eta_hat.axpy(innovation, &gain, 1.0);
        // (I - G w^T) P = P - G (P w)^T, using the symmetry of P.
        let pw = &self.p * w;
        self.p -= &gain * pw.transpose();
        self.p = (&self.p + self.p.transpose()) * 0.5;
        Ok(())
    }

    /// One epoch: a predict step, then an update per sample.
    pub fn run_epoch(&mut self, samples: &[Sample]) -> Result<()> {
        self.predict(true);
        for s in samples {
            self.update(&s.w, s.y)?;
        }
        Ok(())
    }
}
