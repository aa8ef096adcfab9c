//! Excess-risk bounds `b(d0, K)` for an SGD epoch of `K` steps started within
//! distance `d0` of the minimizer.
//!
//! All families are built on the distance recursion
//! `gamma(k) = (1 - 2 m mu(k) + B mu(k)^2) gamma(k-1) + A mu(k)^2`,
//! whose solution splits as `gamma(k) = p_k d0^2 + q_k`. That split is what
//! makes the Lipschitz and inverse-step families factor exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgd::StepSchedule;

/// Relative slack allowed when checking `d0 <= diam`.
const DIAM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Strong convexity.
    pub m: f64,
    pub a: f64,
    pub b: f64,
    /// Lipschitz modulus of the gradient.
    pub big_m: f64,
    pub diam: f64,
}

impl BoundParams {
    pub fn new(m: f64, a: f64, b: f64, big_m: f64, diam: f64) -> Result<Self> {
        let p = BoundParams { m, a, b, big_m, diam };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.m, self.a, self.b, self.big_m, self.diam].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid(format!("bound parameters must be finite: {self:?}")));
        }
        if self.m <= 0.0 {
            return Err(Error::invalid(format!("m must be > 0, got {}", self.m)));
        }
        if self.a < 0.0 || self.b < 0.0 {
            return Err(Error::invalid("A and B must be >= 0"));
        }
        if self.big_m < self.m * (1.0 - 1e-12) {
            return Err(Error::invalid(format!("need m <= M, got m = {}, M = {}", self.m, self.big_m)));
        }
        if self.diam < 0.0 {
            return Err(Error::invalid("diameter must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundFamily {
    /// `(M/2) gamma(K)`, last iterate.
    LipschitzLyapunov,
    /// Weights proportional to `1/mu(k+1)` with `mu(k) = 1/(m(k+1))`.
    InverseStepAverage,
    /// Uniform average of `x(1..=K)`, quadratic objectives only.
    UniformAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Quadratic,
    General,
}

/// Value of the distance recursion and whether any factor was clamped at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionValue {
    pub value: f64,
    pub clamped: bool,
}

/// Incremental state of the distance recursion.
#[derive(Debug, Clone)]
struct Recursion {
    schedule: StepSchedule,
    m: f64,
    a: f64,
    b: f64,
    k: usize,
    /// Coefficient of `d0^2`.
    p: f64,
    /// Noise accumulation.
    q: f64,
    clamped: bool,
}

impl Recursion {
    fn new(schedule: StepSchedule, params: &BoundParams) -> Self {
        Recursion {
            schedule,
            m: params.m,
            a: params.a,
            b: params.b,
            k: 0,
            p: 1.0,
            q: 0.0,
            clamped: false,
        }
    }

    #[inline]
    fn advance(&mut self) {
        self.k += 1;
        let mu = self.schedule.step(self.k);
        let mut f = 1.0 - 2.0 * self.m * mu + self.b * mu * mu;
        if f < 0.0 {
            f = 0.0;
            self.clamped = true;
        }
        self.p *= f;
        self.q = f * self.q + self.a * mu * mu;
    }
}

/// Bound on `E[d^2(K)]` from the distance recursion.
pub fn distance_recursion_bound(
    d0_sq: f64,
    k: usize,
    schedule: &StepSchedule,
    params: &BoundParams,
) -> Result<RecursionValue> {
    schedule.validate()?;
    if !(d0_sq.is_finite() && d0_sq >= 0.0) {
        return Err(Error::invalid(format!("d0^2 must be finite and >= 0, got {d0_sq}")));
    }
    let mut r = Recursion::new(*schedule, params);
    for _ in 0..k {
        r.advance();
    }
    Ok(RecursionValue {
        value: r.p * d0_sq + r.q,
        clamped: r.clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessRiskBound {
    family: BoundFamily,
    params: BoundParams,
    schedule: StepSchedule,
}

impl ExcessRiskBound {
    pub fn new(
        family: BoundFamily,
        params: BoundParams,
        schedule: StepSchedule,
        objective: ObjectiveKind,
    ) -> Result<Self> {
        params.validate()?;
        schedule.validate()?;
        match family {
            BoundFamily::InverseStepAverage if !matches!(schedule, StepSchedule::InverseTime { .. }) => {
                return Err(Error::config(
                    "bound",
                    "the inverse-step average bound needs an inverse-time step schedule",
                ));
            }
            BoundFamily::UniformAverage => {
                if objective != ObjectiveKind::Quadratic {
                    return Err(Error::config("bound", "the uniform average bound holds only for quadratic objectives"));
                }
                if !matches!(schedule, StepSchedule::PowerLaw { .. }) {
                    return Err(Error::config("bound", "the uniform average bound needs a power-law step schedule"));
                }
            }
            _ => {}
        }
        Ok(ExcessRiskBound { family, params, schedule })
    }

    pub fn family(&self) -> BoundFamily {
        self.family
    }

    pub fn params(&self) -> &BoundParams {
        &self.params
    }

    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    pub fn is_factorable(&self) -> bool {
        self.family != BoundFamily::UniformAverage
    }

    /// Same family and schedule with new parameters.
    pub fn with_params(&self, params: BoundParams) -> Result<Self> {
        params.validate()?;
        Ok(ExcessRiskBound { params, ..self.clone() })
    }

    fn check_d0(&self, d0: f64) -> Result<()> {
        if !(d0.is_finite() && d0 >= 0.0) {
            return Err(Error::invalid(format!("d0 must be finite and >= 0, got {d0}")));
        }
        if d0 > self.params.diam * (1.0 + DIAM_TOL) + DIAM_TOL {
            return Err(Error::invalid(format!("d0 = {d0} exceeds the domain diameter {}", self.params.diam)));
        }
        Ok(())
    }

    /// `b(d0, K)`.
    pub fn eval(&self, d0: f64, k: usize) -> Result<f64> {
        self.check_d0(d0)?;
        if k == 0 {
            return Err(Error::invalid("b(d0, K) needs K >= 1"));
        }
        let mut scan = self.scan_unchecked(d0);
        Ok(scan.nth(k - 1).expect("scan is infinite"))
    }

    /// `(alpha(K), beta(K))` with `b(d0, K) = alpha d0^2 + beta`.
    pub fn factored(&self, k: usize) -> Result<(f64, f64)> {
        if k == 0 {
            return Err(Error::invalid("factored bound needs K >= 1"));
        }
        let mut scan = self.factor_scan()?;
        Ok(scan.nth(k - 1).map(|f| (f.alpha, f.beta)).expect("scan is infinite"))
    }

    /// Iterator over `b(d0, K)` for `K = 1, 2, ...`, O(1) per item.
    pub fn scan(&self, d0: f64) -> Result<BoundScan> {
        self.check_d0(d0)?;
        Ok(self.scan_unchecked(d0))
    }

    fn scan_unchecked(&self, d0: f64) -> BoundScan {
        let inner = match self.factor_scan() {
            Ok(f) => ScanInner::Factored(f),
            Err(_) => ScanInner::Uniform(UniformScan::new(self, d0)),
        };
        BoundScan { d0_sq: d0 * d0, inner }
    }

    /// Iterator over `(K, alpha(K), beta(K))`; errors for non-factorable families.
    pub fn factor_scan(&self) -> Result<FactorScan> {
        if !self.is_factorable() {
            return Err(Error::Analysis(
                "the uniform average bound is not of the form alpha d0^2 + beta".into(),
            ));
        }
        let schedule_m = match self.schedule {
            StepSchedule::InverseTime { m } => m,
            _ => self.params.m,
        };
        Ok(FactorScan {
            family: self.family,
            half_big_m: 0.5 * self.params.big_m,
            one_plus_b: 1.0 + self.params.b,
            b: self.params.b,
            a: self.params.a,
            schedule_m,
            rec: Recursion::new(self.schedule, &self.params),
            sum_p: 0.0,
            sum_q: 0.0,
        })
    }

    /// True when a factor of the recursion hit zero within the first `k` steps.
    pub fn clamped_within(&self, k: usize) -> bool {
        let mut r = Recursion::new(self.schedule, &self.params);
        for _ in 0..k {
            r.advance();
        }
        r.clamped
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorPoint {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct FactorScan {
    family: BoundFamily,
    half_big_m: f64,
    one_plus_b: f64,
    b: f64,
    a: f64,
    schedule_m: f64,
    rec: Recursion,
    sum_p: f64,
    sum_q: f64,
}

impl Iterator for FactorScan {
    type Item = FactorPoint;

    fn next(&mut self) -> Option<FactorPoint> {
        self.rec.advance();
        let k = self.rec.k;
        let (alpha, beta) = match self.family {
            BoundFamily::LipschitzLyapunov => (self.half_big_m * self.rec.p, self.half_big_m * self.rec.q),
            BoundFamily::InverseStepAverage => {
                self.sum_p += self.rec.p;
                self.sum_q += self.rec.q;
                let kf = k as f64;
                let den = self.schedule_m * (kf + 1.0) * (kf + 4.0);
                (
                    (self.one_plus_b + self.b * self.sum_p) / den,
                    (self.b * self.sum_q + (kf + 1.0) * self.a) / den,
                )
            }
            BoundFamily::UniformAverage => unreachable!("not factorable"),
        };
        Some(FactorPoint { k, alpha, beta })
    }
}

/// Incremental evaluation of the uniform average bound at a fixed `d0`.
#[derive(Debug, Clone)]
struct UniformScan {
    schedule: StepSchedule,
    half_big_m: f64,
    inv_sqrt_m: f64,
    a_over_m: f64,
    two_b_over_m: f64,
    d0: f64,
    rec: Recursion,
    /// `sum_{k < K} |1/mu(k+1) - 1/mu(k)| sqrt(gamma(k))`.
    drift_sum: f64,
    /// `sum_{k <= K} gamma(k - 1)`.
    gamma_prev_sum: f64,
    gamma_prev: f64,
}

impl UniformScan {
    fn new(bound: &ExcessRiskBound, d0: f64) -> Self {
        let p = &bound.params;
        UniformScan {
            schedule: bound.schedule,
            half_big_m: 0.5 * p.big_m,
            inv_sqrt_m: 1.0 / p.m.sqrt(),
            a_over_m: p.a / p.m,
            two_b_over_m: 2.0 * p.b / p.m,
            d0,
            rec: Recursion::new(bound.schedule, p),
            drift_sum: 0.0,
            gamma_prev_sum: 0.0,
            gamma_prev: d0 * d0,
        }
    }

    fn next_value(&mut self) -> f64 {
        let d0_sq = self.d0 * self.d0;
        self.gamma_prev_sum += self.gamma_prev;
        self.rec.advance();
        let k = self.rec.k;
        let kf = k as f64;
        let gamma_k = self.rec.p * d0_sq + self.rec.q;
        let inv_mu = |j: usize| 1.0 / self.schedule.step(j);
        let start = self.inv_sqrt_m * inv_mu(1) * self.d0;
        let end = self.inv_sqrt_m * inv_mu(k) * gamma_k.sqrt();
        let s = (self.inv_sqrt_m * self.drift_sum + start + end) / kf
            + (self.a_over_m / kf).sqrt()
            + (self.two_b_over_m / (kf * kf) * self.gamma_prev_sum).sqrt();
        // Roll the drift sum forward so it covers k = 1..K when K+1 is evaluated.
        self.drift_sum += (inv_mu(k + 1) - inv_mu(k)).abs() * gamma_k.sqrt();
        self.gamma_prev = gamma_k;
        self.half_big_m * s * s
    }
}

enum ScanInner {
    Factored(FactorScan),
    Uniform(UniformScan),
}

pub struct BoundScan {
    d0_sq: f64,
    inner: ScanInner,
}

impl Iterator for BoundScan {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(match &mut self.inner {
            ScanInner::Factored(f) => {
                let p = f.next()?;
                p.alpha * self.d0_sq + p.beta
            }
            ScanInner::Uniform(u) => u.next_value(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::bigint::BigInt;
    use num::rational::BigRational;
    use num::{One, ToPrimitive, Zero};

    fn table_params() -> BoundParams {
        BoundParams::new(0.25, 0.5, 1.5, 0.25, 20.0).unwrap()
    }

    fn inverse_step() -> ExcessRiskBound {
        ExcessRiskBound::new(
            BoundFamily::InverseStepAverage,
            table_params(),
            StepSchedule::inverse_time(0.25).unwrap(),
            ObjectiveKind::Quadratic,
        )
        .unwrap()
    }

    fn lipschitz(schedule: StepSchedule, params: BoundParams) -> ExcessRiskBound {
        ExcessRiskBound::new(BoundFamily::LipschitzLyapunov, params, schedule, ObjectiveKind::General).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn recursion_identity_with_zero_steps() {
        let s = StepSchedule::constant(0.0).unwrap();
        for k in [0, 1, 10, 1000] {
            let r = distance_recursion_bound(2.5, k, &s, &table_params()).unwrap();
            assert_eq!(r.value, 2.5);
            assert!(!r.clamped);
        }
    }

    #[test]
    fn recursion_geometric_closed_form() {
        let params = BoundParams::new(0.5, 0.0, 0.0, 1.0, 10.0).unwrap();
        let s = StepSchedule::constant(0.3).unwrap();
        for k in [0, 1, 7, 40] {
            let r = distance_recursion_bound(3.0, k, &s, &params).unwrap();
            assert!(rel(r.value, 0.7f64.powi(k as i32) * 3.0) < 1e-14);
        }
    }

    #[test]
    fn recursion_clamps_negative_factor() {
        // 1 - 2 m mu + B mu^2 with m = 1, B = 0, mu = 1 gives -1.
        let params = BoundParams::new(1.0, 0.1, 0.0, 1.0, 10.0).unwrap();
        let r = distance_recursion_bound(4.0, 3, &StepSchedule::constant(1.0).unwrap(), &params).unwrap();
        assert!(r.clamped);
        assert!(r.value >= 0.0);
        assert!(rel(r.value, 0.1).abs() < 1e-15);
    }

    fn rational(x: f64) -> BigRational {
        BigRational::from_float(x).unwrap()
    }

    /// Exact evaluation of the product-sum form in rational arithmetic.
    fn exact_recursion(d0_sq: f64, k_max: usize, m: f64, a: f64, b: f64) -> f64 {
        let (m, a, b) = (rational(m), rational(a), rational(b));
        let two = BigRational::from_integer(BigInt::from(2));
        let mu = |k: usize| BigRational::one() / (&m * BigRational::from_integer(BigInt::from(k + 1)));
        let factor = |k: usize| {
            let u = mu(k);
            BigRational::one() - &two * &m * &u + &b * &u * &u
        };
        let mut product = BigRational::one();
        for k in 1..=k_max {
            product *= factor(k);
        }
        let mut noise = BigRational::zero();
        for k in 1..=k_max {
            let mut tail = BigRational::one();
            for i in (k + 1)..=k_max {
                tail *= factor(i);
            }
            let u = mu(k);
            noise += tail * &u * &u;
        }
        (product * rational(d0_sq) + a * noise).to_f64().unwrap()
    }

    #[test]
    fn recursion_matches_exact_rational_evaluation() {
        let params = table_params();
        let s = StepSchedule::inverse_time(0.25).unwrap();
        for (d0_sq, k) in [(1.0, 300), (0.0, 50), (4.0, 1), (9.0, 120)] {
            let got = distance_recursion_bound(d0_sq, k, &s, &params).unwrap().value;
            let exact = exact_recursion(d0_sq, k, 0.25, 0.5, 1.5);
            assert!(rel(got, exact) < 1e-10, "K={k}: {got} vs {exact}");
        }
    }

    #[test]
    fn lipschitz_edge_cases() {
        let params = BoundParams::new(0.25, 0.0, 1.5, 0.25, 20.0).unwrap();
        let b = lipschitz(StepSchedule::inverse_time(0.25).unwrap(), params);
        assert_eq!(b.eval(0.0, 17).unwrap(), 0.0);
        let frozen = lipschitz(StepSchedule::constant(0.0).unwrap(), table_params());
        assert!(rel(frozen.eval(3.0, 5).unwrap(), 0.125 * 9.0) < 1e-15);
        let (alpha, beta) = frozen.factored(9).unwrap();
        assert_eq!(alpha, 0.125);
        assert_eq!(beta, 0.0);
    }

    #[test]
    fn lipschitz_is_half_m_times_recursion() {
        let s = StepSchedule::inverse_time(0.25).unwrap();
        let b = lipschitz(s, table_params());
        for k in [1, 2, 30, 400] {
            let r = distance_recursion_bound(2.25, k, &s, &table_params()).unwrap().value;
            assert!(rel(b.eval(1.5, k).unwrap(), 0.125 * r) < 1e-13);
        }
    }

    #[test]
    fn inverse_step_direct_formula() {
        let b = inverse_step();
        let s = StepSchedule::inverse_time(0.25).unwrap();
        for (d0, k) in [(1.0, 1usize), (2.0, 10), (0.3, 77)] {
            let gamma_sum: f64 = (1..=k)
                .map(|j| distance_recursion_bound(d0 * d0, j, &s, &table_params()).unwrap().value)
                .sum();
            let kf = k as f64;
            let direct = (2.5 * d0 * d0 + 1.5 * gamma_sum + (kf + 1.0) * 0.5) / (0.25 * (kf + 1.0) * (kf + 4.0));
            assert!(rel(b.eval(d0, k).unwrap(), direct) < 1e-12);
        }
    }

    #[test]
    fn inverse_step_decreases_from_300_to_600() {
        let b = inverse_step();
        assert!(b.eval(1.0, 600).unwrap() < b.eval(1.0, 300).unwrap());
    }

    #[test]
    fn factorization_identity() {
        let bounds = [inverse_step(), lipschitz(StepSchedule::inverse_time(0.25).unwrap(), table_params())];
        for b in &bounds {
            for k in [1, 3, 17, 250, 999] {
                let (alpha, beta) = b.factored(k).unwrap();
                assert_eq!(beta, b.eval(0.0, k).unwrap());
                assert!(rel(b.eval(2.0, k).unwrap() - b.eval(0.0, k).unwrap(), 4.0 * alpha) < 1e-12);
                for d0 in [0.1, 1.0, 7.5, 20.0] {
                    assert!(rel(b.eval(d0, k).unwrap(), alpha * d0 * d0 + beta) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn monotone_in_d0_everywhere_and_in_k_past_warmup() {
        // The early factors 1 - 2 m mu + B mu^2 exceed one for the closed-form constants,
        // so the bound rises for K < 10 and only decreases after that.
        let b = inverse_step();
        let d0s = [0.0, 0.5, 1.0, 2.0, 20.0];
        let traces: Vec<Vec<f64>> = d0s.iter().map(|&d| b.scan(d).unwrap().take(1000).collect()).collect();
        for k in 0..1000 {
            for w in traces.windows(2) {
                assert!(w[0][k] <= w[1][k]);
            }
        }
        for t in &traces {
            for k in 9..999 {
                assert!(t[k + 1] <= t[k], "K = {}", k + 1);
            }
            assert!(t[1] > t[0]);
        }
    }

    #[test]
    fn scan_matches_eval() {
        let b = inverse_step();
        let scan: Vec<f64> = b.scan(3.0).unwrap().take(50).collect();
        for (i, v) in scan.iter().enumerate() {
            assert_eq!(*v, b.eval(3.0, i + 1).unwrap());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let b = inverse_step();
        assert!(matches!(b.eval(21.0, 5), Err(Error::InvalidArgument(_))));
        assert!(b.eval(1.0, 0).is_err());
        assert!(BoundParams::new(1.0, 0.0, 0.0, 0.5, 1.0).is_err());
        assert!(ExcessRiskBound::new(
            BoundFamily::InverseStepAverage,
            table_params(),
            StepSchedule::constant(0.1).unwrap(),
            ObjectiveKind::Quadratic
        )
        .is_err());
        let uniform = ExcessRiskBound::new(
            BoundFamily::UniformAverage,
            table_params(),
            StepSchedule::power_law(None, 0.5, 0.25).unwrap(),
            ObjectiveKind::General,
        );
        assert!(matches!(uniform, Err(Error::Config { .. })));
    }

    fn uniform() -> ExcessRiskBound {
        ExcessRiskBound::new(
            BoundFamily::UniformAverage,
            table_params(),
            StepSchedule::power_law(Some(1.0), 0.75, 0.25).unwrap(),
            ObjectiveKind::Quadratic,
        )
        .unwrap()
    }

    #[test]
    fn uniform_average_direct_formula() {
        let b = uniform();
        let s = *b.schedule();
        let p = table_params();
        let gamma = |k: usize, d0: f64| distance_recursion_bound(d0 * d0, k, &s, &p).unwrap().value;
        let inv_mu = |k: usize| 1.0 / s.step(k);
        for (d0, k) in [(1.0, 1usize), (0.5, 8), (4.0, 60)] {
            let kf = k as f64;
            let drift: f64 = (1..k).map(|j| (inv_mu(j + 1) - inv_mu(j)).abs() * gamma(j, d0).sqrt()).sum();
            let prev: f64 = (1..=k).map(|j| gamma(j - 1, d0)).sum();
            let sm = p.m.sqrt();
            let s_val = (drift / sm + inv_mu(1) * d0 / sm + inv_mu(k) * gamma(k, d0).sqrt() / sm) / kf
                + (p.a / (p.m * kf)).sqrt()
                + (2.0 * p.b / (p.m * kf * kf) * prev).sqrt();
            let direct = 0.5 * p.big_m * s_val * s_val;
            assert!(rel(b.eval(d0, k).unwrap(), direct) < 1e-12);
        }
        assert!(b.factored(3).is_err());
    }

    #[test]
    fn uniform_average_monotone_in_d0() {
        let b = uniform();
        for k in [1, 10, 100] {
            let mut prev = 0.0;
            for d0 in [0.0, 0.5, 1.0, 5.0, 20.0] {
                let v = b.eval(d0, k).unwrap();
                assert!(v >= prev);
                prev = v;
            }
        }
    }
}
