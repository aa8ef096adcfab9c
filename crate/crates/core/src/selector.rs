//! Choosing the per-step sample count `K_n`.
//!
//! Every rule has the form `min { K >= 1 : b(d0, K) <= eps }` for some start
//! distance `d0`; they differ only in how `d0` is formed. Starting distances
//! are capped at the domain diameter, since no two points of `X` are farther
//! apart than that.

use serde::{Deserialize, Serialize};

use crate::bounds::ExcessRiskBound;
use crate::error::{Error, Result};

pub const DEFAULT_K_MAX: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SelectionMode {
    RhoKnown(f64),
    NoUpdatePast,
    UpdatePast,
}

#[derive(Debug, Clone)]
pub struct SelectorConfig {
    pub epsilon: f64,
    pub k_max: usize,
    pub mode: SelectionMode,
    pub bound: ExcessRiskBound,
}

impl SelectorConfig {
    pub fn new(epsilon: f64, k_max: usize, mode: SelectionMode, bound: ExcessRiskBound) -> Result<Self> {
        check_epsilon(epsilon)?;
        if k_max == 0 {
            return Err(Error::invalid("k_max must be >= 1"));
        }
        if let SelectionMode::RhoKnown(rho) = mode {
            check_rho(rho)?;
        }
        Ok(SelectorConfig { epsilon, k_max, mode, bound })
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::invalid(format!("rho must be finite and >= 0, got {rho}")));
    }
    Ok(())
}

/// Smallest `K` in `[1, k_max]` with `b(d0, K) <= eps`.
pub fn min_k(bound: &ExcessRiskBound, d0: f64, epsilon: f64, k_max: usize) -> Result<usize> {
    let d0 = d0.min(bound.params().diam);
    let mut best = f64::INFINITY;
    for (i, b) in bound.scan(d0)?.take(k_max).enumerate() {
        if b <= epsilon {
            return Ok(i + 1);
        }
        best = best.min(b);
    }
    Err(Error::Infeasible { k_max, best_bound: best })
}

/// Start distance `sqrt(2 v / m) + rho`.
fn start_distance(bound: &ExcessRiskBound, v: f64, rho: f64) -> f64 {
    (2.0 * v / bound.params().m).sqrt() + rho
}

pub fn k_star(epsilon: f64, rho: f64, bound: &ExcessRiskBound, k_max: usize) -> Result<usize> {
    check_epsilon(epsilon)?;
    check_rho(rho)?;
    min_k(bound, start_distance(bound, epsilon, rho), epsilon, k_max)
}

/// Rule for the first step, when nothing is known about the start.
pub fn k_blind(epsilon: f64, bound: &ExcessRiskBound, k_max: usize) -> Result<usize> {
    check_epsilon(epsilon)?;
    min_k(bound, bound.params().diam, epsilon, k_max)
}

pub fn k_next_no_update(epsilon: f64, rho_hat_plus_t: f64, bound: &ExcessRiskBound, k_max: usize) -> Result<usize> {
    k_star(epsilon, rho_hat_plus_t, bound, k_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub k: usize,
    pub rho_upper: f64,
    /// Bound recorded for this step when it was last recomputed.
    pub eps_hat: f64,
}

/// History used by the update-past rule.
#[derive(Debug, Clone, Default)]
pub struct TrackerLedger {
    entries: Vec<LedgerEntry>,
}

impl TrackerLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records a step that ran with `k` samples.
    pub fn push(&mut self, k: usize, rho_upper: f64) {
        self.entries.push(LedgerEntry {
            k,
            rho_upper,
            eps_hat: f64::NAN,
        });
    }

    /// Latest recomputed bound, if any step has been recorded.
    pub fn last_eps_hat(&self) -> Option<f64> {
        self.entries.last().map(|e| e.eps_hat)
    }

    /// Recomputes every past bound with the drift plug-in `rho_upper`:
    /// `eps_1 = b(diam, K_1)`, `eps_i = b(sqrt(2 eps_{i-1}/m) + rho_upper, K_i)`.
    pub fn recompute(&mut self, rho_upper: f64, bound: &ExcessRiskBound) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let ks: Vec<usize> = self.entries.iter().map(|e| e.k).collect();
        let eval = BoundTable::build(bound, &ks)?;
        let diam = bound.params().diam;
        let mut prev = eval.at(bound, diam, ks[0])?;
        self.entries[0].eps_hat = prev;
        for i in 1..self.entries.len() {
            let d0 = start_distance(bound, prev, rho_upper).min(diam);
            prev = eval.at(bound, d0, ks[i])?;
            self.entries[i].eps_hat = prev;
        }
        for e in &mut self.entries {
            e.rho_upper = rho_upper;
        }
        Ok(())
    }
}

/// Evaluates `b(., K)` at a fixed set of `K`s with a single pass when the
/// bound factors.
enum BoundTable {
    Factored(std::collections::HashMap<usize, (f64, f64)>),
    Direct,
}

impl BoundTable {
    fn build(bound: &ExcessRiskBound, ks: &[usize]) -> Result<Self> {
        if !bound.is_factorable() {
            return Ok(BoundTable::Direct);
        }
        let k_top = ks.iter().copied().max().unwrap_or(0);
        let wanted: std::collections::HashSet<usize> = ks.iter().copied().collect();
        let mut table = std::collections::HashMap::with_capacity(wanted.len());
        for p in bound.factor_scan()?.take(k_top) {
            if wanted.contains(&p.k) {
                table.insert(p.k, (p.alpha, p.beta));
            }
        }
        Ok(BoundTable::Factored(table))
    }

    fn at(&self, bound: &ExcessRiskBound, d0: f64, k: usize) -> Result<f64> {
        match self {
            BoundTable::Factored(t) => {
                let (alpha, beta) = t[&k];
                Ok(alpha * d0 * d0 + beta)
            }
            BoundTable::Direct => bound.eval(d0, k),
        }
    }
}

/// Update-past rule. Recomputes the ledger with `rho_hat_plus_t`, then picks
/// the smallest `K` with `b(sqrt(2 max(eps_hat, eps)/m) + rho_hat_plus_t, K) <= eps`.
pub fn k_next_update_past(
    ledger: &mut TrackerLedger,
    epsilon: f64,
    rho_hat_plus_t: f64,
    bound: &ExcessRiskBound,
    k_max: usize,
) -> Result<usize> {
    check_epsilon(epsilon)?;
    check_rho(rho_hat_plus_t)?;
    if ledger.is_empty() {
        return Err(Error::State("update-past selection needs at least one recorded step".into()));
    }
    ledger.recompute(rho_hat_plus_t, bound)?;
    let eps_hat = ledger.last_eps_hat().expect("ledger is non-empty");
    let d0 = start_distance(bound, eps_hat.max(epsilon), rho_hat_plus_t);
    min_k(bound, d0, epsilon, k_max)
}

/// `phi_K(v) = alpha(K) (sqrt(2v/m) + rho)^2 + beta(K)`.
pub fn phi(v: f64, k: usize, rho: f64, bound: &ExcessRiskBound) -> Result<f64> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::invalid(format!("phi needs v >= 0, got {v}")));
    }
    let (alpha, beta) = bound.factored(k)?;
    Ok(phi_factored(v, alpha, beta, rho, bound.params().m))
}

#[inline]
pub(crate) fn phi_factored(v: f64, alpha: f64, beta: f64, rho: f64, m: f64) -> f64 {
    let d = (2.0 * v / m).sqrt() + rho;
    alpha * d * d + beta
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    pub start: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl FixedPointOptions {
    pub fn starting_at(start: f64) -> Self {
        FixedPointOptions {
            start,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// Fixed point of `v -> phi_K(v) + delta` by direct iteration.
pub fn phi_fixed_point(k: usize, rho: f64, bound: &ExcessRiskBound, delta: f64, opts: FixedPointOptions) -> Result<f64> {
    check_rho(rho)?;
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::invalid(format!("delta must be >= 0, got {delta}")));
    }
    let (alpha, beta) = bound.factored(k)?;
    let m = bound.params().m;
    if 2.0 / m * alpha >= 1.0 {
        return Err(Error::Analysis(format!(
            "phi is not a contraction at K = {k}: (2/m) alpha(K) = {} >= 1",
            2.0 / m * alpha
        )));
    }
    let mut v = opts.start.max(0.0);
    for _ in 0..opts.max_iter {
        let next = phi_factored(v, alpha, beta, rho, m) + delta;
        if (next - v).abs() <= opts.tol {
            // One more step so the returned point meets the residual tolerance.
            let last = phi_factored(next, alpha, beta, rho, m) + delta;
            if (last - next).abs() <= opts.tol {
                return Ok(next);
            }
            v = last;
            continue;
        }
        v = next;
    }
    Err(Error::Numerical(format!(
        "fixed-point iteration did not converge in {} iterations at K = {k}",
        opts.max_iter
    )))
}

/// Closed form of the fixed point above, from the quadratic in `sqrt(v)`.
/// `None` when `(2/m) alpha >= 1`, i.e. no finite fixed point exists.
pub fn phi_fixed_point_closed(alpha: f64, beta: f64, rho: f64, m: f64, delta: f64) -> Option<f64> {
    let a = 2.0 * alpha / m;
    if a >= 1.0 {
        return None;
    }
    let c = 2.0 * alpha * rho * (2.0 / m).sqrt();
    let e = alpha * rho * rho + beta + delta;
    let s = (c + (c * c + 4.0 * (1.0 - a) * e).sqrt()) / (2.0 * (1.0 - a));
    Some(s * s)
}

/// Ways a drift bound can be stated for the loss rather than the minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftSource {
    /// Bound on the change in function values.
    FvalGap(f64),
    /// Bound on an integral probability metric between consecutive distributions.
    Ipm(f64),
    /// Parameter drift `delta` through a minimizer map with Lipschitz constant `g`.
    ParamDrift { g: f64, delta: f64 },
}

/// Converts a drift statement into a bound on `||x_n* - x_{n-1}*||`.
pub fn rho_bound_translate(source: DriftSource, m: f64) -> Result<f64> {
    match source {
        DriftSource::FvalGap(r) | DriftSource::Ipm(r) => {
            if !(m > 0.0) || r < 0.0 {
                return Err(Error::invalid("translation needs m > 0 and a nonnegative bound"));
            }
            Ok((2.0 * r / m).sqrt())
        }
        DriftSource::ParamDrift { g, delta } => {
            if g < 0.0 || delta < 0.0 {
                return Err(Error::invalid("translation needs nonnegative G and delta"));
            }
            Ok(g * delta)
        }
    }
}
