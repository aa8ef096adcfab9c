//! In-high-probability bounds `P{f_n(x_n) - f_n* > t} <= r` on a finite grid
//! of thresholds, and the matching choice of `K_n`.
//!
//! With `psi(t, delta) = b(delta, K)/t`, a grid step reads
//! `r_n(i) = min_delta [b(delta, K) + b(diam, K) phi_n(delta)] / t_i`,
//! so the inner minimum is shared by every grid point.

use crate::bounds::ExcessRiskBound;
use crate::error::{Error, Result};
use crate::selector::phi_fixed_point_closed;

pub const DEFAULT_DELTA_POINTS: usize = 200;
pub const DEFAULT_ITERS: usize = 50;
/// Iteration stops early once no grid bound moves by more than this.
const SETTLE_TOL: f64 = 1e-13;
/// `K` below this are scanned one by one, where `b` may still rise with `K`.
const LINEAR_PREFIX: usize = 32;

pub fn markov_bound(epsilon: f64, t: f64) -> f64 {
    (epsilon / t).min(1.0)
}

pub fn psi(t: f64, delta: f64, k: usize, bound: &ExcessRiskBound) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("psi needs t > 0, got {t}")));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("psi needs delta > 0, got {delta}")));
    }
    Ok(bound.eval(delta, k)? / t)
}

/// `n` log-spaced points in `(1e-6 diam, diam]`, ending at `diam`.
pub fn log_delta_grid(diam: f64, n: usize) -> Vec<f64> {
    if n == 0 || diam <= 0.0 {
        return Vec::new();
    }
    let lo = (1e-6 * diam).ln();
    let hi = diam.ln();
    (1..=n).map(|j| (lo + (hi - lo) * j as f64 / n as f64).exp()).collect()
}

/// 50 log-spaced thresholds over `[1e-3, 1]` with `target` merged in.
pub fn default_points(target: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..50)
        .map(|j| 10f64.powf(-3.0 + 3.0 * j as f64 / 49.0))
        .collect();
    if !pts.iter().any(|p| same_point(*p, target)) {
        pts.push(target);
        pts.sort_by(|a, b| a.total_cmp(b));
    }
    pts
}

fn same_point(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Threshold and `delta` grids shared by every selection.
#[derive(Debug, Clone, PartialEq)]
pub struct IhpTemplate {
    pub points: Vec<f64>,
    pub delta_grid: Vec<f64>,
}

impl IhpTemplate {
    pub fn new(points: Vec<f64>, delta_grid: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("ihp.points", "threshold grid is empty"));
        }
        if !points.windows(2).all(|w| w[0] < w[1]) || points[0] <= 0.0 {
            return Err(Error::config("ihp.points", "thresholds must be positive and strictly increasing"));
        }
        if delta_grid.is_empty() {
            return Err(Error::config("ihp.delta_grid", "delta grid is empty"));
        }
        if delta_grid.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::config("ihp.delta_grid", "delta values must be positive"));
        }
        Ok(IhpTemplate { points, delta_grid })
    }

    pub fn for_target(target_t: f64, diam: f64) -> Result<Self> {
        Self::new(default_points(target_t), log_delta_grid(diam, DEFAULT_DELTA_POINTS))
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.points.iter().position(|p| same_point(*p, t))
    }
}

/// Grid bounds `r_n(1..=N)` evolved by the finite-point recursion.
#[derive(Debug, Clone)]
pub struct IhpGrid {
    points: Vec<f64>,
    bounds: Vec<f64>,
    epsilon: f64,
    delta_grid: Vec<f64>,
}

impl IhpGrid {
    /// Starts from the Markov bounds `r_1(i) = min(eps/t_i, 1)`.
    pub fn new(template: &IhpTemplate, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
        }
        let bounds = template.points.iter().map(|t| markov_bound(epsilon, *t)).collect();
        Ok(IhpGrid {
            points: template.points.clone(),
            bounds,
            epsilon,
            delta_grid: template.delta_grid.clone(),
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Bound on `P{d_n(0) > delta}` from the previous grid.
    pub fn phi_n(&self, delta: f64, rho: f64, m: f64) -> f64 {
        let gap = (delta.sqrt() - rho).max(0.0);
        let s = 2.0 / m * gap * gap;
        if s >= self.points[0] {
            // Largest grid point not above s.
            let idx = self.points.partition_point(|p| *p <= s) - 1;
            self.bounds[idx]
        } else if s > 0.0 {
            (self.epsilon / s).min(1.0)
        } else {
            1.0
        }
    }

    /// One grid step for sample size `k` and drift `rho`.
    pub fn step(&mut self, k: usize, rho: f64, bound: &ExcessRiskBound) -> Result<()> {
        let diam = bound.params().diam;
        let b_delta = self
            .delta_grid
            .iter()
            .map(|d| bound.eval(d.min(diam), k))
            .collect::<Result<Vec<f64>>>()?;
        let b_diam = bound.eval(diam, k)?;
        self.step_with(&b_delta, b_diam, rho, bound.params().m);
        Ok(())
    }

    /// Grid step from precomputed `b(delta_j, K)` and `b(diam, K)`.
    /// Returns the largest change in any grid bound.
    fn step_with(&mut self, b_delta: &[f64], b_diam: f64, rho: f64, m: f64) -> f64 {
        let mut inner = f64::INFINITY;
        for (j, delta) in self.delta_grid.iter().enumerate() {
            inner = inner.min(b_delta[j] + b_diam * self.phi_n(*delta, rho, m));
        }
        let mut change: f64 = 0.0;
        let mut running = 1.0f64;
        for (i, t) in self.points.iter().enumerate() {
            let markov = markov_bound(self.epsilon, *t);
            let r = (inner / t).min(markov).min(running);
            running = r;
            change = change.max((r - self.bounds[i]).abs());
            self.bounds[i] = r;
        }
        change
    }
}

/// Bound at `points[idx]` after up to `n_iters` steps at fixed `K`, with
/// the grid seeded by the steady-state mean bound for that `K`.
fn settled_bound(
    template: &IhpTemplate,
    idx: usize,
    alpha: f64,
    beta: f64,
    rho: f64,
    bound: &ExcessRiskBound,
    n_iters: usize,
) -> Result<f64> {
    let p = bound.params();
    let Some(eps) = phi_fixed_point_closed(alpha, beta, rho, p.m, 0.0) else {
        return Ok(1.0);
    };
    let mut grid = IhpGrid::new(template, eps)?;
    let b_delta: Vec<f64> = template
        .delta_grid
        .iter()
        .map(|d| {
            let d = d.min(p.diam);
            alpha * d * d + beta
        })
        .collect();
    let b_diam = alpha * p.diam * p.diam + beta;
    for _ in 0..n_iters {
        if grid.step_with(&b_delta, b_diam, rho, p.m) <= SETTLE_TOL {
            break;
        }
    }
    Ok(grid.bounds[idx])
}

/// Bound at `target_t` reached with sample size `k`; see [`select_k_ihp`].
pub fn ihp_bound_for_k(
    target_t: f64,
    rho: f64,
    bound: &ExcessRiskBound,
    template: &IhpTemplate,
    k: usize,
    n_iters: usize,
) -> Result<f64> {
    let idx = template
        .index_of(target_t)
        .ok_or_else(|| Error::config("ihp.t", format!("target t = {target_t} is not on the threshold grid")))?;
    let (alpha, beta) = bound.factored(k)?;
    settled_bound(template, idx, alpha, beta, rho, bound, n_iters)
}

/// Smallest `K` whose settled grid bound at `target_t` is at most `target_r`.
///
/// Each candidate seeds the grid with the fixed point of the mean recursion
/// at that `K` and runs up to `n_iters` grid steps.
pub fn select_k_ihp(
    target_t: f64,
    target_r: f64,
    rho: f64,
    bound: &ExcessRiskBound,
    template: &IhpTemplate,
    k_max: usize,
    n_iters: usize,
) -> Result<usize> {
    let idx = template
        .index_of(target_t)
        .ok_or_else(|| Error::config("ihp.t", format!("target t = {target_t} is not on the threshold grid")))?;
    if !(target_r > 0.0) {
        return Err(Error::invalid(format!("target r must be > 0, got {target_r}")));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("rho must be finite and >= 0, got {rho}")));
    }
    if target_r >= 1.0 {
        return Ok(1);
    }
    let p = *bound.params();
    let floor_ok = |f: (f64, f64)| f.1 / target_t <= target_r;
    let markov_ok = |f: (f64, f64)| {
        phi_fixed_point_closed(f.0, f.1, rho, p.m, 0.0).is_some_and(|e| markov_bound(e, target_t) <= target_r)
    };
    // Every grid bound lies between beta(K)/t and the Markov bound, so one
    // forward pass brackets the answer.
    let mut factors: Vec<(f64, f64)> = Vec::new();
    let mut lo = None;
    let mut hi = None;
    for fp in bound.factor_scan()?.take(k_max) {
        let f = (fp.alpha, fp.beta);
        factors.push(f);
        if lo.is_none() && floor_ok(f) {
            lo = Some(fp.k);
        }
        if lo.is_some() && markov_ok(f) {
            hi = Some(fp.k);
            break;
        }
    }
    let Some(lo) = lo else {
        let floor = factors.iter().map(|f| f.1 / target_t).fold(f64::INFINITY, f64::min);
        return Err(Error::Infeasible { k_max, best_bound: floor.min(1.0) });
    };
    let eval = |k: usize| -> Result<f64> {
        let (alpha, beta) = factors[k - 1];
        settled_bound(template, idx, alpha, beta, rho, bound, n_iters)
    };
    let mut best = f64::INFINITY;

    let linear_end = hi.unwrap_or(k_max).min(lo.max(LINEAR_PREFIX));
    for k in lo..=linear_end {
        if !floor_ok(factors[k - 1]) {
            continue;
        }
        let r = eval(k)?;
        if r <= target_r {
            return Ok(k);
        }
        best = best.min(r);
    }
    let Some(hi) = hi else {
        // No Markov-feasible K: check the rest directly, from the top.
        let r = eval(k_max)?;
        best = best.min(r);
        if r > target_r {
            return Err(Error::Infeasible { k_max, best_bound: best });
        }
        return bisect(linear_end + 1, k_max, target_r, &eval);
    };
    if hi <= linear_end {
        return Ok(hi);
    }
    bisect(linear_end + 1, hi, target_r, &eval)
}

/// Smallest `k` in `[lo, hi]` with `eval(k) <= target`, given `eval(hi) <= target`
/// and `eval` non-increasing on the range.
fn bisect(mut lo: usize, mut hi: usize, target: f64, eval: &dyn Fn(usize) -> Result<f64>) -> Result<usize> {
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if eval(mid)? <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{BoundFamily, BoundParams, ObjectiveKind};
    use crate::sgd::StepSchedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bound_with_diam(diam: f64) -> ExcessRiskBound {
        ExcessRiskBound::new(
            BoundFamily::InverseStepAverage,
            BoundParams::new(0.25, 0.5, 1.5, 0.25, diam).unwrap(),
            StepSchedule::inverse_time(0.25).unwrap(),
            ObjectiveKind::Quadratic,
        )
        .unwrap()
    }

    #[test]
    fn markov_values() {
        assert!((markov_bound(0.01, 0.1) - 0.1).abs() < 1e-15);
        assert_eq!(markov_bound(0.5, 0.1), 1.0);
        assert_eq!(markov_bound(0.01, 0.4), markov_bound(0.01, 0.2) / 2.0);
    }

    #[test]
    fn psi_values() {
        let b = bound_with_diam(20.0);
        let v = b.eval(1.0, 300).unwrap();
        assert!((psi(0.1, 1.0, 300, &b).unwrap() - v / 0.1).abs() < 1e-12);
        let mut prev = 0.0;
        for delta in log_delta_grid(20.0, 50) {
            let p = psi(0.1, delta, 300, &b).unwrap();
            assert!(p >= prev);
            prev = p;
        }
        // The worst-case term drops below one only for large K.
        assert!(psi(0.1, 20.0, 300, &b).unwrap() > 1.0);
        assert!(psi(0.1, 20.0, 50_000, &b).unwrap() < 1.0);
        let small = bound_with_diam(0.5);
        assert!(psi(0.1, 0.5, 1000, &small).unwrap() < 1.0);
    }

    #[test]
    fn grids() {
        let g = log_delta_grid(20.0, 200);
        assert_eq!(g.len(), 200);
        assert!((g[199] - 20.0).abs() < 1e-12);
        assert!(g[0] > 20e-6);
        let pts = default_points(0.1);
        assert!(pts.iter().any(|p| same_point(*p, 0.1)));
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        assert!(IhpTemplate::new(vec![0.1], vec![]).is_err());
    }

    fn template(points: Vec<f64>, diam: f64) -> IhpTemplate {
        IhpTemplate::new(points, log_delta_grid(diam, DEFAULT_DELTA_POINTS)).unwrap()
    }

    #[test]
    fn phi_n_cases() {
        let t = template(vec![0.01, 0.05, 0.1, 0.5], 20.0);
        let mut grid = IhpGrid::new(&t, 0.02).unwrap();
        grid.bounds = vec![0.9, 0.7, 0.3, 0.1];
        // sqrt(delta) <= rho
        assert_eq!(grid.phi_n(0.25, 1.0, 0.25), 1.0);
        // (2/m)(sqrt(delta) - rho)^2 = 0.1 exactly, the third point.
        let delta = (1.0 + (0.1f64 * 0.25 / 2.0).sqrt()).powi(2);
        let s = 2.0 / 0.25 * (delta.sqrt() - 1.0).powi(2);
        let expected = if s >= 0.1 { 0.3 } else { 0.7 };
        assert_eq!(grid.phi_n(delta, 1.0, 0.25), expected);
        // Below the first point: eps / s, clamped.
        let delta = (1.0 + (0.005f64 * 0.25 / 2.0).sqrt()).powi(2);
        let s = 2.0 / 0.25 * (delta.sqrt() - 1.0).powi(2);
        assert!((grid.phi_n(delta, 1.0, 0.25) - (0.02 / s).min(1.0)).abs() < 1e-12);
    }

    #[test]
    fn phi_n_matches_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = template(default_points(0.1), 20.0);
        let mut grid = IhpGrid::new(&t, 0.03).unwrap();
        for (i, b) in grid.bounds.iter_mut().enumerate() {
            *b = 1.0 / (1.0 + i as f64);
        }
        for _ in 0..2000 {
            let delta: f64 = rng.random_range(1e-6..20.0);
            let rho = rng.random_range(0.0..2.0);
            let m = 0.25;
            let s = 2.0 / m * (delta.sqrt() - rho).max(0.0).powi(2);
            let expected = if s >= grid.points[0] {
                let mut best = 0;
                for (i, p) in grid.points.iter().enumerate() {
                    if *p <= s {
                        best = i;
                    }
                }
                grid.bounds[best]
            } else if s == 0.0 {
                1.0
            } else {
                (0.03 / s).min(1.0)
            };
            assert_eq!(grid.phi_n(delta, rho, m), expected);
        }
    }

    /// Direct form of one grid step: a separate minimization for every point.
    fn naive_step(grid: &IhpGrid, k: usize, rho: f64, bound: &ExcessRiskBound) -> Vec<f64> {
        let diam = bound.params().diam;
        let mut out = Vec::new();
        let mut running = 1.0f64;
        for t in &grid.points {
            let mut best = f64::INFINITY;
            for d in &grid.delta_grid {
                let v = psi(*t, *d, k, bound).unwrap() + psi(*t, diam, k, bound).unwrap() * grid.phi_n(*d, rho, 0.25);
                best = best.min(v);
            }
            let r = best.min(markov_bound(grid.epsilon, *t)).min(running);
            running = r;
            out.push(r);
        }
        out
    }

    #[test]
    fn step_matches_direct_minimization() {
        let b = bound_with_diam(0.5);
        let t = template(default_points(0.1), 0.5);
        let mut grid = IhpGrid::new(&t, 0.02).unwrap();
        for _ in 0..4 {
            let expected = naive_step(&grid, 300, 0.05, &b);
            grid.step(300, 0.05, &b).unwrap();
            for (a, e) in grid.bounds().iter().zip(&expected) {
                assert!((a - e).abs() <= 1e-12 * e.max(1e-300));
            }
        }
    }

    #[test]
    fn no_gain_when_worst_case_term_is_large() {
        let b = bound_with_diam(20.0);
        assert!(psi(0.1, 20.0, 300, &b).unwrap() >= 1.0);
        let t = template(default_points(0.1), 20.0);
        let eps = 0.05;
        let mut grid = IhpGrid::new(&t, eps).unwrap();
        grid.step(300, 1.0, &b).unwrap();
        for (r, p) in grid.bounds().iter().zip(grid.points()) {
            assert!(*r <= markov_bound(eps, *p));
        }
    }

    #[test]
    fn bounds_never_exceed_markov_and_decrease_in_t() {
        for diam in [0.5, 2.0, 20.0] {
            let b = bound_with_diam(diam);
            let t = template(default_points(0.1), diam);
            // K = 300 has no steady-state mean bound with these constants.
            let (alpha, beta) = b.factored(300).unwrap();
            assert!(phi_fixed_point_closed(alpha, beta, 0.05, 0.25, 0.0).is_none());
            let (alpha, beta) = b.factored(1000).unwrap();
            let eps = phi_fixed_point_closed(alpha, beta, 0.05, 0.25, 0.0).unwrap();
            let mut grid = IhpGrid::new(&t, eps).unwrap();
            let r1 = grid.bounds().to_vec();
            for _ in 0..5 {
                grid.step(1000, 0.05, &b).unwrap();
                for (i, r) in grid.bounds().iter().enumerate() {
                    assert!(*r <= markov_bound(eps, grid.points()[i]));
                    assert!(*r <= r1[i]);
                }
                assert!(grid.bounds().windows(2).all(|w| w[1] <= w[0]));
            }
        }
    }

    #[test]
    fn repeated_steps_settle() {
        let b = bound_with_diam(0.5);
        let t = template(default_points(0.1), 0.5);
        let mut grid = IhpGrid::new(&t, 0.01).unwrap();
        let mut prev = grid.bounds().to_vec();
        let mut last_change = f64::INFINITY;
        for _ in 0..200 {
            grid.step(300, 0.02, &b).unwrap();
            last_change = grid.bounds().iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prev = grid.bounds().to_vec();
        }
        assert!(last_change < 1e-9);
    }

    #[test]
    fn refinement_is_stable() {
        let b = bound_with_diam(0.5);
        let coarse = IhpTemplate::new(default_points(0.1), log_delta_grid(0.5, 200)).unwrap();
        let fine = IhpTemplate::new(default_points(0.1), log_delta_grid(0.5, 400)).unwrap();
        let run = |tpl: &IhpTemplate| {
            let mut g = IhpGrid::new(tpl, 0.01).unwrap();
            for _ in 0..20 {
                g.step(300, 0.02, &b).unwrap();
            }
            g.bounds().to_vec()
        };
        for (a, c) in run(&coarse).iter().zip(run(&fine)) {
            assert!((a - c).abs() < 1e-3);
        }
    }

    #[test]
    fn selection_edge_cases() {
        let b = bound_with_diam(20.0);
        let t = IhpTemplate::for_target(0.1, 20.0).unwrap();
        assert_eq!(select_k_ihp(0.1, 1.0, 1.0, &b, &t, 1000, DEFAULT_ITERS).unwrap(), 1);
        assert!(matches!(
            select_k_ihp(0.123, 0.25, 1.0, &b, &t, 1000, DEFAULT_ITERS),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            select_k_ihp(0.1, 1e-9, 1.0, &b, &t, 100, DEFAULT_ITERS),
            Err(Error::Infeasible { .. })
        ));
    }

    fn scan_select(t: f64, r: f64, rho: f64, b: &ExcessRiskBound, tpl: &IhpTemplate, k_max: usize) -> Option<usize> {
        (1..=k_max).find(|&k| ihp_bound_for_k(t, rho, b, tpl, k, DEFAULT_ITERS).unwrap() <= r)
    }

    #[test]
    fn selection_matches_exhaustive_scan() {
        for (diam, rho, r) in [(20.0, 1.0, 0.25), (0.5, 0.02, 0.25), (0.5, 0.02, 0.05), (2.0, 0.1, 0.3)] {
            let b = bound_with_diam(diam);
            let tpl = IhpTemplate::for_target(0.1, diam).unwrap();
            let k_max = 6000;
            let fast = select_k_ihp(0.1, r, rho, &b, &tpl, k_max, DEFAULT_ITERS).ok();
            assert_eq!(fast, scan_select(0.1, r, rho, &b, &tpl, k_max), "diam {diam} rho {rho} r {r}");
        }
    }
}
