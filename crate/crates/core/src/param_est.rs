//! Estimation of the strong convexity modulus `m`, the Lipschitz modulus `M`
//! of the gradient and the gradient growth constants `(A, B)` from sampled
//! losses and gradients at a handful of probe points.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bounds::BoundParams;
use crate::error::{Error, Result};
use crate::problem::{DriftingProblem, Sample};
use crate::sgd::{project, Domain, GradientOracle};
use crate::Vector;

const PLACEMENT_ATTEMPTS: usize = 1000;

/// A gradient oracle that also reports the sampled loss.
pub trait LossOracle: GradientOracle {
    fn loss(&self, x: &Vector, sample: &Self::Sample) -> f64;
}

impl LossOracle for DriftingProblem {
    fn loss(&self, x: &Vector, s: &Sample) -> f64 {
        let r = s.y - x.dot(&s.w);
        0.5 * r * r
    }
}

/// Distinct probe points with a guaranteed minimum pairwise separation.
#[derive(Debug, Clone)]
pub struct ProbePointSet {
    points: Vec<Vector>,
    s_min: f64,
}

impl ProbePointSet {
    pub fn new(points: Vec<Vector>, s_min: f64) -> Result<Self> {
        if !(s_min > 0.0) {
            return Err(Error::invalid(format!("minimum separation must be > 0, got {s_min}")));
        }
        if points.is_empty() {
            return Err(Error::invalid("probe set is empty"));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if (&points[i] - &points[j]).norm() < s_min {
                    return Err(Error::invalid(format!("probe points {j} and {i} are closer than {s_min}")));
                }
            }
        }
        Ok(ProbePointSet { points, s_min })
    }

    /// `n` points uniform in the ball of `radius` around `center`, projected
    /// onto `domain`, redrawn until pairwise separation `s_min` holds.
    pub fn sample<R: Rng + ?Sized>(
        center: &Vector,
        radius: f64,
        n: usize,
        s_min: f64,
        domain: &Domain,
        rng: &mut R,
    ) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid(format!("probe radius must be > 0, got {radius}")));
        }
        let d = center.len();
        let mut points: Vec<Vector> = Vec::with_capacity(n);
        let mut attempts = 0;
        while points.len() < n {
            attempts += 1;
            if attempts > PLACEMENT_ATTEMPTS * n.max(1) {
                return Err(Error::Numerical(format!(
                    "could not place {n} probe points with separation {s_min} in radius {radius}"
                )));
            }
            let dir = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = dir.norm();
            if norm < 1e-12 {
                continue;
            }
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
            let p = project(&(center + dir * (r / norm)), domain);
            if points.iter().all(|q| (q - &p).norm() >= s_min) {
                points.push(p);
            }
        }
        Self::new(points, s_min)
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sample moments at one probe point.
#[derive(Debug, Clone)]
pub struct PointStats {
    pub f_mean: f64,
    pub g_mean: Vector,
    /// Mean squared gradient norm.
    pub sq_norm_mean: f64,
    /// Unbiased estimate of the trace of the gradient covariance.
    pub var_trace: f64,
}

impl PointStats {
    /// `s` minus the unbiased variance: an estimate of `||grad f||^2`.
    pub fn debiased_sq_grad(&self) -> f64 {
        self.sq_norm_mean - self.var_trace
    }
}

pub fn point_stats<O: LossOracle>(x: &Vector, samples: &[O::Sample], oracle: &O) -> Result<PointStats> {
    let k = samples.len();
    if k == 0 {
        return Err(Error::invalid("point statistics need K >= 1 samples"));
    }
    let mut f_sum = 0.0;
    let mut g_sum = Vector::zeros(x.len());
    let mut sq_sum = 0.0;
    for s in samples {
        f_sum += oracle.loss(x, s);
        let g = oracle.gradient(x, s);
        sq_sum += g.norm_squared();
        g_sum += g;
    }
    let kf = k as f64;
    let g_mean = g_sum / kf;
    let sq_norm_mean = sq_sum / kf;
    let var_trace = if k > 1 {
        (kf / (kf - 1.0)) * (sq_norm_mean - g_mean.norm_squared()).max(0.0)
    } else {
        0.0
    };
    Ok(PointStats {
        f_mean: f_sum / kf,
        g_mean,
        sq_norm_mean,
        var_trace,
    })
}

/// Unbiased trace of the gradient covariance at `x`.
pub fn gradient_variance_trace<O: LossOracle>(x: &Vector, samples: &[O::Sample], oracle: &O) -> Result<f64> {
    Ok(point_stats(x, samples, oracle)?.var_trace)
}

/// Probe points together with their statistics over one epoch's samples.
#[derive(Debug, Clone)]
pub struct ProbeStats {
    pub points: Vec<Vector>,
    pub stats: Vec<PointStats>,
}

pub fn probe_stats<O: LossOracle>(probes: &ProbePointSet, samples: &[O::Sample], oracle: &O) -> Result<ProbeStats> {
    let stats = probes
        .points()
        .iter()
        .map(|p| point_stats(p, samples, oracle))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeStats {
        points: probes.points().to_vec(),
        stats,
    })
}

fn ratio_from_means(x: &Vector, x_tilde: &Vector, f_x: f64, f_xt: f64, g_x: &Vector) -> Result<f64> {
    let diff = x_tilde - x;
    let dist_sq = diff.norm_squared();
    if dist_sq == 0.0 {
        return Err(Error::invalid("curvature ratio needs two distinct points"));
    }
    Ok((f_xt - f_x - g_x.dot(&diff)) / (0.5 * dist_sq))
}

/// Plug-in curvature `(f(x~) - f(x) - <G(x), x~ - x>) / (||x~ - x||^2 / 2)`
/// from sampled losses at both points and sampled gradients at `x`.
pub fn ratio(x: &Vector, x_tilde: &Vector, f_x: &[f64], f_xt: &[f64], g_x: &[Vector]) -> Result<f64> {
    if f_x.is_empty() || f_xt.is_empty() || g_x.is_empty() {
        return Err(Error::invalid("curvature ratio needs K >= 1 samples"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut g = Vector::zeros(x.len());
    for gi in g_x {
        g += gi;
    }
    g /= g_x.len() as f64;
    ratio_from_means(x, x_tilde, mean(f_x), mean(f_xt), &g)
}

fn pair_ratios(stats: &ProbeStats) -> Result<Vec<f64>> {
    let n = stats.points.len();
    if n < 2 {
        return Err(Error::config("param_est.probe_points", "need at least two probe points"));
    }
    let mut out = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.push(ratio_from_means(
                    &stats.points[i],
                    &stats.points[j],
                    stats.stats[i].f_mean,
                    stats.stats[j].f_mean,
                    &stats.stats[i].g_mean,
                )?);
            }
        }
    }
    Ok(out)
}

/// Smallest curvature ratio over ordered pairs.
pub fn estimate_m(stats: &ProbeStats) -> Result<f64> {
    Ok(pair_ratios(stats)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Largest curvature ratio over ordered pairs.
pub fn estimate_big_m(stats: &ProbeStats) -> Result<f64> {
    Ok(pair_ratios(stats)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Weights of the objective `wa A^2 / 2 + wb B^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbWeights {
    pub a: f64,
    pub b: f64,
}

impl Default for AbWeights {
    fn default() -> Self {
        AbWeights { a: 1.0, b: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbEstimate {
    pub a: f64,
    pub b: f64,
    /// No constraint had a positive slope in `B`; the result is `(max s, 0)`.
    pub degenerate: bool,
}

/// Minimizes `wa A^2/2 + wb B^2/2` over `A, B >= 0` with `A + c_j B >= s_j`
/// for every `j`, by enumerating active sets of size at most two.
pub fn solve_ab(s: &[f64], c: &[f64], weights: AbWeights) -> Result<AbEstimate> {
    if s.is_empty() || s.len() != c.len() {
        return Err(Error::invalid("need matching, non-empty constraint lists"));
    }
    if !(weights.a > 0.0 && weights.b > 0.0) {
        return Err(Error::invalid("objective weights must be positive"));
    }
    if s.iter().chain(c).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite constraint data".into()));
    }
    let s_max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    if c.iter().all(|v| *v <= 0.0) {
        return Ok(AbEstimate { a: s_max, b: 0.0, degenerate: true });
    }

    let scale = 1.0 + s_max;
    let tol = 1e-12 * scale;
    let feasible = |a: f64, b: f64| {
        a >= -tol && b >= -tol && s.iter().zip(c).all(|(sj, cj)| a + cj * b >= sj - tol)
    };
    let objective = |a: f64, b: f64| 0.5 * weights.a * a * a + 0.5 * weights.b * b * b;

    let mut candidates = vec![(0.0, 0.0)];
    for (j, (&sj, &cj)) in s.iter().zip(c).enumerate() {
        let lambda = sj / (1.0 / weights.a + cj * cj / weights.b);
        candidates.push((lambda / weights.a, lambda * cj / weights.b));
        candidates.push((sj, 0.0));
        if cj != 0.0 {
            candidates.push((0.0, sj / cj));
        }
        for k in 0..j {
            if c[k] != cj {
                let b = (sj - s[k]) / (cj - c[k]);
                candidates.push((sj - cj * b, b));
            }
        }
    }
    let (mut a, mut b) = candidates
        .into_iter()
        .filter(|&(a, b)| feasible(a, b))
        .map(|(a, b)| (a.max(0.0), b.max(0.0)))
        .min_by(|p, q| objective(p.0, p.1).total_cmp(&objective(q.0, q.1)))
        .ok_or_else(|| Error::Numerical("no feasible active set found".into()))?;
    // Absorb rounding so every constraint holds exactly.
    b = b.max(0.0);
    let violated = |a: f64| s.iter().zip(c).any(|(sj, cj)| a + cj * b < *sj);
    a = s.iter().zip(c).map(|(sj, cj)| sj - cj * b).fold(a, f64::max);
    while violated(a) {
        a = a.next_up();
    }
    Ok(AbEstimate { a, b, degenerate: false })
}

/// Growth constants from probe statistics, with `c_j = d_j / (M+t)^2`.
pub fn estimate_ab(stats: &ProbeStats, m_hat_plus_t: f64, weights: AbWeights) -> Result<AbEstimate> {
    if !(m_hat_plus_t > 0.0) {
        return Err(Error::invalid(format!("M estimate must be > 0, got {m_hat_plus_t}")));
    }
    if stats.stats.is_empty() {
        return Err(Error::invalid("no probe statistics"));
    }
    let denom = m_hat_plus_t * m_hat_plus_t;
    let s: Vec<f64> = stats.stats.iter().map(|p| p.sq_norm_mean).collect();
    let c: Vec<f64> = stats.stats.iter().map(|p| p.debiased_sq_grad() / denom).collect();
    solve_ab(&s, &c, weights)
}

/// Estimates from a single epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStepParams {
    pub m: f64,
    pub big_m: f64,
    pub a: f64,
    pub b: f64,
    /// Trace of the gradient covariance at the epoch's output.
    pub sigma_sq: f64,
}

/// Running means with the slack applied in the conservative direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamReport {
    pub m_hat: f64,
    pub big_m_hat: f64,
    pub a_hat: f64,
    pub b_hat: f64,
    pub sigma_sq: f64,
    pub t: f64,
    pub m_lower: f64,
    pub big_m_upper: f64,
    pub a_upper: f64,
    pub b_upper: f64,
}

impl ParamReport {
    pub fn bound_params(&self, diam: f64) -> Result<BoundParams> {
        BoundParams::new(self.m_lower, self.a_upper, self.b_upper, self.big_m_upper, diam)
    }
}

#[derive(Debug, Clone)]
pub struct ParamEstimator {
    c_par: f64,
    count: usize,
    sums: [f64; 5],
}

impl ParamEstimator {
    pub fn new(c_par: f64) -> Result<Self> {
        if !(c_par >= 0.0 && c_par.is_finite()) {
            return Err(Error::config("c_par", format!("must be finite and >= 0, got {c_par}")));
        }
        Ok(ParamEstimator { c_par, count: 0, sums: [0.0; 5] })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, est: OneStepParams) -> Result<()> {
        let vals = [est.m, est.big_m, est.a, est.b, est.sigma_sq];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite parameter estimate {est:?}")));
        }
        for (s, v) in self.sums.iter_mut().zip(vals) {
            *s += v;
        }
        self.count += 1;
        Ok(())
    }

    /// `c_par sqrt(ln(n+2)/n)` after `n` estimates.
    pub fn slack(&self) -> Option<f64> {
        (self.count > 0).then(|| {
            let n = self.count as f64;
            self.c_par * ((n + 2.0).ln() / n).sqrt()
        })
    }

    pub fn report(&self) -> Result<ParamReport> {
        let t = self
            .slack()
            .ok_or_else(|| Error::State("no parameter estimates recorded".into()))?;
        let n = self.count as f64;
        let [m, big_m, a, b, sigma_sq] = self.sums.map(|s| s / n);
        if !(m > 0.0) {
            return Err(Error::Numerical(format!("estimated strong convexity is not positive ({m})")));
        }
        Ok(ParamReport {
            m_hat: m,
            big_m_hat: big_m,
            a_hat: a,
            b_hat: b,
            sigma_sq,
            t,
            m_lower: (m - t).max(0.5 * m),
            big_m_upper: big_m.max(m) + t,
            a_upper: a + t,
            b_upper: b + t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DriftModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `f(x) = x^T H x / 2` with no noise.
    struct Quadratic {
        h: Vec<f64>,
    }

    impl GradientOracle for Quadratic {
        type Sample = ();
        fn dim(&self) -> usize {
            self.h.len()
        }
        fn gradient(&self, x: &Vector, _: &()) -> Vector {
            Vector::from_fn(x.len(), |i, _| self.h[i] * x[i])
        }
    }

    impl LossOracle for Quadratic {
        fn loss(&self, x: &Vector, _: &()) -> f64 {
            0.5 * x.iter().zip(&self.h).map(|(xi, hi)| hi * xi * xi).sum::<f64>()
        }
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn section_problem() -> DriftingProblem {
        DriftingProblem::new(
            Vector::zeros(2),
            0.5,
            0.5,
            DriftModel::DeterministicPath { rho: 1.0 },
            Domain::ball(10.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn ratio_exact_on_noiseless_quadratic() {
        let q = Quadratic { h: vec![0.7, 0.7] };
        let x = v(&[1.0, -2.0]);
        let y = v(&[0.3, 0.5]);
        let r = ratio(&x, &y, &[q.loss(&x, &())], &[q.loss(&y, &())], &[q.gradient(&x, &())]).unwrap();
        assert!((r - 0.7).abs() < 1e-12);
        let back = ratio(&y, &x, &[q.loss(&y, &())], &[q.loss(&x, &())], &[q.gradient(&y, &())]).unwrap();
        assert!((r - back).abs() < 1e-12);
        assert!(ratio(&x, &x, &[0.0], &[0.0], &[q.gradient(&x, &())]).is_err());
    }

    #[test]
    fn ratio_mean_matches_curvature() {
        let p = section_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = v(&[0.5, 0.0]);
        let y = v(&[-0.5, 1.0]);
        let reps = 40;
        let vals: Vec<f64> = (0..reps)
            .map(|_| {
                let s = p.draw_samples(100_000 / reps, &mut rng).unwrap();
                let fx: Vec<f64> = s.iter().map(|z| p.loss(&x, z)).collect();
                let fy: Vec<f64> = s.iter().map(|z| p.loss(&y, z)).collect();
                let gx: Vec<Vector> = s.iter().map(|z| p.gradient(&x, z)).collect();
                ratio(&x, &y, &fx, &fy, &gx).unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!((mean - 0.25).abs() <= 3.0 * sd / (reps as f64).sqrt(), "{mean} {sd}");
    }

    fn noiseless_stats(q: &Quadratic, pts: Vec<Vector>) -> ProbeStats {
        let probes = ProbePointSet::new(pts, 1e-6).unwrap();
        probe_stats(&probes, &[()], q).unwrap()
    }

    #[test]
    fn isotropic_quadratic_gives_exact_moduli() {
        let q = Quadratic { h: vec![0.4, 0.4] };
        let st = noiseless_stats(&q, vec![v(&[0.0, 0.0]), v(&[1.0, 0.5]), v(&[-1.0, 2.0]), v(&[0.3, -0.7])]);
        assert!((estimate_m(&st).unwrap() - 0.4).abs() < 1e-12);
        assert!((estimate_big_m(&st).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_quadratic_moduli() {
        let q = Quadratic { h: vec![1.0, 4.0] };
        let st = noiseless_stats(&q, vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])]);
        let m = estimate_m(&st).unwrap();
        let big_m = estimate_big_m(&st).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        assert!((big_m - 4.0).abs() < 1e-12);
        assert!(estimate_m(&noiseless_stats(&q, vec![v(&[0.0, 0.0])])).is_err());
    }

    #[test]
    fn section_problem_m_within_ten_percent() {
        let p = section_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let probes = ProbePointSet::sample(&v(&[0.0, 0.0]), 2.0, 8, 0.2, p.domain(), &mut rng).unwrap();
        let s = p.draw_samples(10_000, &mut rng).unwrap();
        let st = probe_stats(&probes, &s, &p).unwrap();
        let m = estimate_m(&st).unwrap();
        assert!((m - 0.25).abs() <= 0.025, "{m}");
        assert!(estimate_big_m(&st).unwrap() >= m);

        // A superset can only lower the minimum.
        let mut more = probes.points().to_vec();
        more.push(v(&[3.0, 3.0]));
        let bigger = probe_stats(&ProbePointSet::new(more, 0.2).unwrap(), &s, &p).unwrap();
        assert!(estimate_m(&bigger).unwrap() <= m);
    }

    #[test]
    fn probe_sampling_respects_domain_and_spacing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dom = Domain::ball(1.0).unwrap();
        let set = ProbePointSet::sample(&v(&[0.9, 0.0]), 2.0, 8, 0.1, &dom, &mut rng).unwrap();
        assert_eq!(set.len(), 8);
        for (i, p) in set.points().iter().enumerate() {
            assert!(dom.contains(p, 1e-12));
            for q in &set.points()[..i] {
                assert!((p - q).norm() >= 0.1);
            }
        }
        assert!(ProbePointSet::new(vec![v(&[0.0]), v(&[0.0])], 0.1).is_err());
    }

    #[test]
    fn ab_single_constraints() {
        let r = solve_ab(&[1.0], &[0.0], AbWeights::default()).unwrap();
        assert_eq!((r.a, r.b, r.degenerate), (1.0, 0.0, true));
        let r = solve_ab(&[1.0], &[1.0], AbWeights::default()).unwrap();
        assert!((r.a - 0.5).abs() < 1e-12 && (r.b - 0.5).abs() < 1e-12);
        assert!(!r.degenerate);
    }

    #[test]
    fn ab_handles_negative_slopes() {
        // Mixed signs: the negative-slope constraint pins B from above.
        let r = solve_ab(&[1.0, 0.8], &[2.0, -1.0], AbWeights::default()).unwrap();
        assert!(r.a + 2.0 * r.b >= 1.0 && r.a - r.b >= 0.8);
        assert!(r.a >= 0.0 && r.b >= 0.0);
    }

    /// Smallest feasible `B` for a given `A`, if any.
    fn b_floor(a: f64, s: &[f64], c: &[f64]) -> Option<f64> {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for (sj, cj) in s.iter().zip(c) {
            if *cj > 0.0 {
                lo = lo.max((sj - a) / cj);
            } else if *cj < 0.0 {
                hi = hi.min((a - sj) / -cj);
            } else if a < *sj {
                return None;
            }
        }
        (lo <= hi).then_some(lo)
    }

    /// Grid search over `A` with `B` minimized exactly, zooming 2000 points
    /// at a time onto the best cell.
    fn grid_min(s: &[f64], c: &[f64]) -> f64 {
        let (mut lo, mut hi) = (0.0, s.iter().copied().fold(0.0, f64::max));
        let mut best = (f64::INFINITY, 0.0);
        for _ in 0..6 {
            let h = (hi - lo) / 2000.0;
            for i in 0..=2000 {
                let a = lo + h * i as f64;
                if let Some(b) = b_floor(a, s, c) {
                    let o = 0.5 * (a * a + b * b);
                    if o < best.0 {
                        best = (o, a);
                    }
                }
            }
            lo = (best.1 - 2.0 * h).max(0.0);
            hi = best.1 + 2.0 * h;
        }
        best.0
    }

    #[test]
    fn ab_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n = rng.random_range(1..=8);
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..3.0)).collect();
            let r = solve_ab(&s, &c, AbWeights::default()).unwrap();
            for (sj, cj) in s.iter().zip(&c) {
                assert!(r.a + cj * r.b >= *sj);
            }
            let obj = 0.5 * (r.a * r.a + r.b * r.b);
            assert!((grid_min(&s, &c) - obj).abs() <= 1e-6, "{s:?} {c:?}");
        }
    }

    #[test]
    fn ab_on_section_problem() {
        let p = section_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let probes = ProbePointSet::sample(&v(&[0.0, 0.0]), 2.0, 8, 0.2, p.domain(), &mut rng).unwrap();
        let s = p.draw_samples(10_000, &mut rng).unwrap();
        let st = probe_stats(&probes, &s, &p).unwrap();
        let r = estimate_ab(&st, 0.25, AbWeights::default()).unwrap();
        for ps in &st.stats {
            assert!(ps.sq_norm_mean <= r.a + r.b * ps.debiased_sq_grad() / 0.0625);
        }
        assert!(r.a <= 3.0 * 0.5, "{r:?}");
    }

    #[test]
    fn running_means() {
        let mut est = ParamEstimator::new(0.1).unwrap();
        assert!(est.report().is_err());
        let vals = [0.2, 0.3, 0.25, 0.22];
        for (i, m) in vals.iter().enumerate() {
            est.push(OneStepParams { m: *m, big_m: 0.3, a: 1.0, b: 1.0, sigma_sq: 0.5 }).unwrap();
            let r = est.report().unwrap();
            let direct = vals[..=i].iter().sum::<f64>() / (i + 1) as f64;
            assert!((r.m_hat - direct).abs() < 1e-15);
            assert_eq!(r.a_hat, 1.0);
            assert!(r.a_upper > r.a_hat && r.b_upper > r.b_hat && r.big_m_upper > r.big_m_hat);
            assert!(r.m_lower < r.m_hat && r.m_lower >= 0.5 * r.m_hat);
        }
    }

    #[test]
    fn lower_m_is_conservative_on_section_problem() {
        let mut hits = 0;
        let runs = 40;
        for seed in 0..runs {
            let mut p = section_problem();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut est = ParamEstimator::new(0.1).unwrap();
            let mut ok = true;
            for n in 1..=25 {
                p.advance(&mut rng);
                let probes = ProbePointSet::sample(p.eta(), 2.0, 8, 0.2, p.domain(), &mut rng).unwrap();
                let s = p.draw_samples(200, &mut rng).unwrap();
                let st = probe_stats(&probes, &s, &p).unwrap();
                let big_m = estimate_big_m(&st).unwrap();
                let ab = estimate_ab(&st, big_m, AbWeights::default()).unwrap();
                est.push(OneStepParams {
                    m: estimate_m(&st).unwrap(),
                    big_m,
                    a: ab.a,
                    b: ab.b,
                    sigma_sq: 0.0,
                })
                .unwrap();
                if n >= 20 && est.report().unwrap().m_lower > 0.25 {
                    ok = false;
                }
            }
            hits += ok as usize;
        }
        assert!(hits as f64 >= 0.95 * runs as f64, "{hits}/{runs}");
    }
}
