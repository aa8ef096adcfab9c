use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{DriftKind, ExperimentConfig, FamilyKind, ParamMode, SelectorKind, SlackKind};
use crate::bounds::{BoundFamily, BoundParams, ExcessRiskBound, ObjectiveKind};
use crate::error::{Error, Result};
use crate::ihp::{select_k_ihp, IhpTemplate};
use crate::kalman::KalmanState;
use crate::param_est::{
    estimate_ab, estimate_big_m, estimate_m, gradient_variance_trace, probe_stats, AbWeights, OneStepParams,
    ParamEstimator, ProbePointSet,
};
use crate::problem::{DriftModel, DriftingProblem, Sample};
use crate::rho_est::{one_step, slack_term, RhoEstimator};
use crate::selector::{k_next_no_update, k_next_update_past, k_star, TrackerLedger};
use crate::sgd::{run_epoch, AveragingScheme, Domain, EpochOptions, StepSchedule};
use crate::Vector;

/// One time step of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub n: usize,
    pub rep: usize,
    #[serde(rename = "K_n")]
    pub k_n: usize,
    /// Absent at `n = 1`, before any drift estimate exists.
    pub rho_hat: Option<f64>,
    pub rho_upper: Option<f64>,
    pub excess_est: f64,
    pub excess_true: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ihp_violation: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Mean { epsilon: f64 },
    Ihp { t: f64, r: f64 },
}

/// Mean and standard error across replications of per-replication averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Estimate { mean: f64::NAN, se: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let se = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Estimate { mean, se }
    }

    pub fn lo(&self, k: f64) -> f64 {
        self.mean - k * self.se
    }

    pub fn hi(&self, k: f64) -> f64 {
        self.mean + k * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSummary {
    pub epsilon: f64,
    pub reps: usize,
    pub horizon: usize,
    /// Monte Carlo excess-risk estimate averaged over `n = 1..=horizon`.
    pub excess_est: Estimate,
    pub excess_true: Estimate,
    pub mean_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanResult {
    pub records: Vec<StepRecord>,
    pub summary: MeanSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IhpSummary {
    pub t: f64,
    pub r: f64,
    pub indicators: usize,
    pub violations: usize,
    pub frequency: f64,
    /// Binomial standard error of the frequency.
    pub se: f64,
    pub excess_true: Estimate,
    pub mean_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhpResult {
    pub records: Vec<StepRecord>,
    pub summary: IhpSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub epsilon: f64,
    pub k_star: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KalmanSummary {
    pub sgd: Estimate,
    pub kalman: Estimate,
    pub kalman_mismatch: Estimate,
    pub sgd_true: Estimate,
    pub kalman_true: Estimate,
    pub kalman_mismatch_true: Estimate,
}

/// Kalman estimates at one step, next to the SGD record of that step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KalmanStep {
    pub n: usize,
    pub rep: usize,
    #[serde(rename = "K_n")]
    pub k_n: usize,
    pub matched_est: f64,
    pub matched_true: f64,
    pub mismatch_est: f64,
    pub mismatch_true: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanResult {
    pub records: Vec<StepRecord>,
    pub kalman: Vec<KalmanStep>,
    pub summary: KalmanSummary,
}

pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn schedule(cfg: &ExperimentConfig) -> Result<StepSchedule> {
    StepSchedule::inverse_time(cfg.step_m)
}

fn make_bound(cfg: &ExperimentConfig, params: BoundParams) -> Result<ExcessRiskBound> {
    let family = match cfg.family {
        FamilyKind::InverseStep => BoundFamily::InverseStepAverage,
        FamilyKind::Lipschitz => BoundFamily::LipschitzLyapunov,
    };
    ExcessRiskBound::new(family, params, schedule(cfg)?, ObjectiveKind::Quadratic)
}

fn averaging(cfg: &ExperimentConfig) -> AveragingScheme {
    match cfg.family {
        FamilyKind::InverseStep => AveragingScheme::InverseStepWeighted,
        FamilyKind::Lipschitz => AveragingScheme::LastIterate,
    }
}

fn diam(cfg: &ExperimentConfig) -> f64 {
    2.0 * cfg.domain_radius
}

/// Bound with the closed-form model constants and `M = m`.
pub fn known_bound(cfg: &ExperimentConfig) -> Result<ExcessRiskBound> {
    let c = crate::problem::ModelConstants::closed_form(cfg.d, cfg.sigma_w_sq, cfg.sigma_e_sq);
    make_bound(cfg, BoundParams::new(c.m, c.a, c.b, c.m, diam(cfg))?)
}

fn make_problem(cfg: &ExperimentConfig) -> Result<DriftingProblem> {
    let drift = match cfg.drift {
        DriftKind::Deterministic => DriftModel::DeterministicPath { rho: cfg.rho },
        DriftKind::GaussianWalk => DriftModel::GaussianWalk { rho: cfg.rho },
    };
    DriftingProblem::new(
        Vector::zeros(cfg.d),
        cfg.sigma_w_sq,
        cfg.sigma_e_sq,
        drift,
        Domain::ball(cfg.domain_radius)?,
    )
}

/// What a hook sees after each SGD epoch.
pub struct StepContext<'a> {
    pub n: usize,
    pub k: usize,
    pub samples: &'a [Sample],
    pub problem: &'a DriftingProblem,
    pub rng: &'a mut ChaCha8Rng,
}

/// Runs one replication of the tracking loop. `hook` is called once per step
/// with that step's samples, after the SGD epoch.
pub fn track_replication(
    cfg: &ExperimentConfig,
    target: Target,
    rep: usize,
    hook: &mut dyn FnMut(StepContext<'_>) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    let mut rng = replication_rng(cfg.seed, rep);
    let mut problem = make_problem(cfg)?;
    let domain = problem.domain().clone();
    let diam = diam(cfg);
    let known = known_bound(cfg)?;
    let opts = EpochOptions {
        schedule: schedule(cfg)?,
        averaging: averaging(cfg),
        domain: &domain,
        trace_reference: None,
    };
    let mut rho_est = RhoEstimator::new(cfg.combiner_mode(), cfg.c_t)?;
    let mut params = ParamEstimator::new(cfg.c_par)?;
    let mut ledger = TrackerLedger::new();
    let template = match target {
        Target::Ihp { t, .. } => Some(IhpTemplate::for_target(t, diam)?),
        Target::Mean { .. } => None,
    };
    let update_past = matches!(target, Target::Mean { .. }) && cfg.selector == SelectorKind::UpdatePast;

    let mut x_prev = Vector::zeros(cfg.d);
    let mut g_prev: Option<Vector> = None;
    let mut bound = known.clone();
    let mut selection_rho: Option<f64> = None;
    let mut sigma_sq_sum = 0.0;
    let mut records = Vec::with_capacity(cfg.horizon);

    for n in 1..=cfg.horizon {
        let step = |e: Error| e.at_step(n);
        if n > 1 {
            problem.advance(&mut rng);
        }
        let rho_plug = match cfg.selector {
            SelectorKind::RhoKnown => Some(cfg.rho),
            _ => selection_rho,
        };
        let k = match (n, rho_plug) {
            (1, _) => cfg.k1,
            (2, _) | (_, None) => cfg.k2,
            (_, Some(rho)) => match target {
                Target::Mean { epsilon } => match cfg.selector {
                    SelectorKind::UpdatePast => {
                        k_next_update_past(&mut ledger, epsilon, rho, &bound, cfg.k_max).map_err(step)?
                    }
                    SelectorKind::NoUpdatePast => k_next_no_update(epsilon, rho, &bound, cfg.k_max).map_err(step)?,
                    SelectorKind::RhoKnown => k_star(epsilon, rho, &bound, cfg.k_max).map_err(step)?,
                },
                Target::Ihp { t, r } => select_k_ihp(
                    t,
                    r,
                    rho,
                    &bound,
                    template.as_ref().expect("built for ihp targets"),
                    cfg.k_max,
                    cfg.ihp_iters,
                )
                .map_err(step)?,
            },
        };

        let samples = problem.draw_samples(k, &mut rng).map_err(step)?;
        let epoch = run_epoch(&x_prev, &samples, &problem, &opts).map_err(step)?;
        let sigma_sq = gradient_variance_trace(&epoch.x_out, &samples, &problem).map_err(step)?;
        sigma_sq_sum += sigma_sq;

        if cfg.params == ParamMode::Estimated {
            let probes = ProbePointSet::sample(
                &epoch.x_out,
                cfg.probe_radius,
                cfg.probe_points,
                cfg.probe_separation,
                &domain,
                &mut rng,
            )
            .map_err(step)?;
            let stats = probe_stats(&probes, &samples, &problem).map_err(step)?;
            let m = estimate_m(&stats).map_err(step)?;
            let big_m = estimate_big_m(&stats).map_err(step)?;
            let m_for_ab = match params.report() {
                Ok(r) => r.big_m_upper,
                Err(_) => big_m,
            };
            let ab = estimate_ab(&stats, m_for_ab, AbWeights::default()).map_err(step)?;
            params
                .push(OneStepParams { m, big_m, a: ab.a, b: ab.b, sigma_sq })
                .map_err(step)?;
            let report = params.report().map_err(step)?;
            bound = make_bound(cfg, report.bound_params(diam).map_err(step)?).map_err(step)?;
        }

        let m_used = bound.params().m;
        let rho_tilde = match &g_prev {
            Some(g) => Some(one_step(&epoch.x_out, &x_prev, &epoch.grad_mean, g, m_used).map_err(step)?),
            None => None,
        };
        let sigma = (sigma_sq_sum / n as f64).sqrt();
        let t_term = slack_term(k, sigma, &bound).map_err(step)?;
        rho_est.record(rho_tilde, t_term).map_err(step)?;
        let report = if n >= 2 { Some(rho_est.current_upper(diam).map_err(step)?) } else { None };
        if let Some(r) = report {
            selection_rho = Some(match cfg.slack {
                SlackKind::TOnly => r.upper_t_only,
                SlackKind::Full => r.upper,
            });
        }

        let eps_hat = if update_past {
            ledger.push(k, selection_rho.unwrap_or(0.0));
            ledger.recompute(selection_rho.unwrap_or(0.0), &bound).map_err(step)?;
            ledger.last_eps_hat()
        } else {
            None
        };

        let excess_true = problem.true_excess_risk(&epoch.x_out).map_err(step)?;
        let excess_est = problem
            .mc_excess_risk_estimate(&epoch.x_out, cfg.mc_samples, &mut rng)
            .map_err(step)?;
        hook(StepContext {
            n,
            k,
            samples: &samples,
            problem: &problem,
            rng: &mut rng,
        })
        .map_err(step)?;

        records.push(StepRecord {
            n,
            rep,
            k_n: k,
            rho_hat: report.map(|r| r.rho_hat),
            rho_upper: report.map(|r| r.upper),
            excess_est,
            excess_true,
            eps_hat,
            ihp_violation: match target {
                Target::Ihp { t, .. } => Some(excess_true > t),
                Target::Mean { .. } => None,
            },
        });
        x_prev = epoch.x_out;
        g_prev = Some(epoch.grad_mean);
    }
    Ok(records)
}

fn run_replications(cfg: &ExperimentConfig, target: Target) -> Result<Vec<Vec<StepRecord>>> {
    (0..cfg.reps)
        .into_par_iter()
        .map(|rep| track_replication(cfg, target, rep, &mut |_| Ok(())))
        .collect()
}

fn per_rep_means(reps: &[Vec<StepRecord>], f: impl Fn(&StepRecord) -> f64) -> Vec<f64> {
    reps.iter()
        .filter(|r| !r.is_empty())
        .map(|r| r.iter().map(&f).sum::<f64>() / r.len() as f64)
        .collect()
}

fn mean_k(records: &[StepRecord]) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    records.iter().map(|r| r.k_n as f64).sum::<f64>() / records.len() as f64
}

pub fn run_mean_experiment(cfg: &ExperimentConfig) -> Result<MeanResult> {
    let reps = run_replications(cfg, Target::Mean { epsilon: cfg.epsilon })?;
    let summary = MeanSummary {
        epsilon: cfg.epsilon,
        reps: cfg.reps,
        horizon: cfg.horizon,
        excess_est: Estimate::from_samples(&per_rep_means(&reps, |r| r.excess_est)),
        excess_true: Estimate::from_samples(&per_rep_means(&reps, |r| r.excess_true)),
        mean_k: f64::NAN,
    };
    let records: Vec<StepRecord> = reps.into_iter().flatten().collect();
    Ok(MeanResult {
        summary: MeanSummary { mean_k: mean_k(&records), ..summary },
        records,
    })
}

/// `K*` for each `eps`, with the drift known and the closed-form constants.
pub fn run_tradeoff(cfg: &ExperimentConfig, epsilons: &[f64]) -> Result<Vec<TradeoffPoint>> {
    let bound = known_bound(cfg)?;
    epsilons
        .iter()
        .map(|&epsilon| {
            Ok(TradeoffPoint {
                epsilon,
                k_star: k_star(epsilon, cfg.rho, &bound, cfg.k_max)?,
            })
        })
        .collect()
}

/// Violation count and binomial standard error of a set of indicators.
pub fn violation_frequency(records: &[StepRecord]) -> (usize, usize, f64, f64) {
    let flags: Vec<bool> = records.iter().filter_map(|r| r.ihp_violation).collect();
    let total = flags.len();
    let hits = flags.iter().filter(|v| **v).count();
    if total == 0 {
        return (0, 0, f64::NAN, f64::NAN);
    }
    let p = hits as f64 / total as f64;
    (hits, total, p, (p * (1.0 - p) / total as f64).sqrt())
}

pub fn run_ihp_experiment(cfg: &ExperimentConfig) -> Result<IhpResult> {
    let target = Target::Ihp { t: cfg.ihp_t, r: cfg.ihp_r };
    let reps = run_replications(cfg, target)?;
    let excess_true = Estimate::from_samples(&per_rep_means(&reps, |r| r.excess_true));
    let records: Vec<StepRecord> = reps.into_iter().flatten().collect();
    let (violations, indicators, frequency, se) = violation_frequency(&records);
    Ok(IhpResult {
        summary: IhpSummary {
            t: cfg.ihp_t,
            r: cfg.ihp_r,
            indicators,
            violations,
            frequency,
            se,
            excess_true,
            mean_k: mean_k(&records),
        },
        records,
    })
}

/// SGD tracker, matched Kalman filter and mismatched Kalman filter on the
/// same samples and the same `K_n` trace.
pub fn run_kalman_comparison(cfg: &ExperimentConfig) -> Result<KalmanResult> {
    let target = Target::Mean { epsilon: cfg.epsilon };
    let walk_var = cfg.rho * cfg.rho / cfg.d as f64;
    let per_rep: Vec<(Vec<StepRecord>, Vec<KalmanStep>)> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let p0 = DMatrix::identity(cfg.d, cfg.d) * cfg.kalman_p0;
            let mut matched = KalmanState::new(Vector::zeros(cfg.d), p0.clone(), walk_var, cfg.sigma_e_sq)?;
            let mut mismatch = KalmanState::new(
                Vector::zeros(cfg.d),
                p0,
                walk_var * cfg.mismatch_sigma_sq_factor,
                cfg.sigma_e_sq * cfg.mismatch_sigma_e_sq_factor,
            )?;
            let mut steps = Vec::with_capacity(cfg.horizon);
            let records = track_replication(cfg, target, rep, &mut |ctx| {
                matched.run_epoch(ctx.samples)?;
                mismatch.run_epoch(ctx.samples)?;
                let matched_est = ctx.problem.mc_excess_risk_estimate(&matched.eta_hat, cfg.mc_samples, ctx.rng)?;
                let mismatch_est = ctx.problem.mc_excess_risk_estimate(&mismatch.eta_hat, cfg.mc_samples, ctx.rng)?;
                steps.push(KalmanStep {
                    n: ctx.n,
                    rep,
                    k_n: ctx.k,
                    matched_est,
                    matched_true: ctx.problem.true_excess_risk(&matched.eta_hat)?,
                    mismatch_est,
                    mismatch_true: ctx.problem.true_excess_risk(&mismatch.eta_hat)?,
                });
                Ok(())
            })?;
            Ok((records, steps))
        })
        .collect::<Result<_>>()?;

    let kal_means = |f: fn(&KalmanStep) -> f64| {
        let v: Vec<f64> = per_rep
            .iter()
            .filter(|(_, k)| !k.is_empty())
            .map(|(_, k)| k.iter().map(f).sum::<f64>() / k.len() as f64)
            .collect();
        Estimate::from_samples(&v)
    };
    let sgd_reps: Vec<Vec<StepRecord>> = per_rep.iter().map(|(r, _)| r.clone()).collect();
    let summary = KalmanSummary {
        sgd: Estimate::from_samples(&per_rep_means(&sgd_reps, |r| r.excess_est)),
        kalman: kal_means(|k| k.matched_est),
        kalman_mismatch: kal_means(|k| k.mismatch_est),
        sgd_true: Estimate::from_samples(&per_rep_means(&sgd_reps, |r| r.excess_true)),
        kalman_true: kal_means(|k| k.matched_true),
        kalman_mismatch_true: kal_means(|k| k.mismatch_true),
    };
    let (records, kalman): (Vec<_>, Vec<_>) = per_rep.into_iter().unzip();
    Ok(KalmanResult {
        records: records.into_iter().flatten().collect(),
        kalman: kalman.into_iter().flatten().collect(),
        summary,
    })
}
