//! End-to-end studies shared by the command line and the acceptance tests:
//! the exact solution of one model, and the learned-versus-threshold
//! comparison across sub-6 rates.

use std::time::Instant;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::config::{SolverConfig, SweepConfig};
use crate::learning::{train, LearnedPolicy, LearningConfig, LearningError, ModelEnv, QTable};
use crate::mdp::{build_kernel, MdpError, SystemModel, TransitionKernel};
use crate::policy::{threshold_policy, Policy, SchedulingPolicy};
use crate::sim::{run, Metrics, SimConfig};
use crate::solvers::{relative_value_iteration, solve_lp, LpOutcome, SolverError, ValueTable};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error("no candidate thresholds")]
    NoThresholds,
}

/// Both exact planners on one model.
pub struct ExactSolution {
    pub kernel: TransitionKernel,
    pub values: ValueTable,
    pub rvi_policy: Policy,
    pub rvi_seconds: f64,
    pub lp: LpOutcome,
    pub lp_seconds: f64,
}

impl ExactSolution {
    /// `|g_rvi - g_lp|`.
    pub fn gap(&self) -> f64 {
        (self.values.avg_cost - self.lp.avg_cost).abs()
    }
}

pub fn solve_exact(model: &SystemModel, cfg: &SolverConfig) -> Result<ExactSolution, PipelineError> {
    let kernel = build_kernel(model)?;
    let cost = model.cost_vector();
    let s0 = model.reference_state()?;
    let t = Instant::now();
    let (values, rvi_policy) = relative_value_iteration(&kernel, &cost, s0, &cfg.rvi)?;
    let rvi_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let lp = solve_lp(&kernel, &cost, s0, &cfg.lp)?;
    let lp_seconds = t.elapsed().as_secs_f64();
    let space = model.space().clone();
    Ok(ExactSolution { kernel, values, rvi_policy: rvi_policy.with_space(space), rvi_seconds, lp, lp_seconds })
}

/// Mean of `a - b` and the upper end of its one-sided 95% Student-t
/// interval. The bound is NaN with fewer than two pairs.
pub fn paired_upper_bound(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "paired samples");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    if d.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid dof").inverse_cdf(0.95);
    (mean, mean + t * (var / n).sqrt())
}

/// Best threshold by simulated mean delay. Every candidate is run with the
/// same seed.
pub fn tune_threshold(model: &SystemModel, thetas: &[usize], cfg: &SimConfig) -> Result<(usize, Vec<(usize, f64)>), PipelineError> {
    let mut scores = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let (m, _) = run(model, &threshold_policy(theta, model), cfg)?;
        scores.push((theta, if m.saturated { f64::INFINITY } else { m.mean_delay_s }));
    }
    let best = scores.iter().min_by(|a, b| a.1.total_cmp(&b.1)).ok_or(PipelineError::NoThresholds)?.0;
    Ok((best, scores))
}

/// Learned policy against the tuned threshold at one sub-6 rate.
#[derive(Debug, Clone, Serialize)]
pub struct RateComparison {
    pub sub6_rate: f64,
    pub theta: usize,
    /// Simulated mean delay of every candidate threshold during tuning.
    pub theta_scores: Vec<(usize, f64)>,
    pub learned: Metrics,
    pub threshold: Metrics,
    /// Mean of the per-replication delay differences, learned minus
    /// threshold, seconds.
    pub mean_diff_s: f64,
    /// One-sided 95% upper bound of that mean.
    pub upper_diff_s: f64,
    /// Observations the learner never visited.
    pub unvisited: usize,
}

impl RateComparison {
    /// The learned policy is no slower than the threshold at 95% confidence.
    pub fn learned_wins(&self) -> bool {
        self.upper_diff_s <= 0.0
    }
}

/// Trains a Q-table on `model` as seen at `sweep.learner_info`.
pub fn learn(model: &SystemModel, sweep: &SweepConfig, cfg: &LearningConfig) -> Result<QTable, PipelineError> {
    let mut env = ModelEnv::new(model, sweep.learner_info, cfg)?;
    Ok(train(&mut env, cfg)?.table)
}

/// Compares a learned table with the best threshold at the model's sub-6
/// rate. Both evaluation runs use `sim.seed`, so replication `r` of each
/// sees the same channel path.
pub fn compare(model: &SystemModel, rate: f64, table: &QTable, sweep: &SweepConfig, sim: &SimConfig) -> Result<RateComparison, PipelineError> {
    let learned_policy = LearnedPolicy::from_table(table, model, sweep.learner_info, "q-learning")?;
    let unvisited = learned_policy.flagged().iter().filter(|f| **f).count();
    let tuning = SimConfig { seed: sweep.tuning_seed, replications: sweep.tuning_replications, trace_len: 0, ..sim.clone() };
    let (theta, theta_scores) = tune_threshold(model, &sweep.thetas, &tuning)?;
    let eval = SimConfig { trace_len: 0, ..sim.clone() };
    let (mut learned, _) = run(model, &learned_policy, &eval)?;
    let baseline = threshold_policy(theta, model);
    let (mut threshold, _) = run(model, &baseline, &eval)?;
    learned.sub6_rate = Some(rate);
    threshold.sub6_rate = Some(rate);
    threshold.policy = baseline.name();
    let delays = |m: &Metrics| m.replications.iter().map(|r| r.mean_delay_s).collect::<Vec<_>>();
    let (mean_diff_s, upper_diff_s) = paired_upper_bound(&delays(&learned), &delays(&threshold));
    Ok(RateComparison { sub6_rate: rate, theta, theta_scores, learned, threshold, mean_diff_s, upper_diff_s, unvisited })
}

/// Trains and compares at every rate of `sweep.sub6_rates`.
pub fn learning_sweep(
    base: &SystemModel,
    sweep: &SweepConfig,
    learning: &LearningConfig,
    sim: &SimConfig,
) -> Result<Vec<RateComparison>, PipelineError> {
    sweep
        .sub6_rates
        .iter()
        .map(|&rate| {
            let model = base.with_sub6_rate(rate)?;
            let table = learn(&model, sweep, learning)?;
            compare(&model, rate, &table, sweep, sim)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paired_bound_uses_one_sided_quantile() {
        // t_{0.95, 4} = 2.132
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let (m, u) = paired_upper_bound(&a, &b);
        assert!((m - 3.0).abs() < 1e-12);
        let se = (2.5f64 / 5.0).sqrt();
        assert!(((u - m) / se - 2.132).abs() < 1e-3);
        assert!(paired_upper_bound(&[1.0], &[0.0]).1.is_nan());
    }
}
