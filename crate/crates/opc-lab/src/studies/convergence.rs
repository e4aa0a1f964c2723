//! Reference-count convergence of the recorded-return estimator.
//!
//! The mean return over `B` recorded reference rollouts estimates the true
//! expected return, which is available in closed form for the linear system
//! under a deterministic gain. For each `B` on a grid the study repeats the
//! estimate over fresh trials and reports the mean absolute error, the
//! fraction of trials whose error exceeds a tolerance, and the variance of
//! the estimator, whose `1/B` decay is the visible signature.

use opc_lab_core::analysis::reference_count_convergence;
use opc_lab_core::env::double_integrator;
use opc_lab_core::rng::stream;
use opc_lab_core::{Averaging, GaussianLinearPolicy, Mat, RewardSpec};

use crate::config::Config;
use crate::studies::require_count;
use crate::table::{Cell, ResultTable};
use crate::CliError;

pub fn run(cfg: &mut Config, seed: u64) -> Result<ResultTable, CliError> {
    let horizon = require_count(cfg.usize_or("env.horizon", 30)?, "env.horizon")?;
    let gamma = cfg.f64_or("env.gamma", 0.9)?;
    let theta = cfg.f64_list_or("policy.theta", &[-5.0, -6.0])?;
    let b_grid = cfg.usize_list_or("grid.b", &[4, 16, 64, 256])?;
    let trials = cfg.usize_or("run.trials", 200)?;
    let epsilon = cfg.f64_opt("run.epsilon")?;
    let averaging = cfg.string_or("run.averaging", "sum");
    let hash = cfg.hash();
    cfg.finish()?;

    let averaging = match averaging.as_str() {
        "sum" => Averaging::Sum,
        "mean" => Averaging::Mean,
        other => {
            return Err(CliError::config(
                "run.averaging",
                format!("expected 'sum' or 'mean', found '{other}'"),
            ))
        }
    };
    if !(0.0..1.0).contains(&gamma) {
        return Err(CliError::config("env.gamma", "must lie in [0, 1)"));
    }
    let mut env = double_integrator();
    env.horizon = horizon;
    env.gamma = gamma;
    if theta.len() != env.n_s() {
        return Err(CliError::config(
            "policy.theta",
            format!("expected {} gains, found {}", env.n_s(), theta.len()),
        ));
    }
    // The estimator study needs the closed-form return, which exists for the
    // deterministic gain; there is no action noise to configure.
    let policy = GaussianLinearPolicy {
        theta: Mat::from_row_slice(1, theta.len(), &theta),
        sigma: Mat::zeros(1, 1),
        beta: 0.0,
    };
    let reward = RewardSpec::NegativeStateNorm;
    let mut rng = stream(seed, &[3]);
    let rows = reference_count_convergence(
        &env, &reward, &policy, &b_grid, trials, epsilon, averaging, &mut rng,
    )?;

    let mut table = ResultTable::new(
        &["b", "mean_abs_error", "tail_prob", "estimator_variance"],
        hash,
        seed,
    );
    for row in rows {
        table.push_row(vec![
            Cell::Int(row.b as i64),
            Cell::Float(row.mean_abs_error),
            Cell::Float(row.tail_prob),
            Cell::Float(row.estimator_variance),
        ]);
    }
    Ok(table)
}
