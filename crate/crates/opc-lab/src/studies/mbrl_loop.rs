//! Full learning loop on the scalar system, one row per iteration.
//!
//! Each iteration rolls the current gain on the real system, builds a model
//! over the retained data (a fixed biased nominal or a refit, both with an
//! optional injected error), generates branched simulated rollouts with the
//! chosen correction, and takes a few clipped ascent steps on the simulated
//! reward. The log records every gain that actually touched the real system
//! together with its measured return, so the table shows whether the
//! corrected model steers the gain toward the true optimum or the model's.

use opc_lab_core::env::scalar_env;
use opc_lab_core::rollout::{
    mbrl_loop, CorrectionKind, ImproveCfg, LoopCfg, LoopModel,
};
use opc_lab_core::{Averaging, BranchedRolloutConfig, GaussianLinearPolicy, Mat, RewardSpec};

use crate::config::Config;
use crate::studies::{require_count, require_nonnegative, require_positive};
use crate::table::{Cell, ResultTable};
use crate::CliError;

pub fn run(cfg: &mut Config, seed: u64) -> Result<ResultTable, CliError> {
    let a = cfg.f64_or("env.a", 1.0)?;
    let b = cfg.f64_or("env.b", 1.0)?;
    let s0 = cfg.f64_or("env.s0", 1.0)?;
    let noise_var = require_nonnegative(cfg.f64_or("env.noise_var", 0.0)?, "env.noise_var")?;
    let horizon = require_count(cfg.usize_or("env.horizon", 60)?, "env.horizon")?;
    let gamma = cfg.f64_or("env.gamma", 1.0)?;
    let sigma_r = require_positive(cfg.f64_or("reward.sigma_r", 0.05)?, "reward.sigma_r")?;
    let mode = cfg.string_or("model.mode", "fixed-nominal");
    let delta_a = cfg.f64_or("model.delta_a", 0.5)?;
    let delta_b = cfg.f64_or("model.delta_b", 0.0)?;
    let ridge = require_nonnegative(cfg.f64_or("model.ridge", 0.0)?, "model.ridge")?;
    let theta0 = cfg.f64_or("policy.theta0", -0.2)?;
    let sigma = require_nonnegative(cfg.f64_or("policy.sigma", 0.04)?, "policy.sigma")?;
    let beta = require_nonnegative(cfg.f64_or("policy.beta", 0.0)?, "policy.beta")?;
    let iterations = require_count(cfg.usize_or("loop.iterations", 30)?, "loop.iterations")?;
    let env_rollouts = require_count(cfg.usize_or("loop.env_rollouts", 1)?, "loop.env_rollouts")?;
    let retain = require_count(cfg.usize_or("loop.retain", 1)?, "loop.retain")?;
    let correction = cfg.string_or("loop.correction", "opc");
    let averaging = cfg.string_or("loop.averaging", "mean");
    let sim_horizon = require_count(cfg.usize_or("sim.horizon", 10)?, "sim.horizon")?;
    let budget = require_count(cfg.usize_or("sim.budget", 2000)?, "sim.budget")?;
    let alpha = require_positive(cfg.f64_or("improve.alpha", 0.3)?, "improve.alpha")?;
    let eps_pi = require_positive(cfg.f64_or("improve.eps_pi", 0.04)?, "improve.eps_pi")?;
    let steps = require_count(cfg.usize_or("improve.steps", 5)?, "improve.steps")?;
    let fd_step = require_positive(cfg.f64_or("improve.fd_step", 1e-5)?, "improve.fd_step")?;
    let hash = cfg.hash();
    cfg.finish()?;

    let correction = match correction.as_str() {
        "opc" => CorrectionKind::Opc,
        "plain" => CorrectionKind::Plain,
        "replay" => CorrectionKind::Replay,
        other => {
            return Err(CliError::config(
                "loop.correction",
                format!("expected 'opc', 'plain', or 'replay', found '{other}'"),
            ))
        }
    };
    let injected_a = Mat::from_element(1, 1, delta_a);
    let injected_b = Mat::from_element(1, 1, delta_b);
    let model = match mode.as_str() {
        "fixed-nominal" => LoopModel::FixedNominal {
            delta_a: injected_a,
            delta_b: injected_b,
        },
        "refit" => LoopModel::Refit {
            ridge,
            delta_a: injected_a,
            delta_b: injected_b,
        },
        other => {
            return Err(CliError::config(
                "model.mode",
                format!("expected 'fixed-nominal' or 'refit', found '{other}'"),
            ))
        }
    };
    let return_mode = match averaging.as_str() {
        "sum" => Averaging::Sum,
        "mean" => Averaging::Mean,
        other => {
            return Err(CliError::config(
                "loop.averaging",
                format!("expected 'sum' or 'mean', found '{other}'"),
            ))
        }
    };
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CliError::config("env.gamma", "must lie in [0, 1]"));
    }

    let env = scalar_env(a, b, s0, noise_var, horizon, gamma);
    let reward = RewardSpec::ExponentialBell { sigma_r };
    let policy0 = GaussianLinearPolicy {
        theta: Mat::from_element(1, 1, theta0),
        sigma: Mat::from_element(1, 1, sigma),
        beta,
    };
    let loop_cfg = LoopCfg {
        iterations,
        env_rollouts,
        retain,
        sim: BranchedRolloutConfig {
            horizon: sim_horizon,
            budget,
        },
        model,
        correction,
        improve: ImproveCfg {
            alpha,
            eps_pi,
            steps,
            fd_step,
        },
        return_mode,
    };
    let outcome = mbrl_loop(&env, &reward, &policy0, &loop_cfg, seed)?;

    let mut table = ResultTable::new(
        &["iteration", "theta", "true_return", "flagged"],
        hash,
        seed,
    );
    for rec in &outcome.records {
        table.push_row(vec![
            Cell::Int(rec.iteration as i64),
            Cell::Float(rec.theta[(0, 0)]),
            Cell::Float(rec.true_return),
            Cell::Int(i64::from(rec.flagged)),
        ]);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logs_one_row_per_iteration_starting_at_the_initial_gain() {
        let text = "run.seed = 29\nloop.iterations = 3\nsim.horizon = 4\nsim.budget = 40\n\
                    env.horizon = 12\nimprove.steps = 2\n";
        let mut cfg = Config::parse(text).unwrap();
        let table = run(&mut cfg, 29).unwrap();
        assert_eq!(table.rows().len(), 3);
        for (n, row) in table.rows().iter().enumerate() {
            assert_eq!(row[0], Cell::Int(n as i64));
            assert_eq!(row[3], Cell::Int(0));
            match row[2] {
                Cell::Float(v) => assert!(v.is_finite()),
                _ => panic!("expected a float return"),
            }
        }
        assert_eq!(table.rows()[0][1], Cell::Float(-0.2));

        let mut again = Config::parse(text).unwrap();
        assert_eq!(run(&mut again, 29).unwrap().rows(), table.rows());
    }

    #[test]
    fn unknown_correction_is_a_config_error() {
        let mut cfg = Config::parse("run.seed = 29\nloop.correction = magic\n").unwrap();
        let err = run(&mut cfg, 29).unwrap_err();
        assert!(err.to_string().contains("loop.correction"));
    }
}
