//! Monte-Carlo check of the return-gap bound on random linear systems.
//!
//! Each row draws a random linear-Gaussian environment, a stochastic linear
//! policy, and a perturbed model, then compares the measured gap between the
//! true return and the corrected-model return (estimated with coupled
//! rollouts) against the closed-form bound computed from the system's exact
//! Lipschitz constants. Every fourth policy is deterministic, which must pin
//! both the gap and the bound to zero.
//!
//! The bound's `C_2^T sqrt(T)` amplification covers accumulated noise only
//! when the joint sensitivity satisfies `L_f^2 + L_pi^2 >= 1`, the regime of
//! dynamics whose state map is at least marginally expansive. The sampler
//! targets that regime and redraws the rare system that lands below it.

use opc_lab_core::analysis::{lipschitz_profile_linear, opc_return_gap_bound, paired_opc_gap};
use opc_lab_core::linalg::spectral_norm;
use opc_lab_core::rng::stream;
use opc_lab_core::{
    Averaging, GaussianLinearPolicy, InitState, LearnedLinearModel, LinearGaussianEnv, Mat,
    MeanModel, RewardSpec, StateVec,
};
use rand::Rng;

use crate::config::Config;
use crate::studies::{require_count, require_nonnegative};
use crate::table::{Cell, ResultTable};
use crate::CliError;

pub fn run(cfg: &mut Config, seed: u64) -> Result<ResultTable, CliError> {
    let n_configs = require_count(cfg.usize_or("run.configs", 20)?, "run.configs")?;
    let rollouts = require_count(cfg.usize_or("run.rollouts", 10000)?, "run.rollouts")?;
    let t_max = cfg.usize_or("grid.t_max", 6)?;
    let error_scale =
        require_nonnegative(cfg.f64_or("model.error_scale", 0.1)?, "model.error_scale")?;
    let hash = cfg.hash();
    cfg.finish()?;

    if t_max < 2 {
        return Err(CliError::config("grid.t_max", "must be >= 2"));
    }
    let mut table = ResultTable::new(
        &["config_id", "beta", "lhs_mc", "rhs_bound", "holds"],
        hash,
        seed,
    );
    for i in 0..n_configs {
        let beta = if i % 4 == 0 { 0.0 } else { f64::NAN };
        let mut drawn = None;
        for attempt in 0..64u64 {
            let mut rng = stream(seed, &[5, i as u64, attempt]);
            let candidate = draw_instance(&mut rng, beta, t_max, error_scale);
            let profile = lipschitz_profile_linear(
                &candidate.model,
                &candidate.policy,
                &candidate.reward,
                candidate.env.gamma,
                candidate.env.horizon,
                None,
            )?;
            if profile.l_f * profile.l_f + profile.l_pi * profile.l_pi >= 1.0 {
                drawn = Some((candidate, profile, attempt));
                break;
            }
        }
        let Some((instance, profile, attempt)) = drawn else {
            return Err(CliError::Runtime {
                message: format!("config {i}: no admissible system in 64 draws"),
            });
        };
        let rhs = opc_return_gap_bound(&profile)?;
        let mut rng = stream(seed, &[6, i as u64, attempt]);
        let (eta_ref, eta_opc) = paired_opc_gap(
            &instance.env,
            &instance.reward,
            &MeanModel::Learned(&instance.model),
            &instance.policy,
            rollouts,
            Averaging::Sum,
            &mut rng,
        )?;
        let lhs = (eta_ref - eta_opc).abs();
        table.push_row(vec![
            Cell::Int(i as i64),
            Cell::Float(instance.policy.beta),
            Cell::Float(lhs),
            Cell::Float(rhs),
            Cell::Int(i64::from(lhs <= rhs)),
        ]);
    }
    Ok(table)
}

struct Instance {
    env: LinearGaussianEnv,
    policy: GaussianLinearPolicy,
    model: LearnedLinearModel,
    reward: RewardSpec,
}

fn draw_instance<R: Rng>(rng: &mut R, beta: f64, t_max: usize, error_scale: f64) -> Instance {
    let n_s = rng.random_range(1..=2usize);
    let n_a = rng.random_range(1..=2usize);
    let mut fill = |rows: usize, cols: usize, lo: f64, hi: f64| {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
    };
    let mut a = fill(n_s, n_s, -1.0, 1.0);
    let b = fill(n_s, n_a, -0.5, 0.5);
    let theta = fill(n_a, n_s, -0.3, 0.3);
    let delta_a = fill(n_s, n_s, -error_scale, error_scale);
    let delta_b = fill(n_s, n_a, -error_scale, error_scale);
    let noise =
        Mat::from_diagonal(&StateVec::from_fn(n_s, |_, _| rng.random_range(1e-4..1e-2)));
    let sigma =
        Mat::from_diagonal(&StateVec::from_fn(n_a, |_, _| rng.random_range(1e-3..1e-2)));
    let s0 = StateVec::from_fn(n_s, |_, _| rng.random_range(-1.0..1.0));
    let norm_target = rng.random_range(1.0..1.3);
    let beta = if beta.is_nan() {
        rng.random_range(0.2..1.0)
    } else {
        beta
    };
    let gamma = rng.random_range(0.3..0.9);
    let horizon = rng.random_range(2..=t_max);
    let sigma_r = rng.random_range(0.5..2.0);
    let norm = spectral_norm(&a);
    if norm > 0.0 {
        a *= norm_target / norm;
    }
    Instance {
        model: LearnedLinearModel::nominal(&a + delta_a, &b + delta_b),
        env: LinearGaussianEnv {
            a,
            b,
            noise_cov: noise,
            init: InitState::Fixed(s0),
            horizon,
            gamma,
            terminal_box: None,
        },
        policy: GaussianLinearPolicy {
            theta,
            sigma,
            beta,
        },
        reward: RewardSpec::ExponentialBell { sigma_r },
    }
}
