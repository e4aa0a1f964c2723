//! Return prediction quality as the evaluated policy leaves the data policy.
//!
//! References are recorded once under a behavior policy. For each query
//! stochasticity `beta`, the corrected model predicts the query policy's
//! return by rolling along those references, and a fresh Monte-Carlo batch
//! on the real system provides the ground truth. The prediction gap grows
//! with the distribution shift between behavior and query policies.
//!
//! The defaults keep the corrected chain's closed loop stable (model error
//! 0.4 against gain -0.8 leaves it at 0.6); a marginal or unstable corrected
//! loop random-walks away from the references and the shift trend drowns in
//! saturation of the reward.

use opc_lab_core::env::{discounted_return, rollout_env, scalar_env};
use opc_lab_core::rng::stream;
use opc_lab_core::rollout::model_rollout;
use opc_lab_core::{
    Averaging, GaussianLinearPolicy, LearnedLinearModel, Mat, MeanModel, RewardSpec, SimModel,
    Trajectory,
};

use crate::config::Config;
use crate::studies::{mean_of, require_count, require_nonnegative, require_positive};
use crate::table::{Cell, ResultTable};
use crate::CliError;

pub fn run(cfg: &mut Config, seed: u64) -> Result<ResultTable, CliError> {
    let a = cfg.f64_or("env.a", 1.0)?;
    let b = cfg.f64_or("env.b", 1.0)?;
    let s0 = cfg.f64_or("env.s0", 1.0)?;
    let noise_var = require_nonnegative(cfg.f64_or("env.noise_var", 0.005)?, "env.noise_var")?;
    let horizon = require_count(cfg.usize_or("env.horizon", 30)?, "env.horizon")?;
    let sigma_r = require_positive(cfg.f64_or("reward.sigma_r", 0.5)?, "reward.sigma_r")?;
    let delta_a = cfg.f64_or("model.delta_a", 0.4)?;
    let delta_b = cfg.f64_or("model.delta_b", 0.0)?;
    let theta = cfg.f64_or("policy.theta", -0.8)?;
    let sigma = require_nonnegative(cfg.f64_or("policy.sigma", 0.01)?, "policy.sigma")?;
    let beta_ref = require_nonnegative(cfg.f64_or("policy.beta_ref", 1.0)?, "policy.beta_ref")?;
    let betas = cfg.f64_list_or("grid.betas", &[1.0, 1.5, 2.0, 2.5])?;
    let n_refs = require_count(cfg.usize_or("run.refs", 100)?, "run.refs")?;
    let evals = require_count(cfg.usize_or("run.evals", 1000)?, "run.evals")?;
    let hash = cfg.hash();
    cfg.finish()?;

    for &beta in &betas {
        require_nonnegative(beta, "grid.betas")?;
    }
    let env = scalar_env(a, b, s0, noise_var, horizon, 1.0);
    let reward = RewardSpec::ExponentialBell { sigma_r };
    let gain = Mat::from_element(1, 1, theta);
    let noise = Mat::from_element(1, 1, sigma);
    let behavior = GaussianLinearPolicy {
        theta: gain.clone(),
        sigma: noise.clone(),
        beta: beta_ref,
    };
    let biased = LearnedLinearModel::nominal(env.a.clone(), env.b.clone())
        .with_injected(Mat::from_element(1, 1, delta_a), Mat::from_element(1, 1, delta_b));

    let mut rng = stream(seed, &[2, 0]);
    let refs: Vec<Trajectory> = (0..n_refs)
        .map(|_| rollout_env(&env, &reward, &behavior, &mut rng))
        .collect::<Result<_, _>>()?;

    let mut table = ResultTable::new(
        &["beta", "return_opc_predicted", "return_env", "gap"],
        hash,
        seed,
    );
    for (bi, &beta) in betas.iter().enumerate() {
        let query = GaussianLinearPolicy {
            theta: gain.clone(),
            sigma: noise.clone(),
            beta,
        };
        let mut rng = stream(seed, &[2, 1 + bi as u64]);
        let mut env_returns = Vec::with_capacity(evals);
        for _ in 0..evals {
            let traj = rollout_env(&env, &reward, &query, &mut rng)?;
            env_returns.push(discounted_return(&traj, env.gamma, Averaging::Mean)?);
        }
        let corrected = SimModel::Opc {
            mean: MeanModel::Learned(&biased),
            refs: &refs,
        };
        let mut opc_returns = Vec::with_capacity(evals);
        for i in 0..evals {
            let branch = i % n_refs;
            let traj = model_rollout(
                &corrected,
                &query,
                &reward,
                &refs[branch].transitions[0].state,
                refs[branch].len(),
                (branch, 0),
                &mut rng,
            )?;
            opc_returns.push(discounted_return(&traj, env.gamma, Averaging::Mean)?);
        }
        let return_env = mean_of(&env_returns);
        let return_opc = mean_of(&opc_returns);
        table.push_row(vec![
            Cell::Float(beta),
            Cell::Float(return_opc),
            Cell::Float(return_env),
            Cell::Float((return_opc - return_env).abs()),
        ]);
    }
    Ok(table)
}
