//! Per-coordinate distribution drift between simulated and real rollouts.
//!
//! On the double-integrator system, a reference cloud is recorded under a
//! behavior policy, and fresh clouds are produced by an open-loop biased
//! model and by the same model corrected along the references, each queried
//! under a (possibly more stochastic) evaluation policy. The study reports
//! the empirical 1-Wasserstein distance between the real and simulated state
//! marginals per time step and coordinate. The corrected model keeps the
//! clouds anchored to real trajectories where the open-loop model drifts.

use opc_lab_core::analysis::wasserstein1_empirical;
use opc_lab_core::env::{double_integrator, rollout_env};
use opc_lab_core::rng::stream;
use opc_lab_core::rollout::model_rollout;
use opc_lab_core::{
    GaussianLinearPolicy, InitState, LearnedLinearModel, Mat, MeanModel, RewardSpec, SimModel,
    Trajectory,
};

use crate::config::Config;
use crate::studies::{require_count, require_nonnegative};
use crate::table::{Cell, ResultTable};
use crate::CliError;

pub fn run(cfg: &mut Config, seed: u64) -> Result<ResultTable, CliError> {
    let horizon = require_count(cfg.usize_or("env.horizon", 30)?, "env.horizon")?;
    let scale = cfg.f64_or("model.delta_a_scale", 0.05)?;
    let theta = cfg.f64_list_or("policy.theta", &[-5.0, -6.0])?;
    let sigma = require_nonnegative(cfg.f64_or("policy.sigma", 0.01)?, "policy.sigma")?;
    let beta_behavior =
        require_nonnegative(cfg.f64_or("policy.beta_behavior", 1.0)?, "policy.beta_behavior")?;
    let betas = cfg.f64_list_or("grid.query_betas", &[1.0, 1.5])?;
    let samples = require_count(cfg.usize_or("run.samples", 2000)?, "run.samples")?;
    let hash = cfg.hash();
    cfg.finish()?;

    let mut env = double_integrator();
    env.horizon = horizon;
    if theta.len() != env.n_s() {
        return Err(CliError::config(
            "policy.theta",
            format!("expected {} gains, found {}", env.n_s(), theta.len()),
        ));
    }
    for &beta in &betas {
        require_nonnegative(beta, "grid.query_betas")?;
    }
    // The state-marginal comparison never looks at rewards.
    let reward = RewardSpec::NegativeStateNorm;
    let gain = Mat::from_row_slice(1, theta.len(), &theta);
    let noise = Mat::from_element(1, 1, sigma);
    let behavior = GaussianLinearPolicy {
        theta: gain.clone(),
        sigma: noise.clone(),
        beta: beta_behavior,
    };
    let biased = LearnedLinearModel::nominal(
        &env.a + Mat::identity(env.n_s(), env.n_s()) * scale,
        env.b.clone(),
    );
    let InitState::Fixed(init) = env.init.clone() else {
        unreachable!()
    };

    let mut table = ResultTable::new(
        &["t", "dim", "beta", "w1_env_vs_model", "w1_env_vs_opc"],
        hash,
        seed,
    );
    for (bi, &beta) in betas.iter().enumerate() {
        let query = GaussianLinearPolicy {
            theta: gain.clone(),
            sigma: noise.clone(),
            beta,
        };
        let mut rng = stream(seed, &[1, bi as u64]);
        let refs: Vec<Trajectory> = (0..samples)
            .map(|_| rollout_env(&env, &reward, &behavior, &mut rng))
            .collect::<Result<_, _>>()?;
        // When the evaluation policy is the behavior policy, the reference
        // cloud is already a sample of the real on-policy distribution.
        let env_cloud: Vec<Trajectory> = if beta == beta_behavior {
            refs.clone()
        } else {
            (0..samples)
                .map(|_| rollout_env(&env, &reward, &query, &mut rng))
                .collect::<Result<_, _>>()?
        };
        let mean = MeanModel::Learned(&biased);
        let corrected = SimModel::Opc { mean, refs: &refs };
        let opc_cloud: Vec<Trajectory> = (0..samples)
            .map(|i| {
                model_rollout(
                    &corrected,
                    &query,
                    &reward,
                    &refs[i].transitions[0].state,
                    horizon,
                    (i, 0),
                    &mut rng,
                )
            })
            .collect::<Result<_, _>>()?;
        let open_loop = SimModel::Mean(mean);
        let model_cloud: Vec<Trajectory> = (0..samples)
            .map(|_| model_rollout(&open_loop, &query, &reward, &init, horizon, (0, 0), &mut rng))
            .collect::<Result<_, _>>()?;

        for t in 0..horizon {
            for dim in 0..env.n_s() {
                let pick = |cloud: &[Trajectory]| -> Vec<f64> {
                    cloud
                        .iter()
                        .map(|traj| traj.transitions[t].state[dim])
                        .collect()
                };
                let real = pick(&env_cloud);
                let w1_model = wasserstein1_empirical(&real, &pick(&model_cloud), &mut rng)?;
                let w1_opc = wasserstein1_empirical(&real, &pick(&opc_cloud), &mut rng)?;
                table.push_row(vec![
                    Cell::Int(t as i64),
                    Cell::Int(dim as i64),
                    Cell::Float(beta),
                    Cell::Float(w1_model),
                    Cell::Float(w1_opc),
                ]);
            }
        }
    }
    Ok(table)
}
