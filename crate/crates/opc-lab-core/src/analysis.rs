//! Quantitative diagnostics: the policy-improvement decomposition, model
//! error estimators, the corrected-model return-gap bound, the simulation
//! horizon bound, the signed gradient distance, empirical 1D Wasserstein
//! distance, exact returns for linear-Gaussian systems, and the
//! reference-count convergence study.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{
    discounted_return, env_step, rollout_env, Averaging, LinearGaussianEnv, RewardSpec, StateBox,
};
use crate::error::{LabError, LabResult};
use crate::linalg::{psd_sqrt, sample_gaussian, spectral_norm};
use crate::models::{LearnedLinearModel, MeanModel};
use crate::policy::{GaussianLinearPolicy, Policy};
use crate::rollout::{model_rollout, SimModel};
use crate::{Mat, StateVec};

/// Decomposition of one iteration's true policy improvement into the model's
/// predicted improvement minus the two model-error terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementReport {
    pub true_improvement: f64,
    pub model_improvement: f64,
    /// Model-return error on the improved policy, which the data never saw.
    pub off_policy_error: f64,
    /// Model-return error on the data-collection policy.
    pub on_policy_error: f64,
    pub lower_bound: f64,
}

/// Builds the improvement decomposition from true returns `eta` and model
/// returns `eta_tilde` of the current (`_n`) and improved (`_next`) policies.
pub fn improvement_report(
    eta_n: f64,
    eta_next: f64,
    eta_tilde_n: f64,
    eta_tilde_next: f64,
) -> ImprovementReport {
    let model_improvement = eta_tilde_next - eta_tilde_n;
    let off_policy_error = (eta_next - eta_tilde_next).abs();
    let on_policy_error = (eta_n - eta_tilde_n).abs();
    ImprovementReport {
        true_improvement: eta_next - eta_n,
        model_improvement,
        off_policy_error,
        on_policy_error,
        lower_bound: model_improvement - off_policy_error - on_policy_error,
    }
}

/// Smoothness constants of one (model, policy, reward) configuration, plus
/// the discount, horizon, and action dimension the bound is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzProfile {
    pub l_f: f64,
    pub l_r: f64,
    pub l_pi: f64,
    pub sigma_pi_bar: f64,
    pub gamma: f64,
    pub t: usize,
    pub n_a: usize,
}

impl LipschitzProfile {
    fn validate(&self) -> LabResult<()> {
        let fields = [
            self.l_f,
            self.l_r,
            self.l_pi,
            self.sigma_pi_bar,
            self.gamma,
        ];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LabError::InvalidArgument {
                context: "LipschitzProfile",
                message: "constants must be finite and nonnegative".into(),
            });
        }
        if self.gamma >= 1.0 {
            return Err(LabError::InvalidArgument {
                context: "LipschitzProfile",
                message: format!("gamma = {} must be < 1", self.gamma),
            });
        }
        Ok(())
    }
}

/// Upper bound on the return gap between the true system and the corrected
/// model under a stochastic policy:
/// `sigma_pi_bar/(1-gamma) * n_a^{1/4} * C_1 * C_2^T * sqrt(T)` with
/// `C_1 = sqrt(2(1+L_pi^2)) * L_f * L_r` and `C_2 = sqrt(L_f^2 + L_pi^2)`.
///
/// Deterministic policies (`sigma_pi_bar = 0`) get a zero gap.
pub fn opc_return_gap_bound(profile: &LipschitzProfile) -> LabResult<f64> {
    profile.validate()?;
    let c1 = (2.0 * (1.0 + profile.l_pi * profile.l_pi)).sqrt() * profile.l_f * profile.l_r;
    let c2 = (profile.l_f * profile.l_f + profile.l_pi * profile.l_pi).sqrt();
    Ok(profile.sigma_pi_bar / (1.0 - profile.gamma)
        * (profile.n_a as f64).powf(0.25)
        * c1
        * c2.powi(profile.t as i32)
        * (profile.t as f64).sqrt())
}

/// Worst-case accumulated model-error weight of an `H`-step simulated branch:
/// `min{H(H+1)/2, H/(1-gamma), gamma/(1-gamma)^2}`.
pub fn horizon_bound(h: usize, gamma: f64) -> LabResult<f64> {
    if h == 0 {
        return Err(LabError::InvalidArgument {
            context: "horizon_bound",
            message: "H must be >= 1".into(),
        });
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(LabError::InvalidArgument {
            context: "horizon_bound",
            message: format!("gamma = {gamma} must lie in [0, 1)"),
        });
    }
    let h = h as f64;
    let quadratic = h * (h + 1.0) / 2.0;
    let linear = h / (1.0 - gamma);
    let discount_cap = gamma / ((1.0 - gamma) * (1.0 - gamma));
    Ok(quadratic.min(linear).min(discount_cap))
}

/// Sign with `sgn(0) = 0`, unlike `f64::signum`.
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Signed angular distance between two scalar gradients, in `[-1, 1]`.
///
/// The magnitude is `|arctan g1 - arctan g2| / pi`; the sign is positive when
/// the gradients agree in sign (a zero defers to the other gradient's sign),
/// so `d >= 0` reads as "sign-correct".
pub fn signed_gradient_distance(g1: f64, g2: f64) -> f64 {
    let dg = (g1.atan() - g2.atan()).abs();
    let sign = if g1 == 0.0 {
        sgn(g2)
    } else if g2 == 0.0 {
        sgn(g1)
    } else {
        sgn(g1 * g2)
    };
    sign * dg / PI
}

/// Exact 1D Wasserstein-1 distance between two equal-weight empirical
/// distributions: the mean absolute difference of sorted samples.
///
/// Unequal sample counts are reconciled by bootstrap-downsampling the larger
/// set (with replacement); equal counts never touch the generator.
pub fn wasserstein1_empirical<R: Rng>(p: &[f64], q: &[f64], rng: &mut R) -> LabResult<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(LabError::EmptyInput {
            context: "wasserstein1_empirical",
        });
    }
    if p.iter().chain(q.iter()).any(|v| !v.is_finite()) {
        return Err(LabError::NonFinite {
            context: "wasserstein1_empirical",
        });
    }
    let n = p.len().min(q.len());
    let downsample = |full: &[f64], rng: &mut R| -> Vec<f64> {
        if full.len() == n {
            full.to_vec()
        } else {
            (0..n).map(|_| full[rng.random_range(0..full.len())]).collect()
        }
    };
    let mut a = downsample(p, rng);
    let mut b = downsample(q, rng);
    a.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / n as f64)
}

/// Exact expected return of a linear-Gaussian environment under a
/// linear-Gaussian policy, by propagating the state mean and covariance.
///
/// Supports the quadratic-family rewards, whose expectations are closed-form
/// in the first two moments; the bell reward and terminal boxes are not
/// expressible this way and are rejected.
pub fn expected_return_linear(
    env: &LinearGaussianEnv,
    policy: &GaussianLinearPolicy,
    reward: &RewardSpec,
    averaging: Averaging,
) -> LabResult<f64> {
    env.validate()?;
    if env.terminal_box.is_some() {
        return Err(LabError::InvalidArgument {
            context: "expected_return_linear",
            message: "terminal boxes truncate the state distribution".into(),
        });
    }
    if matches!(reward, RewardSpec::ExponentialBell { .. }) {
        return Err(LabError::InvalidArgument {
            context: "expected_return_linear",
            message: "the bell reward has no closed-form expectation in the first two moments"
                .into(),
        });
    }
    if policy.theta.ncols() != env.n_s() || policy.theta.nrows() != env.n_a() {
        return Err(LabError::DimensionMismatch {
            context: "expected_return_linear policy",
            expected: env.n_s(),
            actual: policy.theta.ncols(),
        });
    }
    let (mut mu, mut cov) = match &env.init {
        crate::env::InitState::Fixed(s0) => (s0.clone(), Mat::zeros(env.n_s(), env.n_s())),
        crate::env::InitState::Gaussian { mean, cov } => (mean.clone(), cov.clone()),
    };
    let closed_loop = &env.a + &env.b * &policy.theta;
    let action_cov = &policy.sigma * (policy.beta * policy.beta);
    let injected = &env.b * action_cov * env.b.transpose();

    let step_reward = |t: usize, mu: &StateVec, cov: &Mat| -> LabResult<f64> {
        let spread = cov.trace();
        match reward {
            RewardSpec::NegativeStateNorm => Ok(-(mu.norm_squared() + spread)),
            RewardSpec::QuadraticTracking { reference } => {
                let target = reference.get(t).ok_or(LabError::OutOfData { t, b: 0 })?;
                Ok(-0.5 * ((target - mu).norm_squared() + spread))
            }
            RewardSpec::ExponentialBell { .. } => unreachable!(),
        }
    };

    let mut sum = 0.0;
    for t in 0..env.horizon {
        let r = step_reward(t, &mu, &cov)?;
        match averaging {
            Averaging::Sum => sum += env.gamma.powi(t as i32) * r,
            Averaging::Mean => sum += r,
        }
        // Mean follows the same arithmetic as a noise-free rollout so the
        // deterministic case agrees bitwise with simulation.
        let action_mean = &policy.theta * &mu;
        mu = &env.a * &mu + &env.b * &action_mean;
        cov = &closed_loop * cov * closed_loop.transpose() + &injected + &env.noise_cov;
    }
    Ok(match averaging {
        Averaging::Sum => sum,
        Averaging::Mean => sum / env.horizon as f64,
    })
}

/// Absolute difference between mean true return and mean model return under
/// the same policy.
///
/// For data-backed models the environment side is the recorded return of the
/// reference set itself and the model side rolls along those references
/// (`b_eval` rollouts cycling through them); pure models are compared against
/// `b_eval` fresh environment rollouts. With a deterministic policy and
/// `b_eval` equal to the reference count, a corrected model reproduces the
/// references and the error is exactly zero.
pub fn on_policy_error<P: Policy, R: Rng>(
    env: &LinearGaussianEnv,
    reward: &RewardSpec,
    model: &SimModel<'_>,
    policy: &P,
    b_eval: usize,
    averaging: Averaging,
    rng: &mut R,
) -> LabResult<f64> {
    if b_eval == 0 {
        return Err(LabError::InvalidArgument {
            context: "on_policy_error",
            message: "b_eval must be >= 1".into(),
        });
    }
    let env_mean = match model {
        SimModel::Replay(refs) | SimModel::Opc { refs, .. } => {
            if refs.is_empty() {
                return Err(LabError::EmptyInput {
                    context: "on_policy_error reference set",
                });
            }
            let mut sum = 0.0;
            for traj in refs.iter() {
                sum += discounted_return(traj, env.gamma, averaging)?;
            }
            sum / refs.len() as f64
        }
        _ => {
            let mut sum = 0.0;
            for _ in 0..b_eval {
                let traj = rollout_env(env, reward, policy, rng)?;
                sum += discounted_return(&traj, env.gamma, averaging)?;
            }
            sum / b_eval as f64
        }
    };

    let mut sum = 0.0;
    for i in 0..b_eval {
        let traj = match model {
            SimModel::Replay(refs) | SimModel::Opc { refs, .. } => {
                let b = i % refs.len();
                let s0 = refs[b].transitions[0].state.clone();
                model_rollout(model, policy, reward, &s0, refs[b].len(), (b, 0), rng)?
            }
            _ => {
                let s0 = match &env.init {
                    crate::env::InitState::Fixed(s0) => s0.clone(),
                    crate::env::InitState::Gaussian { mean, cov } => {
                        let sqrt = psd_sqrt(cov, "env initial-state covariance")?;
                        sample_gaussian(mean, &sqrt, rng)
                    }
                };
                model_rollout(model, policy, reward, &s0, env.horizon, (0, 0), rng)?
            }
        };
        sum += discounted_return(&traj, env.gamma, averaging)?;
    }
    let model_mean = sum / b_eval as f64;
    Ok((env_mean - model_mean).abs())
}

/// One row of the reference-count convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub b: usize,
    pub mean_abs_error: f64,
    pub tail_prob: f64,
    pub estimator_variance: f64,
}

/// Measures how fast the mean of `B` recorded reference returns converges to
/// the exact expected return as `B` grows.
///
/// For deterministic policies this mean is exactly the corrected model's
/// on-policy return estimate, since corrected rollouts reproduce the
/// references. `epsilon` is the tail threshold (default `0.05 * |eta|`).
pub fn reference_count_convergence<R: Rng>(
    env: &LinearGaussianEnv,
    reward: &RewardSpec,
    policy: &GaussianLinearPolicy,
    b_grid: &[usize],
    trials: usize,
    epsilon: Option<f64>,
    averaging: Averaging,
    rng: &mut R,
) -> LabResult<Vec<ConvergenceRow>> {
    if policy.beta != 0.0 {
        return Err(LabError::InvalidArgument {
            context: "reference_count_convergence",
            message: "the study is defined for deterministic policies (beta = 0)".into(),
        });
    }
    if trials < 2 || b_grid.is_empty() || b_grid.iter().any(|b| *b == 0) {
        return Err(LabError::InvalidArgument {
            context: "reference_count_convergence",
            message: "need trials >= 2 and a nonempty grid of positive B".into(),
        });
    }
    let eta = expected_return_linear(env, policy, reward, averaging)?;
    let eps = epsilon.unwrap_or(0.05 * eta.abs());

    let mut rows = Vec::with_capacity(b_grid.len());
    for &b in b_grid {
        let mut abs_err_sum = 0.0;
        let mut exceed = 0_usize;
        let mut estimates = Vec::with_capacity(trials);
        for _ in 0..trials {
            let mut sum = 0.0;
            for _ in 0..b {
                let traj = rollout_env(env, reward, policy, rng)?;
                sum += discounted_return(&traj, env.gamma, averaging)?;
            }
            let estimate = sum / b as f64;
            let err = (eta - estimate).abs();
            abs_err_sum += err;
            if err > eps {
                exceed += 1;
            }
            estimates.push(estimate);
        }
        let mean_est: f64 = estimates.iter().sum::<f64>() / trials as f64;
        let variance = estimates
            .iter()
            .map(|e| (e - mean_est) * (e - mean_est))
            .sum::<f64>()
            / (trials - 1) as f64;
        rows.push(ConvergenceRow {
            b,
            mean_abs_error: abs_err_sum / trials as f64,
            tail_prob: exceed as f64 / trials as f64,
            estimator_variance: variance,
        });
    }
    Ok(rows)
}

fn box_corners(bx: &StateBox) -> Vec<StateVec> {
    let n = bx.lower.len();
    (0..(1_usize << n))
        .map(|mask| {
            StateVec::from_fn(n, |i, _| {
                if mask >> i & 1 == 1 {
                    bx.upper[i]
                } else {
                    bx.lower[i]
                }
            })
        })
        .collect()
}

/// Smoothness constants of a linear model, linear-Gaussian policy, and reward
/// over an optional state box.
///
/// `L_f` is the spectral norm of the stacked effective `[A B]`; `L_pi` is the
/// spectral norm of the gain, which bounds the policy's mean shift and is
/// taken as its distributional smoothness since the covariance is
/// state-independent; `sigma_pi_bar = sqrt(trace(beta^2 sigma))`. The bell
/// reward has the closed-form gradient maximum `sqrt(2) e^{-1/2} / sigma_r`;
/// the quadratic-family rewards attain their gradient maximum on a box corner
/// and are rejected without a box.
pub fn lipschitz_profile_linear(
    model: &LearnedLinearModel,
    policy: &GaussianLinearPolicy,
    reward: &RewardSpec,
    gamma: f64,
    horizon: usize,
    state_box: Option<&StateBox>,
) -> LabResult<LipschitzProfile> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(LabError::InvalidArgument {
            context: "lipschitz_profile_linear",
            message: format!("gamma = {gamma} must lie in [0, 1)"),
        });
    }
    if policy.beta < 0.0 {
        return Err(LabError::InvalidArgument {
            context: "lipschitz_profile_linear",
            message: format!("beta = {} must be nonnegative", policy.beta),
        });
    }
    let a_eff = model.effective_a();
    let b_eff = model.effective_b();
    let n_s = a_eff.nrows();
    let n_a = b_eff.ncols();
    let mut joint = Mat::zeros(n_s, n_s + n_a);
    joint.view_mut((0, 0), (n_s, n_s)).copy_from(&a_eff);
    joint.view_mut((0, n_s), (n_s, n_a)).copy_from(&b_eff);

    let corner_max = |f: &dyn Fn(&StateVec) -> f64| -> LabResult<f64> {
        let bx = state_box.ok_or(LabError::InvalidArgument {
            context: "lipschitz_profile_linear",
            message: "this reward's gradient is unbounded without a state box".into(),
        })?;
        Ok(box_corners(bx)
            .iter()
            .map(f)
            .fold(0.0_f64, |acc, v| acc.max(v)))
    };
    let l_r = match reward {
        RewardSpec::ExponentialBell { sigma_r } => {
            if *sigma_r <= 0.0 {
                return Err(LabError::InvalidArgument {
                    context: "lipschitz_profile_linear",
                    message: format!("sigma_r = {sigma_r} must be positive"),
                });
            }
            2.0_f64.sqrt() * (-0.5_f64).exp() / sigma_r
        }
        RewardSpec::NegativeStateNorm => corner_max(&|s: &StateVec| 2.0 * s.norm())?,
        RewardSpec::QuadraticTracking { reference } => {
            if reference.is_empty() {
                return Err(LabError::EmptyInput {
                    context: "lipschitz_profile_linear tracking reference",
                });
            }
            let mut best = 0.0_f64;
            for target in reference {
                best = best.max(corner_max(&|s: &StateVec| (target - s).norm())?);
            }
            best
        }
    };
    Ok(LipschitzProfile {
        l_f: spectral_norm(&joint),
        l_r,
        l_pi: spectral_norm(&policy.theta),
        sigma_pi_bar: (policy.beta * policy.beta * policy.sigma.trace()).sqrt(),
        gamma,
        t: horizon,
        n_a,
    })
}

/// Paired Monte Carlo estimate of the true return and the corrected-model
/// return under the same policy, where the corrected chain transitions with
/// the true dynamics at the reference pair plus the mean correction.
///
/// Each rollout advances a reference trajectory on the true environment and a
/// corrected trajectory that reuses the reference's transition draw, so the
/// estimates are coupled and a deterministic policy makes them coincide
/// bitwise. The two chains query the policy independently: the gap this
/// estimator measures is driven entirely by policy stochasticity, and
/// sharing action noise would collapse the corrected chain onto the
/// reference.
pub fn paired_opc_gap<R: Rng>(
    env: &LinearGaussianEnv,
    reward: &RewardSpec,
    mean: &MeanModel<'_>,
    policy: &GaussianLinearPolicy,
    n_rollouts: usize,
    averaging: Averaging,
    rng: &mut R,
) -> LabResult<(f64, f64)> {
    if n_rollouts == 0 {
        return Err(LabError::InvalidArgument {
            context: "paired_opc_gap",
            message: "n_rollouts must be >= 1".into(),
        });
    }
    env.validate()?;
    let sigma_sqrt = if policy.beta == 0.0 {
        None
    } else {
        Some(psd_sqrt(&policy.sigma, "policy covariance")? * policy.beta)
    };
    let init_sqrt = match &env.init {
        crate::env::InitState::Fixed(_) => None,
        crate::env::InitState::Gaussian { cov, .. } => {
            Some(psd_sqrt(cov, "env initial-state covariance")?)
        }
    };

    let mut ref_sum = 0.0;
    let mut opc_sum = 0.0;
    for _ in 0..n_rollouts {
        let s0 = match &env.init {
            crate::env::InitState::Fixed(s0) => s0.clone(),
            crate::env::InitState::Gaussian { mean, .. } => {
                sample_gaussian(mean, init_sqrt.as_ref().expect("gaussian init"), rng)
            }
        };
        let mut s_ref = s0.clone();
        let mut s_opc = s0;
        let mut ref_return = 0.0;
        let mut opc_return = 0.0;
        for t in 0..env.horizon {
            let a_ref_mean = &policy.theta * &s_ref;
            let a_opc_mean = &policy.theta * &s_opc;
            let (a_ref, a_opc) = match &sigma_sqrt {
                None => (a_ref_mean, a_opc_mean),
                Some(sqrt) => {
                    let draw = |rng: &mut R| -> StateVec {
                        sqrt * StateVec::from_fn(env.n_a(), |_, _| rng.sample(StandardNormal))
                    };
                    let ref_shift = draw(rng);
                    let opc_shift = draw(rng);
                    (a_ref_mean + ref_shift, a_opc_mean + opc_shift)
                }
            };
            let r_ref = reward.reward(t, &s_ref)?;
            let r_opc = reward.reward(t, &s_opc)?;
            match averaging {
                Averaging::Sum => {
                    let w = env.gamma.powi(t as i32);
                    ref_return += w * r_ref;
                    opc_return += w * r_opc;
                }
                Averaging::Mean => {
                    ref_return += r_ref;
                    opc_return += r_opc;
                }
            }
            let drawn = env_step(env, &s_ref, &a_ref, rng)?;
            let correction = mean.mean(t, &s_opc, &a_opc)? - mean.mean(t, &s_ref, &a_ref)?;
            s_opc = &drawn + correction;
            s_ref = drawn;
        }
        if averaging == Averaging::Mean {
            ref_return /= env.horizon as f64;
            opc_return /= env.horizon as f64;
        }
        ref_sum += ref_return;
        opc_sum += opc_return;
    }
    Ok((
        ref_sum / n_rollouts as f64,
        opc_sum / n_rollouts as f64,
    ))
}
