//! Simulated rollouts and the model-based learning loop.
//!
//! Simulated experience is generated by short branches: each branch picks a
//! recorded reference trajectory and a start index inside it, then walks the
//! chosen model forward with fresh policy actions while staying aligned with
//! the reference time axis. Branches end at the branch horizon, at a terminal
//! reference transition, or when the reference data runs out; generation
//! continues until the transition budget is met and the buffer is truncated
//! to exactly that size.
//!
//! The learning loop alternates on-environment data collection, model
//! construction over a retention window, and a few finite-difference ascent
//! steps on the mean simulated reward. Gradient evaluations at perturbed
//! gains reuse one derived random stream per step, so pairs of evaluations
//! see common branch starts and action noise.

use rand::Rng;

use crate::env::{
    discounted_return, env_step, rollout_env, Averaging, LinearGaussianEnv, RewardSpec,
    Trajectory, Transition,
};
use crate::error::{LabError, LabResult};
use crate::models::{
    buffer_retain, fit_least_squares, opc_step, replay_step, LearnedLinearModel, MeanModel,
    OpcModel, ReplayBuffer, ReplayModel,
};
use crate::policy::{fd_policy_gradient, improve_policy, GaussianLinearPolicy, Policy};
use crate::rng::stream;
use crate::{ActionVec, Mat, StateVec};

/// Stream tag for on-environment data collection inside the loop.
const STREAM_ENV: u64 = 1;
/// Stream tag for simulated improvement evaluations inside the loop.
const STREAM_IMPROVE: u64 = 2;

/// Branch horizon and total simulated-transition budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchedRolloutConfig {
    pub horizon: usize,
    pub budget: usize,
}

/// One simulated transition plus its provenance: which branch produced it and
/// which reference transition it was aligned with.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEntry {
    pub branch: usize,
    pub source_b: usize,
    pub source_t: usize,
    pub step: usize,
    pub transition: Transition,
}

/// Simulated experience, truncated to the requested budget. `generated`
/// counts the transitions produced before truncation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimBuffer {
    pub entries: Vec<SimEntry>,
    pub generated: usize,
}

impl SimBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean reward over all stored transitions (0 when empty).
    pub fn mean_reward(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.entries.iter().map(|e| e.transition.reward).sum();
        sum / self.entries.len() as f64
    }
}

/// Transition generator used for simulated experience.
#[derive(Debug, Clone, Copy)]
pub enum SimModel<'a> {
    /// The true environment itself (baseline and equivalence checks).
    Env(&'a LinearGaussianEnv),
    /// A mean model rolled out open-loop.
    Mean(MeanModel<'a>),
    /// Recorded next states, ignoring queried actions.
    Replay(&'a [Trajectory]),
    /// A mean model corrected along the recorded references.
    Opc {
        mean: MeanModel<'a>,
        refs: &'a [Trajectory],
    },
}

impl SimModel<'_> {
    /// One simulated step aligned with reference transition `(b, t)`.
    pub fn step<R: Rng>(
        &self,
        t: usize,
        b: usize,
        s: &StateVec,
        a: &ActionVec,
        rng: &mut R,
    ) -> LabResult<StateVec> {
        match self {
            SimModel::Env(env) => env_step(env, s, a, rng),
            SimModel::Mean(m) => m.mean(t, s, a),
            SimModel::Replay(refs) => replay_step(&ReplayModel { refs }, t, b),
            SimModel::Opc { mean, refs } => opc_step(&OpcModel { mean: *mean, refs }, s, a, t, b),
        }
    }

    fn is_data_backed(&self) -> bool {
        matches!(self, SimModel::Replay(_) | SimModel::Opc { .. })
    }
}

fn reference_flag(refs: &[Trajectory], b: usize, t: usize) -> bool {
    refs.get(b)
        .and_then(|traj| traj.transitions.get(t))
        .is_some_and(|tr| tr.terminal)
}

/// Generates branched simulated experience over the reference set `refs`.
///
/// Data-backed model variants must be built over the same reference set that
/// is passed here for branch sampling. Branch starts are uniform over
/// trajectories and over start indices that leave room for a full branch;
/// trajectories shorter than the branch horizon yield truncated branches.
pub fn branched_rollouts<P: Policy, R: Rng>(
    model: &SimModel<'_>,
    refs: &[Trajectory],
    policy: &P,
    reward: &RewardSpec,
    cfg: &BranchedRolloutConfig,
    rng: &mut R,
) -> LabResult<SimBuffer> {
    if cfg.horizon == 0 || cfg.budget == 0 {
        return Err(LabError::InvalidArgument {
            context: "branched_rollouts",
            message: format!(
                "branch horizon {} and budget {} must both be positive",
                cfg.horizon, cfg.budget
            ),
        });
    }
    if refs.is_empty() || refs.iter().any(|t| t.is_empty()) {
        return Err(LabError::EmptyInput {
            context: "branched_rollouts reference set",
        });
    }
    let longest = refs.iter().map(|t| t.len()).max().unwrap_or(0);
    if cfg.horizon > longest {
        return Err(LabError::InvalidArgument {
            context: "branched_rollouts",
            message: format!(
                "branch horizon {} exceeds the longest retained trajectory ({longest})",
                cfg.horizon
            ),
        });
    }

    let mut entries = Vec::with_capacity(cfg.budget + cfg.horizon);
    let mut branch = 0;
    while entries.len() < cfg.budget {
        let b = rng.random_range(0..refs.len());
        let len_b = refs[b].len();
        let t0 = if len_b >= cfg.horizon {
            rng.random_range(0..=len_b - cfg.horizon)
        } else {
            rng.random_range(0..len_b)
        };
        let mut s = refs[b].transitions[t0].state.clone();
        for h in 0..cfg.horizon {
            let t = t0 + h;
            if t >= len_b {
                break;
            }
            let a = policy.act(&s, rng)?;
            let next = model.step(t, b, &s, &a, rng)?;
            let r = reward.reward(t, &s)?;
            let mut terminal = reference_flag(refs, b, t);
            if let SimModel::Env(env) = model {
                if let Some(bx) = &env.terminal_box {
                    terminal = terminal || !bx.contains(&next);
                }
            }
            entries.push(SimEntry {
                branch,
                source_b: b,
                source_t: t,
                step: h,
                transition: Transition {
                    t,
                    state: s,
                    action: a,
                    next_state: next.clone(),
                    reward: r,
                    terminal,
                },
            });
            if terminal {
                break;
            }
            s = next;
        }
        branch += 1;
    }
    let generated = entries.len();
    entries.truncate(cfg.budget);
    Ok(SimBuffer { entries, generated })
}

/// Rolls a model forward from `s0`, aligned with reference trajectory `b`
/// starting at index `t0`.
///
/// Data-backed models stop early when the reference data runs out; pure
/// models run the full horizon. The produced transitions carry the absolute
/// reference time `t0 + step`.
pub fn model_rollout<P: Policy, R: Rng>(
    model: &SimModel<'_>,
    policy: &P,
    reward: &RewardSpec,
    s0: &StateVec,
    horizon: usize,
    start: (usize, usize),
    rng: &mut R,
) -> LabResult<Trajectory> {
    let (b, t0) = start;
    let mut s = s0.clone();
    let mut transitions = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let t = t0 + h;
        if model.is_data_backed() {
            let available = match model {
                SimModel::Replay(refs) | SimModel::Opc { refs, .. } => {
                    refs.get(b).is_some_and(|traj| t < traj.len())
                }
                _ => unreachable!(),
            };
            if !available {
                break;
            }
        }
        let a = policy.act(&s, rng)?;
        let next = model.step(t, b, &s, &a, rng)?;
        let r = reward.reward(t, &s)?;
        let mut terminal = false;
        if let SimModel::Env(env) = model {
            if let Some(bx) = &env.terminal_box {
                terminal = !bx.contains(&next);
            }
        }
        if let SimModel::Replay(refs) | SimModel::Opc { refs, .. } = model {
            terminal = reference_flag(refs, b, t);
        }
        transitions.push(Transition {
            t,
            state: s,
            action: a,
            next_state: next.clone(),
            reward: r,
            terminal,
        });
        if terminal {
            break;
        }
        s = next;
    }
    Ok(Trajectory {
        iteration: 0,
        rollout: 0,
        transitions,
    })
}

/// How the loop obtains its mean model each iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum LoopModel {
    /// The true matrices plus a fixed injected error; nothing is fitted.
    /// This is the right mode for deterministic linear policies, whose data
    /// make the action regressor collinear with the state by construction.
    FixedNominal { delta_a: Mat, delta_b: Mat },
    /// Refit by least squares on the retention window every iteration, then
    /// add the injected error.
    Refit {
        ridge: f64,
        delta_a: Mat,
        delta_b: Mat,
    },
}

/// Which simulated-transition generator the improvement steps use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionKind {
    Plain,
    Opc,
    Replay,
}

/// Policy-improvement settings: ascent rate, trust region, step count, and
/// finite-difference step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImproveCfg {
    pub alpha: f64,
    pub eps_pi: f64,
    pub steps: usize,
    pub fd_step: f64,
}

/// Full learning-loop configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopCfg {
    pub iterations: usize,
    /// On-environment rollouts collected per iteration.
    pub env_rollouts: usize,
    /// Number of most recent iterations retained for model and references.
    pub retain: usize,
    pub sim: BranchedRolloutConfig,
    pub model: LoopModel,
    pub correction: CorrectionKind,
    pub improve: ImproveCfg,
    pub return_mode: Averaging,
}

/// Per-iteration log entry: the gain that was rolled out, its measured true
/// return, and whether improvement was abandoned on non-finite evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta: Mat,
    pub true_return: f64,
    pub flagged: bool,
}

/// Loop output: the per-iteration log and the final improved policy.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub records: Vec<IterationRecord>,
    pub final_policy: GaussianLinearPolicy,
}

/// Runs the model-based learning loop: collect on-environment data, build the
/// model over the retention window, take a few clipped finite-difference
/// ascent steps on the mean simulated reward, repeat.
///
/// All randomness derives from `seed`, so equal inputs reproduce the outcome
/// bitwise.
pub fn mbrl_loop(
    env: &LinearGaussianEnv,
    reward: &RewardSpec,
    policy0: &GaussianLinearPolicy,
    cfg: &LoopCfg,
    seed: u64,
) -> LabResult<LoopOutcome> {
    if cfg.iterations == 0 || cfg.env_rollouts == 0 {
        return Err(LabError::InvalidArgument {
            context: "mbrl_loop",
            message: "iterations and env_rollouts must be positive".into(),
        });
    }
    let mut policy = policy0.clone();
    let mut buffer = ReplayBuffer::default();
    let mut records = Vec::with_capacity(cfg.iterations);

    for n in 0..cfg.iterations {
        let mut return_sum = 0.0;
        for i in 0..cfg.env_rollouts {
            let mut rng = stream(seed, &[STREAM_ENV, n as u64, i as u64]);
            let mut traj = rollout_env(env, reward, &policy, &mut rng)?;
            traj.iteration = n;
            traj.rollout = i;
            return_sum += discounted_return(&traj, env.gamma, cfg.return_mode)?;
            buffer.push(traj);
        }
        let true_return = return_sum / cfg.env_rollouts as f64;
        buffer = buffer_retain(&buffer, n, cfg.retain)?;
        let window = &buffer.trajectories;

        let model = match &cfg.model {
            LoopModel::FixedNominal { delta_a, delta_b } => {
                LearnedLinearModel::nominal(env.a.clone(), env.b.clone())
                    .with_injected(delta_a.clone(), delta_b.clone())
            }
            LoopModel::Refit {
                ridge,
                delta_a,
                delta_b,
            } => {
                let data: Vec<&Transition> = window
                    .iter()
                    .flat_map(|t| t.transitions.iter())
                    .collect();
                fit_least_squares(&data, *ridge)?
                    .model
                    .with_injected(delta_a.clone(), delta_b.clone())
            }
        };

        let mut theta = policy.theta.clone();
        let mut flagged = false;
        for step in 0..cfg.improve.steps {
            let objective = |theta_try: &Mat| -> LabResult<f64> {
                let trial = GaussianLinearPolicy {
                    theta: theta_try.clone(),
                    sigma: policy.sigma.clone(),
                    beta: policy.beta,
                };
                let mean = MeanModel::Learned(&model);
                let sim_model = match cfg.correction {
                    CorrectionKind::Plain => SimModel::Mean(mean),
                    CorrectionKind::Opc => SimModel::Opc {
                        mean,
                        refs: window,
                    },
                    CorrectionKind::Replay => SimModel::Replay(window),
                };
                let mut rng = stream(seed, &[STREAM_IMPROVE, n as u64, step as u64]);
                let sim = branched_rollouts(&sim_model, window, &trial, reward, &cfg.sim, &mut rng)?;
                Ok(sim.mean_reward())
            };
            match fd_policy_gradient(objective, &theta, cfg.improve.fd_step) {
                Ok(grad) => {
                    theta = improve_policy(&theta, &grad, cfg.improve.alpha, cfg.improve.eps_pi)?;
                }
                Err(LabError::NonFinite { .. }) => {
                    flagged = true;
                    break;
                }
                Err(other) => return Err(other),
            }
        }

        records.push(IterationRecord {
            iteration: n,
            theta: policy.theta.clone(),
            true_return,
            flagged,
        });
        policy.theta = theta;
    }
    Ok(LoopOutcome {
        records,
        final_policy: policy,
    })
}
