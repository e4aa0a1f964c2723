//! Analytic MDP environments and returns.
//!
//! The environment family is linear-Gaussian: `s' = A s + B a + w` with
//! `w ~ N(0, noise_cov)`. The deterministic scalar system of the gradient
//! studies and the stochastic double integrator of the distribution studies
//! are both instances. Rewards are evaluated on the current state `s_t`, so a
//! length-T trajectory carries rewards for `t = 0..T-1`.

use rand::Rng;

use crate::error::{LabError, LabResult};
use crate::linalg::{psd_sqrt, sample_gaussian};
use crate::policy::Policy;
use crate::{ActionVec, Mat, StateVec};

/// Classification margin for scalar closed-loop stability: gains with
/// magnitude in `(1 - MARGIN, 1]` count as marginally stable and are excluded
/// from gradient studies along with the unstable ones.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Initial-state specification: a fixed vector or a Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub enum InitState {
    Fixed(StateVec),
    Gaussian { mean: StateVec, cov: Mat },
}

impl InitState {
    /// State dimension implied by the specification.
    pub fn dim(&self) -> usize {
        match self {
            InitState::Fixed(s) => s.len(),
            InitState::Gaussian { mean, .. } => mean.len(),
        }
    }
}

/// Axis-aligned state box used as an optional terminal predicate: a next
/// state outside the box ends the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    pub lower: StateVec,
    pub upper: StateVec,
}

impl StateBox {
    pub fn contains(&self, s: &StateVec) -> bool {
        s.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }
}

/// Linear-Gaussian environment `s' = A s + B a + w`, `w ~ N(0, noise_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianEnv {
    pub a: Mat,
    pub b: Mat,
    pub noise_cov: Mat,
    pub init: InitState,
    /// Episode horizon `T >= 1` (number of transitions).
    pub horizon: usize,
    /// Discount factor in `[0, 1]`.
    pub gamma: f64,
    /// Optional terminal predicate; `None` means episodes always run to `T`.
    pub terminal_box: Option<StateBox>,
}

impl LinearGaussianEnv {
    pub fn n_s(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_a(&self) -> usize {
        self.b.ncols()
    }

    /// Checks internal dimension and parameter consistency.
    pub fn validate(&self) -> LabResult<()> {
        if self.a.nrows() != self.a.ncols() {
            return Err(LabError::DimensionMismatch {
                context: "env A matrix",
                expected: self.a.nrows(),
                actual: self.a.ncols(),
            });
        }
        if self.b.nrows() != self.n_s() {
            return Err(LabError::DimensionMismatch {
                context: "env B matrix rows",
                expected: self.n_s(),
                actual: self.b.nrows(),
            });
        }
        if self.init.dim() != self.n_s() {
            return Err(LabError::DimensionMismatch {
                context: "env initial state",
                expected: self.n_s(),
                actual: self.init.dim(),
            });
        }
        if self.horizon == 0 {
            return Err(LabError::InvalidArgument {
                context: "env horizon",
                message: "horizon must be >= 1".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(LabError::InvalidArgument {
                context: "env gamma",
                message: format!("discount {} outside [0, 1]", self.gamma),
            });
        }
        psd_sqrt(&self.noise_cov, "env noise covariance")?;
        Ok(())
    }

    /// Square root of the noise covariance, or `None` for a zero matrix.
    ///
    /// Rollouts draw no random numbers in the noise-free case, so a
    /// deterministic environment consumes the same stream positions as a
    /// model rollout of equal length.
    pub fn noise_sqrt(&self) -> LabResult<Option<Mat>> {
        if self.noise_cov.iter().all(|v| *v == 0.0) {
            return Ok(None);
        }
        psd_sqrt(&self.noise_cov, "env noise covariance").map(Some)
    }
}

/// Reward functions over the current state.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardSpec {
    /// Bell reward `exp(-(||s|| / sigma_r)^2)`, maximal at the origin.
    ExponentialBell { sigma_r: f64 },
    /// Tracking reward `-0.5 * ||reference[t] - s||^2`.
    QuadraticTracking { reference: Vec<StateVec> },
    /// `-||s||^2`.
    NegativeStateNorm,
}

impl RewardSpec {
    /// Reward of state `s` at time `t`.
    pub fn reward(&self, t: usize, s: &StateVec) -> LabResult<f64> {
        match self {
            RewardSpec::ExponentialBell { sigma_r } => {
                if *sigma_r <= 0.0 {
                    return Err(LabError::InvalidArgument {
                        context: "bell reward width",
                        message: format!("sigma_r = {sigma_r} must be positive"),
                    });
                }
                let z = s.norm() / sigma_r;
                Ok((-z * z).exp())
            }
            RewardSpec::QuadraticTracking { reference } => {
                let target = reference.get(t).ok_or(LabError::OutOfData { t, b: 0 })?;
                Ok(-0.5 * (target - s).norm_squared())
            }
            RewardSpec::NegativeStateNorm => Ok(-s.norm_squared()),
        }
    }
}

/// One recorded step `(t, s_t, a_t, s_{t+1}, r_t, terminal)`.
///
/// `terminal = true` means `next_state` is a terminal state and the episode
/// ended after this transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub t: usize,
    pub state: StateVec,
    pub action: ActionVec,
    pub next_state: StateVec,
    pub reward: f64,
    pub terminal: bool,
}

/// One episode: consecutive transitions from `t = 0`, tagged with the
/// learning iteration `n` and the rollout index `b` within that iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub iteration: usize,
    pub rollout: usize,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// State at time `t`, valid for `t in [0, len]` (the final entry is the
    /// last next-state).
    pub fn state_at(&self, t: usize) -> Option<&StateVec> {
        if t < self.len() {
            Some(&self.transitions[t].state)
        } else if t == self.len() && t > 0 {
            Some(&self.transitions[t - 1].next_state)
        } else {
            None
        }
    }

    /// Sequence of rewards in time order.
    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|tr| tr.reward).collect()
    }
}

/// Return aggregation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    /// Discounted sum over time.
    Sum,
    /// Time-averaged mean reward (discount ignored).
    Mean,
}

/// One environment step `A s + B a + w`.
pub fn env_step<R: Rng>(
    env: &LinearGaussianEnv,
    s: &StateVec,
    a: &ActionVec,
    rng: &mut R,
) -> LabResult<StateVec> {
    if s.len() != env.n_s() {
        return Err(LabError::DimensionMismatch {
            context: "env_step state",
            expected: env.n_s(),
            actual: s.len(),
        });
    }
    if a.len() != env.n_a() {
        return Err(LabError::DimensionMismatch {
            context: "env_step action",
            expected: env.n_a(),
            actual: a.len(),
        });
    }
    let mean = &env.a * s + &env.b * a;
    Ok(match env.noise_sqrt()? {
        Some(sqrt) => sample_gaussian(&mean, &sqrt, rng),
        None => mean,
    })
}

/// Rolls the policy on the true environment for up to `T` steps.
pub fn rollout_env<P: Policy, R: Rng>(
    env: &LinearGaussianEnv,
    reward: &RewardSpec,
    policy: &P,
    rng: &mut R,
) -> LabResult<Trajectory> {
    env.validate()?;
    let noise_sqrt = env.noise_sqrt()?;
    let mut s = match &env.init {
        InitState::Fixed(s0) => s0.clone(),
        InitState::Gaussian { mean, cov } => {
            let sqrt = psd_sqrt(cov, "env initial-state covariance")?;
            sample_gaussian(mean, &sqrt, rng)
        }
    };
    let mut transitions = Vec::with_capacity(env.horizon);
    for t in 0..env.horizon {
        let a = policy.act(&s, rng)?;
        let mean = &env.a * &s + &env.b * &a;
        let next = match &noise_sqrt {
            Some(sqrt) => sample_gaussian(&mean, sqrt, rng),
            None => mean,
        };
        let r = reward.reward(t, &s)?;
        let terminal = env
            .terminal_box
            .as_ref()
            .is_some_and(|bx| !bx.contains(&next));
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

/// Discounted or time-averaged return of a trajectory.
pub fn discounted_return(traj: &Trajectory, gamma: f64, averaging: Averaging) -> LabResult<f64> {
    if traj.is_empty() {
        return Err(LabError::EmptyInput {
            context: "discounted_return",
        });
    }
    Ok(match averaging {
        Averaging::Sum => traj
            .transitions
            .iter()
            .map(|tr| gamma.powi(tr.t as i32) * tr.reward)
            .sum(),
        Averaging::Mean => {
            traj.transitions.iter().map(|tr| tr.reward).sum::<f64>() / traj.len() as f64
        }
    })
}

/// Scalar closed-loop stability test `|A + dA + (B + dB) theta| <= 1 - margin`.
pub fn closed_loop_stable(a: f64, da: f64, b: f64, db: f64, theta: f64) -> bool {
    (a + da + (b + db) * theta).abs() <= 1.0 - STABILITY_MARGIN
}

/// Stochastic double integrator: position/velocity state, velocity-level
/// actuation and noise.
pub fn double_integrator() -> LinearGaussianEnv {
    let dt = 0.1;
    LinearGaussianEnv {
        a: Mat::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
        b: Mat::from_row_slice(2, 1, &[0.0, dt]),
        noise_cov: Mat::from_diagonal(&StateVec::from_row_slice(&[0.0, 0.01])),
        init: InitState::Fixed(StateVec::from_row_slice(&[1.0, 0.0])),
        horizon: 30,
        gamma: 0.9,
        terminal_box: None,
    }
}

/// Scalar environment `s' = a s + b u + w` with fixed start.
pub fn scalar_env(
    a: f64,
    b: f64,
    s0: f64,
    noise_var: f64,
    horizon: usize,
    gamma: f64,
) -> LinearGaussianEnv {
    LinearGaussianEnv {
        a: Mat::from_element(1, 1, a),
        b: Mat::from_element(1, 1, b),
        noise_cov: Mat::from_element(1, 1, noise_var),
        init: InitState::Fixed(StateVec::from_element(1, s0)),
        horizon,
        gamma,
        terminal_box: None,
    }
}

/// The deterministic scalar study system: `A = B = s0 = 1`, horizon 60,
/// time-averaged bell reward with width 0.05.
pub fn scalar_study_env() -> (LinearGaussianEnv, RewardSpec) {
    (
        scalar_env(1.0, 1.0, 1.0, 0.0, 60, 1.0),
        RewardSpec::ExponentialBell { sigma_r: 0.05 },
    )
}
