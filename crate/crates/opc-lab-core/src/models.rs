//! Transition models: least-squares linear fits, time-indexed offset models,
//! bootstrap ensembles, the replay-buffer model, and the on-policy correction
//! (OPC) wrappers.
//!
//! The OPC wrapper turns any deterministic mean predictor `f` into a model
//! that follows recorded data: stepping from `(s, a)` against the recorded
//! transition `(sbar, abar, sbar')` yields `sbar' + f(s, a) - f(sbar, abar)`.
//! Querying exactly the recorded state-action pair makes the correction
//! cancel, so recorded trajectories are reproduced without model error; the
//! generalized variant replaces `sbar'` with a fresh draw from the true
//! transition distribution and is used for bound evaluation only.

use rand::Rng;

use crate::env::{env_step, LinearGaussianEnv, Trajectory, Transition};
use crate::error::{LabError, LabResult};
use crate::{ActionVec, Mat, StateVec};

/// Relative singular-value threshold for declaring a regressor rank-deficient.
const RANK_TOL: f64 = 1e-10;

/// Linear-Gaussian mean model `s' = (A_hat + dA) s + (B_hat + dB) a + d_hat`.
///
/// `delta_a`/`delta_b` are additive injected errors for controlled-mismatch
/// studies; zero matrices mean the fitted (or nominal) model is used as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedLinearModel {
    pub a_hat: Mat,
    pub b_hat: Mat,
    pub d_hat: StateVec,
    pub delta_a: Mat,
    pub delta_b: Mat,
}

impl LearnedLinearModel {
    /// Model with the given matrices, zero offset, and no injected error.
    pub fn nominal(a: Mat, b: Mat) -> Self {
        let n_s = a.nrows();
        let n_a = b.ncols();
        LearnedLinearModel {
            a_hat: a,
            b_hat: b,
            d_hat: StateVec::zeros(n_s),
            delta_a: Mat::zeros(n_s, n_s),
            delta_b: Mat::zeros(n_s, n_a),
        }
    }

    /// Adds injected error matrices on top of the current ones.
    pub fn with_injected(mut self, delta_a: Mat, delta_b: Mat) -> Self {
        self.delta_a = delta_a;
        self.delta_b = delta_b;
        self
    }

    /// Effective transition matrix including injected error.
    pub fn effective_a(&self) -> Mat {
        &self.a_hat + &self.delta_a
    }

    /// Effective input matrix including injected error.
    pub fn effective_b(&self) -> Mat {
        &self.b_hat + &self.delta_b
    }

    /// Mean prediction for `(s, a)`.
    pub fn mean(&self, s: &StateVec, a: &ActionVec) -> StateVec {
        self.effective_a() * s + self.effective_b() * a + &self.d_hat
    }
}

/// Fixed-matrix model with a learned time-dependent offset
/// `s' = A s + B a + d_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeOffsetModel {
    pub a: Mat,
    pub b: Mat,
    pub offsets: Vec<StateVec>,
}

impl TimeOffsetModel {
    /// Mean prediction at time `t`.
    pub fn mean_at(&self, t: usize, s: &StateVec, a: &ActionVec) -> LabResult<StateVec> {
        let d = self.offsets.get(t).ok_or(LabError::OutOfData { t, b: 0 })?;
        Ok(&self.a * s + &self.b * a + d)
    }
}

/// Ensemble of linear models (bootstrap-fitted or hand-built).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<LearnedLinearModel>,
}

impl EnsembleModel {
    /// Ensemble-mean prediction (average of member means).
    pub fn mean(&self, s: &StateVec, a: &ActionVec) -> LabResult<StateVec> {
        if self.members.is_empty() {
            return Err(LabError::EmptyInput {
                context: "ensemble mean",
            });
        }
        let mut acc = StateVec::zeros(self.members[0].a_hat.nrows());
        for m in &self.members {
            acc += m.mean(s, a);
        }
        Ok(acc / self.members.len() as f64)
    }
}

/// Deterministic mean predictor used by rollouts and OPC wrappers.
#[derive(Debug, Clone, Copy)]
pub enum MeanModel<'a> {
    Learned(&'a LearnedLinearModel),
    Offsets(&'a TimeOffsetModel),
    Ensemble(&'a EnsembleModel),
}

impl MeanModel<'_> {
    /// Mean next state at time `t` (the time index only matters for
    /// offset models).
    pub fn mean(&self, t: usize, s: &StateVec, a: &ActionVec) -> LabResult<StateVec> {
        match self {
            MeanModel::Learned(m) => Ok(m.mean(s, a)),
            MeanModel::Offsets(m) => m.mean_at(t, s, a),
            MeanModel::Ensemble(m) => m.mean(s, a),
        }
    }
}

/// Mean prediction of any model variant (injected errors included).
pub fn model_mean(
    model: &MeanModel<'_>,
    t: usize,
    s: &StateVec,
    a: &ActionVec,
) -> LabResult<StateVec> {
    model.mean(t, s, a)
}

/// Replay-buffer model: replays recorded next states, ignoring actions.
#[derive(Debug, Clone, Copy)]
pub struct ReplayModel<'a> {
    pub refs: &'a [Trajectory],
}

/// OPC model: a mean predictor corrected along recorded reference
/// trajectories.
#[derive(Debug, Clone, Copy)]
pub struct OpcModel<'a> {
    pub mean: MeanModel<'a>,
    pub refs: &'a [Trajectory],
}

/// On-environment transition store, grouped by learning iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayBuffer {
    pub trajectories: Vec<Trajectory>,
}

impl ReplayBuffer {
    pub fn push(&mut self, traj: Trajectory) {
        self.trajectories.push(traj);
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// All stored transitions, flattened in storage order.
    pub fn transitions(&self) -> Vec<&Transition> {
        self.trajectories
            .iter()
            .flat_map(|t| t.transitions.iter())
            .collect()
    }
}

/// Keeps only the trajectories from the last `k` iterations
/// (`iteration > current_iteration - k`).
pub fn buffer_retain(
    buffer: &ReplayBuffer,
    current_iteration: usize,
    k: usize,
) -> LabResult<ReplayBuffer> {
    if k == 0 {
        return Err(LabError::InvalidArgument {
            context: "buffer_retain",
            message: "retention window must be >= 1".into(),
        });
    }
    Ok(ReplayBuffer {
        trajectories: buffer
            .trajectories
            .iter()
            .filter(|t| t.iteration + k > current_iteration)
            .cloned()
            .collect(),
    })
}

/// Least-squares fit output: the model plus residual statistics.
///
/// The residual covariance estimates the transition noise; the OPC correction
/// is mean-only and never consumes it, since on-policy noise is inherited
/// from the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: LearnedLinearModel,
    pub rms_residual: f64,
    pub residual_cov: Mat,
}

fn regressor_name(n_s: usize, n_a: usize, col: usize) -> String {
    if col < n_s {
        format!("state dimension {col}")
    } else if col < n_s + n_a {
        format!("action dimension {}", col - n_s)
    } else {
        "the constant offset".to_string()
    }
}

/// Fits `s' = A s + B a + d` by least squares over a set of transitions.
///
/// With `ridge = 0` a rank-deficient regressor is an error that names the
/// dimension without variation; `ridge > 0` solves the Tikhonov-regularized
/// normal equations instead (all coefficients penalized).
pub fn fit_least_squares(data: &[&Transition], ridge: f64) -> LabResult<FitResult> {
    if data.is_empty() {
        return Err(LabError::EmptyInput {
            context: "fit_least_squares",
        });
    }
    let n_s = data[0].state.len();
    let n_a = data[0].action.len();
    let p = n_s + n_a + 1;
    let n = data.len();
    if n < p {
        return Err(LabError::InvalidArgument {
            context: "fit_least_squares",
            message: format!("need at least {p} transitions, got {n}"),
        });
    }
    let mut x = Mat::zeros(n, p);
    let mut y = Mat::zeros(n, n_s);
    for (row, tr) in data.iter().enumerate() {
        if tr.state.len() != n_s || tr.action.len() != n_a || tr.next_state.len() != n_s {
            return Err(LabError::DimensionMismatch {
                context: "fit_least_squares transitions",
                expected: n_s,
                actual: tr.state.len(),
            });
        }
        for j in 0..n_s {
            x[(row, j)] = tr.state[j];
        }
        for j in 0..n_a {
            x[(row, n_s + j)] = tr.action[j];
        }
        x[(row, p - 1)] = 1.0;
        for j in 0..n_s {
            y[(row, j)] = tr.next_state[j];
        }
    }

    // Theta is p x n_s with Y ~ X Theta; rows of Theta^T are [A B d].
    let theta = if ridge == 0.0 {
        let svd = x.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= RANK_TOL * smax {
            let v_t = svd.v_t.as_ref().expect("svd computed with vectors");
            let weakest = svd.singular_values.imin();
            let null_dir = v_t.row(weakest).transpose();
            let col = null_dir.iamax();
            return Err(LabError::SingularFit {
                dimension: regressor_name(n_s, n_a, col),
            });
        }
        svd.solve(&y, 0.0).map_err(|m| LabError::InvalidArgument {
            context: "fit_least_squares",
            message: m.to_string(),
        })?
    } else {
        let gram = x.transpose() * &x + Mat::identity(p, p) * ridge;
        let rhs = x.transpose() * &y;
        let chol = gram.cholesky().ok_or(LabError::SingularSystem {
            context: "fit_least_squares ridge system",
            rcond: 0.0,
        })?;
        chol.solve(&rhs)
    };

    let residuals = &x * &theta - &y;
    let rms_residual = (residuals.norm_squared() / n as f64).sqrt();
    let residual_cov = residuals.transpose() * &residuals / n as f64;

    let theta_t = theta.transpose();
    let a_hat = theta_t.columns(0, n_s).into_owned();
    let b_hat = theta_t.columns(n_s, n_a).into_owned();
    let d_hat = theta_t.column(p - 1).into_owned();
    Ok(FitResult {
        model: LearnedLinearModel {
            a_hat,
            b_hat,
            d_hat,
            delta_a: Mat::zeros(n_s, n_s),
            delta_b: Mat::zeros(n_s, n_a),
        },
        rms_residual,
        residual_cov,
    })
}

/// Per-time-step offsets `d_t = s_{t+1} - (A s_t + B a_t)` along one
/// trajectory.
pub fn fit_time_offsets(traj: &Trajectory, a: &Mat, b: &Mat) -> LabResult<TimeOffsetModel> {
    if traj.is_empty() {
        return Err(LabError::EmptyInput {
            context: "fit_time_offsets",
        });
    }
    let offsets = traj
        .transitions
        .iter()
        .map(|tr| &tr.next_state - (a * &tr.state + b * &tr.action))
        .collect();
    Ok(TimeOffsetModel {
        a: a.clone(),
        b: b.clone(),
        offsets,
    })
}

/// Fits an ensemble by bootstrap-resampling the training set.
pub fn fit_bootstrap_ensemble<R: Rng>(
    data: &[&Transition],
    members: usize,
    ridge: f64,
    rng: &mut R,
) -> LabResult<EnsembleModel> {
    if members == 0 {
        return Err(LabError::InvalidArgument {
            context: "fit_bootstrap_ensemble",
            message: "ensemble needs at least one member".into(),
        });
    }
    let mut fitted = Vec::with_capacity(members);
    for _ in 0..members {
        let resampled: Vec<&Transition> = (0..data.len())
            .map(|_| data[rng.random_range(0..data.len())])
            .collect();
        fitted.push(fit_least_squares(&resampled, ridge)?.model);
    }
    Ok(EnsembleModel { members: fitted })
}

/// Recorded next state `sbar_{t+1}` of reference trajectory `b`, regardless
/// of any queried action.
pub fn replay_step(model: &ReplayModel<'_>, t: usize, b: usize) -> LabResult<StateVec> {
    let traj = model.refs.get(b).ok_or(LabError::OutOfData { t, b })?;
    let tr = traj.transitions.get(t).ok_or(LabError::OutOfData { t, b })?;
    Ok(tr.next_state.clone())
}

/// One corrected step: `sbar_{t+1} + f(s, a) - f(sbar_t, abar_t)` against
/// reference transition `(t, b)`.
pub fn opc_step(
    model: &OpcModel<'_>,
    s: &StateVec,
    a: &ActionVec,
    t: usize,
    b: usize,
) -> LabResult<StateVec> {
    let traj = model.refs.get(b).ok_or(LabError::OutOfData { t, b })?;
    let tr = traj.transitions.get(t).ok_or(LabError::OutOfData { t, b })?;
    let predicted = model.mean.mean(t, s, a)?;
    let reference = model.mean.mean(t, &tr.state, &tr.action)?;
    // The correction is formed first so that identical query and reference
    // pairs cancel to exactly zero and the recorded state is returned bitwise.
    let correction = predicted - reference;
    Ok(&tr.next_state + correction)
}

/// Generalized corrected step for analysis: the recorded next state is
/// replaced by a fresh draw from the true transition distribution at the
/// reference pair.
pub fn generalized_opc_step<R: Rng>(
    env: &LinearGaussianEnv,
    mean: &MeanModel<'_>,
    s: &StateVec,
    a: &ActionVec,
    s_bar: &StateVec,
    a_bar: &ActionVec,
    t: usize,
    rng: &mut R,
) -> LabResult<StateVec> {
    let drawn = env_step(env, s_bar, a_bar, rng)?;
    let predicted = mean.mean(t, s, a)?;
    let reference = mean.mean(t, s_bar, a_bar)?;
    let correction = predicted - reference;
    Ok(drawn + correction)
}

/// Wraps every ensemble member in its own OPC model over a shared reference
/// set, so epistemic spread is corrected sample-by-sample.
pub fn opc_per_member<'a>(
    ensemble: &'a EnsembleModel,
    refs: &'a [Trajectory],
) -> LabResult<Vec<OpcModel<'a>>> {
    if ensemble.members.is_empty() {
        return Err(LabError::EmptyInput {
            context: "opc_per_member",
        });
    }
    Ok(ensemble
        .members
        .iter()
        .map(|m| OpcModel {
            mean: MeanModel::Learned(m),
            refs,
        })
        .collect())
}
