//! Linear policies, gradient estimation, and the clipped improvement step.

use rand::Rng;

use crate::env::closed_loop_stable;
use crate::error::{LabError, LabResult};
use crate::linalg::{psd_sqrt, sample_gaussian};
use crate::{ActionVec, Mat, StateVec};

/// Default gradient-ascent step size for policy improvement.
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Default trust-region bound on the squared parameter change per step.
pub const DEFAULT_EPS_PI: f64 = 0.04;
/// Default central-difference step for finite-difference gradients.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Common interface of the two policy families.
pub trait Policy {
    /// Gain matrix (`n_a x n_s`).
    fn theta(&self) -> &Mat;

    /// Samples an action for state `s`.
    fn act<R: Rng>(&self, s: &StateVec, rng: &mut R) -> LabResult<ActionVec>;

    /// Mean action `theta * s`.
    fn mean_action(&self, s: &StateVec) -> LabResult<ActionVec> {
        if s.len() != self.theta().ncols() {
            return Err(LabError::DimensionMismatch {
                context: "policy state",
                expected: self.theta().ncols(),
                actual: s.len(),
            });
        }
        Ok(self.theta() * s)
    }
}

/// Deterministic linear policy `a = theta * s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub theta: Mat,
}

impl LinearPolicy {
    pub fn scalar(theta: f64) -> Self {
        LinearPolicy {
            theta: Mat::from_element(1, 1, theta),
        }
    }
}

impl Policy for LinearPolicy {
    fn theta(&self) -> &Mat {
        &self.theta
    }

    fn act<R: Rng>(&self, s: &StateVec, _rng: &mut R) -> LabResult<ActionVec> {
        self.mean_action(s)
    }
}

/// Stochastic linear policy `a = theta * s + beta * eps`, `eps ~ N(0, sigma)`,
/// so the effective action covariance is `beta^2 * sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLinearPolicy {
    pub theta: Mat,
    pub sigma: Mat,
    /// Stochasticity multiplier `beta >= 0`; 0 recovers the deterministic policy.
    pub beta: f64,
}

impl Policy for GaussianLinearPolicy {
    fn theta(&self) -> &Mat {
        &self.theta
    }

    fn act<R: Rng>(&self, s: &StateVec, rng: &mut R) -> LabResult<ActionVec> {
        let mean = self.mean_action(s)?;
        if self.beta == 0.0 {
            return Ok(mean);
        }
        let sqrt = psd_sqrt(&self.sigma, "policy covariance")?;
        Ok(sample_gaussian(&mean, &(sqrt * self.beta), rng))
    }
}

/// Exact gradient of the time-averaged bell-reward return for the scalar
/// deterministic system `s_{t+1} = (a + b theta) s_t`.
///
/// States obey `s_t = c^t s0` with `c = a + b theta`, so
/// `d s_t / d theta = t c^{t-1} b s0` and the chain rule gives the gradient in
/// closed form. Refuses unstable closed loops, where the study's landscape is
/// undefined.
pub fn exact_return_gradient_1d(
    a: f64,
    b: f64,
    theta: f64,
    s0: f64,
    sigma_r: f64,
    horizon: usize,
) -> LabResult<f64> {
    if horizon == 0 {
        return Err(LabError::InvalidArgument {
            context: "exact_return_gradient_1d",
            message: "horizon must be >= 1".into(),
        });
    }
    if !closed_loop_stable(a, 0.0, b, 0.0, theta) {
        return Err(LabError::Unstable {
            context: "exact_return_gradient_1d",
            gain: a + b * theta,
        });
    }
    let c = a + b * theta;
    let inv_sr2 = 1.0 / (sigma_r * sigma_r);
    let mut sum = 0.0;
    // s_t = c^t s0; the t = 0 term has zero sensitivity.
    let mut c_prev = 1.0; // c^{t-1}
    for t in 1..horizon {
        let s_t = c_prev * c * s0;
        let ds_dtheta = t as f64 * c_prev * b * s0;
        let r_prime = -2.0 * s_t * inv_sr2 * (-s_t * s_t * inv_sr2).exp();
        sum += r_prime * ds_dtheta;
        c_prev *= c;
    }
    Ok(sum / horizon as f64)
}

/// Central finite-difference gradient of `f` with respect to every entry of
/// `theta`.
pub fn fd_policy_gradient<F>(mut f: F, theta: &Mat, h: f64) -> LabResult<Mat>
where
    F: FnMut(&Mat) -> LabResult<f64>,
{
    if h <= 0.0 {
        return Err(LabError::InvalidArgument {
            context: "fd_policy_gradient",
            message: format!("step {h} must be positive"),
        });
    }
    let mut grad = Mat::zeros(theta.nrows(), theta.ncols());
    for i in 0..theta.nrows() {
        for j in 0..theta.ncols() {
            let mut plus = theta.clone();
            plus[(i, j)] += h;
            let mut minus = theta.clone();
            minus[(i, j)] -= h;
            let fp = f(&plus)?;
            let fm = f(&minus)?;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(LabError::NonFinite {
                    context: "fd_policy_gradient",
                });
            }
            grad[(i, j)] = (fp - fm) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// One clipped gradient-ascent step `theta + alpha * grad`, with the update
/// rescaled to Frobenius norm `sqrt(eps_pi)` whenever it exceeds the trust
/// region.
pub fn improve_policy(theta: &Mat, grad: &Mat, alpha: f64, eps_pi: f64) -> LabResult<Mat> {
    if grad.shape() != theta.shape() {
        return Err(LabError::DimensionMismatch {
            context: "improve_policy gradient",
            expected: theta.len(),
            actual: grad.len(),
        });
    }
    if eps_pi < 0.0 {
        return Err(LabError::InvalidArgument {
            context: "improve_policy",
            message: format!("eps_pi = {eps_pi} must be nonnegative"),
        });
    }
    let mut step = grad * alpha;
    let norm = step.norm();
    let limit = eps_pi.sqrt();
    if norm > limit {
        step *= limit / norm;
    }
    Ok(theta + step)
}
