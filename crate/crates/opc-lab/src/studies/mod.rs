//! Study runners mapping a parsed config and a seed to one result table.
//!
//! Every runner reads its parameters through the consuming [`Config`]
//! getters, calls `finish` to reject unknown keys, and derives all
//! randomness from `stream(seed, path)` substreams, so a (config, seed)
//! pair pins the output bytes.

pub mod bound_check;
pub mod convergence;
pub mod gradient;
pub mod ilc_equiv;
pub mod landscape;
pub mod mbrl_loop;
pub mod off_policy;
pub mod state_dist;

use opc_lab_core::{GaussianLinearPolicy, Mat};

use crate::CliError;

/// Evenly spaced grid over `[lo, hi]`, endpoints included. Points are the
/// two-sided blends `lo (1 - t) + hi t`, which land exactly on representable
/// midpoints such as -1.0 inside [-2, 0].
pub fn lerp_grid(lo: f64, hi: f64, points: usize, field: &str) -> Result<Vec<f64>, CliError> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(CliError::config(
            field,
            format!("range [{lo}, {hi}] must be finite with min < max"),
        ));
    }
    if points < 2 {
        return Err(CliError::config(field, "need at least two grid points"));
    }
    Ok((0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            lo * (1.0 - t) + hi * t
        })
        .collect())
}

/// One-dimensional Gaussian policy `u = theta s + beta * noise`, where
/// `sigma` is the action-noise variance.
pub fn scalar_gaussian(theta: f64, sigma: f64, beta: f64) -> GaussianLinearPolicy {
    GaussianLinearPolicy {
        theta: Mat::from_element(1, 1, theta),
        sigma: Mat::from_element(1, 1, sigma),
        beta,
    }
}

/// Rejects non-finite or non-positive values for a config field.
pub fn require_positive(value: f64, field: &str) -> Result<f64, CliError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(CliError::config(field, format!("{value} must be positive")));
    }
    Ok(value)
}

/// Rejects non-finite or negative values for a config field.
pub fn require_nonnegative(value: f64, field: &str) -> Result<f64, CliError> {
    if !value.is_finite() || value < 0.0 {
        return Err(CliError::config(
            field,
            format!("{value} must be finite and >= 0"),
        ));
    }
    Ok(value)
}

/// Rejects zero for a count field.
pub fn require_count(value: usize, field: &str) -> Result<usize, CliError> {
    if value == 0 {
        return Err(CliError::config(field, "must be >= 1"));
    }
    Ok(value)
}

pub(crate) fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_hits_exact_midpoints() {
        let thetas = lerp_grid(-2.0, 0.0, 101, "grid.theta").unwrap();
        assert_eq!(thetas[50], -1.0);
        assert_eq!(thetas[0], -2.0);
        assert_eq!(thetas[100], 0.0);
        let deltas = lerp_grid(-1.0, 1.0, 81, "grid.delta").unwrap();
        assert_eq!(deltas[40], 0.0);
    }

    #[test]
    fn grid_rejects_bad_ranges() {
        assert!(lerp_grid(1.0, 1.0, 5, "f").is_err());
        assert!(lerp_grid(2.0, 1.0, 5, "f").is_err());
        assert!(lerp_grid(0.0, 1.0, 1, "f").is_err());
        assert!(lerp_grid(f64::NAN, 1.0, 5, "f").is_err());
    }
}
