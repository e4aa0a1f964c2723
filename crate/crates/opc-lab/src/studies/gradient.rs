//! Gradient-direction sweep on the scalar closed loop.
//!
//! For every gain `theta` on a grid and every model error `delta` applied to
//! one system matrix, the study compares the exact return gradient of the
//! true system against the gradient predicted by the wrong model, rolled out
//! either open loop (raw) or corrected along a reference trajectory recorded
//! under `theta_ref`. Each comparison is reported as a signed angular
//! distance in [-1/2, 1/2]: magnitude below 1/4 means the predicted gradient
//! points uphill on the true landscape. Cells whose true or perturbed closed
//! loop is unstable are left empty.

use opc_lab_core::analysis::signed_gradient_distance;
use opc_lab_core::env::closed_loop_stable;
use opc_lab_core::scalar::{closed_loop_landscape, opc_landscape};

use crate::config::Config;
use crate::studies::{lerp_grid, require_count, require_positive};
use crate::table::{Cell, ResultTable};
use crate::CliError;

pub fn run(cfg: &mut Config, seed: u64) -> Result<ResultTable, CliError> {
    let a = cfg.f64_or("env.a", 1.0)?;
    let b = cfg.f64_or("env.b", 1.0)?;
    let s0 = cfg.f64_or("env.s0", 1.0)?;
    let horizon = require_count(cfg.usize_or("env.horizon", 60)?, "env.horizon")?;
    let sigma_r = require_positive(cfg.f64_or("reward.sigma_r", 0.05)?, "reward.sigma_r")?;
    let theta_ref = cfg.f64_or("policy.theta_ref", -1.0)?;
    let theta_min = cfg.f64_or("grid.theta_min", -2.0)?;
    let theta_max = cfg.f64_or("grid.theta_max", 0.0)?;
    let theta_points = cfg.usize_or("grid.theta_points", 101)?;
    let delta_min = cfg.f64_or("grid.delta_min", -1.0)?;
    let delta_max = cfg.f64_or("grid.delta_max", 1.0)?;
    let delta_points = cfg.usize_or("grid.delta_points", 81)?;
    let sweep = cfg.string_or("grid.sweep", "a");
    let hash = cfg.hash();
    cfg.finish()?;

    if sweep != "a" && sweep != "b" {
        return Err(CliError::config(
            "grid.sweep",
            format!("expected 'a' or 'b', found '{sweep}'"),
        ));
    }
    if !closed_loop_stable(a, 0.0, b, 0.0, theta_ref) {
        return Err(CliError::config(
            "policy.theta_ref",
            format!("gain {theta_ref} does not stabilize s' = {a} s + {b} u"),
        ));
    }
    let thetas = lerp_grid(theta_min, theta_max, theta_points, "grid.theta_min")?;
    let deltas = lerp_grid(delta_min, delta_max, delta_points, "grid.delta_min")?;

    let mut table = ResultTable::new(&["theta", "delta", "d_raw", "d_opc"], hash, seed);
    for &theta in &thetas {
        for &delta in &deltas {
            let (da, db) = if sweep == "a" { (delta, 0.0) } else { (0.0, delta) };
            let stable = closed_loop_stable(a, 0.0, b, 0.0, theta)
                && closed_loop_stable(a, da, b, db, theta);
            if !stable {
                table.push_row(vec![
                    Cell::Float(theta),
                    Cell::Float(delta),
                    Cell::Empty,
                    Cell::Empty,
                ]);
                continue;
            }
            let g_true = closed_loop_landscape(a, b, theta, s0, sigma_r, horizon)?.gradient;
            let g_raw =
                closed_loop_landscape(a + da, b + db, theta, s0, sigma_r, horizon)?.gradient;
            let g_opc = opc_landscape(
                a,
                b,
                a + da,
                b + db,
                theta,
                theta_ref,
                s0,
                sigma_r,
                horizon,
            )?
            .gradient;
            table.push_row(vec![
                Cell::Float(theta),
                Cell::Float(delta),
                Cell::Float(signed_gradient_distance(g_raw, g_true)),
                Cell::Float(signed_gradient_distance(g_opc, g_true)),
            ]);
        }
    }
    Ok(table)
}
