//! Return landscapes of the scalar closed loop under three evaluators.
//!
//! One row per gain on the grid: the exact return of the true system, the
//! return predicted by a biased model rolled out open loop, and the return of
//! the same biased model corrected along a reference trajectory recorded
//! under `theta_ref`. At `theta = theta_ref` the corrected landscape equals
//! the true one bitwise, because the correction cancels every model step.

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
    let delta_a = cfg.f64_or("model.delta_a", 0.5)?;
    let delta_b = cfg.f64_or("model.delta_b", 0.0)?;
    let theta_ref = cfg.f64_or("policy.theta_ref", -1.0)?;
    let theta_min = cfg.f64_or("grid.theta_min", -2.0)?;
    let theta_max = cfg.f64_or("grid.theta_max", 0.0)?;
    let theta_points = cfg.usize_or("grid.theta_points", 101)?;
    let hash = cfg.hash();
    cfg.finish()?;

    let thetas = lerp_grid(theta_min, theta_max, theta_points, "grid.theta_min")?;
    let mut table = ResultTable::new(
        &["theta", "return_true", "return_model", "return_opc"],
        hash,
        seed,
    );
    for &theta in &thetas {
        let truth = closed_loop_landscape(a, b, theta, s0, sigma_r, horizon)?.value;
        let model =
            closed_loop_landscape(a + delta_a, b + delta_b, theta, s0, sigma_r, horizon)?.value;
        let opc = opc_landscape(
            a,
            b,
            a + delta_a,
            b + delta_b,
            theta,
            theta_ref,
            s0,
            sigma_r,
            horizon,
        )?
        .value;
        table.push_row(vec![
            Cell::Float(theta),
            Cell::Float(truth),
            Cell::Float(model),
            Cell::Float(opc),
        ]);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrected_landscape_matches_truth_at_the_reference_gain() {
        let mut cfg = Config::parse("run.seed = 3\ngrid.theta_points = 41\n").unwrap();
        let table = run(&mut cfg, 3).unwrap();
        let at_ref: Vec<_> = table
            .rows()
            .iter()
            .filter(|row| matches!(row[0], Cell::Float(t) if t == -1.0))
            .collect();
        assert_eq!(at_ref.len(), 1);
        let row = at_ref[0];
        assert_eq!(row[1], row[3]);
        assert_ne!(row[1], row[2]);
    }

    #[test]
    fn open_loop_model_peaks_at_its_own_deadbeat_gain() {
        // The biased model believes s' = 1.5 s + u, whose bell return is
        // maximized by the gain that zeroes the state in one step.
        let mut cfg = Config::parse("run.seed = 3\n").unwrap();
        let table = run(&mut cfg, 3).unwrap();
        let argmax = table
            .rows()
            .iter()
            .max_by(|x, y| {
                let vx = match x[2] {
                    Cell::Float(v) => v,
                    _ => unreachable!(),
                };
                let vy = match y[2] {
                    Cell::Float(v) => v,
                    _ => unreachable!(),
                };
                vx.partial_cmp(&vy).unwrap()
            })
            .unwrap();
        assert_eq!(argmax[0], Cell::Float(-1.5));
    }

    #[test]
    fn exact_model_collapses_all_three_columns() {
        let mut cfg =
            Config::parse("run.seed = 3\nmodel.delta_a = 0\ngrid.theta_points = 21\n").unwrap();
        let table = run(&mut cfg, 3).unwrap();
        for row in table.rows() {
            // An error-free open-loop model is the identical computation.
            assert_eq!(row[1], row[2]);
            // The corrected rollout orders its float ops differently, so it
            // agrees to rounding rather than bitwise away from theta_ref.
            let (truth, opc) = match (&row[1], &row[3]) {
                (Cell::Float(t), Cell::Float(o)) => (*t, *o),
                _ => unreachable!(),
            };
            assert!((truth - opc).abs() <= 1e-12, "{truth} vs {opc}");
        }
    }
}
