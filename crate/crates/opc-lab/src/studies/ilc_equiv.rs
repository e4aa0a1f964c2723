//! Equivalence of the model-based input update and the norm-optimal update.
//!
//! On random lifted episodes, the closed-form input that maximizes the
//! quadratic tracking objective with an input-change penalty must coincide
//! with the norm-optimal update using an identity error weight and the same
//! penalty matrix. The study reports the relative deviation per instance;
//! anything above solver roundoff breaks the equivalence.

use opc_lab_core::ilc::{build_lifted, mbrl_closed_form, noilc_update, IlcWeights};
use opc_lab_core::rng::stream;
use opc_lab_core::{Mat, StateVec};
use rand::Rng;

use crate::config::Config;
use crate::studies::require_count;
use crate::table::{Cell, ResultTable};
use crate::CliError;

pub fn run(cfg: &mut Config, seed: u64) -> Result<ResultTable, CliError> {
    let instances = require_count(cfg.usize_or("run.instances", 50)?, "run.instances")?;
    let n_s_max = require_count(cfg.usize_or("grid.n_s_max", 3)?, "grid.n_s_max")?;
    let n_a_max = require_count(cfg.usize_or("grid.n_a_max", 3)?, "grid.n_a_max")?;
    let t_max = require_count(cfg.usize_or("grid.t_max", 8)?, "grid.t_max")?;
    let hash = cfg.hash();
    cfg.finish()?;

    let mut table = ResultTable::new(
        &["instance", "n_s", "n_a", "t", "rel_deviation"],
        hash,
        seed,
    );
    for i in 0..instances {
        let mut rng = stream(seed, &[7, i as u64]);
        let n_s = rng.random_range(1..=n_s_max);
        let n_a = rng.random_range(1..=n_a_max);
        let t = rng.random_range(1..=t_max);
        let a = rand_mat(&mut rng, n_s, n_s);
        let b = rand_mat(&mut rng, n_s, n_a);
        let lifted = build_lifted(&a, &b, t)?;
        // The lifted map stacks states s_0..s_T against inputs u_0..u_{T-1}.
        let (rows, cols) = lifted.f.shape();
        let h = rand_mat(&mut rng, cols, cols);
        let u = rand_vec(&mut rng, cols);
        let s_stacked = rand_vec(&mut rng, rows);
        let r_bar = rand_vec(&mut rng, rows);
        // A random positive-definite input penalty.
        let c_pi = &h * h.transpose() + Mat::identity(cols, cols) * 0.1;

        let closed = mbrl_closed_form(&r_bar, &s_stacked, &u, &lifted, &c_pi)?;
        let weights = IlcWeights {
            m: Mat::identity(rows, rows),
            w: c_pi,
        };
        let error = &r_bar - &s_stacked;
        let norm_opt = noilc_update(&u, &error, &lifted, &weights)?;
        let rel = (&closed - &norm_opt).norm() / norm_opt.norm().max(1e-12);
        table.push_row(vec![
            Cell::Int(i as i64),
            Cell::Int(n_s as i64),
            Cell::Int(n_a as i64),
            Cell::Int(t as i64),
            Cell::Float(rel),
        ]);
    }
    Ok(table)
}

fn rand_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_vec<R: Rng>(rng: &mut R, len: usize) -> StateVec {
    StateVec::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviations_stay_at_solver_roundoff() {
        let mut cfg = Config::parse("run.seed = 8\nrun.instances = 12\n").unwrap();
        let table = run(&mut cfg, 8).unwrap();
        assert_eq!(table.rows().len(), 12);
        for row in table.rows() {
            match row[4] {
                Cell::Float(rel) => assert!(rel < 1e-8, "relative deviation {rel}"),
                _ => panic!("expected a float cell"),
            }
        }
    }
}
