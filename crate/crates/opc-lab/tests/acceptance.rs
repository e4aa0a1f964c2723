//! Acceptance gate for the laboratory: one test per criterion, each printing
//! a single `ACCEPTANCE <n> <name>: PASS|FAIL` line and enforcing a
//! wall-clock budget.
//!
//! Run with `cargo test -p opc-lab --test acceptance -- --nocapture` to see
//! the verdict lines.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use opc_lab::config::Config;
use opc_lab::studies;
use opc_lab::table::{Cell, ResultTable};
use opc_lab_core::analysis::{improvement_report, signed_gradient_distance, wasserstein1_empirical};
use opc_lab_core::env::{closed_loop_stable, rollout_env, InitState, LinearGaussianEnv, Transition};
use opc_lab_core::ilc::{build_lifted, mbrl_closed_form, noilc_update, IlcWeights};
use opc_lab_core::models::{fit_least_squares, opc_step, OpcModel};
use opc_lab_core::rng::stream;
use opc_lab_core::scalar::closed_loop_landscape;
use opc_lab_core::{GaussianLinearPolicy, LearnedLinearModel, Mat, MeanModel, RewardSpec, StateVec};
use rand::Rng;

fn criterion(n: usize, name: &str, budget: Duration, body: impl FnOnce()) {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let ok = result.is_ok() && elapsed <= budget;
    println!("ACCEPTANCE {n} {name}: {}", if ok { "PASS" } else { "FAIL" });
    if let Err(cause) = result {
        resume_unwind(cause);
    }
    assert!(
        elapsed <= budget,
        "{name} took {elapsed:?}, budget is {budget:?}"
    );
}

fn rand_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_vec<R: Rng>(rng: &mut R, len: usize) -> StateVec {
    StateVec::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
}

fn table_f64(table: &ResultTable, row: usize, col: usize) -> f64 {
    match table.rows()[row][col] {
        Cell::Float(v) => v,
        Cell::Int(v) => v as f64,
        ref other => panic!("expected a number at ({row}, {col}), found {other:?}"),
    }
}

fn column_index(table: &ResultTable, name: &str) -> usize {
    table
        .columns()
        .iter()
        .position(|c| c == name)
        .unwrap_or_else(|| panic!("no column named {name}"))
}

fn run_study(
    study: fn(&mut Config, u64) -> Result<ResultTable, opc_lab::CliError>,
    text: &str,
    seed: u64,
) -> ResultTable {
    let mut cfg = Config::parse(text).expect("config parses");
    study(&mut cfg, seed).expect("study runs")
}

#[test]
fn replaying_recorded_actions_reproduces_recorded_states() {
    criterion(
        1,
        "replaying_recorded_actions_reproduces_recorded_states",
        Duration::from_secs(1),
        || {
            for case in 0..100u64 {
                let mut rng = stream(0xACC1, &[case]);
                let n_s = rng.random_range(1..=3);
                let n_a = rng.random_range(1..=3);
                let horizon = rng.random_range(1..=20);

                let raw = rand_mat(&mut rng, n_s, n_s);
                let norm = opc_lab_core::linalg::spectral_norm(&raw).max(1e-9);
                let a = raw * (rng.random_range(0.3..1.2) / norm);
                let b = rand_mat(&mut rng, n_s, n_a);
                let noise_cov =
                    Mat::from_diagonal(&rand_vec(&mut rng, n_s).map(|v| 1e-4 + 5e-3 * (1.0 + v)));
                let env = LinearGaussianEnv {
                    a,
                    b,
                    noise_cov,
                    init: InitState::Fixed(rand_vec(&mut rng, n_s)),
                    horizon,
                    gamma: 0.95,
                    terminal_box: None,
                };
                let policy = GaussianLinearPolicy {
                    theta: rand_mat(&mut rng, n_a, n_s),
                    sigma: Mat::from_diagonal(
                        &rand_vec(&mut rng, n_a).map(|v| 1e-4 + 5e-3 * (1.0 + v)),
                    ),
                    beta: 1.0,
                };
                let traj = rollout_env(&env, &RewardSpec::NegativeStateNorm, &policy, &mut rng)
                    .expect("rollout succeeds");

                let model =
                    LearnedLinearModel::nominal(rand_mat(&mut rng, n_s, n_s), rand_mat(&mut rng, n_s, n_a))
                        .with_injected(
                            rand_mat(&mut rng, n_s, n_s) * 0.5,
                            rand_mat(&mut rng, n_s, n_a) * 0.5,
                        );
                let corrected = OpcModel {
                    mean: MeanModel::Learned(&model),
                    refs: std::slice::from_ref(&traj),
                };

                let mut s = traj.transitions[0].state.clone();
                for (t, tr) in traj.transitions.iter().enumerate() {
                    let next = opc_step(&corrected, &s, &tr.action, t, 0).expect("corrected step");
                    let deviation = (&next - &tr.next_state).amax();
                    assert!(
                        deviation <= 1e-12,
                        "case {case} step {t}: replayed state deviates by {deviation}"
                    );
                    s = next;
                }
            }
        },
    );
}

#[test]
fn closed_form_improvement_matches_norm_optimal_update() {
    criterion(
        2,
        "closed_form_improvement_matches_norm_optimal_update",
        Duration::from_secs(5),
        || {
            for instance in 0..50u64 {
                let mut rng = stream(0xACC2, &[instance]);
                let n_s = rng.random_range(1..=3);
                let n_a = rng.random_range(1..=3);
                let t = rng.random_range(1..=8);
                let a = rand_mat(&mut rng, n_s, n_s);
                let b = rand_mat(&mut rng, n_s, n_a);
                let lifted = build_lifted(&a, &b, t).expect("lifted system");
                let (rows, cols) = lifted.f.shape();

                let u = rand_vec(&mut rng, cols);
                let s_stacked = rand_vec(&mut rng, rows);
                let r_bar = rand_vec(&mut rng, rows);
                let h = rand_mat(&mut rng, cols, cols);
                let c_pi = &h * h.transpose() + Mat::identity(cols, cols) * 0.1;

                let closed =
                    mbrl_closed_form(&r_bar, &s_stacked, &u, &lifted, &c_pi).expect("closed form");
                let weights = IlcWeights {
                    m: Mat::identity(rows, rows),
                    w: c_pi.clone(),
                };
                let error = &r_bar - &s_stacked;
                let norm_opt = noilc_update(&u, &error, &lifted, &weights).expect("norm-optimal");
                let rel = (&closed - &norm_opt).norm() / norm_opt.norm().max(1e-12);
                assert!(rel <= 1e-8, "instance {instance}: relative deviation {rel}");

                // The returned update must minimize the quadratic objective,
                // so every perturbed candidate scores strictly worse.
                let du_star = &norm_opt - &u;
                let objective = |du: &StateVec| -> f64 {
                    let resid = &error - &lifted.f * du;
                    0.5 * (resid.transpose() * &weights.m * &resid)[(0, 0)]
                        + 0.5 * (du.transpose() * &weights.w * du)[(0, 0)]
                };
                let best = objective(&du_star);
                for _ in 0..100 {
                    let delta = rand_vec(&mut rng, cols) * 0.3;
                    if delta.norm() < 1e-9 {
                        continue;
                    }
                    let rival = objective(&(&du_star + delta));
                    assert!(
                        best < rival,
                        "instance {instance}: perturbation scored {rival} <= {best}"
                    );
                }
            }
        },
    );
}

#[test]
fn corrected_gradients_are_sign_correct_more_often() {
    criterion(
        3,
        "corrected_gradients_are_sign_correct_more_often",
        Duration::from_secs(30),
        || {
            for sweep in ["a", "b"] {
                let text = format!("run.seed = 19\ngrid.sweep = {sweep}\n");
                let table = run_study(studies::gradient::run, &text, 19);
                let (theta_col, delta_col) = (column_index(&table, "theta"), column_index(&table, "delta"));
                let (raw_col, opc_col) = (column_index(&table, "d_raw"), column_index(&table, "d_opc"));

                let mut stable = 0usize;
                let mut raw_ok = 0usize;
                let mut opc_ok = 0usize;
                for (r, row) in table.rows().iter().enumerate() {
                    if row[raw_col] == Cell::Empty {
                        assert_eq!(row[opc_col], Cell::Empty);
                        continue;
                    }
                    stable += 1;
                    let d_raw = table_f64(&table, r, raw_col);
                    let d_opc = table_f64(&table, r, opc_col);
                    if d_raw >= 0.0 {
                        raw_ok += 1;
                    }
                    if d_opc >= 0.0 {
                        opc_ok += 1;
                    }
                    let theta = table_f64(&table, r, theta_col);
                    let delta = table_f64(&table, r, delta_col);
                    if delta == 0.0 || theta == -1.0 {
                        assert!(
                            d_opc.abs() <= 1e-10,
                            "sweep {sweep}: d_opc = {d_opc} at theta {theta}, delta {delta}"
                        );
                    }
                }
                assert!(stable > 0);
                assert!(
                    opc_ok > raw_ok,
                    "sweep {sweep}: corrected {opc_ok}/{stable} vs raw {raw_ok}/{stable}"
                );
            }
        },
    );
}

#[test]
fn return_gap_bound_holds_on_random_instances() {
    criterion(
        4,
        "return_gap_bound_holds_on_random_instances",
        Duration::from_secs(60),
        || {
            let table = run_study(studies::bound_check::run, "run.seed = 23\n", 23);
            let beta_col = column_index(&table, "beta");
            let lhs_col = column_index(&table, "lhs_mc");
            let holds_col = column_index(&table, "holds");
            assert_eq!(table.rows().len(), 20);
            let mut deterministic = 0usize;
            for (r, row) in table.rows().iter().enumerate() {
                assert_eq!(row[holds_col], Cell::Int(1), "row {r}: bound violated");
                if table_f64(&table, r, beta_col) == 0.0 {
                    deterministic += 1;
                    let lhs = table_f64(&table, r, lhs_col);
                    assert!(lhs <= 1e-12, "row {r}: deterministic gap {lhs}");
                }
            }
            assert!(deterministic > 0);
        },
    );
}

#[test]
fn reference_count_error_decays_at_the_monte_carlo_rate() {
    criterion(
        5,
        "reference_count_error_decays_at_the_monte_carlo_rate",
        Duration::from_secs(60),
        || {
            let table = run_study(studies::convergence::run, "run.seed = 29\n", 29);
            let b_col = column_index(&table, "b");
            let err_col = column_index(&table, "mean_abs_error");
            let var_col = column_index(&table, "estimator_variance");
            assert_eq!(table.rows().len(), 4);

            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut previous = f64::INFINITY;
            for r in 0..table.rows().len() {
                let err = table_f64(&table, r, err_col);
                assert!(
                    err < previous,
                    "row {r}: mean error {err} did not decrease from {previous}"
                );
                previous = err;
                xs.push(table_f64(&table, r, b_col).ln());
                ys.push(table_f64(&table, r, var_col).ln());
            }

            let n = xs.len() as f64;
            let x_mean = xs.iter().sum::<f64>() / n;
            let y_mean = ys.iter().sum::<f64>() / n;
            let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
            let var: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
            let slope = cov / var;
            assert!(
                (-1.3..=-0.7).contains(&slope),
                "variance decay slope {slope} outside [-1.3, -0.7]"
            );
        },
    );
}

#[test]
fn corrected_state_clouds_track_the_environment() {
    criterion(
        6,
        "corrected_state_clouds_track_the_environment",
        Duration::from_secs(30),
        || {
            let table = run_study(studies::state_dist::run, "run.seed = 31\n", 31);
            let dim_col = column_index(&table, "dim");
            let beta_col = column_index(&table, "beta");
            let model_col = column_index(&table, "w1_env_vs_model");
            let opc_col = column_index(&table, "w1_env_vs_opc");

            // Time-averaged distance per (dimension, query stochasticity).
            let mut groups: std::collections::BTreeMap<(i64, u64), (f64, f64, usize)> =
                std::collections::BTreeMap::new();
            for (r, row) in table.rows().iter().enumerate() {
                let dim = match row[dim_col] {
                    Cell::Int(d) => d,
                    ref other => panic!("expected integer dim, found {other:?}"),
                };
                let beta_bits = table_f64(&table, r, beta_col).to_bits();
                let entry = groups.entry((dim, beta_bits)).or_insert((0.0, 0.0, 0));
                entry.0 += table_f64(&table, r, model_col);
                entry.1 += table_f64(&table, r, opc_col);
                entry.2 += 1;
            }
            assert_eq!(groups.len(), 4, "expected two dims times two query betas");
            for ((dim, beta_bits), (model_sum, opc_sum, count)) in groups {
                let beta = f64::from_bits(beta_bits);
                let model_mean = model_sum / count as f64;
                let opc_mean = opc_sum / count as f64;
                assert!(
                    opc_mean < model_mean,
                    "dim {dim}, beta {beta}: corrected {opc_mean} not below raw {model_mean}"
                );
            }
        },
    );
}

#[test]
fn learning_loop_reaches_true_versus_model_optimum() {
    criterion(
        7,
        "learning_loop_reaches_true_versus_model_optimum",
        Duration::from_secs(60),
        || {
            let seed = 20260816;
            let corrected = run_study(
                studies::mbrl_loop::run,
                "run.seed = 20260816\nloop.iterations = 31\n",
                seed,
            );
            let theta_col = column_index(&corrected, "theta");
            assert_eq!(corrected.rows().len(), 31);
            let best = (0..corrected.rows().len())
                .map(|r| (table_f64(&corrected, r, theta_col) + 1.0).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(
                best < 0.1,
                "corrected loop never came within 0.1 of the true optimum, best {best}"
            );

            let plain = run_study(
                studies::mbrl_loop::run,
                "run.seed = 20260816\nloop.iterations = 31\nloop.correction = plain\n",
                seed,
            );
            let final_theta = table_f64(&plain, plain.rows().len() - 1, theta_col);

            // Grid-search oracle for the biased system's own optimum: the
            // model sees dynamics (A + 0.5, B) = (1.5, 1.0).
            let mut best_theta = f64::NAN;
            let mut best_value = f64::NEG_INFINITY;
            for k in 0..=800 {
                let theta = -2.0 * (1.0 - k as f64 / 800.0);
                if !closed_loop_stable(1.5, 0.0, 1.0, 0.0, theta) {
                    continue;
                }
                let point = closed_loop_landscape(1.5, 1.0, theta, 1.0, 0.05, 60)
                    .expect("landscape point");
                if point.value > best_value {
                    best_value = point.value;
                    best_theta = theta;
                }
            }
            assert!(
                (final_theta - best_theta).abs() < 0.05,
                "plain loop ended at {final_theta}, biased optimum is {best_theta}"
            );
        },
    );
}

#[test]
fn identity_and_estimator_suites_hold() {
    criterion(
        8,
        "identity_and_estimator_suites_hold",
        Duration::from_secs(5),
        || {
            let mut rng = stream(0xACC8, &[0]);

            for case in 0..1000 {
                let eta_n = rng.random_range(-10.0..10.0);
                let eta_next = rng.random_range(-10.0..10.0);
                let tilde_n = rng.random_range(-10.0..10.0);
                let tilde_next = rng.random_range(-10.0..10.0);
                let rep = improvement_report(eta_n, eta_next, tilde_n, tilde_next);
                let reconstructed =
                    rep.model_improvement + (eta_next - tilde_next) - (eta_n - tilde_n);
                assert!(
                    (rep.true_improvement - reconstructed).abs() <= 1e-12,
                    "case {case}: decomposition does not reconstruct the true improvement"
                );
                let bound =
                    rep.model_improvement - rep.off_policy_error - rep.on_policy_error;
                assert!((rep.lower_bound - bound).abs() <= 1e-12);
                assert!(rep.true_improvement >= rep.lower_bound - 1e-12);
            }

            for g in [0.0, 1.0, -1.0, 2.5, -17.0] {
                assert!(signed_gradient_distance(g, g).abs() <= 1e-12);
            }
            assert!((signed_gradient_distance(1.0, -1.0) - (-0.5)).abs() <= 1e-12);
            assert!((signed_gradient_distance(0.0, 1.0) - 0.25).abs() <= 1e-12);

            for _ in 0..100 {
                let p: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
                let q: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
                let r: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
                let pq = wasserstein1_empirical(&p, &q, &mut rng).unwrap();
                let qp = wasserstein1_empirical(&q, &p, &mut rng).unwrap();
                let qr = wasserstein1_empirical(&q, &r, &mut rng).unwrap();
                let pr = wasserstein1_empirical(&p, &r, &mut rng).unwrap();
                let pp = wasserstein1_empirical(&p, &p, &mut rng).unwrap();
                assert_eq!(pp, 0.0);
                assert_eq!(pq, qp);
                assert!(pq > 0.0);
                assert!(pr <= pq + qr + 1e-12);
            }

            for trial in 0..20u64 {
                let mut rng = stream(0xACC8, &[1, trial]);
                let n_s = rng.random_range(1..=3);
                let n_a = rng.random_range(1..=3);
                let n = 40;
                let a = rand_mat(&mut rng, n_s, n_s);
                let b = rand_mat(&mut rng, n_s, n_a);
                let d = rand_vec(&mut rng, n_s);
                let transitions: Vec<Transition> = (0..n)
                    .map(|t| {
                        let state = rand_vec(&mut rng, n_s);
                        let action = rand_vec(&mut rng, n_a);
                        let next_state =
                            &a * &state + &b * &action + &d + rand_vec(&mut rng, n_s) * 0.01;
                        Transition {
                            t,
                            state,
                            action,
                            next_state,
                            reward: 0.0,
                            terminal: false,
                        }
                    })
                    .collect();
                let refs: Vec<&Transition> = transitions.iter().collect();
                let ridge = if trial % 2 == 0 { 0.0 } else { 0.05 };
                let fit = fit_least_squares(&refs, ridge).expect("fit succeeds");

                // Normal-equations oracle over the same regressor [s a 1].
                let p = n_s + n_a + 1;
                let mut x = Mat::zeros(n, p);
                let mut y = Mat::zeros(n, n_s);
                for (row, tr) in transitions.iter().enumerate() {
                    for j in 0..n_s {
                        x[(row, j)] = tr.state[j];
                        y[(row, j)] = tr.next_state[j];
                    }
                    for j in 0..n_a {
                        x[(row, n_s + j)] = tr.action[j];
                    }
                    x[(row, p - 1)] = 1.0;
                }
                let gram = x.transpose() * &x + Mat::identity(p, p) * ridge;
                let coeffs = gram
                    .lu()
                    .solve(&(x.transpose() * &y))
                    .expect("normal equations solve")
                    .transpose();
                let fitted = Mat::from_fn(n_s, p, |i, j| {
                    if j < n_s {
                        fit.model.a_hat[(i, j)]
                    } else if j < n_s + n_a {
                        fit.model.b_hat[(i, j - n_s)]
                    } else {
                        fit.model.d_hat[i]
                    }
                });
                let rel = (&fitted - &coeffs).norm() / coeffs.norm().max(1e-12);
                assert!(rel <= 1e-8, "trial {trial}: fit deviates by {rel}");
            }
        },
    );
}
