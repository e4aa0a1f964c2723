//! Episodic tracking via lifted linear dynamics.
//!
//! A length-`T` episode of `s_{t+1} = A_t s_t + B_t u_t + d_t` is written as
//! one linear map: the stacked state trajectory equals `F u + d`, where `u`
//! stacks the inputs and `d` absorbs the initial state and all disturbances.
//! Norm-optimal input updates on this lifted system are the quadratic
//! regularized least-squares step that learning-based episodic control and
//! one closed-form model-based policy improvement both take, which makes the
//! two procedures directly comparable.

use crate::error::{LabError, LabResult};
use crate::linalg::solve_spd;
use crate::{Mat, StateVec};

/// Lifted episode dynamics `s_stacked = F u_stacked + d`.
///
/// `f` maps the `n_a * t` stacked inputs to the `n_s * (t + 1)` stacked
/// states `s_0 .. s_T`; the first block row is zero because inputs cannot
/// influence the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSystem {
    pub f: Mat,
    pub n_s: usize,
    pub n_a: usize,
    pub t: usize,
}

/// Weights of the norm-optimal update: `m` scores the tracking error, `w`
/// penalizes the input change.
#[derive(Debug, Clone, PartialEq)]
pub struct IlcWeights {
    pub m: Mat,
    pub w: Mat,
}

impl IlcWeights {
    /// Identity error weight and `lambda`-scaled input penalty.
    pub fn identity(lifted: &LiftedSystem, lambda: f64) -> Self {
        IlcWeights {
            m: Mat::identity(lifted.f.nrows(), lifted.f.nrows()),
            w: Mat::identity(lifted.f.ncols(), lifted.f.ncols()) * lambda,
        }
    }
}

/// Builds the lifted map for time-invariant dynamics: block `(i, j)` is
/// `A^{i-j-1} B` for `i > j` and zero otherwise.
pub fn build_lifted(a: &Mat, b: &Mat, t: usize) -> LabResult<LiftedSystem> {
    let a_list = vec![a.clone(); t];
    let b_list = vec![b.clone(); t];
    build_lifted_timevarying(&a_list, &b_list)
}

/// Builds the lifted map for time-varying dynamics `A_0..A_{T-1}`,
/// `B_0..B_{T-1}`: block `(i, j)` is `A_{i-1} ... A_{j+1} B_j` for `i > j`.
pub fn build_lifted_timevarying(a_list: &[Mat], b_list: &[Mat]) -> LabResult<LiftedSystem> {
    if a_list.is_empty() || a_list.len() != b_list.len() {
        return Err(LabError::InvalidArgument {
            context: "build_lifted_timevarying",
            message: format!(
                "need equal positive counts of A ({}) and B ({}) matrices",
                a_list.len(),
                b_list.len()
            ),
        });
    }
    let t = a_list.len();
    let n_s = a_list[0].nrows();
    let n_a = b_list[0].ncols();
    for (k, a) in a_list.iter().enumerate() {
        if a.nrows() != n_s || a.ncols() != n_s {
            return Err(LabError::DimensionMismatch {
                context: "lifted A matrix",
                expected: n_s,
                actual: if a.nrows() != n_s { a.nrows() } else { a.ncols() },
            });
        }
        if b_list[k].nrows() != n_s || b_list[k].ncols() != n_a {
            return Err(LabError::DimensionMismatch {
                context: "lifted B matrix",
                expected: n_s,
                actual: b_list[k].nrows(),
            });
        }
    }
    let mut f = Mat::zeros(n_s * (t + 1), n_a * t);
    for j in 0..t {
        // Walk block column j upward in i, reusing the accumulated product
        // A_{i-1} ... A_{j+1} B_j.
        let mut block = b_list[j].clone();
        for i in (j + 1)..=t {
            f.view_mut((n_s * i, n_a * j), (n_s, n_a)).copy_from(&block);
            if i < t {
                block = &a_list[i] * block;
            }
        }
    }
    Ok(LiftedSystem { f, n_s, n_a, t })
}

fn stack_states(states: &[StateVec], n_s: usize) -> LabResult<StateVec> {
    let mut stacked = StateVec::zeros(n_s * states.len());
    for (i, s) in states.iter().enumerate() {
        if s.len() != n_s {
            return Err(LabError::DimensionMismatch {
                context: "stacked state",
                expected: n_s,
                actual: s.len(),
            });
        }
        stacked.rows_mut(n_s * i, n_s).copy_from(s);
    }
    Ok(stacked)
}

fn stack_inputs(inputs: &[StateVec], n_a: usize) -> LabResult<StateVec> {
    let mut stacked = StateVec::zeros(n_a * inputs.len());
    for (i, u) in inputs.iter().enumerate() {
        if u.len() != n_a {
            return Err(LabError::DimensionMismatch {
                context: "stacked input",
                expected: n_a,
                actual: u.len(),
            });
        }
        stacked.rows_mut(n_a * i, n_a).copy_from(u);
    }
    Ok(stacked)
}

/// Recovers the episode's lumped disturbance `d = s_stacked - F u_stacked`
/// from observed states `s_0 .. s_T` and applied inputs `u_0 .. u_{T-1}`.
pub fn estimate_disturbance(
    states: &[StateVec],
    inputs: &[StateVec],
    lifted: &LiftedSystem,
) -> LabResult<StateVec> {
    if states.len() != lifted.t + 1 || inputs.len() != lifted.t {
        return Err(LabError::InvalidArgument {
            context: "estimate_disturbance",
            message: format!(
                "expected {} states and {} inputs, got {} and {}",
                lifted.t + 1,
                lifted.t,
                states.len(),
                inputs.len()
            ),
        });
    }
    let s = stack_states(states, lifted.n_s)?;
    let u = stack_inputs(inputs, lifted.n_a)?;
    Ok(s - &lifted.f * u)
}

/// Norm-optimal input update: the minimizer of
/// `0.5 ||e - F du||_M^2 + 0.5 ||du||_W^2` added to the previous input,
/// `u + (F' M F + W)^{-1} F' M e`.
pub fn noilc_update(
    u_prev: &StateVec,
    error_prev: &StateVec,
    lifted: &LiftedSystem,
    weights: &IlcWeights,
) -> LabResult<StateVec> {
    let (rows, cols) = lifted.f.shape();
    if u_prev.len() != cols {
        return Err(LabError::DimensionMismatch {
            context: "noilc input",
            expected: cols,
            actual: u_prev.len(),
        });
    }
    if error_prev.len() != rows {
        return Err(LabError::DimensionMismatch {
            context: "noilc error",
            expected: rows,
            actual: error_prev.len(),
        });
    }
    if weights.m.shape() != (rows, rows) {
        return Err(LabError::DimensionMismatch {
            context: "noilc error weight",
            expected: rows,
            actual: weights.m.nrows(),
        });
    }
    if weights.w.shape() != (cols, cols) {
        return Err(LabError::DimensionMismatch {
            context: "noilc input weight",
            expected: cols,
            actual: weights.w.nrows(),
        });
    }
    let ftm = lifted.f.transpose() * &weights.m;
    let lhs = &ftm * &lifted.f + &weights.w;
    let rhs = ftm * error_prev;
    let du = solve_spd(&lhs, &rhs, "noilc normal equations")?;
    Ok(u_prev + du)
}

/// One closed-form model-based improvement of an episodic input policy:
/// `u + (F' F + C_pi)^{-1} F' (r_bar - s_stacked)`, which is the
/// norm-optimal update with identity error weight and input penalty `C_pi`.
pub fn mbrl_closed_form(
    r_bar: &StateVec,
    s_stacked: &StateVec,
    u: &StateVec,
    lifted: &LiftedSystem,
    c_pi: &Mat,
) -> LabResult<StateVec> {
    if r_bar.len() != s_stacked.len() {
        return Err(LabError::DimensionMismatch {
            context: "closed-form reference",
            expected: s_stacked.len(),
            actual: r_bar.len(),
        });
    }
    let weights = IlcWeights {
        m: Mat::identity(lifted.f.nrows(), lifted.f.nrows()),
        w: c_pi.clone(),
    };
    let error = r_bar - s_stacked;
    noilc_update(u, &error, lifted, &weights)
}

/// Runs the update repeatedly on the fixed-disturbance episode model
/// `s_stacked = F u + d`, starting from `u0` and tracking `r_bar`.
///
/// Returns the weighted tracking-error norm `||r_bar - s_stacked||_M` of
/// each episode, including the initial one.
pub fn ilc_iterate(
    lifted: &LiftedSystem,
    d: &StateVec,
    r_bar: &StateVec,
    u0: &StateVec,
    weights: &IlcWeights,
    iterations: usize,
) -> LabResult<Vec<f64>> {
    if d.len() != lifted.f.nrows() || r_bar.len() != lifted.f.nrows() {
        return Err(LabError::DimensionMismatch {
            context: "ilc_iterate trajectory",
            expected: lifted.f.nrows(),
            actual: if d.len() != lifted.f.nrows() {
                d.len()
            } else {
                r_bar.len()
            },
        });
    }
    let mut u = u0.clone();
    let mut norms = Vec::with_capacity(iterations + 1);
    for _ in 0..=iterations {
        let s = &lifted.f * &u + d;
        let e = r_bar - s;
        norms.push((e.transpose() * &weights.m * &e)[(0, 0)].max(0.0).sqrt());
        u = noilc_update(&u, &e, lifted, weights)?;
    }
    Ok(norms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng as _;

    fn scalar_mat(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn random_mat<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn lifted_scalar_example() {
        let lifted = build_lifted(&scalar_mat(1.0), &scalar_mat(2.0), 2).unwrap();
        let expected = Mat::from_row_slice(3, 2, &[0.0, 0.0, 2.0, 0.0, 2.0, 2.0]);
        assert_eq!(lifted.f, expected);
    }

    #[test]
    fn lifted_zero_input_matrix_gives_zero_map() {
        let lifted = build_lifted(&scalar_mat(0.7), &scalar_mat(0.0), 4).unwrap();
        assert!(lifted.f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lifted_first_block_row_is_always_zero() {
        let mut rng = stream(80, &[0]);
        let lifted = build_lifted(&random_mat(3, 3, &mut rng), &random_mat(3, 2, &mut rng), 5)
            .unwrap();
        assert!(lifted
            .f
            .view((0, 0), (3, lifted.f.ncols()))
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn lifted_matches_forward_simulation() {
        let mut rng = stream(81, &[0]);
        for _ in 0..20 {
            let n_s = rng.random_range(1..4);
            let n_a = rng.random_range(1..4);
            let t = rng.random_range(1..6);
            let a = random_mat(n_s, n_s, &mut rng);
            let b = random_mat(n_s, n_a, &mut rng);
            let lifted = build_lifted(&a, &b, t).unwrap();
            let inputs: Vec<StateVec> = (0..t)
                .map(|_| StateVec::from_fn(n_a, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let mut s = StateVec::zeros(n_s);
            let mut states = vec![s.clone()];
            for u in &inputs {
                s = &a * &s + &b * u;
                states.push(s.clone());
            }
            let predicted = &lifted.f * stack_inputs(&inputs, n_a).unwrap();
            let simulated = stack_states(&states, n_s).unwrap();
            assert_relative_eq!(predicted, simulated, epsilon = 1e-10);
        }
    }

    #[test]
    fn lifted_timevarying_example() {
        // T = 2, A_1 = 3, B_0 = 1, B_1 = 2; A_0 never enters the map.
        let a_list = vec![scalar_mat(99.0), scalar_mat(3.0)];
        let b_list = vec![scalar_mat(1.0), scalar_mat(2.0)];
        let lifted = build_lifted_timevarying(&a_list, &b_list).unwrap();
        let expected = Mat::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 3.0, 2.0]);
        assert_eq!(lifted.f, expected);
    }

    #[test]
    fn lifted_timevarying_reduces_to_time_invariant() {
        let mut rng = stream(82, &[0]);
        let a = random_mat(2, 2, &mut rng);
        let b = random_mat(2, 1, &mut rng);
        let constant = build_lifted(&a, &b, 4).unwrap();
        let varying =
            build_lifted_timevarying(&vec![a.clone(); 4], &vec![b.clone(); 4]).unwrap();
        assert_eq!(constant, varying);
    }

    #[test]
    fn lifted_rejects_mismatched_lists() {
        assert!(build_lifted_timevarying(&[scalar_mat(1.0)], &[]).is_err());
        assert!(build_lifted_timevarying(&[], &[]).is_err());
        assert!(build_lifted_timevarying(
            &[scalar_mat(1.0)],
            &[Mat::from_row_slice(2, 1, &[1.0, 0.0])]
        )
        .is_err());
    }

    #[test]
    fn disturbance_recovery_is_exact() {
        let mut rng = stream(83, &[0]);
        let n_s = 2;
        let n_a = 1;
        let t = 4;
        let a = random_mat(n_s, n_s, &mut rng);
        let b = random_mat(n_s, n_a, &mut rng);
        let lifted = build_lifted(&a, &b, t).unwrap();
        let s0 = StateVec::from_fn(n_s, |_, _| rng.random_range(-1.0..1.0));
        let disturbances: Vec<StateVec> = (0..t)
            .map(|_| StateVec::from_fn(n_s, |_, _| rng.random_range(-0.1..0.1)))
            .collect();
        let inputs: Vec<StateVec> = (0..t)
            .map(|_| StateVec::from_fn(n_a, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let mut s = s0.clone();
        let mut states = vec![s.clone()];
        for k in 0..t {
            s = &a * &s + &b * &inputs[k] + &disturbances[k];
            states.push(s.clone());
        }
        let d = estimate_disturbance(&states, &inputs, &lifted).unwrap();
        // The same d must reproduce the episode for any other input sequence.
        let inputs2: Vec<StateVec> = (0..t)
            .map(|_| StateVec::from_fn(n_a, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let mut s = s0.clone();
        let mut states2 = vec![s.clone()];
        for k in 0..t {
            s = &a * &s + &b * &inputs2[k] + &disturbances[k];
            states2.push(s.clone());
        }
        let predicted = &lifted.f * stack_inputs(&inputs2, n_a).unwrap() + &d;
        let observed = stack_states(&states2, n_s).unwrap();
        assert_relative_eq!(predicted, observed, epsilon = 1e-10);
        // The leading block of d is the initial state itself.
        assert_relative_eq!(
            StateVec::from(d.rows(0, n_s)),
            s0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn disturbance_checks_lengths() {
        let lifted = build_lifted(&scalar_mat(1.0), &scalar_mat(1.0), 2).unwrap();
        let s = vec![StateVec::zeros(1); 2];
        let u = vec![StateVec::zeros(1); 2];
        assert!(estimate_disturbance(&s, &u, &lifted).is_err());
    }

    #[test]
    fn noilc_worked_example() {
        // T = 1, B = 2, M = W = I, e = stacked [0, 3]: du = 2*3/(4+1) = 1.2.
        let lifted = build_lifted(&scalar_mat(1.0), &scalar_mat(2.0), 1).unwrap();
        let weights = IlcWeights::identity(&lifted, 1.0);
        let u = StateVec::from_element(1, 0.0);
        let e = StateVec::from_row_slice(&[0.0, 3.0]);
        let updated = noilc_update(&u, &e, &lifted, &weights).unwrap();
        assert_relative_eq!(updated[0], 1.2, epsilon = 1e-12);
    }

    #[test]
    fn noilc_zero_error_is_a_fixed_point() {
        let mut rng = stream(84, &[0]);
        let lifted = build_lifted(&random_mat(2, 2, &mut rng), &random_mat(2, 1, &mut rng), 3)
            .unwrap();
        let weights = IlcWeights::identity(&lifted, 0.5);
        let u = StateVec::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let e = StateVec::zeros(lifted.f.nrows());
        let updated = noilc_update(&u, &e, &lifted, &weights).unwrap();
        assert_relative_eq!(updated, u, epsilon = 1e-14);
    }

    #[test]
    fn noilc_minimizes_its_objective() {
        let mut rng = stream(85, &[0]);
        let lifted = build_lifted(&random_mat(2, 2, &mut rng), &random_mat(2, 2, &mut rng), 3)
            .unwrap();
        let weights = IlcWeights::identity(&lifted, 0.3);
        let u = StateVec::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let e = StateVec::from_fn(lifted.f.nrows(), |_, _| rng.random_range(-1.0..1.0));
        let objective = |du: &StateVec| -> f64 {
            let resid = &e - &lifted.f * du;
            0.5 * (resid.transpose() * &weights.m * &resid)[(0, 0)]
                + 0.5 * (du.transpose() * &weights.w * du)[(0, 0)]
        };
        let best = noilc_update(&u, &e, &lifted, &weights).unwrap() - &u;
        let value = objective(&best);
        for _ in 0..100 {
            let perturbed =
                &best + StateVec::from_fn(6, |_, _| rng.random_range(-0.5..0.5));
            assert!(objective(&perturbed) >= value - 1e-12);
        }
    }

    #[test]
    fn closed_form_with_tracked_reference_leaves_input_unchanged() {
        let mut rng = stream(86, &[0]);
        let lifted = build_lifted(&random_mat(2, 2, &mut rng), &random_mat(2, 1, &mut rng), 3)
            .unwrap();
        let u = StateVec::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let s = StateVec::from_fn(lifted.f.nrows(), |_, _| rng.random_range(-1.0..1.0));
        let c_pi = Mat::identity(3, 3) * 0.7;
        let updated = mbrl_closed_form(&s, &s, &u, &lifted, &c_pi).unwrap();
        assert_relative_eq!(updated, u, epsilon = 1e-14);
    }

    #[test]
    fn closed_form_equals_norm_optimal_update() {
        let mut rng = stream(87, &[0]);
        for _ in 0..50 {
            let n_s = rng.random_range(1..4);
            let n_a = rng.random_range(1..4);
            let t = rng.random_range(1..5);
            let lifted = build_lifted(
                &random_mat(n_s, n_s, &mut rng),
                &random_mat(n_s, n_a, &mut rng),
                t,
            )
            .unwrap();
            let cols = lifted.f.ncols();
            let u = StateVec::from_fn(cols, |_, _| rng.random_range(-1.0..1.0));
            let s = StateVec::from_fn(lifted.f.nrows(), |_, _| rng.random_range(-1.0..1.0));
            let r_bar = StateVec::from_fn(lifted.f.nrows(), |_, _| rng.random_range(-1.0..1.0));
            // Random SPD input penalty.
            let half = random_mat(cols, cols, &mut rng);
            let c_pi = &half * half.transpose() + Mat::identity(cols, cols) * 0.1;
            let closed = mbrl_closed_form(&r_bar, &s, &u, &lifted, &c_pi).unwrap();
            let weights = IlcWeights {
                m: Mat::identity(lifted.f.nrows(), lifted.f.nrows()),
                w: c_pi.clone(),
            };
            let error = &r_bar - &s;
            let norm_optimal = noilc_update(&u, &error, &lifted, &weights).unwrap();
            assert_relative_eq!(closed, norm_optimal, max_relative = 1e-8, epsilon = 1e-10);
        }
    }

    #[test]
    fn closed_form_with_huge_penalty_freezes_input() {
        let lifted = build_lifted(&scalar_mat(1.0), &scalar_mat(2.0), 2).unwrap();
        let u = StateVec::from_row_slice(&[0.3, -0.4]);
        let s = StateVec::zeros(3);
        let r_bar = StateVec::from_row_slice(&[0.0, 1.0, 1.0]);
        let c_pi = Mat::identity(2, 2) * 1e6;
        let updated = mbrl_closed_form(&r_bar, &s, &u, &lifted, &c_pi).unwrap();
        assert_relative_eq!(updated, u, epsilon = 1e-4);
    }

    #[test]
    fn iterate_already_tracking_stays_flat() {
        let lifted = build_lifted(&scalar_mat(0.5), &scalar_mat(1.0), 3).unwrap();
        let weights = IlcWeights::identity(&lifted, 0.2);
        let u0 = StateVec::zeros(3);
        let d = StateVec::zeros(4);
        let r_bar = StateVec::zeros(4);
        let norms = ilc_iterate(&lifted, &d, &r_bar, &u0, &weights, 5).unwrap();
        assert!(norms.iter().all(|n| *n == 0.0));
    }

    #[test]
    fn iterate_without_input_penalty_converges_in_one_step() {
        // A reachable reference (in the range of F from d) is matched exactly
        // after a single unregularized update.
        let mut rng = stream(88, &[0]);
        let lifted = build_lifted(&random_mat(2, 2, &mut rng), &random_mat(2, 2, &mut rng), 3)
            .unwrap();
        let d = StateVec::from_fn(lifted.f.nrows(), |r, _| {
            if r < 2 {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let u_star = StateVec::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let r_bar = &lifted.f * &u_star + &d;
        let weights = IlcWeights {
            m: Mat::identity(lifted.f.nrows(), lifted.f.nrows()),
            w: Mat::identity(6, 6) * 1e-10,
        };
        let norms = ilc_iterate(&lifted, &d, &r_bar, &StateVec::zeros(6), &weights, 2).unwrap();
        assert!(norms[0] > 1e-3);
        assert!(norms[1] < 1e-6, "norms {norms:?}");
    }

    #[test]
    fn iterate_with_penalty_decreases_monotonically() {
        let mut rng = stream(89, &[0]);
        let lifted = build_lifted(&random_mat(2, 2, &mut rng), &random_mat(2, 1, &mut rng), 4)
            .unwrap();
        let d = StateVec::from_fn(lifted.f.nrows(), |_, _| rng.random_range(-0.5..0.5));
        let u_star = StateVec::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let r_bar = &lifted.f * &u_star + &d;
        let weights = IlcWeights::identity(&lifted, 0.05);
        let norms =
            ilc_iterate(&lifted, &d, &r_bar, &StateVec::zeros(4), &weights, 20).unwrap();
        for pair in norms.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "norms {norms:?}");
        }
        assert!(norms[20] < 0.1 * norms[0]);
    }

    #[test]
    fn noilc_rejects_singular_system() {
        // Zero input map and zero regularizer make the normal equations
        // singular.
        let lifted = build_lifted(&scalar_mat(1.0), &scalar_mat(0.0), 2).unwrap();
        let weights = IlcWeights {
            m: Mat::identity(3, 3),
            w: Mat::zeros(2, 2),
        };
        let u = StateVec::zeros(2);
        let e = StateVec::from_row_slice(&[0.0, 1.0, 1.0]);
        assert!(matches!(
            noilc_update(&u, &e, &lifted, &weights),
            Err(LabError::SingularSystem { .. })
        ));
    }
}
