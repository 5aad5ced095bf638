use super::*;

/// min (x0-2)^2 + (x1-1)^2  s.t.  x0 + x1 = 2,  x0^2 - x1 <= 0
struct Small;

impl NlpProblem<f64> for Small {
    fn n_vars(&self) -> usize {
        2
    }
    fn n_eq(&self) -> usize {
        1
    }
    fn n_ineq(&self) -> usize {
        1
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-10.0; 2], vec![10.0; 2])
    }
    fn initial_point(&self) -> Vec<f64> {
        vec![3.0, -4.0]
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2)
    }
    fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = 2.0 * (x[0] - 2.0);
        g[1] = 2.0 * (x[1] - 1.0);
    }
    fn eq_values(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] + x[1] - 2.0;
    }
    fn eq_jacobian(&self, _x: &[f64]) -> SparseMatrix<f64> {
        let mut j = SparseMatrix::new(1, 2);
        j.push(0, 0, 1.0);
        j.push(0, 1, 1.0);
        j
    }
    fn ineq_values(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] * x[0] - x[1];
    }
    fn ineq_jacobian(&self, x: &[f64]) -> SparseMatrix<f64> {
        let mut j = SparseMatrix::new(1, 2);
        j.push(0, 0, 2.0 * x[0]);
        j.push(0, 1, -1.0);
        j
    }
}

#[test]
fn small_problem_reaches_kkt_point() {
    // Active constraints: x0 + x1 = 2 and x1 = x0^2 give x0 = 1, x1 = 1.
    let r = solve(&Small, &SolveOptions::default());
    assert_eq!(r.status, SolveStatus::Converged);
    assert!((r.x[0] - 1.0).abs() < 1e-5, "{:?}", r.x);
    assert!((r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    assert!(r.max_eq_residual < 1e-6);
    assert!(r.max_ineq_violation < 1e-6);
    assert!(r.ineq_multipliers[0] > 0.0);
}

#[test]
fn derivative_check_accepts_exact_jacobians() {
    let c = check_derivatives(&Small, &[0.3, -0.7], 1e-6);
    assert!(c.max_rel_error() < 1e-6, "{c:?}");
}

struct Contradiction;

impl NlpProblem<f64> for Contradiction {
    fn n_vars(&self) -> usize {
        1
    }
    fn n_eq(&self) -> usize {
        0
    }
    fn n_ineq(&self) -> usize {
        2
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY], vec![f64::INFINITY])
    }
    fn initial_point(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x[0] * x[0]
    }
    fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = 2.0 * x[0];
    }
    fn eq_values(&self, _x: &[f64], _out: &mut [f64]) {}
    fn eq_jacobian(&self, _x: &[f64]) -> SparseMatrix<f64> {
        SparseMatrix::new(0, 1)
    }
    fn ineq_values(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0 - x[0];
        out[1] = x[0] + 1.0;
    }
    fn ineq_jacobian(&self, _x: &[f64]) -> SparseMatrix<f64> {
        let mut j = SparseMatrix::new(2, 1);
        j.push(0, 0, -1.0);
        j.push(1, 0, 1.0);
        j
    }
}

#[test]
fn contradictory_constraints_are_reported_infeasible() {
    let r = solve(&Contradiction, &SolveOptions::default());
    assert_eq!(r.status, SolveStatus::Infeasible);
    assert!(r.max_ineq_violation > 0.5);
}

#[test]
fn iteration_log_has_header_and_one_row_per_outer_iteration() {
    let r = solve(&Small, &SolveOptions::default());
    let mut buf = Vec::new();
    write_iteration_log(&r.history, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iter,obj,feas,kkt");
    assert_eq!(lines.len(), r.history.len() + 1);
}

#[test]
fn merit_decreases_within_each_subproblem() {
    let r = solve(&Small, &SolveOptions::default());
    for rec in &r.history {
        assert!(rec.merit_end <= rec.merit_start + 1e-12, "{rec:?}");
    }
}

#[test]
fn f32_instantiation_runs() {
    struct Quad;
    impl NlpProblem<f32> for Quad {
        fn n_vars(&self) -> usize {
            1
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn n_ineq(&self) -> usize {
            0
        }
        fn bounds(&self) -> (Vec<f32>, Vec<f32>) {
            (vec![-5.0], vec![5.0])
        }
        fn initial_point(&self) -> Vec<f32> {
            vec![0.0]
        }
        fn objective(&self, x: &[f32]) -> f32 {
            x[0] * x[0]
        }
        fn objective_gradient(&self, x: &[f32], g: &mut [f32]) {
            g[0] = 2.0 * x[0];
        }
        fn eq_values(&self, x: &[f32], out: &mut [f32]) {
            out[0] = x[0] - 1.5;
        }
        fn eq_jacobian(&self, _x: &[f32]) -> SparseMatrix<f32> {
            let mut j = SparseMatrix::new(1, 1);
            j.push(0, 0, 1.0);
            j
        }
        fn ineq_values(&self, _x: &[f32], _out: &mut [f32]) {}
        fn ineq_jacobian(&self, _x: &[f32]) -> SparseMatrix<f32> {
            SparseMatrix::new(0, 1)
        }
    }
    let r = solve(
        &Quad,
        &SolveOptions {
            tol_feas: 1e-4,
            tol_kkt: 1e-3,
            ..Default::default()
        },
    );
    assert_eq!(r.status, SolveStatus::Converged);
    assert!((r.x[0] - 1.5).abs() < 1e-3);
}
