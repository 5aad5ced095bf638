use riskclimb::nlp::{
    check_derivatives, solve, NlpProblem, SolveOptions, SolveStatus, SparseMatrix,
};

/// min x^2 subject to x >= 2, written as the inequality 2 - x <= 0.
struct Floor;

impl NlpProblem<f64> for Floor {
    fn n_vars(&self) -> usize {
        1
    }
    fn n_eq(&self) -> usize {
        0
    }
    fn n_ineq(&self) -> usize {
        1
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY], vec![f64::INFINITY])
    }
    fn initial_point(&self) -> Vec<f64> {
        vec![-3.0]
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x[0] * x[0]
    }
    fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = 2.0 * x[0];
    }
    fn eq_values(&self, _: &[f64], _: &mut [f64]) {}
    fn eq_jacobian(&self, _: &[f64]) -> SparseMatrix<f64> {
        SparseMatrix::new(0, 1)
    }
    fn ineq_values(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 - x[0];
    }
    fn ineq_jacobian(&self, _: &[f64]) -> SparseMatrix<f64> {
        let mut j = SparseMatrix::new(1, 1);
        j.push(0, 0, -1.0);
        j
    }
}

/// Rosenbrock restricted to the disc x^2 + y^2 <= 1.5; the unconstrained
/// minimum (1, 1) lies outside it.
struct DiscRosenbrock {
    corrupt: bool,
}

impl NlpProblem<f64> for DiscRosenbrock {
    fn n_vars(&self) -> usize {
        2
    }
    fn n_eq(&self) -> usize {
        0
    }
    fn n_ineq(&self) -> usize {
        1
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-2.0; 2], vec![2.0; 2])
    }
    fn initial_point(&self) -> Vec<f64> {
        vec![-1.0, 0.5]
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }
    fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
        g[1] = 200.0 * (x[1] - x[0] * x[0]);
        if self.corrupt {
            g[1] *= 1.01;
        }
    }
    fn eq_values(&self, _: &[f64], _: &mut [f64]) {}
    fn eq_jacobian(&self, _: &[f64]) -> SparseMatrix<f64> {
        SparseMatrix::new(0, 2)
    }
    fn ineq_values(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] * x[0] + x[1] * x[1] - 1.5;
    }
    fn ineq_jacobian(&self, x: &[f64]) -> SparseMatrix<f64> {
        let mut j = SparseMatrix::new(1, 2);
        j.push(0, 0, 2.0 * x[0]);
        j.push(0, 1, 2.0 * x[1]);
        j
    }
}

/// min |x|^2 subject to A x = b with a full-row-rank 2x4 matrix.
struct MinNorm;

const A: [[f64; 4]; 2] = [[1.0, 2.0, 0.0, -1.0], [0.0, 1.0, 3.0, 1.0]];
const B: [f64; 2] = [4.0, -2.0];

impl NlpProblem<f64> for MinNorm {
    fn n_vars(&self) -> usize {
        4
    }
    fn n_eq(&self) -> usize {
        2
    }
    fn n_ineq(&self) -> usize {
        0
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY; 4], vec![f64::INFINITY; 4])
    }
    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; 4]
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
    fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi = 2.0 * xi;
        }
    }
    fn eq_values(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..2 {
            out[r] = (0..4).map(|c| A[r][c] * x[c]).sum::<f64>() - B[r];
        }
    }
    fn eq_jacobian(&self, _: &[f64]) -> SparseMatrix<f64> {
        let mut j = SparseMatrix::new(2, 4);
        for r in 0..2 {
            for c in 0..4 {
                j.push(r, c, A[r][c]);
            }
        }
        j
    }
    fn ineq_values(&self, _: &[f64], _: &mut [f64]) {}
    fn ineq_jacobian(&self, _: &[f64]) -> SparseMatrix<f64> {
        SparseMatrix::new(0, 4)
    }
}

#[test]
fn active_lower_limit() {
    let r = solve(&Floor, &SolveOptions::default());
    assert_eq!(r.status, SolveStatus::Converged);
    assert!((r.x[0] - 2.0).abs() < 1e-6, "{:?}", r.x);
    assert!(
        (r.ineq_multipliers[0] - 4.0).abs() < 1e-4,
        "{:?}",
        r.ineq_multipliers
    );
}

#[test]
fn rosenbrock_on_a_disc() {
    let r = solve(&DiscRosenbrock { corrupt: false }, &SolveOptions::default());
    assert_eq!(r.status, SolveStatus::Converged);
    let (x, y) = (r.x[0], r.x[1]);
    assert!((x * x + y * y - 1.5).abs() < 1e-5, "{:?}", r.x);
    // Stationarity on the circle: the objective gradient is parallel to the
    // outward normal and points inward.
    let mut g = [0.0; 2];
    DiscRosenbrock { corrupt: false }.objective_gradient(&r.x, &mut g);
    let cross = g[0] * y - g[1] * x;
    assert!(cross.abs() < 1e-3, "{cross}");
    assert!(g[0] * x + g[1] * y < 0.0);
    assert!(x > 0.9 && y > 0.6, "{:?}", r.x);
}

#[test]
fn minimum_norm_solution_of_linear_system() {
    let r = solve(&MinNorm, &SolveOptions::default());
    assert_eq!(r.status, SolveStatus::Converged);
    // x* = A^T (A A^T)^-1 b
    let a = nalgebra::Matrix2x4::from_row_slice(&A.concat());
    let expect =
        a.transpose() * (a * a.transpose()).try_inverse().unwrap() * nalgebra::Vector2::from(B);
    for i in 0..4 {
        assert!((r.x[i] - expect[i]).abs() < 1e-6, "{:?} vs {expect}", r.x);
    }
}

#[test]
fn derivative_check_catches_a_corrupted_gradient() {
    let x = [0.3, -0.7];
    let good = check_derivatives(&DiscRosenbrock { corrupt: false }, &x, 1e-6);
    assert!(good.max_rel_error() < 1e-6, "{good:?}");
    let bad = check_derivatives(&DiscRosenbrock { corrupt: true }, &x, 1e-6);
    assert!(bad.max_rel_error_objective > 1e-3, "{bad:?}");
}
