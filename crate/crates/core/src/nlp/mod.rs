//! Smooth constrained optimization.
//!
//! Problems have the form
//!
//! ```text
//! minimize f(x)  s.t.  h(x) = 0,  g(x) <= 0,  lower <= x <= upper
//! ```
//!
//! and are solved by an augmented Lagrangian method: equality and inequality
//! multipliers are updated in an outer loop, each subproblem is a
//! box-constrained minimization handled by projected L-BFGS. Once the
//! iterate is nearly feasible and stationary, a Gauss-Newton projection onto
//! the equality and active inequality constraints removes the remaining
//! infeasibility to near machine precision.

mod bfgs;
mod check;
mod lbfgs;

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use bfgs::minimize_bounded_dense;
pub use check::{check_derivatives, DerivativeCheck};
pub use lbfgs::{minimize_bounded, InnerObjective, InnerOptions, InnerResult};

use crate::scalar::Real;
use lbfgs::{project, projected_gradient_norm};

/// Sparse matrix in triplet form. Repeated entries are summed.
#[derive(Debug, Clone, Default)]
pub struct SparseMatrix<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, T)>,
}

impl<T: Real> SparseMatrix<T> {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: T) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != T::zero() {
            self.entries.push((row, col, value));
        }
    }

    /// `A^T v`
    pub fn tr_mul(&self, v: &[T], out: &mut [T]) {
        for &(r, c, a) in &self.entries {
            out[c] += a * v[r];
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, a) in &self.entries {
            m[(r, c)] += a;
        }
        m
    }
}

/// A smooth nonlinear program. Implementations must be reentrant.
pub trait NlpProblem<T: Real> {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    /// Lower and upper variable bounds (infinite entries allowed).
    fn bounds(&self) -> (Vec<T>, Vec<T>);
    fn initial_point(&self) -> Vec<T>;
    fn objective(&self, x: &[T]) -> T;
    fn objective_gradient(&self, x: &[T], grad: &mut [T]);
    fn eq_values(&self, x: &[T], out: &mut [T]);
    fn eq_jacobian(&self, x: &[T]) -> SparseMatrix<T>;
    fn ineq_values(&self, x: &[T], out: &mut [T]);
    fn ineq_jacobian(&self, x: &[T]) -> SparseMatrix<T>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    Infeasible,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol_feas: f64,
    pub tol_kkt: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Run the Gauss-Newton feasibility projection near convergence.
    pub polish: bool,
    /// Largest variable count for which subproblems use a dense inverse
    /// Hessian; larger problems use limited memory.
    pub dense_limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-6,
            tol_kkt: 1e-4,
            max_outer: 50,
            max_inner: 500,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e10,
            polish: true,
            dense_limit: 3000,
        }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub feasibility: f64,
    pub kkt: f64,
    pub penalty: f64,
    pub inner_iterations: usize,
    /// Augmented Lagrangian at the start and end of the subproblem.
    pub merit_start: f64,
    pub merit_end: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport<T> {
    pub status: SolveStatus,
    pub x: Vec<T>,
    pub objective: T,
    pub max_eq_residual: T,
    pub max_ineq_violation: T,
    pub kkt_residual: T,
    /// Outer iterations.
    pub iterations: usize,
    pub inner_iterations: usize,
    pub wall_time_s: f64,
    pub eq_multipliers: Vec<T>,
    pub ineq_multipliers: Vec<T>,
    pub history: Vec<IterRecord>,
    pub polished: bool,
}

struct Evaluated<T> {
    h: Vec<T>,
    g: Vec<T>,
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter()
        .fold(T::zero(), |m, a| if a.abs() > m { a.abs() } else { m })
}

fn max_pos<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, a| if *a > m { *a } else { m })
}

fn evaluate<T: Real, P: NlpProblem<T> + ?Sized>(p: &P, x: &[T]) -> Evaluated<T> {
    let mut h = vec![T::zero(); p.n_eq()];
    let mut g = vec![T::zero(); p.n_ineq()];
    p.eq_values(x, &mut h);
    p.ineq_values(x, &mut g);
    Evaluated { h, g }
}

/// The augmented Lagrangian for fixed multipliers and penalty.
struct Merit<'a, T: Real, P: NlpProblem<T> + ?Sized> {
    p: &'a P,
    lambda: &'a [T],
    mu: &'a [T],
    rho: T,
}

impl<T: Real, P: NlpProblem<T> + ?Sized> Merit<'_, T, P> {
    fn terms(&self, x: &[T]) -> (T, Evaluated<T>) {
        let e = evaluate(self.p, x);
        let half = T::lit(0.5);
        let mut v = self.p.objective(x);
        for (i, hi) in e.h.iter().enumerate() {
            v += self.lambda[i] * *hi + half * self.rho * *hi * *hi;
        }
        for (k, gk) in e.g.iter().enumerate() {
            let t = self.mu[k] + self.rho * *gk;
            let t = if t > T::zero() { t } else { T::zero() };
            v += (t * t - self.mu[k] * self.mu[k]) / (T::lit(2.0) * self.rho);
        }
        (v, e)
    }
}

impl<T: Real, P: NlpProblem<T> + ?Sized> InnerObjective<T> for Merit<'_, T, P> {
    fn value(&self, x: &[T]) -> T {
        self.terms(x).0
    }

    fn value_grad(&self, x: &[T], grad: &mut [T]) -> T {
        let (v, e) = self.terms(x);
        grad.iter_mut().for_each(|g| *g = T::zero());
        self.p.objective_gradient(x, grad);
        if !e.h.is_empty() {
            let w: Vec<T> =
                e.h.iter()
                    .enumerate()
                    .map(|(i, hi)| self.lambda[i] + self.rho * *hi)
                    .collect();
            self.p.eq_jacobian(x).tr_mul(&w, grad);
        }
        if !e.g.is_empty() {
            let w: Vec<T> =
                e.g.iter()
                    .enumerate()
                    .map(|(k, gk)| {
                        let t = self.mu[k] + self.rho * *gk;
                        if t > T::zero() {
                            t
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
            self.p.ineq_jacobian(x).tr_mul(&w, grad);
        }
        v
    }
}

/// Half the squared constraint violation, minimized during feasibility restoration.
struct Infeasibility<'a, T: Real, P: NlpProblem<T> + ?Sized> {
    p: &'a P,
    _t: std::marker::PhantomData<T>,
}

impl<T: Real, P: NlpProblem<T> + ?Sized> InnerObjective<T> for Infeasibility<'_, T, P> {
    fn value_grad(&self, x: &[T], grad: &mut [T]) -> T {
        let e = evaluate(self.p, x);
        grad.iter_mut().for_each(|g| *g = T::zero());
        let gp: Vec<T> =
            e.g.iter()
                .map(|v| if *v > T::zero() { *v } else { T::zero() })
                .collect();
        self.p.eq_jacobian(x).tr_mul(&e.h, grad);
        self.p.ineq_jacobian(x).tr_mul(&gp, grad);
        let s =
            e.h.iter()
                .chain(gp.iter())
                .fold(T::zero(), |a, v| a + *v * *v);
        T::lit(0.5) * s
    }
}

fn lagrangian_gradient<T: Real, P: NlpProblem<T> + ?Sized>(
    p: &P,
    x: &[T],
    lambda: &[T],
    mu: &[T],
) -> Vec<T> {
    let mut g = vec![T::zero(); p.n_vars()];
    p.objective_gradient(x, &mut g);
    if p.n_eq() > 0 {
        p.eq_jacobian(x).tr_mul(lambda, &mut g);
    }
    if p.n_ineq() > 0 {
        p.ineq_jacobian(x).tr_mul(mu, &mut g);
    }
    g
}

/// Least-squares multipliers at `x`: equality multipliers and non-negative
/// multipliers for inequalities within `active_tol` of being active, fitted
/// to the objective gradient over the variables not held by a bound.
/// Largest `mu_k * |g_k|` over inactive rows.
fn complementarity<T: Real>(g: &[T], mu: &[T]) -> T {
    g.iter()
        .zip(mu)
        .map(|(gk, mk)| {
            if *gk < T::zero() {
                -*gk * *mk
            } else {
                T::zero()
            }
        })
        .fold(T::zero(), |a, b| if b > a { b } else { a })
}

fn least_squares_multipliers<T: Real, P: NlpProblem<T> + ?Sized>(
    p: &P,
    x: &[T],
    lower: &[T],
    upper: &[T],
    active_tol: T,
) -> Option<(Vec<T>, Vec<T>)> {
    let n = p.n_vars();
    let e = evaluate(p, x);
    let mut grad = vec![T::zero(); n];
    p.objective_gradient(x, &mut grad);
    let free: Vec<usize> = (0..n)
        .filter(|&i| x[i] > lower[i] && x[i] < upper[i])
        .collect();
    let mut row_of = vec![usize::MAX; n];
    for (r, &i) in free.iter().enumerate() {
        row_of[i] = r;
    }
    let neq = e.h.len();
    let mut active: Vec<usize> = (0..e.g.len()).filter(|&k| e.g[k] >= -active_tol).collect();
    let jeq = p.eq_jacobian(x);
    let jin = p.ineq_jacobian(x);
    for _ in 0..20 {
        let mut col_of = vec![usize::MAX; e.g.len()];
        for (c, &k) in active.iter().enumerate() {
            col_of[k] = neq + c;
        }
        let m = neq + active.len();
        let mut a = DMatrix::<T>::zeros(free.len(), m);
        for &(row, col, v) in &jeq.entries {
            if row_of[col] != usize::MAX {
                a[(row_of[col], row)] += v;
            }
        }
        for &(row, col, v) in &jin.entries {
            if col_of[row] != usize::MAX && row_of[col] != usize::MAX {
                a[(row_of[col], col_of[row])] += v;
            }
        }
        let b = DVector::from_iterator(free.len(), free.iter().map(|&i| -grad[i]));
        let mut ata = a.transpose() * &a;
        let tr = (0..m).fold(T::zero(), |s, i| s + ata[(i, i)]);
        let reg = T::lit(1e-12) * (tr / T::from_usize_lossy(m.max(1)) + T::one());
        for i in 0..m {
            ata[(i, i)] += reg;
        }
        let y = ata.cholesky()?.solve(&(a.transpose() * b));
        let negative: Vec<usize> = (0..active.len())
            .filter(|&c| y[neq + c] < T::zero())
            .collect();
        if negative.is_empty() {
            let lambda = (0..neq).map(|i| y[i]).collect();
            let mut mu = vec![T::zero(); e.g.len()];
            for (c, &k) in active.iter().enumerate() {
                mu[k] = y[neq + c];
            }
            return Some((lambda, mu));
        }
        let drop: std::collections::HashSet<usize> =
            negative.into_iter().map(|c| active[c]).collect();
        active.retain(|k| !drop.contains(k));
    }
    None
}

/// Gauss-Newton projection onto `h = 0` and the violated or active
/// inequalities, holding variables that sit on a bound fixed. Returns the
/// projected point when it is at least as feasible as the input.
fn polish<T: Real, P: NlpProblem<T> + ?Sized>(
    p: &P,
    x0: &[T],
    lower: &[T],
    upper: &[T],
    target: T,
) -> Option<Vec<T>> {
    let n = p.n_vars();
    let mut x = x0.to_vec();
    let e0 = evaluate(p, &x);
    let start = max_abs(&e0.h).max(max_pos(&e0.g));
    let mut active: Vec<bool> = e0.g.iter().map(|v| *v > -target).collect();
    let mut best = (start, x.clone());
    for _ in 0..25 {
        let e = evaluate(p, &x);
        let feas = max_abs(&e.h).max(max_pos(&e.g));
        if feas < best.0 {
            best = (feas, x.clone());
        }
        if feas <= target {
            break;
        }
        for (k, v) in e.g.iter().enumerate() {
            if *v > T::zero() {
                active[k] = true;
            }
        }
        let free: Vec<usize> = (0..n)
            .filter(|&i| x[i] > lower[i] && x[i] < upper[i])
            .collect();
        let mut col_of = vec![usize::MAX; n];
        for (c, &i) in free.iter().enumerate() {
            col_of[i] = c;
        }
        let rows_ineq: Vec<usize> = (0..e.g.len()).filter(|&k| active[k]).collect();
        let m = e.h.len() + rows_ineq.len();
        if m == 0 {
            break;
        }
        let mut jac = DMatrix::<T>::zeros(m, free.len());
        let mut r = DVector::<T>::zeros(m);
        for (row, hv) in e.h.iter().enumerate() {
            r[row] = *hv;
        }
        for &(row, col, v) in &p.eq_jacobian(&x).entries {
            if col_of[col] != usize::MAX {
                jac[(row, col_of[col])] += v;
            }
        }
        let mut ineq_row = vec![usize::MAX; e.g.len()];
        for (j, &k) in rows_ineq.iter().enumerate() {
            ineq_row[k] = e.h.len() + j;
            r[e.h.len() + j] = e.g[k];
        }
        for &(row, col, v) in &p.ineq_jacobian(&x).entries {
            if ineq_row[row] != usize::MAX && col_of[col] != usize::MAX {
                jac[(ineq_row[row], col_of[col])] += v;
            }
        }
        let mut jjt = &jac * jac.transpose();
        let tr = (0..m).fold(T::zero(), |a, i| a + jjt[(i, i)]);
        let reg = T::lit(1e-13) * (tr / T::from_usize_lossy(m) + T::one());
        for i in 0..m {
            jjt[(i, i)] += reg;
        }
        let y = match jjt.clone().cholesky() {
            Some(c) => c.solve(&r),
            None => match jjt.lu().solve(&r) {
                Some(y) => y,
                None => break,
            },
        };
        let step = jac.transpose() * y;
        for (c, &i) in free.iter().enumerate() {
            x[i] -= step[c];
        }
        project(&mut x, lower, upper);
    }
    let e = evaluate(p, &x);
    let feas = max_abs(&e.h).max(max_pos(&e.g));
    if feas < best.0 {
        best = (feas, x);
    }
    if best.0 <= start {
        Some(best.1)
    } else {
        None
    }
}

/// Solves `p` from its initial point.
pub fn solve<T: Real, P: NlpProblem<T> + ?Sized>(p: &P, opts: &SolveOptions) -> SolveReport<T> {
    solve_from(p, &p.initial_point(), opts)
}

/// Solves `p` starting at `x0`.
pub fn solve_from<T: Real, P: NlpProblem<T> + ?Sized>(
    p: &P,
    x0: &[T],
    opts: &SolveOptions,
) -> SolveReport<T> {
    let started = Instant::now();
    let (lower, upper) = p.bounds();
    let mut x = x0.to_vec();
    project(&mut x, &lower, &upper);

    let mut lambda = vec![T::zero(); p.n_eq()];
    let mut mu = vec![T::zero(); p.n_ineq()];
    let mut rho = T::lit(opts.initial_penalty);
    let rho_max = T::lit(opts.max_penalty);
    let tol_feas = T::lit(opts.tol_feas);
    let tol_kkt = T::lit(opts.tol_kkt);

    let mut history = Vec::new();
    let mut inner_total = 0;
    let mut status = SolveStatus::IterLimit;
    let mut prev_feas = T::max_value_or_nan();
    let mut feas_trail: Vec<T> = Vec::new();
    let mut polished = false;
    let mut outer = 0;
    let mut kkt = T::max_value_or_nan();
    let dense = p.n_vars() <= opts.dense_limit;
    let mut curvature = None;

    while outer < opts.max_outer {
        outer += 1;
        let inner_tol = (0.1f64.powi(outer as i32)).max(0.1 * opts.tol_kkt);
        let merit = Merit {
            p,
            lambda: &lambda,
            mu: &mu,
            rho,
        };
        let merit_start = merit.value(&x).to_f64_lossy();
        let inner_opts = InnerOptions {
            max_iter: opts.max_inner,
            tol: inner_tol,
            ..InnerOptions::default()
        };
        let res = if dense {
            minimize_bounded_dense(&merit, &x, &lower, &upper, &inner_opts, &mut curvature)
        } else {
            minimize_bounded(&merit, &x, &lower, &upper, &inner_opts)
        };
        inner_total += res.iterations;
        x = res.x;

        let e = evaluate(p, &x);
        let feas = max_abs(&e.h).max(max_pos(&e.g));
        for (i, hi) in e.h.iter().enumerate() {
            lambda[i] += rho * *hi;
        }
        for (k, gk) in e.g.iter().enumerate() {
            let t = mu[k] + rho * *gk;
            mu[k] = if t > T::zero() { t } else { T::zero() };
        }
        let gl = lagrangian_gradient(p, &x, &lambda, &mu);
        kkt = projected_gradient_norm(&x, &gl, &lower, &upper);
        // The running estimates lag behind once the penalty is large; a
        // least-squares fit at the current point is a better certificate.
        if kkt > tol_kkt && feas <= T::lit(1e-3) {
            let base = (feas * T::lit(10.0)).max(tol_feas);
            for scale in [1.0, 10.0, 100.0, 1000.0] {
                let Some((l2, m2)) =
                    least_squares_multipliers(p, &x, &lower, &upper, base * T::lit(scale))
                else {
                    continue;
                };
                let k2 = projected_gradient_norm(
                    &x,
                    &lagrangian_gradient(p, &x, &l2, &m2),
                    &lower,
                    &upper,
                );
                let slack = complementarity(&e.g, &m2);
                if k2 < kkt && slack <= tol_kkt {
                    kkt = k2;
                    lambda = l2;
                    mu = m2;
                }
                if kkt <= tol_kkt {
                    break;
                }
            }
        }

        history.push(IterRecord {
            iter: outer,
            objective: p.objective(&x).to_f64_lossy(),
            feasibility: feas.to_f64_lossy(),
            kkt: kkt.to_f64_lossy(),
            penalty: rho.to_f64_lossy(),
            inner_iterations: res.iterations,
            merit_start,
            merit_end: res.value.to_f64_lossy(),
        });

        if feas <= tol_feas && kkt <= tol_kkt {
            status = SolveStatus::Converged;
            break;
        }

        // Close to a KKT point: try to finish with a feasibility projection.
        if opts.polish && kkt <= tol_kkt && feas <= T::lit(1e-3) {
            if let Some(xp) = polish(p, &x, &lower, &upper, tol_feas * T::lit(1e-4)) {
                let ep = evaluate(p, &xp);
                let fp = max_abs(&ep.h).max(max_pos(&ep.g));
                let glp = lagrangian_gradient(p, &xp, &lambda, &mu);
                let kp = projected_gradient_norm(&xp, &glp, &lower, &upper);
                if fp <= tol_feas && kp <= tol_kkt {
                    x = xp;
                    kkt = kp;
                    polished = true;
                    status = SolveStatus::Converged;
                    break;
                }
            }
        }

        if feas > T::lit(0.25) * prev_feas && (res.converged || feas > prev_feas) && rho < rho_max {
            rho = (rho * T::lit(opts.penalty_growth)).min(rho_max);
            curvature = None;
        }
        prev_feas = feas;
        feas_trail.push(feas);

        let stalled =
            feas_trail.len() >= 4 && feas > T::lit(0.9) * feas_trail[feas_trail.len() - 4];
        if rho >= rho_max && stalled && feas > tol_feas {
            let infeas = Infeasibility {
                p,
                _t: std::marker::PhantomData,
            };
            let restore_opts = InnerOptions {
                max_iter: opts.max_inner * 4,
                tol: 1e-14,
                ..InnerOptions::default()
            };
            let restore = if dense {
                minimize_bounded_dense(&infeas, &x, &lower, &upper, &restore_opts, &mut None)
            } else {
                minimize_bounded(&infeas, &x, &lower, &upper, &restore_opts)
            };
            let er = evaluate(p, &restore.x);
            let fr = max_abs(&er.h) + max_pos(&er.g);
            if fr > tol_feas {
                x = restore.x;
                status = SolveStatus::Infeasible;
                break;
            }
            x = restore.x;
            feas_trail.clear();
        }
    }

    if status == SolveStatus::Converged && opts.polish && !polished {
        if let Some(xp) = polish(p, &x, &lower, &upper, tol_feas * T::lit(1e-4)) {
            let glp = lagrangian_gradient(p, &xp, &lambda, &mu);
            let kp = projected_gradient_norm(&xp, &glp, &lower, &upper);
            if kp <= tol_kkt {
                x = xp;
                kkt = kp;
                polished = true;
            }
        }
    }

    let e = evaluate(p, &x);
    SolveReport {
        status,
        objective: p.objective(&x),
        max_eq_residual: max_abs(&e.h),
        max_ineq_violation: max_pos(&e.g),
        kkt_residual: kkt,
        x,
        iterations: outer,
        inner_iterations: inner_total,
        wall_time_s: started.elapsed().as_secs_f64(),
        eq_multipliers: lambda,
        ineq_multipliers: mu,
        history,
        polished,
    }
}

/// Writes the outer-iteration log as CSV with header `iter,obj,feas,kkt`.
pub fn write_iteration_log<W: Write>(history: &[IterRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iter,obj,feas,kkt")?;
    for r in history {
        writeln!(
            out,
            "{},{:e},{:e},{:e}",
            r.iter, r.objective, r.feasibility, r.kkt
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
