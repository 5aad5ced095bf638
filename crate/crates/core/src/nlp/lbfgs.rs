//! Projected limited-memory BFGS for box-constrained smooth minimization.

use std::collections::VecDeque;

use crate::scalar::Real;

/// Something that can be minimized by [`minimize_bounded`].
pub trait InnerObjective<T: Real> {
    /// Objective value and gradient written into `grad`.
    fn value_grad(&self, x: &[T], grad: &mut [T]) -> T;

    /// Objective value only. Defaults to discarding a gradient evaluation.
    fn value(&self, x: &[T]) -> T {
        let mut g = vec![T::zero(); x.len()];
        self.value_grad(x, &mut g)
    }
}

impl<T: Real, F: Fn(&[T], &mut [T]) -> T> InnerObjective<T> for F {
    fn value_grad(&self, x: &[T], grad: &mut [T]) -> T {
        self(x, grad)
    }
}

#[derive(Debug, Clone)]
pub struct InnerOptions {
    pub max_iter: usize,
    /// Projected-gradient infinity norm at which the search stops.
    pub tol: f64,
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_backtracks: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            memory: 12,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
    pub projected_gradient: T,
}

pub(crate) fn project<T: Real>(x: &mut [T], lower: &[T], upper: &[T]) {
    for i in 0..x.len() {
        if x[i] < lower[i] {
            x[i] = lower[i];
        }
        if x[i] > upper[i] {
            x[i] = upper[i];
        }
    }
}

/// `‖x - P(x - g)‖∞`, the first-order optimality measure for a box.
pub(crate) fn projected_gradient_norm<T: Real>(x: &[T], g: &[T], lower: &[T], upper: &[T]) -> T {
    let mut m = T::zero();
    for i in 0..x.len() {
        let mut t = x[i] - g[i];
        if t < lower[i] {
            t = lower[i];
        }
        if t > upper[i] {
            t = upper[i];
        }
        let r = (x[i] - t).abs();
        if r > m {
            m = r;
        }
    }
    m
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
///
/// Variables sitting on a bound with the gradient pushing outward are held
/// fixed when the quasi-Newton direction is formed; the step is projected
/// back onto the box and accepted under an Armijo condition measured along
/// the projected path.
pub fn minimize_bounded<T: Real, F: InnerObjective<T> + ?Sized>(
    f: &F,
    x0: &[T],
    lower: &[T],
    upper: &[T],
    opts: &InnerOptions,
) -> InnerResult<T> {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![T::zero(); n];
    let mut fx = f.value_grad(&x, &mut g);
    let tol = T::lit(opts.tol);
    let armijo = T::lit(1e-4);
    let mut pairs: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut converged = false;
    let mut stagnant = 0;

    let mut xn = vec![T::zero(); n];
    let mut gn = vec![T::zero(); n];

    while iterations < opts.max_iter {
        let pg = projected_gradient_norm(&x, &g, lower, upper);
        if pg <= tol {
            converged = true;
            break;
        }
        iterations += 1;

        let free: Vec<bool> = (0..n)
            .map(|i| {
                !((x[i] <= lower[i] && g[i] > T::zero()) || (x[i] >= upper[i] && g[i] < T::zero()))
            })
            .collect();

        // Two-loop recursion on the free subspace.
        let mut q: Vec<T> = (0..n)
            .map(|i| if free[i] { g[i] } else { T::zero() })
            .collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = *rho * dot(s, &q);
            for i in 0..n {
                if free[i] {
                    q[i] -= a * y[i];
                }
            }
            alphas.push(a);
        }
        let scale = match pairs.back() {
            Some((s, y, _)) => {
                let yy = dot(y, y);
                if yy > T::zero() {
                    dot(s, y) / yy
                } else {
                    T::one()
                }
            }
            None => {
                let gmax = g
                    .iter()
                    .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m });
                T::one() / (T::one() + gmax)
            }
        };
        for v in q.iter_mut() {
            *v *= scale;
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = *rho * dot(y, &q);
            for i in 0..n {
                if free[i] {
                    q[i] += s[i] * (*a - b);
                }
            }
        }
        let mut d: Vec<T> = q.iter().map(|v| -*v).collect();
        if dot(&d, &g) >= T::zero() {
            pairs.clear();
            let gmax = g
                .iter()
                .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m });
            let s0 = T::one() / (T::one() + gmax);
            for i in 0..n {
                d[i] = if free[i] { -g[i] * s0 } else { T::zero() };
            }
        }

        let mut step = T::one();
        let mut accepted = false;
        let mut fnew = fx;
        for _ in 0..opts.max_backtracks {
            for i in 0..n {
                xn[i] = x[i] + step * d[i];
            }
            project(&mut xn, lower, upper);
            let mut dec = T::zero();
            for i in 0..n {
                dec += g[i] * (xn[i] - x[i]);
            }
            if dec < T::zero() {
                fnew = f.value(&xn);
                if fnew.is_finite_value() && fnew <= fx + armijo * dec {
                    accepted = true;
                    break;
                }
            }
            step *= T::lit(0.5);
        }
        if !accepted {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        }

        let fnew2 = f.value_grad(&xn, &mut gn);
        let rel = (fx - fnew2).abs() / (T::one() + fx.abs());
        if rel <= T::lit(1e-15) {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        let _ = fnew;
        let s: Vec<T> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<T> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > T::lit(1e-12) * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > T::zero() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, T::one() / sy));
        }
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        fx = fnew2;
        if stagnant >= 5 {
            break;
        }
    }

    let pg = projected_gradient_norm(&x, &g, lower, upper);
    if pg <= tol {
        converged = true;
    }
    InnerResult {
        x,
        value: fx,
        iterations,
        converged,
        projected_gradient: pg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_unconstrained() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let inf = f64::INFINITY;
        let r = minimize_bounded(
            &f,
            &[-1.2, 1.0],
            &[-inf, -inf],
            &[inf, inf],
            &InnerOptions {
                max_iter: 2000,
                tol: 1e-10,
                ..Default::default()
            },
        );
        assert!(r.converged);
        assert!(
            (r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn active_bound_is_respected() {
        // min (x-1)^2 + (y+2)^2 with y >= 0
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 1.0);
            g[1] = 2.0 * (x[1] + 2.0);
            (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2)
        };
        let r = minimize_bounded(
            &f,
            &[5.0, 5.0],
            &[-10.0, 0.0],
            &[10.0, 10.0],
            &InnerOptions::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-7);
        assert_eq!(r.x[1], 0.0);
    }
}
