//! Projected BFGS with a dense inverse Hessian, for problems small enough to
//! store one. Much less sensitive to ill-conditioning than the limited-memory
//! variant, which matters for penalty subproblems.

use nalgebra::{DMatrix, DVector};

use super::lbfgs::{project, projected_gradient_norm, InnerObjective, InnerOptions, InnerResult};
use crate::scalar::Real;

/// Minimizes `f` over the box `[lower, upper]` from `x0`.
///
/// `inverse_hessian` seeds the search when it holds a matrix of the right
/// size and receives the final approximation, so consecutive related
/// subproblems can share curvature information.
pub fn minimize_bounded_dense<T: Real, F: InnerObjective<T> + ?Sized>(
    f: &F,
    x0: &[T],
    lower: &[T],
    upper: &[T],
    opts: &InnerOptions,
    inverse_hessian: &mut Option<DMatrix<T>>,
) -> InnerResult<T> {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![T::zero(); n];
    let mut fx = f.value_grad(&x, &mut g);
    let tol = T::lit(opts.tol);
    let armijo = T::lit(1e-4);
    let mut h = match inverse_hessian.take() {
        Some(m) if m.nrows() == n && m.ncols() == n => m,
        _ => DMatrix::identity(n, n),
    };
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;
    let mut stagnant = 0;
    let mut xn = vec![T::zero(); n];
    let mut gn = vec![T::zero(); n];

    while iterations < opts.max_iter {
        if projected_gradient_norm(&x, &g, lower, upper) <= tol {
            converged = true;
            break;
        }
        iterations += 1;

        let held: Vec<usize> = (0..n)
            .filter(|&i| {
                (x[i] <= lower[i] && g[i] > T::zero()) || (x[i] >= upper[i] && g[i] < T::zero())
            })
            .collect();
        let mut d = reduced_direction(&h, &g, &held);
        let slope = d
            .iter()
            .zip(&g)
            .fold(T::zero(), |a, (di, gi)| a + *di * *gi);
        if !(slope < T::zero()) {
            h = DMatrix::identity(n, n);
            fresh = true;
            let gmax = g
                .iter()
                .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m });
            let s0 = T::one() / (T::one() + gmax);
            d = g.iter().map(|v| -*v * s0).collect();
            for &i in &held {
                d[i] = T::zero();
            }
        }

        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            for i in 0..n {
                xn[i] = x[i] + step * d[i];
            }
            project(&mut xn, lower, upper);
            let dec = (0..n).fold(T::zero(), |a, i| a + g[i] * (xn[i] - x[i]));
            if dec < T::zero() {
                let fnew = f.value(&xn);
                if fnew.is_finite_value() && fnew <= fx + armijo * dec {
                    accepted = true;
                    break;
                }
            }
            step *= T::lit(0.5);
        }
        if !accepted {
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        }

        let fnew = f.value_grad(&xn, &mut gn);
        let rel = (fx - fnew).abs() / (T::one() + fx.abs());
        stagnant = if rel <= T::lit(1e-15) {
            stagnant + 1
        } else {
            0
        };
        let s = DVector::from_iterator(n, (0..n).map(|i| xn[i] - x[i]));
        let y = DVector::from_iterator(n, (0..n).map(|i| gn[i] - g[i]));
        let sy = s.dot(&y);
        if sy > T::lit(1e-12) * s.norm() * y.norm() && sy > T::zero() {
            if fresh {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                fresh = false;
            }
            let rho = T::one() / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            h.ger(-rho, &s, &hy, T::one());
            h.ger(-rho, &hy, &s, T::one());
            h.ger(rho * rho * yhy + rho, &s, &s, T::one());
        }
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        fx = fnew;
        if stagnant >= 5 {
            break;
        }
    }

    let pg = projected_gradient_norm(&x, &g, lower, upper);
    if pg <= tol {
        converged = true;
    }
    *inverse_hessian = Some(h);
    InnerResult {
        x,
        value: fx,
        iterations,
        converged,
        projected_gradient: pg,
    }
}

/// `-(B_FF)^-1 g_F` with `B = H^-1` and the `held` variables fixed, using the
/// block-inverse identity `(B_FF)^-1 = H_FF - H_FA H_AA^-1 H_AF`.
fn reduced_direction<T: Real>(h: &DMatrix<T>, g: &[T], held: &[usize]) -> Vec<T> {
    let n = g.len();
    let mut gf = DVector::from_column_slice(g);
    for &i in held {
        gf[i] = T::zero();
    }
    let v = h * &gf;
    let mut d: Vec<T> = v.iter().map(|a| -*a).collect();
    if !held.is_empty() {
        let k = held.len();
        let haa = DMatrix::from_fn(k, k, |a, b| h[(held[a], held[b])]);
        let va = DVector::from_iterator(k, held.iter().map(|&i| v[i]));
        if let Some(w) = haa.lu().solve(&va) {
            for i in 0..n {
                let corr = (0..k).fold(T::zero(), |a, j| a + h[(i, held[j])] * w[j]);
                d[i] += corr;
            }
        }
        for &i in held {
            d[i] = T::zero();
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ill_conditioned_quadratic() {
        // Condition number 1e6: dense BFGS recovers the curvature in a few
        // dozen steps.
        let n = 20;
        let f = move |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..n {
                let a = 10f64.powf(6.0 * i as f64 / (n - 1) as f64);
                g[i] = a * (x[i] - 1.0);
                v += 0.5 * a * (x[i] - 1.0).powi(2);
            }
            v
        };
        let inf = vec![f64::INFINITY; n];
        let ninf = vec![f64::NEG_INFINITY; n];
        let mut h = None;
        let r = minimize_bounded_dense(
            &f,
            &vec![0.0; n],
            &ninf,
            &inf,
            &InnerOptions {
                max_iter: 500,
                tol: 1e-8,
                ..Default::default()
            },
            &mut h,
        );
        assert!(
            r.converged,
            "{} iterations, pg {}",
            r.iterations, r.projected_gradient
        );
        assert!(r.x.iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert!(h.is_some());
    }

    #[test]
    fn held_variables_stay_on_their_bound() {
        // min (x-1)^2 + (y+2)^2 + x y with y >= 0: optimum at x = 1, y = 0.
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 1.0) + x[1];
            g[1] = 2.0 * (x[1] + 2.0) + x[0];
            (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2) + x[0] * x[1]
        };
        let r = minimize_bounded_dense(
            &f,
            &[5.0, 5.0],
            &[-10.0, 0.0],
            &[10.0, 10.0],
            &InnerOptions::default(),
            &mut None,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-7, "{:?}", r.x);
        assert_eq!(r.x[1], 0.0);
    }
}
