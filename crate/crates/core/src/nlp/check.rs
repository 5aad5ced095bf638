use super::NlpProblem;
use crate::scalar::Real;

/// Outcome of comparing analytic derivatives with central differences.
#[derive(Debug, Clone)]
pub struct DerivativeCheck {
    pub max_rel_error_objective: f64,
    pub max_rel_error_eq: f64,
    pub max_rel_error_ineq: f64,
    /// Worst entries as `(kind, row, col, analytic, numeric)`.
    pub worst: Vec<(&'static str, usize, usize, f64, f64)>,
}

impl DerivativeCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error_objective
            .max(self.max_rel_error_eq)
            .max(self.max_rel_error_ineq)
    }
}

fn rel_err(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / fd.abs().max(1.0)
}

/// Compares every analytic first derivative at `x` against a central
/// difference with step `h` (relative to `max(1, |x_i|)`).
pub fn check_derivatives<T: Real, P: NlpProblem<T> + ?Sized>(
    p: &P,
    x: &[T],
    h: f64,
) -> DerivativeCheck {
    let n = p.n_vars();
    let (me, mi) = (p.n_eq(), p.n_ineq());
    let mut grad = vec![T::zero(); n];
    p.objective_gradient(x, &mut grad);
    let je = p.eq_jacobian(x).to_dense();
    let ji = p.ineq_jacobian(x).to_dense();

    let mut out = DerivativeCheck {
        max_rel_error_objective: 0.0,
        max_rel_error_eq: 0.0,
        max_rel_error_ineq: 0.0,
        worst: Vec::new(),
    };
    let mut xp = x.to_vec();
    let mut hp = vec![T::zero(); me];
    let mut hm = vec![T::zero(); me];
    let mut gp = vec![T::zero(); mi];
    let mut gm = vec![T::zero(); mi];
    for j in 0..n {
        let step = h * x[j].to_f64_lossy().abs().max(1.0);
        let orig = x[j];
        xp[j] = orig + T::lit(step);
        let fp = p.objective(&xp).to_f64_lossy();
        p.eq_values(&xp, &mut hp);
        p.ineq_values(&xp, &mut gp);
        xp[j] = orig - T::lit(step);
        let fm = p.objective(&xp).to_f64_lossy();
        p.eq_values(&xp, &mut hm);
        p.ineq_values(&xp, &mut gm);
        xp[j] = orig;

        let fd = (fp - fm) / (2.0 * step);
        let e = rel_err(grad[j].to_f64_lossy(), fd);
        if e > out.max_rel_error_objective {
            out.max_rel_error_objective = e;
        }
        if e > 1e-4 {
            out.worst
                .push(("objective", 0, j, grad[j].to_f64_lossy(), fd));
        }
        for i in 0..me {
            let fd = (hp[i] - hm[i]).to_f64_lossy() / (2.0 * step);
            let a = je[(i, j)].to_f64_lossy();
            let e = rel_err(a, fd);
            if e > out.max_rel_error_eq {
                out.max_rel_error_eq = e;
            }
            if e > 1e-4 {
                out.worst.push(("eq", i, j, a, fd));
            }
        }
        for i in 0..mi {
            let fd = (gp[i] - gm[i]).to_f64_lossy() / (2.0 * step);
            let a = ji[(i, j)].to_f64_lossy();
            let e = rel_err(a, fd);
            if e > out.max_rel_error_ineq {
                out.max_rel_error_ineq = e;
            }
            if e > 1e-4 {
                out.worst.push(("ineq", i, j, a, fd));
            }
        }
    }
    out.worst.sort_by(|a, b| {
        rel_err(b.3, b.4)
            .partial_cmp(&rel_err(a.3, a.4))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    out.worst.truncate(20);
    out
}
