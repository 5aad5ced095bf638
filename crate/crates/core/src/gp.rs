//! Gaussian Process regression of the maximum gripping shear force.
//!
//! The regression input is the gripper state `[alpha, beta, gamma, lambda]`
//! (three Euler angles in radians and the surface friction coefficient), the
//! output the shear force in newtons a gripper sustains at zero normal load.
//! A zero-mean GP with a squared exponential kernel is used; the kernel
//! distance weights all four state components equally unless per-dimension
//! scales are configured.
//!
//! Pull-test datasets repeat each orientation many times. Replicated states
//! are collapsed into a single row carrying the averaged target and a noise
//! variance of `sigma_n^2 / count`, which gives exactly the same posterior
//! and (with a closed-form correction term) the same marginal likelihood as
//! the full system while keeping the factorization small.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nlp::{minimize_bounded, InnerOptions};
use crate::scalar::Real;

/// Gripper orientation and surface friction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripState<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    pub lambda: T,
}

impl<T: Real> GripState<T> {
    pub fn new(alpha: T, beta: T, gamma: T, lambda: T) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            lambda,
        }
    }

    pub fn from_degrees(alpha_deg: T, beta_deg: T, gamma_deg: T, lambda: T) -> Self {
        let k = T::pi() / T::lit(180.0);
        Self::new(alpha_deg * k, beta_deg * k, gamma_deg * k, lambda)
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.alpha, self.beta, self.gamma, self.lambda]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite_value()) && self.lambda >= T::zero()
    }
}

/// One pull test: the state it was run at and the measured shear force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripSample<T> {
    pub state: GripState<T>,
    pub force: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams<T> {
    /// Kernel amplitude, newtons.
    pub sigma_f: T,
    /// Length scale in state-space units.
    pub ell: T,
    /// Observation noise standard deviation, newtons.
    pub sigma_n: T,
    /// Optional multipliers on `ell` per state component (alpha, beta, gamma, lambda).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_scales: Option<[T; 4]>,
}

impl<T: Real> Hyperparams<T> {
    pub fn new(sigma_f: T, ell: T, sigma_n: T) -> Self {
        Self {
            sigma_f,
            ell,
            sigma_n,
            dim_scales: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_f > T::zero()
            && self.ell > T::zero()
            && self.sigma_n >= T::zero()
            && self.sigma_f.is_finite_value()
            && self.ell.is_finite_value()
            && self.sigma_n.is_finite_value()
            && self
                .dim_scales
                .is_none_or(|s| s.iter().all(|v| *v > T::zero() && v.is_finite_value()));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "hyperparameters must satisfy sigma_f > 0, ell > 0, sigma_n >= 0 (got {}, {}, {})",
                self.sigma_f, self.ell, self.sigma_n
            )))
        }
    }

    /// Starting point for likelihood maximization: amplitude from the target
    /// spread, length scale from the median pairwise state distance, and a
    /// noise level of 5% of the amplitude.
    pub fn heuristic(samples: &[GripSample<T>]) -> Self {
        let n = samples.len().max(1);
        let nf = T::from_usize_lossy(n);
        let mean = samples.iter().fold(T::zero(), |a, s| a + s.force) / nf;
        let var = samples
            .iter()
            .fold(T::zero(), |a, s| a + (s.force - mean) * (s.force - mean))
            / nf;
        let mut sigma_f = var.sqrt();
        if !(sigma_f > T::zero()) {
            sigma_f = T::one();
        }

        let unique = unique_states(samples);
        let mut dists = Vec::new();
        for i in 0..unique.len() {
            for j in (i + 1)..unique.len() {
                dists.push(sq_dist(&unique[i], &unique[j], None).sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let ell = if dists.is_empty() {
            T::one()
        } else {
            let m = dists[dists.len() / 2];
            if m > T::zero() {
                m
            } else {
                T::one()
            }
        };
        Self::new(sigma_f, ell, T::lit(0.05) * sigma_f)
    }
}

fn sq_dist<T: Real>(a: &GripState<T>, b: &GripState<T>, scales: Option<&[T; 4]>) -> T {
    let (a, b) = (a.to_array(), b.to_array());
    let mut d2 = T::zero();
    for k in 0..4 {
        let mut d = a[k] - b[k];
        if let Some(s) = scales {
            d /= s[k];
        }
        d2 += d * d;
    }
    d2
}

/// Squared exponential covariance between two gripper states.
pub fn kernel<T: Real>(a: &GripState<T>, b: &GripState<T>, hp: &Hyperparams<T>) -> T {
    let d2 = sq_dist(a, b, hp.dim_scales.as_ref());
    hp.sigma_f * hp.sigma_f * (-(d2 / (T::lit(2.0) * hp.ell * hp.ell))).exp()
}

/// Gradient of `kernel(a, b)` with respect to `b`.
fn kernel_grad_b<T: Real>(a: &GripState<T>, b: &GripState<T>, hp: &Hyperparams<T>) -> (T, [T; 4]) {
    let k = kernel(a, b, hp);
    let (aa, bb) = (a.to_array(), b.to_array());
    let mut g = [T::zero(); 4];
    for d in 0..4 {
        let mut l2 = hp.ell * hp.ell;
        if let Some(s) = &hp.dim_scales {
            l2 *= s[d] * s[d];
        }
        g[d] = k * (aa[d] - bb[d]) / l2;
    }
    (k, g)
}

fn unique_states<T: Real>(samples: &[GripSample<T>]) -> Vec<GripState<T>> {
    let mut out: Vec<GripState<T>> = Vec::new();
    for s in samples {
        if !out.contains(&s.state) {
            out.push(s.state);
        }
    }
    out
}

/// Training rows after collapsing replicated states.
#[derive(Debug, Clone)]
struct Collapsed<T> {
    states: Vec<GripState<T>>,
    means: Vec<T>,
    counts: Vec<usize>,
    /// Within-group sum of squared deviations from the group mean.
    within_ss: Vec<T>,
}

fn collapse<T: Real>(samples: &[GripSample<T>]) -> (Collapsed<T>, Vec<(usize, usize)>) {
    let mut states: Vec<GripState<T>> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match states.iter().position(|u| *u == s.state) {
            Some(g) => members[g].push(i),
            None => {
                states.push(s.state);
                members.push(vec![i]);
            }
        }
    }
    let mut duplicates = Vec::new();
    let mut means = Vec::with_capacity(states.len());
    let mut counts = Vec::with_capacity(states.len());
    let mut within_ss = Vec::with_capacity(states.len());
    for m in &members {
        for w in m.windows(2) {
            duplicates.push((m[0], w[1]));
        }
        let c = T::from_usize_lossy(m.len());
        let mean = m.iter().fold(T::zero(), |a, &i| a + samples[i].force) / c;
        let ss = m.iter().fold(T::zero(), |a, &i| {
            let d = samples[i].force - mean;
            a + d * d
        });
        means.push(mean);
        counts.push(m.len());
        within_ss.push(ss);
    }
    (
        Collapsed {
            states,
            means,
            counts,
            within_ss,
        },
        duplicates,
    )
}

/// A fitted GP. Immutable after [`fit`].
#[derive(Debug, Clone)]
pub struct GpModel<T: Real> {
    hyperparams: Hyperparams<T>,
    samples: Vec<GripSample<T>>,
    states: Vec<GripState<T>>,
    targets: Vec<T>,
    counts: Vec<usize>,
    within_ss: Vec<T>,
    chol_l: DMatrix<T>,
    weights: DVector<T>,
    log_marginal_likelihood: T,
}

/// Posterior mean and variance with their derivatives with respect to the
/// query state.
#[derive(Debug, Clone, Copy)]
pub struct PredictionGrad<T> {
    pub mean: T,
    pub variance: T,
    pub d_mean: [T; 4],
    pub d_variance: [T; 4],
}

fn factorize<T: Real>(c: &Collapsed<T>, hp: &Hyperparams<T>) -> Option<(DMatrix<T>, DVector<T>)> {
    let n = c.states.len();
    let noise = hp.sigma_n * hp.sigma_n;
    let k = DMatrix::from_fn(n, n, |i, j| {
        let mut v = kernel(&c.states[i], &c.states[j], hp);
        if i == j {
            v += noise / T::from_usize_lossy(c.counts[i]);
        }
        v
    });
    let chol = Cholesky::<T, Dyn>::new(k)?;
    let y = DVector::from_vec(c.means.clone());
    let w = chol.solve(&y);
    Some((chol.l(), w))
}

fn log_likelihood<T: Real>(
    c: &Collapsed<T>,
    hp: &Hyperparams<T>,
    l: &DMatrix<T>,
    w: &DVector<T>,
) -> T {
    let two_pi = T::two_pi();
    let half = T::lit(0.5);
    let y = DVector::from_vec(c.means.clone());
    let n = c.states.len();
    let mut log_det = T::zero();
    for i in 0..n {
        log_det += l[(i, i)].ln();
    }
    let mut ll = -half * y.dot(w) - log_det - half * T::from_usize_lossy(n) * two_pi.ln();
    let noise = hp.sigma_n * hp.sigma_n;
    for (g, &cnt) in c.counts.iter().enumerate() {
        if cnt > 1 {
            let cf = T::from_usize_lossy(cnt);
            ll += -half * cf.ln()
                - half * (cf - T::one()) * (two_pi * noise).ln()
                - c.within_ss[g] / (T::lit(2.0) * noise);
        }
    }
    ll
}

/// Fits a GP to the samples. With `optimize` set, the hyperparameters are
/// moved from `hp0` to a local maximum of the log marginal likelihood by a
/// bounded quasi-Newton search over their logarithms using central-difference
/// gradients. A zero `hp0.sigma_n` is kept fixed (noiseless interpolation).
pub fn fit<T: Real>(
    samples: &[GripSample<T>],
    hp0: &Hyperparams<T>,
    optimize: bool,
) -> Result<GpModel<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "at least one training sample is required".into(),
        ));
    }
    hp0.validate()?;
    if let Some(bad) = samples
        .iter()
        .position(|s| !s.state.is_valid() || !s.force.is_finite_value() || s.force < T::zero())
    {
        return Err(Error::InvalidInput(format!(
            "training sample {bad} has a non-finite state, negative friction or negative force"
        )));
    }
    let (collapsed, duplicates) = collapse(samples);
    if hp0.sigma_n == T::zero() && !duplicates.is_empty() {
        return Err(Error::SingularKernel { duplicates });
    }

    let hp = if optimize {
        optimize_hyperparams(&collapsed, hp0)
    } else {
        *hp0
    };

    let (l, w) = factorize(&collapsed, &hp).ok_or_else(|| Error::SingularKernel {
        duplicates: duplicates.clone(),
    })?;
    let lml = log_likelihood(&collapsed, &hp, &l, &w);
    Ok(GpModel {
        hyperparams: hp,
        samples: samples.to_vec(),
        states: collapsed.states,
        targets: collapsed.means,
        counts: collapsed.counts,
        within_ss: collapsed.within_ss,
        chol_l: l,
        weights: w,
        log_marginal_likelihood: lml,
    })
}

fn optimize_hyperparams<T: Real>(c: &Collapsed<T>, hp0: &Hyperparams<T>) -> Hyperparams<T> {
    let fit_noise = hp0.sigma_n > T::zero();
    let unpack = |z: &[f64]| -> Hyperparams<T> {
        let mut hp = *hp0;
        hp.sigma_f = T::lit(z[0].exp());
        hp.ell = T::lit(z[1].exp());
        if fit_noise {
            hp.sigma_n = T::lit(z[2].exp());
        }
        hp
    };
    let neg_lml = |z: &[f64]| -> f64 {
        let hp = unpack(z);
        match factorize(c, &hp) {
            Some((l, w)) => -log_likelihood(c, &hp, &l, &w).to_f64_lossy(),
            None => f64::INFINITY,
        }
    };

    let mut z0 = vec![hp0.sigma_f.to_f64_lossy().ln(), hp0.ell.to_f64_lossy().ln()];
    if fit_noise {
        z0.push(hp0.sigma_n.to_f64_lossy().ln());
    }
    let lower: Vec<f64> = z0.iter().map(|v| v - 8.0).collect();
    let upper: Vec<f64> = z0.iter().map(|v| v + 8.0).collect();
    let h = 1e-5;
    let value_grad = |z: &[f64], g: &mut [f64]| -> f64 {
        let f0 = neg_lml(z);
        let mut zp = z.to_vec();
        for k in 0..z.len() {
            zp[k] = z[k] + h;
            let fp = neg_lml(&zp);
            zp[k] = z[k] - h;
            let fm = neg_lml(&zp);
            zp[k] = z[k];
            g[k] = if fp.is_finite() && fm.is_finite() {
                (fp - fm) / (2.0 * h)
            } else {
                0.0
            };
        }
        f0
    };
    let opts = InnerOptions {
        max_iter: 200,
        tol: 1e-6,
        ..InnerOptions::default()
    };
    let res = minimize_bounded(&value_grad, &z0, &lower, &upper, &opts);
    if res.value.is_finite() && res.value <= neg_lml(&z0) {
        unpack(&res.x)
    } else {
        *hp0
    }
}

impl<T: Real> GpModel<T> {
    pub fn hyperparams(&self) -> &Hyperparams<T> {
        &self.hyperparams
    }

    /// The raw training samples the model was fitted on.
    pub fn samples(&self) -> &[GripSample<T>] {
        &self.samples
    }

    /// Distinct training states (rows of the factorized system).
    pub fn training_states(&self) -> &[GripState<T>] {
        &self.states
    }

    /// Averaged target per distinct training state.
    pub fn training_targets(&self) -> &[T] {
        &self.targets
    }

    /// Number of raw samples behind each distinct state.
    pub fn replicate_counts(&self) -> &[usize] {
        &self.counts
    }

    /// `(K_D + sigma_n^2 I)^{-1} y` over the distinct training states.
    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    /// Lower Cholesky factor of `K_D + sigma_n^2 I`.
    pub fn cholesky_factor(&self) -> &DMatrix<T> {
        &self.chol_l
    }

    pub fn log_marginal_likelihood(&self) -> T {
        self.log_marginal_likelihood
    }

    pub fn within_group_ss(&self) -> &[T] {
        &self.within_ss
    }

    fn k_star(&self, s: &GripState<T>) -> DVector<T> {
        DVector::from_iterator(
            self.states.len(),
            self.states.iter().map(|x| kernel(x, s, &self.hyperparams)),
        )
    }

    /// Posterior mean and variance of the latent gripping force at `s`.
    /// The variance excludes observation noise and is clamped at zero.
    pub fn predict(&self, s: &GripState<T>) -> (T, T) {
        let ks = self.k_star(s);
        let mean = ks.dot(&self.weights);
        let v = self
            .chol_l
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let prior = self.hyperparams.sigma_f * self.hyperparams.sigma_f;
        let var = prior - v.dot(&v);
        (mean, if var > T::zero() { var } else { T::zero() })
    }

    /// Predictive distribution of a fresh pull-test measurement at `s`:
    /// the latent variance plus the observation noise variance.
    pub fn predict_observation(&self, s: &GripState<T>) -> (T, T) {
        let (m, v) = self.predict(s);
        (m, v + self.hyperparams.sigma_n * self.hyperparams.sigma_n)
    }

    /// [`GpModel::predict`] together with analytic derivatives with respect
    /// to the four state components.
    pub fn predict_with_gradient(&self, s: &GripState<T>) -> PredictionGrad<T> {
        let n = self.states.len();
        let mut ks = DVector::zeros(n);
        let mut dks = [
            DVector::zeros(n),
            DVector::zeros(n),
            DVector::zeros(n),
            DVector::zeros(n),
        ];
        for (i, x) in self.states.iter().enumerate() {
            let (k, g) = kernel_grad_b(x, s, &self.hyperparams);
            ks[i] = k;
            for d in 0..4 {
                dks[d][i] = g[d];
            }
        }
        let mean = ks.dot(&self.weights);
        let v = self
            .chol_l
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let a = self
            .chol_l
            .tr_solve_lower_triangular(&v)
            .expect("cholesky factor has a positive diagonal");
        let prior = self.hyperparams.sigma_f * self.hyperparams.sigma_f;
        let raw_var = prior - v.dot(&v);
        let clamped = raw_var <= T::zero();
        let mut d_mean = [T::zero(); 4];
        let mut d_variance = [T::zero(); 4];
        for d in 0..4 {
            d_mean[d] = dks[d].dot(&self.weights);
            d_variance[d] = if clamped {
                T::zero()
            } else {
                -T::lit(2.0) * a.dot(&dks[d])
            };
        }
        PredictionGrad {
            mean,
            variance: if clamped { T::zero() } else { raw_var },
            d_mean,
            d_variance,
        }
    }
}

// ---------------------------------------------------------------------------
// Export / import and datasets. These are f64-only file formats.

/// Parameters of the synthetic pull-test generator.
///
/// Mean force is `c0 * lambda * (1 + c1 cos(alpha) cos(beta)) * (1 + c2 cos(gamma))`,
/// with additive Gaussian noise of standard deviation `noise_std`, clipped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticGripModel {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub noise_std: f64,
}

impl Default for SyntheticGripModel {
    fn default() -> Self {
        // About 60 N at lambda = 2.3 and 30 N at lambda = 1.1 for a level
        // gripper at 30 degrees of yaw: enough for five or six grippers to
        // carry an 11.5 kg body, not enough for one.
        Self {
            c0: 14.0,
            c1: 0.5,
            c2: 0.3,
            noise_std: 14.0,
        }
    }
}

impl SyntheticGripModel {
    pub fn mean(&self, s: &GripState<f64>) -> f64 {
        self.c0
            * s.lambda
            * (1.0 + self.c1 * s.alpha.cos() * s.beta.cos())
            * (1.0 + self.c2 * s.gamma.cos())
    }

    /// Draws `reps` samples per grid state, in grid order, from a seeded stream.
    pub fn generate(&self, grid: &GripGrid, reps: usize, seed: u64) -> Vec<GripSample<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise_std.max(0.0)).expect("finite noise std");
        let mut out = Vec::with_capacity(grid.len() * reps);
        for state in grid.states() {
            let m = self.mean(&state);
            for _ in 0..reps {
                let f = (m + noise.sample(&mut rng)).max(0.0);
                out.push(GripSample { state, force: f });
            }
        }
        out
    }
}

/// Cartesian grid of pull-test orientations (degrees) and friction values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripGrid {
    pub alpha_deg: Vec<f64>,
    pub beta_deg: Vec<f64>,
    pub gamma_deg: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Default for GripGrid {
    /// The training grid: alpha, beta in {-15, 0, 15} deg, gamma in
    /// {0, 30, 60} deg, lambda in {1.1, 2.3}.
    fn default() -> Self {
        Self {
            alpha_deg: vec![-15.0, 0.0, 15.0],
            beta_deg: vec![-15.0, 0.0, 15.0],
            gamma_deg: vec![0.0, 30.0, 60.0],
            lambda: vec![1.1, 2.3],
        }
    }
}

impl GripGrid {
    pub fn len(&self) -> usize {
        self.alpha_deg.len() * self.beta_deg.len() * self.gamma_deg.len() * self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn states(&self) -> Vec<GripState<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for &a in &self.alpha_deg {
            for &b in &self.beta_deg {
                for &g in &self.gamma_deg {
                    for &l in &self.lambda {
                        out.push(GripState::from_degrees(a, b, g, l));
                    }
                }
            }
        }
        out
    }
}

pub const DATASET_HEADER: [&str; 5] = ["alpha_deg", "beta_deg", "gamma_deg", "mu", "force_n"];

/// Writes samples as the pull-test CSV (angles converted to degrees).
pub fn write_dataset<W: std::io::Write>(samples: &[GripSample<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATASET_HEADER).map_err(csv_io)?;
    for s in samples {
        let st = s.state;
        w.write_record([
            fmt_num(st.alpha.to_degrees()),
            fmt_num(st.beta.to_degrees()),
            fmt_num(st.gamma.to_degrees()),
            fmt_num(st.lambda),
            fmt_num(s.force),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_num(v: f64) -> String {
    // Degrees come back from a radian round trip; trim representation noise.
    let r = (v * 1e9).round() / 1e9;
    format!("{r}")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Reads the pull-test CSV. Errors carry the 1-based file line number.
pub fn read_dataset<R: std::io::Read>(input: R) -> Result<Vec<GripSample<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = r
        .headers()
        .map_err(|e| Error::Dataset {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != DATASET_HEADER {
        return Err(Error::Dataset {
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                DATASET_HEADER.join(","),
                got.join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Dataset {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut vals = [0.0f64; 5];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = rec.get(k).unwrap_or("");
            *v = field.parse::<f64>().map_err(|_| Error::Dataset {
                line,
                message: format!(
                    "column `{}`: cannot parse `{field}` as a number",
                    DATASET_HEADER[k]
                ),
            })?;
            if !v.is_finite() {
                return Err(Error::Dataset {
                    line,
                    message: format!("column `{}` is not finite", DATASET_HEADER[k]),
                });
            }
        }
        if vals[3] < 0.0 || vals[4] < 0.0 {
            return Err(Error::Dataset {
                line,
                message: "friction coefficient and force must be non-negative".into(),
            });
        }
        out.push(GripSample {
            state: GripState::from_degrees(vals[0], vals[1], vals[2], vals[3]),
            force: vals[4],
        });
    }
    if out.is_empty() {
        return Err(Error::Dataset {
            line: 2,
            message: "dataset has no rows".into(),
        });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<GripSample<f64>>> {
    let f = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(f))
}

/// Provenance of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub reps: usize,
    pub model: SyntheticGripModel,
}

/// JSON document form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpModelDoc {
    pub hyperparams: Hyperparams<f64>,
    pub states: Vec<GripState<f64>>,
    pub targets: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
}

impl GpModel<f64> {
    pub fn to_doc(&self, generator: Option<GeneratorInfo>) -> GpModelDoc {
        GpModelDoc {
            hyperparams: self.hyperparams,
            states: self.samples.iter().map(|s| s.state).collect(),
            targets: self.samples.iter().map(|s| s.force).collect(),
            generator,
        }
    }

    /// Rebuilds a model from its document without re-optimizing.
    pub fn from_doc(doc: &GpModelDoc) -> Result<Self> {
        if doc.states.len() != doc.targets.len() {
            return Err(Error::InvalidInput(format!(
                "model document has {} states but {} targets",
                doc.states.len(),
                doc.targets.len()
            )));
        }
        let samples: Vec<GripSample<f64>> = doc
            .states
            .iter()
            .zip(&doc.targets)
            .map(|(s, f)| GripSample {
                state: *s,
                force: *f,
            })
            .collect();
        fit(&samples, &doc.hyperparams, false)
    }
}
