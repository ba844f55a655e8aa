//! Executable study of iterative projection methods on sparse sets: hard
//! thresholding as Euclidean projection, the factor-2 projection inequality,
//! geometric convergence of contractive projected iterations, and IHT/BIHT
//! recovery experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Ambient dimension and sparsity order of the constraint set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparseSetSpec {
    pub dim: usize,
    pub sparsity: usize,
}

impl SparseSetSpec {
    pub fn new(dim: usize, sparsity: usize) -> Result<Self> {
        if dim == 0 || sparsity > dim {
            return Err(Error::InvalidArgument(format!(
                "sparsity {sparsity} must lie in [0, {dim}]"
            )));
        }
        Ok(Self { dim, sparsity })
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim && x.iter().filter(|&&v| v != 0.0).count() <= self.sparsity
    }
}

/// Hard thresholding: keeps the `s` largest-magnitude entries (ties to the
/// lowest index), the Euclidean projection onto the s-sparse set.
pub fn hs(x: &DVector<f64>, s: usize) -> DVector<f64> {
    let n = x.len();
    if s >= n {
        return x.clone();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then_with(|| a.cmp(&b)));
    let mut out = DVector::zeros(n);
    for &idx in order.iter().take(s) {
        out[idx] = x[idx];
    }
    out
}

fn gaussian_vector(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

fn sparse_gaussian(dim: usize, s: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut support: Vec<usize> = (0..dim).collect();
    for i in 0..s.min(dim) {
        let j = rng.random_range(i..dim);
        support.swap(i, j);
    }
    let mut x = DVector::zeros(dim);
    for &idx in support.iter().take(s) {
        x[idx] = StandardNormal.sample(rng);
    }
    x
}

/// One sampled pair `(x in Sigma_s, z)`: returns
/// `||H_s(z) - x|| / ||z - x||`, or 0 for a coincident pair.
///
/// `z` is drawn around `x` at a log-uniform noise scale; far-away `z` make
/// the ratio trivially small, the bound is only exercised when thresholding
/// can reorder magnitudes near `x`.
pub fn projection_factor_trial(dim: usize, s: usize, rng: &mut ChaCha8Rng) -> f64 {
    let x = sparse_gaussian(dim, s, rng);
    let exponent: f64 = rng.random_range(-2.0..1.0);
    let z = &x + gaussian_vector(dim, rng) * 10f64.powf(exponent);
    let dist = (&z - &x).norm();
    if dist == 0.0 {
        return 0.0;
    }
    (hs(&z, s) - &x).norm() / dist
}

/// Samples pairs `(x in Sigma_s, z)` and returns the largest observed
/// `||H_s(z) - x|| / ||z - x||`. The ratio never exceeds 2.
pub fn projection_factor_check(trials: usize, dim: usize, s: usize, seed: u64) -> f64 {
    (0..trials)
        .map(|trial| projection_factor_trial(dim, s, &mut trial_rng(seed, trial as u64)))
        .fold(0.0, f64::max)
}

/// Update map `Delta_f(x)`.
pub type UpdateFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Sync>;

/// An update map `Delta_f` whose associated `psi(x) = x - Delta_f(x)` is
/// `L`-Lipschitz and vanishes at the stationary point.
pub struct IterationLaw {
    delta: UpdateFn,
    pub lipschitz: f64,
    pub stationary: DVector<f64>,
}

impl IterationLaw {
    pub fn new(delta: UpdateFn, lipschitz: f64, stationary: DVector<f64>) -> Self {
        Self {
            delta,
            lipschitz,
            stationary,
        }
    }

    pub fn delta(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.delta)(x)
    }

    pub fn psi(&self, x: &DVector<f64>) -> DVector<f64> {
        x - self.delta(x)
    }

    /// A pure contraction toward a stationary point:
    /// `psi(x) = l * (x - x_star) + x_star`.
    pub fn contraction(l: f64, stationary: DVector<f64>) -> Self {
        let x_star = stationary.clone();
        Self::new(
            Box::new(move |x: &DVector<f64>| (x - &x_star) * (1.0 - l)),
            l,
            stationary,
        )
    }

    /// The linear MSE law `Delta_f(x) = alpha A A^T (x - x_star)`, whose
    /// `psi` has Lipschitz constant `||I - alpha A A^T||_2` (estimated by
    /// power iteration).
    pub fn linear_mse(a: &DMatrix<f64>, alpha: f64, stationary: DVector<f64>, seed: u64) -> Self {
        let gram = a * a.transpose();
        let dim = gram.nrows();
        let iteration_matrix = DMatrix::identity(dim, dim) - alpha * &gram;
        let lipschitz = spectral_norm(&iteration_matrix, 200, seed);
        let x_star = stationary.clone();
        Self::new(
            Box::new(move |x: &DVector<f64>| alpha * (&gram * (x - &x_star))),
            lipschitz,
            stationary,
        )
    }

    /// Checks `Delta_f(x_star) = 0` and samples pairs for the Lipschitz
    /// property of `psi`.
    pub fn verify(&self, samples: usize, seed: u64) -> Result<()> {
        let drift = self.delta(&self.stationary).norm();
        if drift > 1e-12 {
            return Err(Error::LawViolation(format!(
                "stationary point drifts by {drift}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.stationary.len();
        for _ in 0..samples {
            let a = gaussian_vector(dim, &mut rng);
            let b = gaussian_vector(dim, &mut rng);
            let gap = (a.clone() - &b).norm();
            if gap == 0.0 {
                continue;
            }
            let mapped = (self.psi(&a) - self.psi(&b)).norm();
            if mapped > self.lipschitz * gap * (1.0 + 1e-9) {
                return Err(Error::LawViolation(format!(
                    "sampled Lipschitz ratio {} exceeds declared {}",
                    mapped / gap,
                    self.lipschitz
                )));
            }
        }
        Ok(())
    }
}

/// Largest singular value by power iteration on `M^T M`.
pub fn spectral_norm(m: &DMatrix<f64>, iterations: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = gaussian_vector(m.ncols(), &mut rng);
    let mut norm = 0.0;
    for _ in 0..iterations {
        let w = m * &v;
        let u = m.transpose() * &w;
        let len = u.norm();
        if len == 0.0 {
            return 0.0;
        }
        v = u / len;
        norm = (m * &v).norm();
    }
    norm
}

/// Iterates `x_{t+1} = H_s(x_t - Delta_f(x_t))` and checks the distance to
/// the stationary point against the `(2L)^t` envelope (with `1e-9` slack).
/// Returns the error sequence `e_0..e_T`.
pub fn contraction_run(
    law: &IterationLaw,
    set: SparseSetSpec,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Vec<f64>> {
    if !set.contains(&law.stationary) {
        return Err(Error::LawViolation(
            "stationary point is not in the sparse set".into(),
        ));
    }
    let drift = law.delta(&law.stationary).norm();
    if drift > 1e-12 {
        return Err(Error::LawViolation(format!(
            "stationary point drifts by {drift}"
        )));
    }
    let mut x = x0.clone();
    let e0 = (&x - &law.stationary).norm();
    let mut errors = vec![e0];
    for t in 1..=steps {
        x = hs(&(&x - law.delta(&x)), set.sparsity);
        let e = (&x - &law.stationary).norm();
        let bound = (2.0 * law.lipschitz).powi(t as i32) * e0 + 1e-9;
        if e > bound {
            return Err(Error::EnvelopeViolation {
                step: t,
                error: e,
                bound,
            });
        }
        errors.push(e);
    }
    Ok(errors)
}

/// Outcome of a recovery run; the trace is present when ground truth was
/// supplied.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub estimate: DVector<f64>,
    pub error_trace: Option<Vec<f64>>,
}

/// Iterative hard thresholding for `y = A x`:
/// `x <- H_s(x + step * A^T (y - A x))` from `x_0 = 0`.
/// The trace records relative errors `||x_t - truth|| / ||truth||`.
pub fn iht_recover(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    s: usize,
    iterations: usize,
    step: f64,
    truth: Option<&DVector<f64>>,
) -> RecoveryResult {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let rel_err = |x: &DVector<f64>| {
        truth.map(|t| {
            let scale = t.norm();
            if scale == 0.0 {
                x.norm()
            } else {
                (x - t).norm() / scale
            }
        })
    };
    let mut trace = rel_err(&x).map(|e| vec![e]);
    for _ in 0..iterations {
        let residual = y - a * &x;
        x = hs(&(&x + step * (a.transpose() * residual)), s);
        if let (Some(trace), Some(e)) = (trace.as_mut(), rel_err(&x)) {
            trace.push(e);
        }
    }
    RecoveryResult {
        estimate: x,
        error_trace: trace,
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Angle between two directions, in radians.
pub fn angular_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    (a.dot(b) / denom).clamp(-1.0, 1.0).acos()
}

/// Binary IHT for one-bit measurements `y = sign(A x)`:
/// `x <- H_s(x + (step/m) * A^T (y - sign(A x)))`, renormalized to unit
/// length each iteration since one-bit measurements carry no scale. The
/// trace records angular errors against the ground truth.
pub fn biht_recover(
    a: &DMatrix<f64>,
    y_signs: &DVector<f64>,
    s: usize,
    iterations: usize,
    step: f64,
    truth: Option<&DVector<f64>>,
) -> RecoveryResult {
    let m = a.nrows().max(1) as f64;
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut trace = truth.map(|t| vec![angular_error(&x, t)]);
    for _ in 0..iterations {
        let predicted = (a * &x).map(sign);
        let residual = y_signs - predicted;
        x = hs(&(&x + (step / m) * (a.transpose() * residual)), s);
        let len = x.norm();
        if len > 0.0 {
            x /= len;
        }
        if let (Some(trace), Some(t)) = (trace.as_mut(), truth) {
            trace.push(angular_error(&x, t));
        }
    }
    RecoveryResult {
        estimate: x,
        error_trace: trace,
    }
}

/// Deterministic per-trial RNG stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ trial.wrapping_mul(0x5851_F42D_4C95_7F2D))
}

/// Draws a Gaussian sensing matrix with entries scaled by `1/sqrt(m)`.
pub fn gaussian_sensing(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let scale = 1.0 / (m.max(1) as f64).sqrt();
    DMatrix::from_fn(m, n, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        g * scale
    })
}

/// Draws an s-sparse Gaussian ground-truth vector.
pub fn sparse_truth(n: usize, s: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    sparse_gaussian(n, s, rng)
}

/// A dense Gaussian point, e.g. an iteration start.
pub fn gaussian_point(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    gaussian_vector(dim, rng)
}

/// A symmetric matrix `Q diag(lo..hi) Q^T` with eigenvalues spread linearly
/// over `[lo, hi]`; with `[0.8, 1.2]` the map `I - A A^T` contracts with
/// constant at most 0.44.
pub fn banded_spectrum_matrix(dim: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(dim, dim, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        g
    });
    let q = raw.qr().q();
    let mut diag = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let t = if dim > 1 { i as f64 / (dim as f64 - 1.0) } else { 0.0 };
        diag[(i, i)] = lo + (hi - lo) * t;
    }
    &q * diag * q.transpose()
}
