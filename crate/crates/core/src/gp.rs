//! Gaussian-process regression with an ARD squared-exponential kernel.
//!
//! The surrogate operates on inputs normalized to the unit box and
//! (by the optimization loop) standardized targets, so the hyperparameter
//! bounds below are scale-free. Posterior mean, variance and their
//! analytic input gradients are exposed; hyperparameters are fitted by
//! multistart gradient ascent on the log marginal likelihood.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::seed;

/// Lengthscale bounds in normalized-domain units.
pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 10.0);
/// Signal-variance bounds.
pub const SIGNAL_BOUNDS: (f64, f64) = (1e-6, 1e3);
/// Noise-variance bounds.
pub const NOISE_BOUNDS: (f64, f64) = (1e-8, 1.0);

/// Inputs closer than this (max-norm) are treated as duplicates.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

const LN_2PI: f64 = 1.837877066409345483560659472811;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GpError {
    #[error("kernel matrix is not positive definite even with jitter")]
    CholeskyFailure,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(&'static str),
    #[error("dataset dimension mismatch")]
    DimensionMismatch,
}

/// ARD squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelHyperparams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelHyperparams {
    pub fn new(
        signal_variance: f64,
        lengthscales: Vec<f64>,
        noise_variance: f64,
    ) -> Result<Self, GpError> {
        if !(signal_variance > 0.0) || !signal_variance.is_finite() {
            return Err(GpError::InvalidHyperparams("signal variance must be positive"));
        }
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(GpError::InvalidHyperparams("noise variance must be positive"));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(GpError::InvalidHyperparams("lengthscales must be positive"));
        }
        Ok(Self {
            signal_variance,
            lengthscales,
            noise_variance,
        })
    }

    /// Reasonable defaults on a normalized domain.
    pub fn default_for_dim(dim: usize) -> Self {
        Self {
            signal_variance: 1.0,
            lengthscales: vec![0.3; dim.max(1)],
            noise_variance: 1e-4,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }
}

/// Evaluated inputs (rows, unit-box coordinates) and their targets.
/// Duplicate inputs are merged at construction by averaging targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GpDataset {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
}

impl GpDataset {
    pub fn empty(dim: usize) -> Self {
        Self {
            inputs: DMatrix::zeros(0, dim),
            targets: DVector::zeros(0),
        }
    }

    /// Builds a dataset, merging inputs closer than
    /// [`DUPLICATE_TOLERANCE`] (first occurrence kept, targets averaged).
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self, GpError> {
        if inputs.nrows() != targets.len() {
            return Err(GpError::DimensionMismatch);
        }
        if !inputs.iter().all(|v| v.is_finite()) || !targets.iter().all(|v| v.is_finite()) {
            return Err(GpError::InvalidHyperparams("dataset must be finite"));
        }
        let n = inputs.nrows();
        let d = inputs.ncols();
        let mut kept_rows: Vec<usize> = Vec::new();
        let mut sums: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        'rows: for r in 0..n {
            for (slot, &kept) in kept_rows.iter().enumerate() {
                let mut close = true;
                for c in 0..d {
                    if (inputs[(r, c)] - inputs[(kept, c)]).abs() > DUPLICATE_TOLERANCE {
                        close = false;
                        break;
                    }
                }
                if close {
                    sums[slot] += targets[r];
                    counts[slot] += 1;
                    continue 'rows;
                }
            }
            kept_rows.push(r);
            sums.push(targets[r]);
            counts.push(1);
        }
        let m = kept_rows.len();
        let mut out_inputs = DMatrix::zeros(m, d);
        let mut out_targets = DVector::zeros(m);
        for (slot, &row) in kept_rows.iter().enumerate() {
            for c in 0..d {
                out_inputs[(slot, c)] = inputs[(row, c)];
            }
            out_targets[slot] = sums[slot] / counts[slot] as f64;
        }
        Ok(Self {
            inputs: out_inputs,
            targets: out_targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn input_row(&self, r: usize) -> Vec<f64> {
        (0..self.dim()).map(|c| self.inputs[(r, c)]).collect()
    }
}

fn gram_matrix(dataset: &GpDataset, hyper: &KernelHyperparams) -> DMatrix<f64> {
    let n = dataset.len();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let mut exponent = 0.0;
            for c in 0..dataset.dim() {
                let d = (dataset.inputs[(a, c)] - dataset.inputs[(b, c)]) / hyper.lengthscales[c];
                exponent += d * d;
            }
            let v = hyper.signal_variance * (-0.5 * exponent).exp();
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

/// Jitter ladder applied to the Gram diagonal when the factorization
/// fails; the last rung failing is a [`GpError::CholeskyFailure`].
const JITTERS: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

fn cholesky_with_jitter(mut k_noisy: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, GpError> {
    let n = k_noisy.nrows();
    let mut applied = 0.0;
    for jitter in JITTERS {
        let delta = jitter - applied;
        if delta != 0.0 {
            for i in 0..n {
                k_noisy[(i, i)] += delta;
            }
            applied = jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(k_noisy.clone()) {
            return Ok(chol);
        }
    }
    Err(GpError::CholeskyFailure)
}

/// A trained surrogate: dataset, hyperparameters and the cached Gram
/// factorization with its weight vector. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    dataset: GpDataset,
    hyper: KernelHyperparams,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    alpha: DVector<f64>,
}

impl GpPosterior {
    /// A prior-only surrogate over `dim` inputs.
    pub fn empty(dim: usize, hyper: KernelHyperparams) -> Self {
        Self {
            dataset: GpDataset::empty(dim),
            hyper,
            chol: None,
            alpha: DVector::zeros(0),
        }
    }

    pub fn fit(dataset: GpDataset, hyper: KernelHyperparams) -> Result<Self, GpError> {
        if hyper.dim() != dataset.dim() {
            return Err(GpError::DimensionMismatch);
        }
        if dataset.is_empty() {
            return Ok(Self::empty(dataset.dim(), hyper));
        }
        let mut k = gram_matrix(&dataset, &hyper);
        for i in 0..dataset.len() {
            k[(i, i)] += hyper.noise_variance;
        }
        let chol = cholesky_with_jitter(k)?;
        let alpha = chol.solve(&dataset.targets);
        Ok(Self {
            dataset,
            hyper,
            chol: Some(chol),
            alpha,
        })
    }

    pub fn dataset(&self) -> &GpDataset {
        &self.dataset
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hyper
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn kernel_vector(&self, point: &[f64]) -> DVector<f64> {
        let n = self.dataset.len();
        DVector::from_iterator(
            n,
            (0..n).map(|r| {
                let mut exponent = 0.0;
                for c in 0..self.dim() {
                    let d = (point[c] - self.dataset.inputs[(r, c)]) / self.hyper.lengthscales[c];
                    exponent += d * d;
                }
                self.hyper.signal_variance * (-0.5 * exponent).exp()
            }),
        )
    }

    /// Posterior mean and (noise-free latent) variance at a point. An
    /// empty dataset yields the prior `(0, signal_variance)`.
    pub fn posterior(&self, point: &[f64]) -> (f64, f64) {
        assert_eq!(point.len(), self.dim(), "query dimension mismatch");
        let Some(chol) = &self.chol else {
            return (0.0, self.hyper.signal_variance);
        };
        let k_star = self.kernel_vector(point);
        let mean = k_star.dot(&self.alpha);
        let v = chol.solve(&k_star);
        let variance = (self.hyper.signal_variance - k_star.dot(&v)).max(0.0);
        (mean, variance)
    }

    /// Analytic gradient of the posterior mean with respect to the query.
    pub fn posterior_mean_gradient(&self, point: &[f64]) -> Vec<f64> {
        self.posterior_with_gradients(point).2
    }

    /// Mean, variance and both gradients in one pass.
    pub fn posterior_with_gradients(&self, point: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        assert_eq!(point.len(), self.dim(), "query dimension mismatch");
        let d = self.dim();
        let Some(chol) = &self.chol else {
            return (0.0, self.hyper.signal_variance, vec![0.0; d], vec![0.0; d]);
        };
        let k_star = self.kernel_vector(point);
        let mean = k_star.dot(&self.alpha);
        let v = chol.solve(&k_star);
        let variance = (self.hyper.signal_variance - k_star.dot(&v)).max(0.0);

        let mut grad_mean = vec![0.0; d];
        let mut grad_var = vec![0.0; d];
        for r in 0..self.dataset.len() {
            for c in 0..d {
                // d k(x, x_r) / d x_c = k * (x_r[c] - x[c]) / l_c^2
                let dk = k_star[r] * (self.dataset.inputs[(r, c)] - point[c])
                    / (self.hyper.lengthscales[c] * self.hyper.lengthscales[c]);
                grad_mean[c] += self.alpha[r] * dk;
                grad_var[c] += -2.0 * v[r] * dk;
            }
        }
        (mean, variance, grad_mean, grad_var)
    }
}

/// Gaussian log evidence of the dataset under the kernel.
pub fn log_marginal_likelihood(
    dataset: &GpDataset,
    hyper: &KernelHyperparams,
) -> Result<f64, GpError> {
    log_marginal_likelihood_with_grad(dataset, hyper).map(|(l, _)| l)
}

/// Log evidence together with its gradient with respect to the log
/// hyperparameters, ordered `[ln signal_variance, ln l_1 .. ln l_d,
/// ln noise_variance]`.
pub fn log_marginal_likelihood_with_grad(
    dataset: &GpDataset,
    hyper: &KernelHyperparams,
) -> Result<(f64, Vec<f64>), GpError> {
    if hyper.dim() != dataset.dim() {
        return Err(GpError::DimensionMismatch);
    }
    let n = dataset.len();
    assert!(n > 0, "log evidence needs a nonempty dataset");
    let d = dataset.dim();

    let k_signal = gram_matrix(dataset, hyper);
    let mut k_noisy = k_signal.clone();
    for i in 0..n {
        k_noisy[(i, i)] += hyper.noise_variance;
    }
    let chol = cholesky_with_jitter(k_noisy)?;
    let alpha = chol.solve(&dataset.targets);

    let mut log_det_half = 0.0;
    for i in 0..n {
        log_det_half += chol.l_dirty()[(i, i)].ln();
    }
    let value = -0.5 * dataset.targets.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;

    // d lml / d phi = 0.5 tr((alpha alpha' - K^-1) dK/dphi)
    let k_inv = chol.inverse();
    let mut weight = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            weight[(a, b)] = alpha[a] * alpha[b] - k_inv[(a, b)];
        }
    }

    let mut grad = vec![0.0; d + 2];
    let mut trace_sv = 0.0;
    for a in 0..n {
        for b in 0..n {
            trace_sv += weight[(a, b)] * k_signal[(a, b)];
        }
    }
    grad[0] = 0.5 * trace_sv;
    for c in 0..d {
        let l2 = hyper.lengthscales[c] * hyper.lengthscales[c];
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                let diff = dataset.inputs[(a, c)] - dataset.inputs[(b, c)];
                acc += weight[(a, b)] * k_signal[(a, b)] * diff * diff / l2;
            }
        }
        grad[1 + c] = 0.5 * acc;
    }
    let mut trace_nv = 0.0;
    for a in 0..n {
        trace_nv += weight[(a, a)];
    }
    grad[d + 1] = 0.5 * hyper.noise_variance * trace_nv;

    Ok((value, grad))
}

fn pack(hyper: &KernelHyperparams) -> Vec<f64> {
    let mut phi = Vec::with_capacity(hyper.dim() + 2);
    phi.push(hyper.signal_variance.ln());
    phi.extend(hyper.lengthscales.iter().map(|l| l.ln()));
    phi.push(hyper.noise_variance.ln());
    phi
}

fn unpack(phi: &[f64]) -> KernelHyperparams {
    let d = phi.len() - 2;
    KernelHyperparams {
        signal_variance: phi[0].exp(),
        lengthscales: phi[1..=d].iter().map(|p| p.exp()).collect(),
        noise_variance: phi[d + 1].exp(),
    }
}

fn clamp_log_bounds(phi: &mut [f64]) {
    let d = phi.len() - 2;
    phi[0] = phi[0].clamp(SIGNAL_BOUNDS.0.ln(), SIGNAL_BOUNDS.1.ln());
    for p in phi[1..=d].iter_mut() {
        *p = p.clamp(LENGTHSCALE_BOUNDS.0.ln(), LENGTHSCALE_BOUNDS.1.ln());
    }
    phi[d + 1] = phi[d + 1].clamp(NOISE_BOUNDS.0.ln(), NOISE_BOUNDS.1.ln());
}

fn evidence(dataset: &GpDataset, phi: &[f64]) -> f64 {
    log_marginal_likelihood(dataset, &unpack(phi)).unwrap_or(f64::NEG_INFINITY)
}

fn ascend(dataset: &GpDataset, start: &[f64], max_iters: usize) -> (f64, Vec<f64>) {
    let mut phi = start.to_vec();
    clamp_log_bounds(&mut phi);
    let mut value = evidence(dataset, &phi);
    let mut step = 0.25;
    for _ in 0..max_iters {
        let Ok((_, grad)) = log_marginal_likelihood_with_grad(dataset, &unpack(&phi)) else {
            break;
        };
        let grad_norm = grad.iter().fold(0.0_f64, |acc, g| acc.max(g.abs()));
        if !grad_norm.is_finite() || grad_norm < 1e-8 {
            break;
        }
        // Scale so the largest component moves by `step` in log space.
        let scale = step / grad_norm;
        let mut trial: Vec<f64> = phi.iter().zip(&grad).map(|(p, g)| p + scale * g).collect();
        clamp_log_bounds(&mut trial);
        let trial_value = evidence(dataset, &trial);
        if trial_value > value {
            phi = trial;
            value = trial_value;
            step = (step * 1.5).min(1.0);
        } else {
            step *= 0.4;
            if step < 1e-5 {
                break;
            }
        }
    }
    (value, phi)
}

/// Maximizes the log evidence over bounded log-hyperparameters with
/// `restarts` random restarts plus one start from `warm` (or defaults).
/// Deterministic for a fixed seed; the best restart wins even if its
/// line search stalled.
pub fn fit_hyperparameters(
    dataset: &GpDataset,
    restarts: usize,
    seed_value: u64,
    warm: Option<&KernelHyperparams>,
) -> KernelHyperparams {
    let d = dataset.dim();
    let default = KernelHyperparams::default_for_dim(d);
    if dataset.is_empty() {
        return warm.cloned().unwrap_or(default);
    }
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(restarts + 1);
    starts.push(pack(warm.unwrap_or(&default)));
    let mut rng = seed::rng(seed_value);
    for _ in 0..restarts {
        let mut phi = Vec::with_capacity(d + 2);
        // Log-uniform draws near the scales expected on normalized data.
        phi.push(log_uniform(&mut rng, 0.2, 5.0));
        for _ in 0..d {
            phi.push(log_uniform(&mut rng, 0.1, 2.0));
        }
        phi.push(log_uniform(&mut rng, 1e-6, 1e-2));
        starts.push(phi);
    }
    let mut best_value = f64::NEG_INFINITY;
    let mut best_phi = pack(&default);
    for start in starts {
        let (value, phi) = ascend(dataset, &start, 60);
        if value > best_value {
            best_value = value;
            best_phi = phi;
        }
    }
    unpack(&best_phi)
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let r: f64 = rng.random();
    lo.ln() + r * (hi.ln() - lo.ln())
}
