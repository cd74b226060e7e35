//! Search-domain construction from sampled controller gains.
//!
//! Dynamics models drawn from the identification posterior each yield an
//! LQR gain; the resulting sample cloud defines where policy search
//! should look. Three constructions are provided:
//!
//! * per-coordinate moment matching (independence domain),
//! * the eigenspace of the sample covariance (PCA domain), and
//! * a random linear embedding with box clipping.
//!
//! All domains are expressed as a box in search coordinates plus an
//! affine map back to policy parameters; the search box is centered at
//! the origin and the map carries the sample-mean offset.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::lqr::{dlqr, CostWeights, LinearDynamics};
use crate::seed;

/// Relative floor applied to degenerate per-dimension scales so that no
/// box dimension has zero width: `sigma_i < 1e-8 * max(1, |mu_i|)` is
/// replaced by that floor.
pub const SCALE_FLOOR_REL: f64 = 1e-8;

/// Default fraction of the largest PCA scale below which a dimension is
/// deactivated.
pub const DEFAULT_PCA_TRUNCATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("only {succeeded} of {attempted} sampled models produced a gain")]
    TooFewSamples { attempted: usize, succeeded: usize },
    #[error("need at least two sample rows")]
    NotEnoughRows,
    #[error("invalid domain: {0}")]
    Invalid(&'static str),
}

/// Closed per-dimension intervals; the current search region.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, DomainError> {
        if lower.len() != upper.len() {
            return Err(DomainError::Invalid("bound lengths differ"));
        }
        if lower.is_empty() {
            return Err(DomainError::Invalid("domain must have at least one dimension"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !l.is_finite() || !u.is_finite() {
                return Err(DomainError::Invalid("bounds must be finite"));
            }
            if l > u {
                return Err(DomainError::Invalid("lower bound exceeds upper bound"));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn extent(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn extents(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.extent(i)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .enumerate()
                .all(|(i, p)| *p >= self.lower[i] && *p <= self.upper[i])
    }

    pub fn clip(&self, point: &[f64]) -> Vec<f64> {
        point
            .iter()
            .enumerate()
            .map(|(i, p)| p.clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    /// Maps a point into unit-box coordinates. Degenerate dimensions map
    /// to the center of the unit interval.
    pub fn normalize(&self, point: &[f64]) -> Vec<f64> {
        point
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let ext = self.extent(i);
                if ext > 0.0 {
                    (p - self.lower[i]) / ext
                } else {
                    0.5
                }
            })
            .collect()
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .enumerate()
            .map(|(i, u)| self.lower[i] + u * self.extent(i))
            .collect()
    }

    /// The single scale used for aspect-preserving normalization: the
    /// largest extent.
    pub fn aspect_scale(&self) -> f64 {
        (0..self.dim()).map(|i| self.extent(i)).fold(0.0, f64::max)
    }

    /// Upper bounds of the aspect-normalized box `[0, w_i / w_max]`.
    /// Dividing every dimension by the same scale keeps the box's aspect
    /// ratio, so directions with small extents stay small for the
    /// surrogate instead of being stretched to unit size.
    pub fn aspect_upper(&self) -> Vec<f64> {
        let scale = self.aspect_scale();
        if scale <= 0.0 {
            return vec![0.0; self.dim()];
        }
        (0..self.dim()).map(|i| self.extent(i) / scale).collect()
    }

    /// Maps a point into aspect-normalized coordinates.
    pub fn aspect_normalize(&self, point: &[f64]) -> Vec<f64> {
        let scale = self.aspect_scale();
        if scale <= 0.0 {
            return vec![0.0; self.dim()];
        }
        point
            .iter()
            .enumerate()
            .map(|(i, p)| (p - self.lower[i]) / scale)
            .collect()
    }

    /// Inverse of [`aspect_normalize`](Self::aspect_normalize).
    pub fn aspect_denormalize(&self, unit: &[f64]) -> Vec<f64> {
        let scale = self.aspect_scale();
        unit.iter()
            .enumerate()
            .map(|(i, u)| self.lower[i] + u * scale)
            .collect()
    }
}

/// The kind of map from search coordinates to policy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReparamKind {
    Identity,
    Pca,
    Rembo,
}

/// Affine map from search coordinates to policy parameters:
/// `theta = offset + back(theta_tilde)`, where `back` is the identity, a
/// transpose of the orthonormal eigenvector matrix (with inactive
/// directions pinned at zero) or a random embedding followed by clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineReparameterization {
    pub kind: ReparamKind,
    /// Sample mean of the policy parameters, length `n_theta`.
    pub offset: Vec<f64>,
    /// Identity/PCA: `n_theta x n_theta`, rows are eigenvectors sorted by
    /// descending scale. Rembo: `n_theta x d_e` embedding matrix.
    pub transform: DMatrix<f64>,
    /// Per-direction standard-deviation scales (unfloored), one per row
    /// of `transform` for identity/PCA and one per embedded dimension for
    /// rembo; sorted descending for PCA.
    pub scales: Vec<f64>,
    /// Which directions the search box actually covers.
    pub active_dims: Vec<bool>,
    /// Rembo only: clipping box in policy coordinates.
    pub clip: Option<BoxDomain>,
}

impl AffineReparameterization {
    /// Number of policy parameters.
    pub fn policy_dim(&self) -> usize {
        self.offset.len()
    }

    /// Dimension of the search coordinates.
    pub fn search_dim(&self) -> usize {
        match self.kind {
            ReparamKind::Identity => self.offset.len(),
            ReparamKind::Pca => self.active_dims.iter().filter(|a| **a).count(),
            ReparamKind::Rembo => self.transform.ncols(),
        }
    }

    /// Maps search coordinates to policy parameters.
    pub fn to_policy_params(&self, theta_tilde: &[f64]) -> Vec<f64> {
        match self.kind {
            ReparamKind::Identity => {
                debug_assert_eq!(theta_tilde.len(), self.offset.len());
                self.offset
                    .iter()
                    .zip(theta_tilde)
                    .map(|(o, t)| o + t)
                    .collect()
            }
            ReparamKind::Pca => {
                let full = self.embed_active(theta_tilde);
                let back = self.transform.transpose() * full;
                self.offset.iter().zip(back.iter()).map(|(o, t)| o + t).collect()
            }
            ReparamKind::Rembo => {
                let tt = DVector::from_column_slice(theta_tilde);
                let mapped = &self.transform * tt;
                let theta: Vec<f64> = self
                    .offset
                    .iter()
                    .zip(mapped.iter())
                    .map(|(o, t)| o + t)
                    .collect();
                match &self.clip {
                    Some(clip_box) => clip_box.clip(&theta),
                    None => theta,
                }
            }
        }
    }

    /// Maps policy parameters to search coordinates. Exact inverse for the
    /// identity and PCA kinds (up to truncated inactive directions); the
    /// least-squares preimage of the embedding for rembo.
    pub fn from_policy_params(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.offset.len());
        let centered: Vec<f64> = theta.iter().zip(&self.offset).map(|(t, o)| t - o).collect();
        match self.kind {
            ReparamKind::Identity => centered,
            ReparamKind::Pca => {
                let projected = &self.transform * DVector::from_column_slice(&centered);
                self.active_dims
                    .iter()
                    .enumerate()
                    .filter(|(_, active)| **active)
                    .map(|(i, _)| projected[i])
                    .collect()
            }
            ReparamKind::Rembo => {
                let rhs = DVector::from_column_slice(&centered);
                self.transform
                    .clone()
                    .svd(true, true)
                    .solve(&rhs, 1e-12)
                    .map(|v| v.iter().cloned().collect())
                    .unwrap_or_else(|_| vec![0.0; self.search_dim()])
            }
        }
    }

    fn embed_active(&self, theta_tilde: &[f64]) -> DVector<f64> {
        let mut full = DVector::zeros(self.policy_dim());
        let mut src = 0;
        for (i, active) in self.active_dims.iter().enumerate() {
            if *active {
                full[i] = theta_tilde[src];
                src += 1;
            }
        }
        debug_assert_eq!(src, theta_tilde.len());
        full
    }
}

/// Rows of flattened gains (or other policy parameters), one per sampled
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSampleSet {
    samples: DMatrix<f64>,
}

impl GainSampleSet {
    pub fn new(samples: DMatrix<f64>) -> Result<Self, DomainError> {
        if samples.nrows() < 2 {
            return Err(DomainError::NotEnoughRows);
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(DomainError::Invalid("samples must be finite"));
        }
        Ok(Self { samples })
    }

    pub fn count(&self) -> usize {
        self.samples.nrows()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    /// Per-coordinate population mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.count() as f64;
        (0..self.dim())
            .map(|j| self.samples.column(j).sum() / n)
            .collect()
    }

    /// Per-coordinate population standard deviation.
    pub fn std(&self) -> Vec<f64> {
        let n = self.count() as f64;
        let mean = self.mean();
        (0..self.dim())
            .map(|j| {
                let var = self
                    .samples
                    .column(j)
                    .iter()
                    .map(|v| (v - mean[j]) * (v - mean[j]))
                    .sum::<f64>()
                    / n;
                var.sqrt()
            })
            .collect()
    }

    /// Population covariance matrix of the rows.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.count() as f64;
        let mean = DVector::from_column_slice(&self.mean());
        let mut cov = DMatrix::zeros(self.dim(), self.dim());
        for r in 0..self.count() {
            let centered = self.samples.row(r).transpose() - &mean;
            cov += &centered * centered.transpose();
        }
        cov / n
    }
}

/// Result of mapping sampled models through LQR synthesis.
#[derive(Debug, Clone)]
pub struct GainSamples {
    pub set: GainSampleSet,
    /// Models whose Riccati solve failed and were skipped.
    pub failed: usize,
}

/// Computes the LQR gain for every sampled model and stacks the flattened
/// gains row-wise. Models whose Riccati solve fails are skipped; if fewer
/// than 10% of the models (or fewer than two) yield a gain the whole set
/// is rejected.
pub fn sample_gain_distribution(
    models: &[LinearDynamics],
    weights: &CostWeights,
) -> Result<GainSamples, DomainError> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(models.len());
    for model in models {
        if let Ok(gain) = dlqr(model, weights) {
            rows.push(gain.flatten_row_major());
        }
    }
    let succeeded = rows.len();
    let needed = ((models.len() as f64 * 0.1).ceil() as usize).max(2);
    if succeeded < needed {
        return Err(DomainError::TooFewSamples {
            attempted: models.len(),
            succeeded,
        });
    }
    let dim = rows[0].len();
    let mut samples = DMatrix::zeros(succeeded, dim);
    for (r, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            samples[(r, c)] = *v;
        }
    }
    Ok(GainSamples {
        set: GainSampleSet::new(samples)?,
        failed: models.len() - succeeded,
    })
}

fn floored(scale: f64, mu: f64) -> f64 {
    let floor = SCALE_FLOOR_REL * 1.0_f64.max(mu.abs());
    scale.max(floor)
}

/// Per-coordinate moment matching: the search box spans
/// `[-beta * sigma_i, beta * sigma_i]` around the sample mean, which the
/// returned map adds back. Degenerate sigmas are floored.
pub fn independence_domain(
    samples: &GainSampleSet,
    beta: f64,
) -> Result<(BoxDomain, AffineReparameterization), DomainError> {
    if !(beta > 0.0) {
        return Err(DomainError::Invalid("beta must be positive"));
    }
    let mean = samples.mean();
    let std = samples.std();
    let mut lower = Vec::with_capacity(samples.dim());
    let mut upper = Vec::with_capacity(samples.dim());
    for i in 0..samples.dim() {
        let half = beta * floored(std[i], mean[i]);
        lower.push(-half);
        upper.push(half);
    }
    let reparam = AffineReparameterization {
        kind: ReparamKind::Identity,
        offset: mean,
        transform: DMatrix::identity(samples.dim(), samples.dim()),
        scales: std,
        active_dims: vec![true; samples.dim()],
        clip: None,
    };
    Ok((BoxDomain::new(lower, upper)?, reparam))
}

/// How eigenvalues of the sample covariance are turned into box scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaScale {
    /// Square root of the eigenvalue: standard-deviation units, matching
    /// the independence domain.
    #[default]
    SqrtEigenvalue,
    /// The raw eigenvalue.
    Eigenvalue,
}

/// Eigenspace domain: search coordinates are the projections onto the
/// eigenvectors of the sample covariance, boxed at `beta` scales per
/// direction. Directions whose scale falls below `truncation` times the
/// largest scale are deactivated and pinned at zero, shrinking the search
/// dimension.
pub fn pca_domain(
    samples: &GainSampleSet,
    beta: f64,
    truncation: f64,
    scale_mode: PcaScale,
) -> Result<(BoxDomain, AffineReparameterization), DomainError> {
    if !(beta > 0.0) {
        return Err(DomainError::Invalid("beta must be positive"));
    }
    if !(0.0..1.0).contains(&truncation) {
        return Err(DomainError::Invalid("truncation must lie in [0, 1)"));
    }
    let n = samples.dim();
    let mean = samples.mean();
    let cov = samples.covariance();
    let eig = cov.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| {
        eig.eigenvalues[*b]
            .partial_cmp(&eig.eigenvalues[*a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });

    let mut transform = DMatrix::zeros(n, n);
    let mut scales = Vec::with_capacity(n);
    for (row, &src) in order.iter().enumerate() {
        let mut vec_col = eig.eigenvectors.column(src).clone_owned();
        // Fix the sign so identical sample sets serialize identically.
        let lead = vec_col
            .iter()
            .cloned()
            .enumerate()
            .max_by(|(ai, av), (bi, bv)| {
                av.abs()
                    .partial_cmp(&bv.abs())
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(bi.cmp(ai))
            })
            .map(|(_, v)| v)
            .unwrap_or(1.0);
        if lead < 0.0 {
            vec_col = -vec_col;
        }
        transform.row_mut(row).copy_from(&vec_col.transpose());
        let ev = eig.eigenvalues[src].max(0.0);
        scales.push(match scale_mode {
            PcaScale::SqrtEigenvalue => ev.sqrt(),
            PcaScale::Eigenvalue => ev,
        });
    }

    let max_scale = scales.iter().cloned().fold(0.0_f64, f64::max);
    let active_dims: Vec<bool> = scales.iter().map(|s| *s >= truncation * max_scale).collect();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (i, active) in active_dims.iter().enumerate() {
        if *active {
            let half = beta * floored(scales[i], mean[i.min(mean.len() - 1)]);
            lower.push(-half);
            upper.push(half);
        }
    }
    let reparam = AffineReparameterization {
        kind: ReparamKind::Pca,
        offset: mean,
        transform,
        scales,
        active_dims,
        clip: None,
    };
    Ok((BoxDomain::new(lower, upper)?, reparam))
}

/// Random linear embedding: an `n_theta x d_e` matrix with i.i.d. standard
/// normal entries maps the search box `[-scale, scale]^{d_e}` into policy
/// space around `offset`, clipped per coordinate to `clip`.
pub fn rembo_embedding(
    n_theta: usize,
    d_e: usize,
    offset: Vec<f64>,
    clip: BoxDomain,
    scale: f64,
    seed_value: u64,
) -> Result<(BoxDomain, AffineReparameterization), DomainError> {
    if d_e == 0 || d_e > n_theta {
        return Err(DomainError::Invalid("embedding dimension must lie in [1, n_theta]"));
    }
    if offset.len() != n_theta || clip.dim() != n_theta {
        return Err(DomainError::Invalid("offset and clip box must have n_theta entries"));
    }
    if !(scale > 0.0) {
        return Err(DomainError::Invalid("scale must be positive"));
    }
    let mut rng = seed::rng(seed_value);
    let mut transform = DMatrix::zeros(n_theta, d_e);
    for r in 0..n_theta {
        for c in 0..d_e {
            transform[(r, c)] = rng.sample(StandardNormal);
        }
    }
    let reparam = AffineReparameterization {
        kind: ReparamKind::Rembo,
        offset,
        transform,
        scales: vec![scale; d_e],
        active_dims: vec![true; d_e],
        clip: Some(clip),
    };
    let domain = BoxDomain::new(vec![-scale; d_e], vec![scale; d_e])?;
    Ok((domain, reparam))
}
