//! Domain growth during optimization.
//!
//! When the estimated optimum of the surrogate sits on the search-box
//! boundary, better parameters likely lie outside. Two growth rules are
//! provided: a surrogate-guided step that grows only the boundary
//! dimensions (proportional to the posterior-mean gradient, the
//! lengthscale and the extent, all in normalized coordinates), and an
//! isotropic volume-doubling schedule.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::domain::BoxDomain;
use crate::gp::GpPosterior;

/// Configuration of the gradient-guided growth step.
#[derive(Debug, Clone, PartialEq)]
pub struct DdaConfig {
    /// Step gain applied to the gradient-lengthscale product.
    pub gamma: f64,
    /// Fraction of the per-dimension extent within which a point counts
    /// as lying on the boundary.
    pub boundary_tol: f64,
    /// Minimum growth per triggered step, as a fraction of the extent.
    pub min_step_fraction: f64,
    /// Cap on cumulative growth, as a multiple of the initial extent.
    pub max_total_growth: f64,
}

impl Default for DdaConfig {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            boundary_tol: 0.01,
            min_step_fraction: 0.05,
            max_total_growth: 20.0,
        }
    }
}

impl DdaConfig {
    pub fn validate(&self) -> bool {
        self.gamma > 0.0
            && self.boundary_tol > 0.0
            && self.boundary_tol < 0.5
            && self.min_step_fraction >= 0.0
            && self.max_total_growth >= 1.0
    }
}

/// Configuration of the volume-doubling schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct VdConfig {
    /// Volume multiplier applied on schedule.
    pub factor: f64,
    /// Apply the growth every `period` iterations.
    pub period: usize,
}

impl Default for VdConfig {
    fn default() -> Self {
        Self { factor: 2.0, period: 3 }
    }
}

/// Which side of a dimension the point touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySide {
    Lower,
    Upper,
}

/// Reports the dimensions in which `point` lies within `tol` times the
/// extent of a bound. Degenerate (zero-extent) dimensions are never
/// reported; at most one side is reported per dimension.
pub fn detect_boundary(point: &[f64], domain: &BoxDomain, tol: f64) -> Vec<(usize, BoundarySide)> {
    debug_assert_eq!(point.len(), domain.dim());
    let mut hits = Vec::new();
    for i in 0..domain.dim() {
        let ext = domain.extent(i);
        if ext <= 0.0 {
            continue;
        }
        let to_lower = point[i] - domain.lower()[i];
        let to_upper = domain.upper()[i] - point[i];
        let margin = tol * ext;
        if to_upper <= margin && to_upper <= to_lower {
            hits.push((i, BoundarySide::Upper));
        } else if to_lower <= margin {
            hits.push((i, BoundarySide::Lower));
        }
    }
    hits
}

/// Grows the box outward in every dimension where the estimated optimum
/// `theta_star` touches the boundary. The step is
/// `gamma * |grad_i| * lengthscale_i` in normalized coordinates (floored
/// at `min_step_fraction`), rescaled by the dimension extent, and the
/// cumulative growth per dimension is capped at `max_total_growth` times
/// the initial extent. The surrogate must be trained in the current box's
/// normalized coordinates.
pub fn dda_step(
    domain: &BoxDomain,
    gp: &GpPosterior,
    theta_star: &[f64],
    initial_extents: &[f64],
    config: &DdaConfig,
) -> BoxDomain {
    debug_assert!(config.validate(), "invalid DDA configuration");
    debug_assert_eq!(initial_extents.len(), domain.dim());
    let hits = detect_boundary(theta_star, domain, config.boundary_tol);
    if hits.is_empty() {
        return domain.clone();
    }
    let unit_point = domain.aspect_normalize(theta_star);
    let grad = gp.posterior_mean_gradient(&unit_point);

    let mut lower = domain.lower().to_vec();
    let mut upper = domain.upper().to_vec();
    for (i, side) in hits {
        let ext = domain.extent(i);
        let step_unit = (config.gamma * grad[i].abs() * gp.hyperparams().lengthscales[i])
            .max(config.min_step_fraction);
        let mut step = step_unit * ext;
        let allowed = (config.max_total_growth * initial_extents[i] - ext).max(0.0);
        step = step.min(allowed);
        match side {
            BoundarySide::Lower => lower[i] -= step,
            BoundarySide::Upper => upper[i] += step,
        }
    }
    BoxDomain::new(lower, upper).expect("growth preserves box validity")
}

/// Isotropic growth every `period` iterations: each extent is multiplied
/// by `factor^(1/d)` about the box center, so the volume is multiplied by
/// `factor`.
pub fn vd_step(domain: &BoxDomain, iteration: usize, config: &VdConfig) -> BoxDomain {
    debug_assert!(config.factor > 1.0 && config.period >= 1);
    if iteration == 0 || !iteration.is_multiple_of(config.period) {
        return domain.clone();
    }
    let d = domain.dim() as f64;
    let linear = config.factor.powf(1.0 / d);
    let mut lower = Vec::with_capacity(domain.dim());
    let mut upper = Vec::with_capacity(domain.dim());
    for i in 0..domain.dim() {
        let mid = 0.5 * (domain.lower()[i] + domain.upper()[i]);
        let half = 0.5 * domain.extent(i) * linear;
        lower.push(mid - half);
        upper.push(mid + half);
    }
    BoxDomain::new(lower, upper).expect("growth preserves box validity")
}
