//! Kernel-based discrepancy measures between sample sets.
//!
//! The central quantity is the squared maximum mean discrepancy (MMD²),
//! estimated with the biased V-statistic
//!
//! ```text
//! MMD²(X, Y) = 1/m² Σᵢⱼ k(xᵢ,xⱼ) + 1/l² Σᵢⱼ k(yᵢ,yⱼ) − 2/(ml) Σᵢⱼ k(xᵢ,yⱼ)
//! ```
//!
//! over three kernel families (linear, polynomial, Gaussian RBF). Each of the
//! three partial sums is accumulated in a canonical order (values sorted
//! before compensated summation), which makes the estimate exactly symmetric
//! in its arguments, exactly zero when both sets are identical, and bitwise
//! independent of how callers partition or order the samples.
//!
//! A one-dimensional Wasserstein-1 distance is provided as a cheap
//! cross-check for scalar summaries, and the usual median heuristic picks an
//! RBF bandwidth from the data when none is given.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{canonical_sum, dot, median_sorted, neumaier_sum, sq_distance};

/// Kernel used inside the MMD estimator.
///
/// Construct through [`KernelSpec::linear`], [`KernelSpec::polynomial`], or
/// [`KernelSpec::rbf`] so parameter constraints are checked once, up front.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// k(x, y) = ⟨x, y⟩
    Linear,
    /// k(x, y) = (⟨x, y⟩ / scale + offset)^degree
    Polynomial { degree: u32, scale: f64, offset: f64 },
    /// k(x, y) = exp(−‖x − y‖² / (2 scale²))
    Rbf { scale: f64 },
}

/// Default offset for polynomial kernels.
pub const DEFAULT_POLY_OFFSET: f64 = 1.0;

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec::Linear
    }

    /// Polynomial kernel. Requires `degree >= 2` and `scale > 0`.
    pub fn polynomial(degree: u32, scale: f64, offset: f64) -> Result<Self> {
        let k = KernelSpec::Polynomial { degree, scale, offset };
        k.validate()?;
        Ok(k)
    }

    /// Degree-2 polynomial kernel with scale equal to the sample dimension
    /// (so the normalized inner product stays O(1)) and unit offset.
    pub fn default_polynomial(dim: usize) -> Self {
        KernelSpec::Polynomial {
            degree: 2,
            scale: (dim.max(1)) as f64,
            offset: DEFAULT_POLY_OFFSET,
        }
    }

    /// Gaussian RBF kernel. Requires `scale > 0`.
    pub fn rbf(scale: f64) -> Result<Self> {
        let k = KernelSpec::Rbf { scale };
        k.validate()?;
        Ok(k)
    }

    /// RBF kernel with the bandwidth chosen by [`median_heuristic_bandwidth`]
    /// over the pooled samples. Also reports whether the heuristic had to
    /// fall back to a unit bandwidth (all pooled points identical).
    pub fn rbf_from_median(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<(Self, bool)> {
        let est = median_heuristic_bandwidth(xs, ys)?;
        Ok((KernelSpec::Rbf { scale: est.bandwidth }, est.degenerate))
    }

    /// Checks the parameter constraints for this kernel.
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, scale, offset } => {
                if degree < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "polynomial kernel degree must be >= 2, got {degree}"
                    )));
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "polynomial kernel scale must be a positive finite number, got {scale}"
                    )));
                }
                if !offset.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "polynomial kernel offset must be finite, got {offset}"
                    )));
                }
                Ok(())
            }
            KernelSpec::Rbf { scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "rbf kernel scale must be a positive finite number, got {scale}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Short name of the kernel family: `linear`, `polynomial`, or `rbf`.
    pub fn kind_name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::Rbf { .. } => "rbf",
        }
    }

    /// Flat description of the kernel for reports; parameters that do not
    /// apply to the kernel family are `None`.
    pub fn describe(&self) -> KernelDescription {
        match *self {
            KernelSpec::Linear => KernelDescription {
                kind: "linear".to_string(),
                degree: None,
                scale: None,
                offset: None,
            },
            KernelSpec::Polynomial { degree, scale, offset } => KernelDescription {
                kind: "polynomial".to_string(),
                degree: Some(degree),
                scale: Some(scale),
                offset: Some(offset),
            },
            KernelSpec::Rbf { scale } => KernelDescription {
                kind: "rbf".to_string(),
                degree: None,
                scale: Some(scale),
                offset: None,
            },
        }
    }
}

/// Serializable kernel description used in score reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDescription {
    pub kind: String,
    pub degree: Option<u32>,
    pub scale: Option<f64>,
    pub offset: Option<f64>,
}

/// Result of the median-heuristic bandwidth estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthEstimate {
    /// Median of the pooled pairwise Euclidean distances (or the fallback).
    pub bandwidth: f64,
    /// True when every pooled point was identical and the unit fallback
    /// bandwidth was substituted.
    pub degenerate: bool,
}

fn eval_unchecked(kernel: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    match *kernel {
        KernelSpec::Linear => dot(x, y),
        KernelSpec::Polynomial { degree, scale, offset } => {
            (dot(x, y) / scale + offset).powi(degree as i32)
        }
        KernelSpec::Rbf { scale } => (-sq_distance(x, y) / (2.0 * scale * scale)).exp(),
    }
}

/// Evaluates `kernel` on a single pair of equal-length vectors.
pub fn kernel_eval(kernel: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    kernel.validate()?;
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "kernel arguments must have equal dimension, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(eval_unchecked(kernel, x, y))
}

/// Validates that every sample in `set` is finite and `dim`-dimensional.
fn check_set(set: &[Vec<f64>], dim: usize, name: &str) -> Result<()> {
    for (i, s) in set.iter().enumerate() {
        if s.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "sample {i} of set {name} has dimension {}, expected {dim}",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} of set {name} contains a non-finite value"
            )));
        }
    }
    Ok(())
}

/// Median of the pairwise Euclidean distances over the pooled samples from
/// both sets (all unordered pairs, self-pairs excluded).
///
/// Requires at least two pooled points. When every pooled point coincides the
/// median distance is zero, which would make an RBF kernel degenerate; the
/// estimate then falls back to a bandwidth of 1 and sets the
/// [`BandwidthEstimate::degenerate`] flag.
pub fn median_heuristic_bandwidth(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<BandwidthEstimate> {
    let pooled: Vec<&Vec<f64>> = xs.iter().chain(ys.iter()).collect();
    if pooled.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "median heuristic needs at least 2 pooled samples, got {}",
            pooled.len()
        )));
    }
    let dim = pooled[0].len();
    check_set(xs, dim, "X")?;
    check_set(ys, dim, "Y")?;

    let n = pooled.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_distance(pooled[i], pooled[j]).sqrt());
        }
    }
    dists.sort_unstable_by(f64::total_cmp);
    let median = median_sorted(&dists).expect("pair list is non-empty");
    if median == 0.0 {
        Ok(BandwidthEstimate { bandwidth: 1.0, degenerate: true })
    } else {
        Ok(BandwidthEstimate { bandwidth: median, degenerate: false })
    }
}

/// Sums `k(a_i, b_j)` over all ordered pairs, in canonical order.
fn kernel_sum(kernel: &KernelSpec, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut values = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            values.push(eval_unchecked(kernel, x, y));
        }
    }
    canonical_sum(&mut values)
}

/// Squared maximum mean discrepancy between sample sets `xs` and `ys`,
/// estimated with the biased V-statistic and clamped to be non-negative.
///
/// Both sets must be non-empty, finite, and share one dimension. The three
/// partial sums are each accumulated in a canonical order, so the result is
/// exactly symmetric in `(xs, ys)`, exactly `0.0` when `xs == ys`, and does
/// not depend on sample order within either set.
pub fn mmd_squared(xs: &[Vec<f64>], ys: &[Vec<f64>], kernel: &KernelSpec) -> Result<f64> {
    kernel.validate()?;
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "mmd requires non-empty sample sets, got {} and {} samples",
            xs.len(),
            ys.len()
        )));
    }
    let dim = xs[0].len();
    check_set(xs, dim, "X")?;
    check_set(ys, dim, "Y")?;

    let m = xs.len() as f64;
    let l = ys.len() as f64;
    let term_xx = kernel_sum(kernel, xs, xs) / (m * m);
    let term_yy = kernel_sum(kernel, ys, ys) / (l * l);
    let term_xy = kernel_sum(kernel, xs, ys) / (m * l);
    Ok((term_xx + term_yy - 2.0 * term_xy).max(0.0))
}

/// Wasserstein-1 distance between two equal-size scalar samples:
/// the mean absolute difference of the sorted values.
pub fn wasserstein_1d(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "wasserstein_1d requires equal non-zero sample counts, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "wasserstein_1d requires finite samples".to_string(),
        ));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let total = neumaier_sum(a.iter().zip(&b).map(|(x, y)| (x - y).abs()));
    Ok(total / xs.len() as f64)
}
