//! The DTI log-linear model: design matrix, WLS weights, and the scalar
//! property functions (FA, MD) evaluated on coefficient vectors.
//!
//! Taking the log of the single-tensor signal equation
//! `S = S0 · exp(−b gᵀ D g)` turns tensor estimation into a linear system
//! with d = 7 coefficients `[ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz]`: one row
//! of the design matrix per measurement,
//! `[1, −b gx², −b gy², −b gz², −2b gx gy, −2b gx gz, −2b gy gz]`.
//!
//! Everything here is pure and reentrant — safe to call from data-parallel
//! voxel loops. The fitting layer treats the design matrix as opaque, so
//! other linear models plug in by constructing a [`DesignMatrix`] directly.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dwi_io::GradientTable;
use crate::error::{Error, Result};

/// Coefficient count of the DTI model.
pub const DTI_DIM: usize = 7;

/// Column labels in coefficient order.
pub const DTI_COLUMN_LABELS: [&str; DTI_DIM] = ["ln_s0", "dxx", "dyy", "dzz", "dxy", "dxz", "dyz"];

/// Signal prediction exponent clamp: keeps `exp(2·pred)` inside f64 range
/// so WLS weights stay finite and positive even for wild stage-1 fits.
const PRED_CLAMP: f64 = 350.0;

/// n×d design matrix with an intercept column of ones.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    entries: Vec<f64>, // row-major, n rows of d
    n: usize,
    d: usize,
    column_labels: Vec<String>,
}

impl DesignMatrix {
    /// Wrap raw row-major entries. The first column must be all ones and
    /// every entry finite.
    pub fn new(entries: Vec<f64>, n: usize, d: usize, column_labels: Vec<String>) -> Result<Self> {
        if n * d != entries.len() {
            return Err(Error::InvalidArgument(format!(
                "design matrix entries ({}) do not fill {n}×{d}",
                entries.len()
            )));
        }
        if d == 0 || n == 0 {
            return Err(Error::InvalidArgument("empty design matrix".into()));
        }
        if column_labels.len() != d {
            return Err(Error::InvalidArgument(format!(
                "{} column labels for {d} columns",
                column_labels.len()
            )));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("non-finite design matrix entry".into()));
        }
        for i in 0..n {
            if entries[i * d] != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "design matrix row {i} does not start with the intercept 1"
                )));
            }
        }
        Ok(DesignMatrix {
            entries,
            n,
            d,
            column_labels,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.d..(i + 1) * self.d]
    }

    pub fn column_labels(&self) -> &[String] {
        &self.column_labels
    }

    /// Copy into a dense nalgebra matrix (n×d).
    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.entries)
    }

    /// Predicted values A·c.
    pub fn predict(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.d, "coefficient length must equal d");
        (0..self.n)
            .map(|i| self.row(i).iter().zip(c).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Build the DTI design matrix for an acquisition scheme.
pub fn build_design_matrix(g: &GradientTable) -> DesignMatrix {
    let n = g.len();
    let mut entries = Vec::with_capacity(n * DTI_DIM);
    for i in 0..n {
        let b = g.bvals[i];
        let [gx, gy, gz] = g.bvecs[i];
        entries.extend_from_slice(&[
            1.0,
            -b * gx * gx,
            -b * gy * gy,
            -b * gz * gz,
            -2.0 * b * gx * gy,
            -2.0 * b * gx * gz,
            -2.0 * b * gy * gz,
        ]);
    }
    DesignMatrix::new(
        entries,
        n,
        DTI_DIM,
        DTI_COLUMN_LABELS.iter().map(|s| s.to_string()).collect(),
    )
    .expect("DTI rows are finite with intercept 1 by construction")
}

/// Log-transformed signal plus how many values hit the floor.
#[derive(Clone, Debug)]
pub struct LogSignal {
    pub values: Vec<f64>,
    pub floored: usize,
}

/// Default log floor for a volume: 1e−6 × its maximum signal.
pub fn default_log_floor(max_signal: f64) -> f64 {
    if max_signal > 0.0 {
        1e-6 * max_signal
    } else {
        f64::MIN_POSITIVE
    }
}

/// ln(max(sᵢ, floor)) per measurement.
///
/// A voxel whose signal is nonpositive everywhere carries no information
/// about the model and is rejected as degenerate rather than silently
/// fitted to a constant floor.
pub fn log_transform_signal(s: &[f64], floor: f64) -> Result<LogSignal> {
    if !(floor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "log floor must be > 0, got {floor}"
        )));
    }
    if s.iter().all(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateVoxel(format!(
            "all {} signal values are nonpositive",
            s.len()
        )));
    }
    let mut floored = 0;
    let values = s
        .iter()
        .map(|&v| {
            if v < floor {
                floored += 1;
                floor.ln()
            } else {
                v.ln()
            }
        })
        .collect();
    Ok(LogSignal { values, floored })
}

/// How per-measurement fit weights are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Two-stage scheme: OLS fit, then wᵢ = exp(2·(A ĉ₀)ᵢ) — the squared
    /// predicted signal, the standard variance model for log-transformed
    /// magnitude data.
    #[default]
    Predicted,
    /// wᵢ = 1 (plain OLS).
    Identity,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Predicted => "predicted",
            WeightMode::Identity => "identity",
        }
    }
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "predicted" | "wls" => Ok(WeightMode::Predicted),
            "identity" | "ols" => Ok(WeightMode::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown weight mode \"{other}\" (expected \"predicted\" or \"identity\")"
            ))),
        }
    }
}

/// Diagonal WLS weights for one voxel (all finite and > 0).
pub fn wls_weights(a: &DesignMatrix, y_log: &[f64], mode: WeightMode) -> Result<Vec<f64>> {
    if y_log.len() != a.n() {
        return Err(Error::InvalidArgument(format!(
            "log-signal length {} does not match design rows {}",
            y_log.len(),
            a.n()
        )));
    }
    if mode == WeightMode::Identity {
        return Ok(vec![1.0; a.n()]);
    }
    if a.n() < a.d() {
        return Err(Error::RankDeficient(format!(
            "{} measurements cannot determine {} coefficients",
            a.n(),
            a.d()
        )));
    }

    // Stage 1: OLS through the normal equations.
    let am = a.to_dmatrix();
    let gram = am.transpose() * &am;
    let rhs = am.transpose() * DVector::from_column_slice(y_log);
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::RankDeficient("stage-1 normal matrix AᵀA is singular or indefinite".into())
    })?;
    let c0 = chol.solve(&rhs);

    // Stage 2: weight = squared predicted signal, exponent clamped so the
    // weight stays a positive normal float no matter how bad the OLS fit is.
    let pred = am * c0;
    Ok(pred
        .iter()
        .map(|p| (2.0 * p.clamp(-PRED_CLAMP, PRED_CLAMP)).exp())
        .collect())
}

/// A DTI coefficient vector `[ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtiCoefficients {
    pub c: [f64; DTI_DIM],
}

impl DtiCoefficients {
    pub fn new(c: [f64; DTI_DIM]) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite DTI coefficients {c:?}"
            )));
        }
        Ok(DtiCoefficients { c })
    }

    pub fn tensor(&self) -> [[f64; 3]; 3] {
        tensor_from_coeffs(&self.c)
    }

    pub fn fa(&self) -> FaValue {
        eval_fa(&self.c)
    }

    pub fn md(&self) -> f64 {
        eval_md(&self.c)
    }
}

/// Assemble the symmetric 3×3 tensor from a coefficient vector.
pub fn tensor_from_coeffs(c: &[f64]) -> [[f64; 3]; 3] {
    assert!(c.len() >= DTI_DIM, "need {DTI_DIM} coefficients, got {}", c.len());
    let (dxx, dyy, dzz, dxy, dxz, dyz) = (c[1], c[2], c[3], c[4], c[5], c[6]);
    [[dxx, dxy, dxz], [dxy, dyy, dyz], [dxz, dyz, dzz]]
}

/// Eigendecompose a coefficient vector's tensor.
///
/// Returns eigenvalues sorted descending and the matching unit eigenvectors
/// (`vectors[k]` pairs with `values[k]`). The decomposition reconstructs the
/// input to `‖VΛVᵀ − D‖_F ≤ 1e−10·max(1, ‖D‖_F)`.
pub fn eigendecompose_tensor(c: &[f64]) -> Result<([f64; 3], [[f64; 3]; 3])> {
    let d = tensor_from_coeffs(c);
    if d.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite tensor {d:?}")));
    }
    Ok(jacobi_eigen_sym3(d))
}

/// Cyclic Jacobi eigendecomposition of a symmetric 3×3 matrix.
///
/// Rotations are applied in the fixed pair order (0,1), (0,2), (1,2) until
/// the off-diagonal mass vanishes relative to the input's Frobenius norm;
/// convergence is quadratic, so a handful of sweeps suffice.
fn jacobi_eigen_sym3(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let frob: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-15 * frob.max(1.0);

    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..64 {
        let off =
            (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= tol {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq.abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let cos = 1.0 / (t * t + 1.0).sqrt();
            let sin = t * cos;
            let tau = sin / (1.0 + cos);

            a[p][p] -= t * apq;
            a[q][q] += t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            let r = 3 - p - q; // the remaining index
            let (arp, arq) = (a[r][p], a[r][q]);
            a[r][p] = arp - sin * (arq + tau * arp);
            a[p][r] = a[r][p];
            a[r][q] = arq + sin * (arp - tau * arq);
            a[q][r] = a[r][q];

            for row in 0..3 {
                let (vp, vq) = (v[row][p], v[row][q]);
                v[row][p] = vp - sin * (vq + tau * vp);
                v[row][q] = vq + sin * (vp - tau * vq);
            }
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut vectors = [[0.0; 3]; 3];
    for (k, &col) in order.iter().enumerate() {
        for row in 0..3 {
            vectors[k][row] = v[row][col];
        }
    }
    (values, vectors)
}

/// FA with its post-hoc adjustment flags.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaValue {
    /// Fractional anisotropy, clamped to [0, 1].
    pub fa: f64,
    /// The raw value fell outside [0, 1] and was clamped.
    pub clamped: bool,
    /// At least one eigenvalue was negative (non-physical tensor — kept, not
    /// clipped, so posterior spread survives intact).
    pub negative_eigenvalue: bool,
    /// Σλ² = 0 (or non-finite input): FA defined as 0.
    pub degenerate: bool,
}

/// Fractional anisotropy of a coefficient vector's tensor.
///
/// FA = √(3/2) · √Σ(λᵢ−λ̄)² / √Σλᵢ², clamped to [0, 1] with flags; a zero
/// tensor yields FA = 0 with the degenerate flag.
pub fn eval_fa(c: &[f64]) -> FaValue {
    let tensor = tensor_from_coeffs(c);
    if tensor.iter().flatten().any(|v| !v.is_finite()) {
        return FaValue {
            fa: 0.0,
            clamped: false,
            negative_eigenvalue: false,
            degenerate: true,
        };
    }
    let (lambda, _) = jacobi_eigen_sym3(tensor);
    let sum_sq: f64 = lambda.iter().map(|l| l * l).sum();
    if sum_sq == 0.0 {
        return FaValue {
            fa: 0.0,
            clamped: false,
            negative_eigenvalue: false,
            degenerate: true,
        };
    }
    let mean = (lambda[0] + lambda[1] + lambda[2]) / 3.0;
    let dev_sq: f64 = lambda.iter().map(|l| (l - mean) * (l - mean)).sum();
    let raw = (1.5 * dev_sq).sqrt() / sum_sq.sqrt();
    let fa = raw.clamp(0.0, 1.0);
    FaValue {
        fa,
        clamped: raw != fa,
        negative_eigenvalue: lambda.iter().any(|l| *l < 0.0),
        degenerate: false,
    }
}

/// Mean diffusivity: (Dxx + Dyy + Dzz)/3.
pub fn eval_md(c: &[f64]) -> f64 {
    assert!(c.len() >= DTI_DIM, "need {DTI_DIM} coefficients, got {}", c.len());
    (c[1] + c[2] + c[3]) / 3.0
}

/// Scalar property functions a posterior draw can be pushed through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Property {
    Fa,
    Md,
}

impl Property {
    pub fn evaluate(self, c: &[f64]) -> f64 {
        match self {
            Property::Fa => eval_fa(c).fa,
            Property::Md => eval_md(c),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Property::Fa => "fa",
            Property::Md => "md",
        }
    }
}

impl std::str::FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fa" => Ok(Property::Fa),
            "md" => Ok(Property::Md),
            other => Err(Error::InvalidArgument(format!(
                "unknown property \"{other}\" (expected \"fa\" or \"md\")"
            ))),
        }
    }
}
