//! FSL-style gradient tables: b-values and unit direction vectors.
//!
//! The on-disk convention is two text files: a `bval` file holding one
//! whitespace-separated row of n b-values (s/mm²), and a `bvec` file holding
//! three rows of n numbers (x, y, z components per measurement). Directions
//! for diffusion-weighted measurements are renormalized to unit length on
//! load; b=0 entries may be zero vectors.
//!
//! A table has a canonical text rendering (shortest round-trip decimal,
//! single spaces, one `\n` per row) whose SHA-256 is used as a fingerprint
//! to detect gradient-scheme mismatches between pipeline stages. Two files
//! differing only in whitespace or number formatting fingerprint identically.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// b-values at or below this count as b=0 (s/mm²) unless overridden.
pub const DEFAULT_B0_THRESHOLD: f64 = 50.0;

/// Relative deviation from unit norm above which the original norm is
/// recorded as a renormalization warning.
const RENORM_WARN_REL: f64 = 1e-4;
/// Deviations at or below this are left untouched so that loading an
/// already-canonical table is exactly the identity.
const RENORM_SKIP_REL: f64 = 1e-12;

/// Per-measurement b-values and unit gradient directions.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTable {
    pub bvals: Vec<f64>,
    pub bvecs: Vec<[f64; 3]>,
    pub b0_threshold: f64,
    /// For each measurement, the original direction norm when loading had to
    /// renormalize it by more than 1e-4 relative change; `None` otherwise.
    pub renormalized: Vec<Option<f64>>,
}

impl GradientTable {
    /// Build a table from raw values, normalizing diffusion-weighted
    /// directions and recording which ones needed it.
    pub fn from_raw(bvals: Vec<f64>, bvecs: Vec<[f64; 3]>, b0_threshold: f64) -> Result<Self> {
        if bvals.len() != bvecs.len() {
            return Err(Error::Consistency(format!(
                "bval has {} entries, bvec columns {}",
                bvals.len(),
                bvecs.len()
            )));
        }
        if bvals.is_empty() {
            return Err(Error::InvalidArgument("empty gradient table".into()));
        }
        if !(b0_threshold >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "b0 threshold must be ≥ 0, got {b0_threshold}"
            )));
        }
        for (i, b) in bvals.iter().enumerate() {
            if !b.is_finite() || *b < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "b-value {b} at measurement {i} (must be finite and ≥ 0)"
                )));
            }
        }

        let mut vecs = bvecs;
        let mut renormalized = vec![None; vecs.len()];
        for (i, v) in vecs.iter_mut().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Consistency(format!(
                    "non-finite direction {v:?} at measurement {i}"
                )));
            }
            if bvals[i] <= b0_threshold {
                continue; // b=0 directions are not constrained
            }
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm == 0.0 {
                return Err(Error::Consistency(format!(
                    "zero direction vector at measurement {i} with b = {}",
                    bvals[i]
                )));
            }
            let rel = (norm - 1.0).abs();
            if rel > RENORM_WARN_REL {
                renormalized[i] = Some(norm);
            }
            if rel > RENORM_SKIP_REL {
                for x in v.iter_mut() {
                    *x /= norm;
                }
            }
        }

        Ok(GradientTable {
            bvals,
            bvecs: vecs,
            b0_threshold,
            renormalized,
        })
    }

    /// Number of measurements.
    pub fn len(&self) -> usize {
        self.bvals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bvals.is_empty()
    }

    /// Whether measurement `i` counts as b=0 under this table's threshold.
    pub fn is_b0(&self, i: usize) -> bool {
        self.bvals[i] <= self.b0_threshold
    }

    pub fn b0_count(&self) -> usize {
        self.bvals.iter().filter(|b| **b <= self.b0_threshold).count()
    }

    /// Canonical text rendering: the bval row followed by the three bvec
    /// rows, one `\n` per row, values space-joined in shortest round-trip
    /// decimal form.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        render_row(&mut out, self.bvals.iter().copied());
        for axis in 0..3 {
            render_row(&mut out, self.bvecs.iter().map(|v| v[axis]));
        }
        out
    }

    /// SHA-256 (lowercase hex) of the canonical text rendering.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            write!(hex, "{byte:02x}").expect("write to String cannot fail");
        }
        hex
    }

    /// Write the table back out as an FSL bval/bvec pair in canonical form.
    pub fn write_fsl(&self, bval_path: impl AsRef<Path>, bvec_path: impl AsRef<Path>) -> Result<()> {
        let text = self.canonical_text();
        let mut rows = text.lines();
        let bval_row = rows.next().expect("canonical text always has 4 rows");
        let bvec_rows: Vec<&str> = rows.collect();
        let bval_path = bval_path.as_ref();
        let bvec_path = bvec_path.as_ref();
        std::fs::write(bval_path, format!("{bval_row}\n")).map_err(|e| Error::io(bval_path, e))?;
        std::fs::write(bvec_path, format!("{}\n", bvec_rows.join("\n")))
            .map_err(|e| Error::io(bvec_path, e))
    }
}

fn render_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        write!(out, "{v}").expect("write to String cannot fail");
        first = false;
    }
    out.push('\n');
}

/// Parse one text file into rows of f64, tracking 1-based line numbers for
/// error reporting. Blank lines are skipped.
fn parse_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for token in line.split_whitespace() {
            let v: f64 = token.parse().map_err(|_| Error::ParseNumber {
                path: path.to_path_buf(),
                line: lineno + 1,
                token: token.to_string(),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Read an FSL bval/bvec pair with the default b=0 threshold.
pub fn read_gradients(bval_path: impl AsRef<Path>, bvec_path: impl AsRef<Path>) -> Result<GradientTable> {
    read_gradients_with_threshold(bval_path, bvec_path, DEFAULT_B0_THRESHOLD)
}

/// Read an FSL bval/bvec pair, classifying b ≤ `b0_threshold` as b=0.
pub fn read_gradients_with_threshold(
    bval_path: impl AsRef<Path>,
    bvec_path: impl AsRef<Path>,
    b0_threshold: f64,
) -> Result<GradientTable> {
    let bval_path = bval_path.as_ref();
    let bvec_path = bvec_path.as_ref();

    let bval_rows = parse_rows(bval_path)?;
    let bvals: Vec<f64> = bval_rows.into_iter().flatten().collect();
    if bvals.is_empty() {
        return Err(Error::format(bval_path, "no b-values found"));
    }

    let bvec_rows = parse_rows(bvec_path)?;
    if bvec_rows.len() != 3 {
        return Err(Error::format(
            bvec_path,
            format!("expected 3 rows (x, y, z), found {}", bvec_rows.len()),
        ));
    }
    let n = bvec_rows[0].len();
    if bvec_rows.iter().any(|r| r.len() != n) {
        return Err(Error::Consistency(format!(
            "bvec rows have unequal lengths {}, {}, {} in {}",
            bvec_rows[0].len(),
            bvec_rows[1].len(),
            bvec_rows[2].len(),
            bvec_path.display()
        )));
    }
    if bvals.len() != n {
        return Err(Error::Consistency(format!(
            "bval has {} entries, bvec columns {}",
            bvals.len(),
            n
        )));
    }

    let bvecs: Vec<[f64; 3]> = (0..n)
        .map(|i| [bvec_rows[0][i], bvec_rows[1][i], bvec_rows[2][i]])
        .collect();
    GradientTable::from_raw(bvals, bvecs, b0_threshold)
}
