//! Diffusion-MRI dataset I/O: NIfTI volumes, gradient tables, and the
//! consistency checks that tie them together.
//!
//! A [`DwiDataset`] bundles a 4-D signal volume (one 3-D image per
//! measurement), its gradient table, and an optional brain mask.
//! [`validate_dataset`] reports invariant violations as human-readable
//! strings rather than failing, so callers can decide whether a problem is
//! fatal; the fitting layer treats a non-empty report as an abort.

mod gradients;
mod nifti;

pub use gradients::{
    read_gradients, read_gradients_with_threshold, GradientTable, DEFAULT_B0_THRESHOLD,
};
pub use nifti::{read_nifti, write_nifti, write_nifti_codes, Datatype, NiftiVolume};

use std::path::Path;

use crate::error::Result;

/// A loaded diffusion-weighted dataset: signal, acquisition scheme, mask.
#[derive(Clone, Debug)]
pub struct DwiDataset {
    /// 4-D signal; `dims[3]` is the measurement count n.
    pub signal: NiftiVolume,
    pub gradients: GradientTable,
    /// Optional 3-D mask; voxels with value ≠ 0 are inside.
    pub mask: Option<NiftiVolume>,
}

impl DwiDataset {
    /// Per-voxel inclusion flags in volume linear order. All-true when the
    /// dataset has no mask.
    pub fn mask_flags(&self) -> Vec<bool> {
        let nvox = self.signal.nvox();
        match &self.mask {
            Some(m) => m.data.iter().take(nvox).map(|v| *v != 0.0).collect(),
            None => vec![true; nvox],
        }
    }

    /// The n signal values of one voxel, in measurement order.
    pub fn voxel_signal(&self, voxel: usize) -> Vec<f64> {
        let nvox = self.signal.nvox();
        (0..self.signal.nvols())
            .map(|t| self.signal.data[voxel + t * nvox])
            .collect()
    }
}

/// Check a dataset against its invariants and report every violation found.
/// An empty report means the dataset is valid.
pub fn validate_dataset(ds: &DwiDataset) -> Vec<String> {
    let mut report = Vec::new();

    let n_volumes = ds.signal.nvols();
    let n_gradients = ds.gradients.len();
    if n_volumes != n_gradients {
        report.push(format!(
            "gradient count mismatch: signal has {n_volumes} volumes, gradient table has {n_gradients} entries"
        ));
    }

    if ds.gradients.b0_count() == 0 {
        report.push(format!(
            "missing b0: no b-value at or below the threshold {}",
            ds.gradients.b0_threshold
        ));
    }

    if let Some(mask) = &ds.mask {
        let m = mask.spatial_dims();
        let s = ds.signal.spatial_dims();
        if m != s || mask.nvols() != 1 {
            report.push(format!(
                "mask shape mismatch: mask is {:?}×{}, signal spatial dims are {:?}",
                m,
                mask.nvols(),
                s
            ));
        }
    }

    report
}

/// Load signal, gradients, and optional mask from disk into a dataset.
/// Consistency between the parts is *not* enforced here; run
/// [`validate_dataset`] on the result.
pub fn load_dwi(
    signal_path: impl AsRef<Path>,
    bval_path: impl AsRef<Path>,
    bvec_path: impl AsRef<Path>,
    mask_path: Option<&Path>,
    b0_threshold: f64,
) -> Result<DwiDataset> {
    let signal = read_nifti(signal_path)?;
    let gradients = read_gradients_with_threshold(bval_path, bvec_path, b0_threshold)?;
    let mask = match mask_path {
        Some(p) => Some(read_nifti(p)?),
        None => None,
    };
    Ok(DwiDataset {
        signal,
        gradients,
        mask,
    })
}
