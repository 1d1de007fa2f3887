//! Posterior-volume persistence: a directory of NIfTI volumes + manifest.
//!
//! Layout for dimension d (d ≤ 9):
//!
//! ```text
//! mu_0.nii … mu_{d−1}.nii    posterior mean, one volume per coefficient
//! nu.nii                     degrees of freedom
//! sigma2.nii                 residual variance
//! rchol_00.nii … rchol_{d−1}{d−1}.nii
//!                            packed lower triangle of chol(R), d(d+1)/2
//!                            volumes named by (row, column) digit pair
//! valid.nii                  u8 codes: 0 outside mask, 1 valid, 2 ν ≤ 2,
//!                            3 singular, 4 degenerate signal
//! manifest.json              format tag, software version, d, λ, gradient
//!                            fingerprint, seed policy, code table, stats
//! ```
//!
//! Volumes are written uncompressed and carry no timestamps, so saving the
//! same volume twice produces byte-identical directories; `save ∘ load` is
//! the identity on a persisted directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tri_index, tri_len, FitStats, InvalidReason, PosteriorVolume, VoxelPosterior};
use crate::dwi_io::{read_nifti, write_nifti, write_nifti_codes, NiftiVolume};
use crate::error::{Error, Result};

/// Format tag of the persisted layout.
pub const MANIFEST_FORMAT: &str = "nuq-posterior-v1";

/// Sidecar metadata for a persisted posterior directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorManifest {
    pub format: String,
    pub version: String,
    pub d: usize,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub column_scale: Option<Vec<f64>>,
    pub gradient_fingerprint: String,
    pub seed_policy: String,
    pub valid_codes: BTreeMap<String, String>,
    pub stats: FitStats,
}

fn code_table() -> BTreeMap<String, String> {
    let mut t = BTreeMap::new();
    t.insert("0".into(), "outside_mask".into());
    t.insert("1".into(), "valid".into());
    for reason in [
        InvalidReason::NuLe2,
        InvalidReason::Singular,
        InvalidReason::DegenerateSignal,
    ] {
        t.insert(reason.code().to_string(), reason.label().into());
    }
    t
}

fn field_volume(pv: &PosteriorVolume, get: impl Fn(&VoxelPosterior) -> f64) -> Vec<f64> {
    pv.posteriors
        .iter()
        .map(|p| match p {
            Some(p) => get(p),
            None => f64::NAN,
        })
        .collect()
}

fn write_field(dir: &Path, name: &str, pv: &PosteriorVolume, data: Vec<f64>) -> Result<()> {
    let mut vol = NiftiVolume::new(
        [pv.dims[0], pv.dims[1], pv.dims[2], 1],
        pv.voxel_size,
        data,
    )?;
    vol.affine = pv.affine;
    write_nifti(dir.join(format!("{name}.nii")), &vol)
}

/// Persist a fitted volume to `dir` (created if needed).
pub fn save_posterior_volume(pv: &PosteriorVolume, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if pv.d > 9 {
        return Err(Error::InvalidArgument(format!(
            "persistence names coefficients with single digits; d = {} exceeds 9",
            pv.d
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    for k in 0..pv.d {
        write_field(dir, &format!("mu_{k}"), pv, field_volume(pv, |p| p.mu[k]))?;
    }
    write_field(dir, "nu", pv, field_volume(pv, |p| p.nu))?;
    write_field(dir, "sigma2", pv, field_volume(pv, |p| p.sigma2_hat))?;
    for i in 0..pv.d {
        for j in 0..=i {
            write_field(
                dir,
                &format!("rchol_{i}{j}"),
                pv,
                field_volume(pv, |p| p.r_chol[tri_index(i, j)]),
            )?;
        }
    }
    write_nifti_codes(
        dir.join("valid.nii"),
        pv.dims,
        pv.voxel_size,
        &pv.affine,
        &pv.valid_codes(),
    )?;

    let manifest = PosteriorManifest {
        format: MANIFEST_FORMAT.into(),
        version: crate::VERSION.into(),
        d: pv.d,
        lambda: pv.lambda,
        column_scale: pv.column_scale.clone(),
        gradient_fingerprint: pv.gradient_fingerprint.clone(),
        seed_policy: crate::rng::SEED_POLICY.into(),
        valid_codes: code_table(),
        stats: pv.stats,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::manifest(&path, format!("serialization failed: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_field(dir: &Path, name: &str, dims: [usize; 3]) -> Result<NiftiVolume> {
    let path = dir.join(format!("{name}.nii"));
    let vol = read_nifti(&path)?;
    if vol.spatial_dims() != dims || vol.nvols() != 1 {
        return Err(Error::format(
            &path,
            format!(
                "dims {:?}×{} disagree with the posterior grid {:?}",
                vol.spatial_dims(),
                vol.nvols(),
                dims
            ),
        ));
    }
    Ok(vol)
}

/// Load a posterior directory written by [`save_posterior_volume`].
pub fn load_posterior_volume(dir: impl AsRef<Path>) -> Result<PosteriorVolume> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: PosteriorManifest = serde_json::from_str(&text)
        .map_err(|e| Error::manifest(&manifest_path, format!("invalid JSON: {e}")))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::manifest(
            &manifest_path,
            format!(
                "format \"{}\" is not \"{MANIFEST_FORMAT}\"",
                manifest.format
            ),
        ));
    }
    let d = manifest.d;
    if d == 0 || d > 9 {
        return Err(Error::manifest(&manifest_path, format!("unsupported d = {d}")));
    }

    let reference = read_nifti(dir.join("mu_0.nii"))?;
    let dims = reference.spatial_dims();
    let nvox = reference.nvox();

    let mut mu_vols = vec![reference];
    for k in 1..d {
        mu_vols.push(read_field(dir, &format!("mu_{k}"), dims)?);
    }
    let nu_vol = read_field(dir, "nu", dims)?;
    let sigma2_vol = read_field(dir, "sigma2", dims)?;
    let mut rchol_vols = Vec::with_capacity(tri_len(d));
    for i in 0..d {
        for j in 0..=i {
            rchol_vols.push(read_field(dir, &format!("rchol_{i}{j}"), dims)?);
        }
    }
    let valid_vol = read_field(dir, "valid", dims)?;

    let mut posteriors = Vec::with_capacity(nvox);
    for v in 0..nvox {
        let code = valid_vol.data[v];
        if code == 0.0 {
            posteriors.push(None);
            continue;
        }
        let (valid, reason) = if code == 1.0 {
            (true, None)
        } else {
            let reason = InvalidReason::from_code(code as u8).ok_or_else(|| {
                Error::format(
                    dir.join("valid.nii"),
                    format!("unknown validity code {code} at voxel {v}"),
                )
            })?;
            (false, Some(reason))
        };
        posteriors.push(Some(VoxelPosterior {
            mu: mu_vols.iter().map(|vol| vol.data[v]).collect(),
            nu: nu_vol.data[v],
            r_chol: rchol_vols.iter().map(|vol| vol.data[v]).collect(),
            sigma2_hat: sigma2_vol.data[v],
            valid,
            reason,
        }));
    }

    Ok(PosteriorVolume {
        dims,
        voxel_size: mu_vols[0].voxel_size,
        affine: mu_vols[0].affine,
        d,
        lambda: manifest.lambda,
        column_scale: manifest.column_scale,
        gradient_fingerprint: manifest.gradient_fingerprint,
        posteriors,
        stats: manifest.stats,
    })
}
