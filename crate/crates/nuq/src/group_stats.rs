//! Precision-weighted Bayesian group comparison.
//!
//! Input: one posterior property sample stack per subject (m property maps,
//! all co-registered to a shared voxel grid) and a group label A or B per
//! subject. At every voxel, each subject contributes its m posterior draws
//! and a weight equal to the reciprocal of its posterior standard deviation
//! there — subjects whose property estimate is uncertain (noisy data, poor
//! fit) are down-weighted instead of polluting the group statistics.
//!
//! For each draw index j the weighted group-mean difference
//!
//! ```text
//! Δⱼ = Σ_{s∈A} wₛ z_{s,j} / Σ_{s∈A} wₛ − Σ_{s∈B} wₛ z_{s,j} / Σ_{s∈B} wₛ
//! ```
//!
//! is one draw from the group-difference posterior; the Bayesian t-score of
//! the voxel is `mean_j(Δⱼ) / std_j(Δⱼ)`. Positive t means group A larger.
//!
//! Weights are per subject *per voxel* by default; a global mode (one weight
//! per subject, from its median posterior std over the mask) exists for
//! comparison. Everything is deterministic — no RNG is involved.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dwi_io::{read_nifti, NiftiVolume};
use crate::error::{Error, Result};
use crate::numeric::{finite_sorted, mean, median_sorted, neumaier_sum, sample_std};

/// Weights below this posterior-std floor are capped at `1/ε`.
pub const WEIGHT_STD_FLOOR: f64 = 1e-8;

/// Cohort membership of one subject.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupLabel {
    A,
    B,
}

/// One subject's posterior property sample stack on the shared grid.
///
/// `data` is map-major: `data[j·nvox + v]` is draw j at voxel v (the layout
/// of a 4-D NIfTI volume whose 4th axis is the draw index). A voxel where
/// any draw is non-finite counts as missing for this subject.
#[derive(Clone, Debug)]
pub struct SubjectStack {
    pub id: String,
    pub label: GroupLabel,
    pub data: Vec<f64>,
}

/// All subjects of a two-group comparison on one voxel grid.
#[derive(Clone, Debug)]
pub struct CohortSamples {
    pub dims: [usize; 3],
    pub voxel_size: [f64; 3],
    pub affine: [[f64; 4]; 4],
    /// Posterior draws per subject.
    pub m: usize,
    pub subjects: Vec<SubjectStack>,
    /// Shared analysis mask, one flag per voxel.
    pub mask: Vec<bool>,
}

impl CohortSamples {
    /// Builds and validates a cohort. `mask = None` means all voxels.
    ///
    /// Requires m ≥ 2, at least one subject per group, and every stack
    /// sized m × nvox.
    pub fn new(
        dims: [usize; 3],
        m: usize,
        subjects: Vec<SubjectStack>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        let nvox = dims[0] * dims[1] * dims[2];
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "group comparison needs at least 2 draws per subject, got {m}"
            )));
        }
        let n_a = subjects.iter().filter(|s| s.label == GroupLabel::A).count();
        let n_b = subjects.len() - n_a;
        if n_a == 0 || n_b == 0 {
            return Err(Error::InvalidArgument(format!(
                "both groups must be nonempty, got {n_a} subjects in A and {n_b} in B"
            )));
        }
        for s in &subjects {
            if s.data.len() != m * nvox {
                return Err(Error::Consistency(format!(
                    "subject {} has {} values, expected {m} draws × {nvox} voxels",
                    s.id,
                    s.data.len()
                )));
            }
        }
        let mask = match mask {
            Some(mask) => {
                if mask.len() != nvox {
                    return Err(Error::Consistency(format!(
                        "mask has {} voxels, volume has {nvox}",
                        mask.len()
                    )));
                }
                mask
            }
            None => vec![true; nvox],
        };
        Ok(CohortSamples {
            dims,
            voxel_size: [1.0; 3],
            affine: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            m,
            subjects,
            mask,
        })
    }

    pub fn nvox(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Draw j of subject s at voxel v.
    fn value(&self, s: usize, j: usize, v: usize) -> f64 {
        self.subjects[s].data[j * self.nvox() + v]
    }

    /// True when every draw of subject s is finite at voxel v.
    fn subject_valid_at(&self, s: usize, v: usize) -> bool {
        let nvox = self.nvox();
        (0..self.m).all(|j| self.subjects[s].data[j * nvox + v].is_finite())
    }
}

/// How subject weights are assigned.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightingMode {
    /// One weight per subject per voxel: 1 / max(std of its draws there, ε).
    #[default]
    PerVoxel,
    /// One weight per subject: 1 / max(median per-voxel std over the mask, ε).
    Global,
}

impl WeightingMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightingMode::PerVoxel => "per-voxel",
            WeightingMode::Global => "global",
        }
    }
}

impl std::str::FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-voxel" | "voxel" => Ok(WeightingMode::PerVoxel),
            "global" => Ok(WeightingMode::Global),
            other => Err(Error::InvalidArgument(format!(
                "unknown weighting mode '{other}' (expected per-voxel or global)"
            ))),
        }
    }
}

/// A subject's precision weight at one voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubjectWeight {
    /// 1 / max(std, ε) with ε = [`WEIGHT_STD_FLOOR`].
    pub weight: f64,
    /// True when the posterior std fell below ε (collapsed posterior).
    pub degenerate: bool,
}

/// Weight of one subject from its m posterior draws at one voxel:
/// the reciprocal of the unbiased sample standard deviation, floored at ε
/// so collapsed posteriors get a large finite weight instead of ∞.
pub fn subject_weight(samples: &[f64]) -> Result<SubjectWeight> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "subject weight needs at least 2 draws, got {}",
            samples.len()
        )));
    }
    let std = sample_std(samples);
    Ok(SubjectWeight {
        weight: 1.0 / std.max(WEIGHT_STD_FLOOR),
        degenerate: std < WEIGHT_STD_FLOOR,
    })
}

/// Weighted group-mean difference for one draw: the A-side weighted mean of
/// `values_a` minus the B-side weighted mean of `values_b`.
///
/// Scaling either group's weights by a common positive constant leaves the
/// result unchanged (up to rounding) because only weight ratios enter.
pub fn weighted_group_delta(
    values_a: &[f64],
    weights_a: &[f64],
    values_b: &[f64],
    weights_b: &[f64],
) -> f64 {
    let num_a = neumaier_sum(values_a.iter().zip(weights_a).map(|(z, w)| w * z));
    let den_a = neumaier_sum(weights_a.iter().copied());
    let num_b = neumaier_sum(values_b.iter().zip(weights_b).map(|(z, w)| w * z));
    let den_b = neumaier_sum(weights_b.iter().copied());
    num_a / den_a - num_b / den_b
}

/// Why a voxel's t-score is (or is not) defined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoxelFlag {
    /// Outside the shared mask.
    OutsideMask,
    /// t is finite.
    Valid,
    /// One group had no subject with finite draws here.
    MissingGroup,
    /// The difference draws had zero spread but a nonzero mean.
    ZeroStd,
    /// Every difference draw was exactly zero (e.g. identical cohorts).
    ZeroDifference,
}

impl VoxelFlag {
    pub fn code(self) -> u8 {
        match self {
            VoxelFlag::OutsideMask => 0,
            VoxelFlag::Valid => 1,
            VoxelFlag::MissingGroup => 2,
            VoxelFlag::ZeroStd => 3,
            VoxelFlag::ZeroDifference => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VoxelFlag::OutsideMask => "outside_mask",
            VoxelFlag::Valid => "valid",
            VoxelFlag::MissingGroup => "missing_group",
            VoxelFlag::ZeroStd => "zero_std",
            VoxelFlag::ZeroDifference => "zero_difference",
        }
    }
}

/// Voxelwise output of [`bayesian_t_map`].
#[derive(Clone, Debug)]
pub struct GroupReport {
    pub dims: [usize; 3],
    pub voxel_size: [f64; 3],
    pub affine: [[f64; 4]; 4],
    pub weighting: WeightingMode,
    /// Bayesian t-score per voxel; NaN where undefined (see `flags`).
    pub t_map: Vec<f64>,
    /// Mean of the difference draws per voxel (group A − group B).
    pub mean_diff_map: Vec<f64>,
    /// weights[s][v]: subject s's weight at voxel v; NaN where the subject
    /// is missing or the voxel is outside the mask.
    pub weights: Vec<Vec<f64>>,
    pub flags: Vec<VoxelFlag>,
}

impl GroupReport {
    /// Flag map as small integer codes (for writing alongside the t-map).
    pub fn flag_codes(&self) -> Vec<u8> {
        self.flags.iter().map(|f| f.code()).collect()
    }

    /// How many voxels carry each flag.
    pub fn flag_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for f in &self.flags {
            *counts.entry(f.label()).or_insert(0) += 1;
        }
        counts
    }
}

/// One global weight per subject: reciprocal of the median of its per-voxel
/// draw stds over the masked voxels where it is valid. NaN when the subject
/// is valid nowhere.
fn global_weights(c: &CohortSamples) -> Vec<f64> {
    let nvox = c.nvox();
    (0..c.subjects.len())
        .map(|s| {
            let stds: Vec<f64> = (0..nvox)
                .filter(|&v| c.mask[v] && c.subject_valid_at(s, v))
                .map(|v| {
                    let draws: Vec<f64> = (0..c.m).map(|j| c.value(s, j, v)).collect();
                    sample_std(&draws)
                })
                .collect();
            let sorted = finite_sorted(stds.into_iter());
            match median_sorted(&sorted) {
                Some(med) => 1.0 / med.max(WEIGHT_STD_FLOOR),
                None => f64::NAN,
            }
        })
        .collect()
}

/// Voxelwise Bayesian t-scores between groups A and B.
///
/// Per voxel, each valid subject contributes m draws and a precision weight;
/// the weighted group-mean difference is formed per draw index and the
/// t-score is `mean/std` of those m difference draws. Positive t = group A
/// larger. Undefined voxels are NaN and carry a [`VoxelFlag`] saying why.
///
/// Deterministic and voxelwise-parallel; swapping the group labels negates
/// `t_map` and `mean_diff_map` exactly.
pub fn bayesian_t_map(c: &CohortSamples, weighting: WeightingMode) -> Result<GroupReport> {
    let nvox = c.nvox();
    let ns = c.subjects.len();
    let global = match weighting {
        WeightingMode::Global => Some(global_weights(c)),
        WeightingMode::PerVoxel => None,
    };

    struct VoxelOut {
        t: f64,
        mean_diff: f64,
        flag: VoxelFlag,
        weights: Vec<f64>,
    }

    let per_voxel: Vec<VoxelOut> = (0..nvox)
        .into_par_iter()
        .map(|v| {
            let mut out = VoxelOut {
                t: f64::NAN,
                mean_diff: f64::NAN,
                flag: VoxelFlag::OutsideMask,
                weights: vec![f64::NAN; ns],
            };
            if !c.mask[v] {
                return out;
            }

            // Valid subjects and their weights at this voxel.
            let mut idx_a = Vec::new();
            let mut w_a = Vec::new();
            let mut idx_b = Vec::new();
            let mut w_b = Vec::new();
            let mut draws = vec![0.0; c.m];
            for s in 0..ns {
                if !c.subject_valid_at(s, v) {
                    continue;
                }
                let w = match &global {
                    Some(g) => g[s],
                    None => {
                        for (j, d) in draws.iter_mut().enumerate() {
                            *d = c.value(s, j, v);
                        }
                        subject_weight(&draws).expect("m ≥ 2 by construction").weight
                    }
                };
                if !w.is_finite() {
                    continue;
                }
                out.weights[s] = w;
                match c.subjects[s].label {
                    GroupLabel::A => {
                        idx_a.push(s);
                        w_a.push(w);
                    }
                    GroupLabel::B => {
                        idx_b.push(s);
                        w_b.push(w);
                    }
                }
            }
            if idx_a.is_empty() || idx_b.is_empty() {
                out.flag = VoxelFlag::MissingGroup;
                return out;
            }

            // One group-difference draw per draw index.
            let mut deltas = vec![0.0; c.m];
            let mut z_a = vec![0.0; idx_a.len()];
            let mut z_b = vec![0.0; idx_b.len()];
            for (j, delta) in deltas.iter_mut().enumerate() {
                for (k, &s) in idx_a.iter().enumerate() {
                    z_a[k] = c.value(s, j, v);
                }
                for (k, &s) in idx_b.iter().enumerate() {
                    z_b[k] = c.value(s, j, v);
                }
                *delta = weighted_group_delta(&z_a, &w_a, &z_b, &w_b);
            }

            let mean_d = mean(&deltas);
            let std_d = sample_std(&deltas);
            out.mean_diff = mean_d;
            if std_d == 0.0 {
                out.flag = if deltas.iter().all(|&d| d == 0.0) {
                    VoxelFlag::ZeroDifference
                } else {
                    VoxelFlag::ZeroStd
                };
            } else {
                out.t = mean_d / std_d;
                out.flag = VoxelFlag::Valid;
            }
            out
        })
        .collect();

    let mut report = GroupReport {
        dims: c.dims,
        voxel_size: c.voxel_size,
        affine: c.affine,
        weighting,
        t_map: Vec::with_capacity(nvox),
        mean_diff_map: Vec::with_capacity(nvox),
        weights: vec![vec![f64::NAN; nvox]; ns],
        flags: Vec::with_capacity(nvox),
    };
    for (v, out) in per_voxel.into_iter().enumerate() {
        report.t_map.push(out.t);
        report.mean_diff_map.push(out.mean_diff);
        report.flags.push(out.flag);
        for (s, w) in out.weights.into_iter().enumerate() {
            report.weights[s][v] = w;
        }
    }
    Ok(report)
}

/// One subject entry in a cohort manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestSubject {
    /// Path to the subject's 4-D sample stack (4th axis = draws); relative
    /// paths resolve against the manifest's directory.
    pub path: String,
    pub label: GroupLabel,
    /// Defaults to the file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

/// On-disk description of a cohort: subject stacks plus an optional mask.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CohortManifest {
    pub subjects: Vec<ManifestSubject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

fn resolve(base: &Path, rel: &str) -> std::path::PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a cohort manifest JSON and every stack it references.
///
/// All stacks must share spatial dims and draw count; the optional mask
/// volume must share the spatial dims. Grid metadata (voxel size, affine)
/// is taken from the first subject.
pub fn load_cohort(manifest_path: impl AsRef<Path>) -> Result<CohortSamples> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(manifest_path.to_path_buf(), e))?;
    let manifest: CohortManifest = serde_json::from_str(&text)
        .map_err(|e| Error::manifest(manifest_path.to_path_buf(), e.to_string()))?;
    if manifest.subjects.is_empty() {
        return Err(Error::manifest(
            manifest_path.to_path_buf(),
            "manifest lists no subjects".to_string(),
        ));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    let mut dims = [0usize; 3];
    let mut m = 0usize;
    let mut voxel_size = [1.0; 3];
    let mut affine = [[0.0; 4]; 4];
    for (i, entry) in manifest.subjects.iter().enumerate() {
        let path = resolve(base, &entry.path);
        let vol = read_nifti(&path)?;
        if i == 0 {
            dims = vol.spatial_dims();
            m = vol.nvols();
            voxel_size = vol.voxel_size;
            affine = vol.affine;
        } else if vol.spatial_dims() != dims || vol.nvols() != m {
            return Err(Error::Consistency(format!(
                "subject stack {} has dims {:?} × {} draws, expected {:?} × {m}",
                path.display(),
                vol.spatial_dims(),
                vol.nvols(),
                dims
            )));
        }
        let id = entry.id.clone().unwrap_or_else(|| {
            Path::new(&entry.path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("subject_{i}"))
        });
        subjects.push(SubjectStack {
            id,
            label: entry.label,
            data: vol.data,
        });
    }

    let mask = match &manifest.mask {
        Some(rel) => {
            let vol = read_nifti(resolve(base, rel))?;
            if vol.spatial_dims() != dims {
                return Err(Error::Consistency(format!(
                    "cohort mask dims {:?} do not match subject dims {dims:?}",
                    vol.spatial_dims()
                )));
            }
            let nvox = dims[0] * dims[1] * dims[2];
            Some(vol.data[..nvox].iter().map(|&x| x != 0.0).collect())
        }
        None => None,
    };

    let mut cohort = CohortSamples::new(dims, m, subjects, mask)?;
    cohort.voxel_size = voxel_size;
    cohort.affine = affine;
    Ok(cohort)
}

/// The t-map (and companion maps) as writable volumes.
pub fn report_volume(report: &GroupReport, values: &[f64]) -> NiftiVolume {
    let dims = [report.dims[0], report.dims[1], report.dims[2], 1];
    let mut vol = NiftiVolume::new(dims, report.voxel_size, values.to_vec())
        .expect("report maps match report dims");
    vol.affine = report.affine;
    vol
}
