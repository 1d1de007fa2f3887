//! The `nuq` command-line front end.
//!
//! One subcommand per pipeline stage:
//!
//! * `fit` — fit per-voxel posteriors to a DWI dataset and persist them.
//! * `sample` — draw coefficient vectors from one voxel's posterior.
//! * `map` — write a voxel-level NUQ quality map.
//! * `score` — pooled NUQ score for the subject or a region.
//! * `compare` — score a raw/processed dataset pair and report the delta.
//! * `group` — Bayesian t-map between two cohorts of sample stacks.
//! * `phantom` — generate a synthetic dataset with known ground truth.
//!
//! Machine-readable JSON goes to standard output; diagnostics go to
//! standard error. Exit codes: 0 success, 2 usage or validation error,
//! 3 quality-gate failure (`compare` found the processed data worse than
//! the raw data). Voxel-parallel stages honor `--threads` (or the
//! `NUQ_THREADS` environment variable); results do not depend on the
//! thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::bayes_fit::{
    fit_volume, load_posterior_volume, residual_variance_map, sample_posterior,
    save_posterior_volume, FitConfig, PosteriorVolume, RegularizerSpec,
};
use crate::discrepancy::KernelSpec;
use crate::dwi_io::{load_dwi, write_nifti, write_nifti_codes, NiftiVolume, DEFAULT_B0_THRESHOLD};
use crate::error::{Error, Result};
use crate::group_stats::{bayesian_t_map, load_cohort, WeightingMode};
use crate::model_dti::{Property, WeightMode, DTI_COLUMN_LABELS};
use crate::nuq_metric::{
    compare_datasets, region_nuq_score, voxel_nuq_map, CompareConfig, Region, DEFAULT_M_PER_SET,
};
use crate::phantom::{
    gradient_scheme, save_phantom, simulate_signal, NoiseKind, NoiseSpec, PhantomSpec,
    TensorField, DEFAULT_B0_COUNT, DEFAULT_BVALUE, DEFAULT_DIRECTIONS,
};

/// No-reference noise quantification for diffusion MRI.
#[derive(Parser, Debug)]
#[command(name = "nuq", version, about, max_term_width = 100)]
pub struct Cli {
    /// Worker threads for voxel-parallel stages (falls back to the
    /// NUQ_THREADS environment variable, then to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit per-voxel Bayesian posteriors and persist them to a directory.
    Fit(FitArgs),
    /// Draw coefficient samples from one voxel's fitted posterior.
    Sample(SampleArgs),
    /// Write a voxel-level quality map (mean |Δ| between paired draws).
    Map(MapArgs),
    /// Pooled NUQ score for the subject or a region (JSON on stdout).
    Score(ScoreArgs),
    /// Score a raw/processed dataset pair and report the score delta.
    Compare(CompareArgs),
    /// Bayesian t-map between cohorts of posterior sample stacks.
    Group(GroupArgs),
    /// Generate a synthetic phantom dataset with known ground truth.
    Phantom(PhantomArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// 4-D DWI signal volume (.nii or .nii.gz).
    #[arg(long)]
    pub dwi: PathBuf,
    /// FSL-style b-value file (one row).
    #[arg(long)]
    pub bval: PathBuf,
    /// FSL-style gradient-direction file (three rows).
    #[arg(long)]
    pub bvec: PathBuf,
    /// Optional binary mask volume; voxels where it is 0 are skipped.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Measurements with b below this count as baselines.
    #[arg(long, default_value_t = DEFAULT_B0_THRESHOLD)]
    pub b0_threshold: f64,
    /// Signal model (only "dti" is implemented).
    #[arg(long, default_value = "dti")]
    pub model: String,
    /// Least-squares weighting: "predicted" (WLS) or "identity" (OLS).
    #[arg(long, default_value = "predicted")]
    pub weighting: String,
    /// Ridge strength λ added to the coefficient Gram matrix.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Floor for the log transform (default: 1e-6 × max signal).
    #[arg(long)]
    pub log_floor: Option<f64>,
    /// Output directory for the posterior volume.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Fitted posterior directory (from `nuq fit`).
    #[arg(long)]
    pub posterior: PathBuf,
    /// Voxel to sample, as "x,y,z".
    #[arg(long)]
    pub voxel: String,
    /// Number of coefficient draws.
    #[arg(long, default_value_t = 10)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MapArgs {
    /// Fitted posterior directory (from `nuq fit`).
    #[arg(long)]
    pub posterior: PathBuf,
    /// Property to map: "fa" or "md".
    #[arg(long, default_value = "fa")]
    pub property: String,
    /// Draw pairs averaged per voxel.
    #[arg(long, default_value_t = 8)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output NIfTI path for the map.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Fitted posterior directory (from `nuq fit`).
    #[arg(long)]
    pub posterior: PathBuf,
    /// Property to score: "fa" or "md".
    #[arg(long, default_value = "fa")]
    pub property: String,
    /// Rectangular region "x0:x1,y0:y1,z0:z1" (inclusive). Default: subject.
    #[arg(long, conflicts_with_all = ["voxel", "slice"])]
    pub region: Option<String>,
    /// Single voxel "x,y,z".
    #[arg(long, conflicts_with = "slice")]
    pub voxel: Option<String>,
    /// One plane "axis,index" with axis in 0..=2.
    #[arg(long)]
    pub slice: Option<String>,
    /// Kernel family: "linear", "polynomial", or "rbf"
    /// (default: linear for subject/voxel, polynomial for slice/patch).
    #[arg(long)]
    pub kernel: Option<String>,
    /// Polynomial degree (with --kernel polynomial; default 2).
    #[arg(long)]
    pub degree: Option<u32>,
    /// Kernel scale (required with --kernel polynomial or rbf).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Polynomial offset (with --kernel polynomial; default 1).
    #[arg(long)]
    pub offset: Option<f64>,
    /// Posterior draws per MMD sample set.
    #[arg(long, default_value_t = DEFAULT_M_PER_SET)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Raw (before) DWI signal volume.
    #[arg(long)]
    pub raw_dwi: PathBuf,
    /// Processed (after) DWI signal volume.
    #[arg(long)]
    pub processed_dwi: PathBuf,
    /// Shared b-value file (both datasets must use one gradient table).
    #[arg(long)]
    pub bval: PathBuf,
    /// Shared gradient-direction file.
    #[arg(long)]
    pub bvec: PathBuf,
    /// Optional shared mask volume.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_B0_THRESHOLD)]
    pub b0_threshold: f64,
    /// Property to score: "fa" or "md".
    #[arg(long, default_value = "fa")]
    pub property: String,
    /// Least-squares weighting for both fits.
    #[arg(long, default_value = "predicted")]
    pub weighting: String,
    /// Ridge strength λ for both fits.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Kernel family (default: linear).
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub degree: Option<u32>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub offset: Option<f64>,
    /// Posterior draws per MMD sample set.
    #[arg(long, default_value_t = DEFAULT_M_PER_SET)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for report.json and the residual-variance maps.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GroupArgs {
    /// Cohort manifest JSON: subject stack paths, labels, optional mask.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Subject weighting: "per-voxel" (default) or "global".
    #[arg(long, default_value = "per-voxel")]
    pub weighting: String,
    /// Directory for t_map.nii, mean_diff_map.nii, flags.nii.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// Tensor preset: "uniform_iso", "crossing_free", or "fa_gradient".
    #[arg(long, default_value = "uniform_iso")]
    pub preset: String,
    /// Volume extents "nx,ny,nz".
    #[arg(long, default_value = "20,20,20")]
    pub dims: String,
    /// Noise kind: "rician", "gaussian", or "none".
    #[arg(long, default_value = "none")]
    pub noise: String,
    /// Noise σ in signal units.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Baseline (b=0) signal level.
    #[arg(long, default_value_t = 1.0)]
    pub s0: f64,
    /// Diffusion-weighted directions.
    #[arg(long, default_value_t = DEFAULT_DIRECTIONS)]
    pub directions: usize,
    /// b=0 baseline measurements.
    #[arg(long, default_value_t = DEFAULT_B0_COUNT)]
    pub b0_count: usize,
    /// b-value of the weighted measurements (s/mm²).
    #[arg(long, default_value_t = DEFAULT_BVALUE)]
    pub bvalue: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the dataset and ground-truth maps.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses the command line and runs it; the process exit code encodes the
/// outcome (0 ok, 2 usage/validation error, 3 quality gate).
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Runs a parsed command inside the requested thread pool.
pub fn execute(cli: Cli) -> Result<ExitCode> {
    match resolve_threads(cli.threads)? {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("NUQ_THREADS") {
        Ok(s) => {
            let n: usize = s.parse().map_err(|_| {
                Error::InvalidArgument(format!("NUQ_THREADS must be a positive integer, got '{s}'"))
            })?;
            if n == 0 {
                return Err(Error::InvalidArgument(
                    "NUQ_THREADS must be a positive integer, got '0'".into(),
                ));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Fit(args) => cmd_fit(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Map(args) => cmd_map(args),
        Command::Score(args) => cmd_score(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Group(args) => cmd_group(args),
        Command::Phantom(args) => cmd_phantom(args),
    }
}

// ---------------------------------------------------------------------------
// flag parsing helpers

fn parse_fixed<const N: usize>(text: &str, what: &str) -> Result<[usize; N]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != N {
        return Err(Error::InvalidArgument(format!(
            "{what} must have {N} comma-separated entries, got '{text}'"
        )));
    }
    let mut out = [0usize; N];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.trim().parse().map_err(|_| {
            Error::InvalidArgument(format!("{what}: '{p}' is not a non-negative integer"))
        })?;
    }
    Ok(out)
}

/// "x0:x1,y0:y1,z0:z1" (inclusive) → per-axis bounds.
fn parse_region_bounds(text: &str) -> Result<[[usize; 2]; 3]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "region must be 'x0:x1,y0:y1,z0:z1', got '{text}'"
        )));
    }
    let mut bounds = [[0usize; 2]; 3];
    for (axis, part) in parts.iter().enumerate() {
        let (lo, hi) = part.split_once(':').ok_or_else(|| {
            Error::InvalidArgument(format!(
                "region axis {axis} must be 'lo:hi', got '{part}'"
            ))
        })?;
        let lo: usize = lo.trim().parse().map_err(|_| {
            Error::InvalidArgument(format!("region axis {axis}: bad lower bound '{lo}'"))
        })?;
        let hi: usize = hi.trim().parse().map_err(|_| {
            Error::InvalidArgument(format!("region axis {axis}: bad upper bound '{hi}'"))
        })?;
        bounds[axis] = [lo, hi];
    }
    Ok(bounds)
}

/// Builds the kernel from explicit flags; None defers to region defaults.
fn resolve_kernel(
    kernel: &Option<String>,
    degree: Option<u32>,
    scale: Option<f64>,
    offset: Option<f64>,
) -> Result<Option<KernelSpec>> {
    let Some(kind) = kernel.as_deref() else {
        if degree.is_some() || scale.is_some() || offset.is_some() {
            return Err(Error::InvalidArgument(
                "--degree/--scale/--offset require --kernel".into(),
            ));
        }
        return Ok(None);
    };
    match kind {
        "linear" => {
            if degree.is_some() || scale.is_some() || offset.is_some() {
                return Err(Error::InvalidArgument(
                    "the linear kernel takes no --degree/--scale/--offset".into(),
                ));
            }
            Ok(Some(KernelSpec::linear()))
        }
        "polynomial" => {
            let scale = scale.ok_or_else(|| {
                Error::InvalidArgument("--kernel polynomial requires --scale".into())
            })?;
            Ok(Some(KernelSpec::polynomial(
                degree.unwrap_or(2),
                scale,
                offset.unwrap_or(1.0),
            )?))
        }
        "rbf" => {
            if degree.is_some() || offset.is_some() {
                return Err(Error::InvalidArgument(
                    "the rbf kernel takes no --degree/--offset".into(),
                ));
            }
            let scale = scale
                .ok_or_else(|| Error::InvalidArgument("--kernel rbf requires --scale".into()))?;
            Ok(Some(KernelSpec::rbf(scale)?))
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown kernel '{other}' (expected linear, polynomial, or rbf)"
        ))),
    }
}

fn property_map_volume(pv: &PosteriorVolume, values: Vec<f64>) -> Result<NiftiVolume> {
    let dims = [pv.dims[0], pv.dims[1], pv.dims[2], 1];
    let mut vol = NiftiVolume::new(dims, pv.voxel_size, values)?;
    vol.affine = pv.affine;
    Ok(vol)
}

fn emit(value: &serde_json::Value, also: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    print!("{text}");
    if let Some(path) = also {
        std::fs::write(path, &text).map_err(|e| Error::io(path.to_path_buf(), e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// subcommands

fn cmd_fit(args: FitArgs) -> Result<ExitCode> {
    if args.model != "dti" {
        return Err(Error::InvalidArgument(format!(
            "unknown model '{}' (only dti is implemented)",
            args.model
        )));
    }
    let weight_mode: WeightMode = args.weighting.parse()?;
    let ds = load_dwi(
        &args.dwi,
        &args.bval,
        &args.bvec,
        args.mask.as_deref(),
        args.b0_threshold,
    )?;
    let config = FitConfig {
        reg: RegularizerSpec::ridge(args.lambda),
        weight_mode,
        log_floor: args.log_floor,
    };
    let pv = fit_volume(&ds, &config)?;
    save_posterior_volume(&pv, &args.out)?;
    let rv = residual_variance_map(&pv);
    emit(
        &serde_json::json!({
            "out": args.out,
            "dims": pv.dims,
            "stats": pv.stats,
            "sigma2_median": rv.median,
            "lambda": pv.lambda,
            "gradient_fingerprint": pv.gradient_fingerprint,
            "version": crate::VERSION,
        }),
        None,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sample(args: SampleArgs) -> Result<ExitCode> {
    let pv = load_posterior_volume(&args.posterior)?;
    let [x, y, z] = parse_fixed::<3>(&args.voxel, "--voxel")?;
    Region::voxel(x, y, z).validate(pv.dims)?;
    let v = x + pv.dims[0] * (y + pv.dims[1] * z);
    let p = pv.voxel(v).ok_or_else(|| {
        Error::InvalidArgument(format!("voxel {x},{y},{z} is outside the fitted mask"))
    })?;
    let draws = sample_posterior(p, args.draws, args.seed)?;
    emit(
        &serde_json::json!({
            "voxel": [x, y, z],
            "column_labels": DTI_COLUMN_LABELS,
            "mu": p.mu,
            "nu": p.nu,
            "sigma2": p.sigma2_hat,
            "seed": args.seed,
            "draws": draws,
            "version": crate::VERSION,
        }),
        args.out.as_deref(),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_map(args: MapArgs) -> Result<ExitCode> {
    let pv = load_posterior_volume(&args.posterior)?;
    let property: Property = args.property.parse()?;
    let map = voxel_nuq_map(&pv, property, args.pairs, args.seed)?;
    let valid = map.iter().filter(|v| v.is_finite()).count();
    let vol = property_map_volume(&pv, map)?;
    write_nifti(&args.out, &vol)?;
    emit(
        &serde_json::json!({
            "out": args.out,
            "property": property.name(),
            "pairs": args.pairs,
            "seed": args.seed,
            "valid_voxels": valid,
            "version": crate::VERSION,
        }),
        None,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_score(args: ScoreArgs) -> Result<ExitCode> {
    let pv = load_posterior_volume(&args.posterior)?;
    let property: Property = args.property.parse()?;
    let kernel = resolve_kernel(&args.kernel, args.degree, args.scale, args.offset)?;
    let region = if let Some(text) = &args.voxel {
        let [x, y, z] = parse_fixed::<3>(text, "--voxel")?;
        Region::voxel(x, y, z)
    } else if let Some(text) = &args.slice {
        let [axis, index] = parse_fixed::<2>(text, "--slice")?;
        Region::slice(axis, index, pv.dims)?
    } else if let Some(text) = &args.region {
        let bounds = parse_region_bounds(text)?;
        Region::patch(
            [bounds[0][0], bounds[1][0], bounds[2][0]],
            [bounds[0][1], bounds[1][1], bounds[2][1]],
        )
    } else {
        Region::subject(pv.dims)
    };
    let report = region_nuq_score(&pv, property, region, kernel, args.draws, args.seed)?;
    emit(
        &serde_json::to_value(&report).expect("report serializes"),
        args.out.as_deref(),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let property: Property = args.property.parse()?;
    let weight_mode: WeightMode = args.weighting.parse()?;
    let kernel = resolve_kernel(&args.kernel, args.degree, args.scale, args.offset)?;
    let raw = load_dwi(
        &args.raw_dwi,
        &args.bval,
        &args.bvec,
        args.mask.as_deref(),
        args.b0_threshold,
    )?;
    let processed = load_dwi(
        &args.processed_dwi,
        &args.bval,
        &args.bvec,
        args.mask.as_deref(),
        args.b0_threshold,
    )?;
    let config = CompareConfig {
        fit: FitConfig {
            reg: RegularizerSpec::ridge(args.lambda),
            weight_mode,
            log_floor: None,
        },
        property,
        kernel,
        m_per_set: args.draws,
        seed: args.seed,
    };
    let report = compare_datasets(&raw, &processed, &config)?;

    let json = serde_json::to_value(&report).expect("report serializes");
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.clone(), e))?;
        emit(&json, Some(&dir.join("report.json")))?;
        let dims = [report.dims[0], report.dims[1], report.dims[2], 1];
        let sigma_raw = NiftiVolume::new(dims, raw.signal.voxel_size, report.sigma2_map_raw)?;
        write_nifti(dir.join("sigma2_raw.nii"), &sigma_raw)?;
        let sigma_proc =
            NiftiVolume::new(dims, raw.signal.voxel_size, report.sigma2_map_processed)?;
        write_nifti(dir.join("sigma2_processed.nii"), &sigma_proc)?;
    } else {
        emit(&json, None)?;
    }

    if report.processed_worse_than_raw {
        eprintln!(
            "quality gate: processed data scores worse than raw (delta {:+e})",
            report.delta
        );
        Ok(ExitCode::from(3))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn cmd_group(args: GroupArgs) -> Result<ExitCode> {
    let weighting: WeightingMode = args.weighting.parse()?;
    let cohort = load_cohort(&args.cohort)?;
    let report = bayesian_t_map(&cohort, weighting)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(args.out_dir.clone(), e))?;
    let dims4 = [report.dims[0], report.dims[1], report.dims[2], 1];
    let mut t_vol = NiftiVolume::new(dims4, report.voxel_size, report.t_map.clone())?;
    t_vol.affine = report.affine;
    write_nifti(args.out_dir.join("t_map.nii"), &t_vol)?;
    let mut d_vol = NiftiVolume::new(dims4, report.voxel_size, report.mean_diff_map.clone())?;
    d_vol.affine = report.affine;
    write_nifti(args.out_dir.join("mean_diff_map.nii"), &d_vol)?;
    write_nifti_codes(
        args.out_dir.join("flags.nii"),
        report.dims,
        report.voxel_size,
        &report.affine,
        &report.flag_codes(),
    )?;

    let defined: Vec<f64> = report
        .t_map
        .iter()
        .copied()
        .filter(|t| t.is_finite())
        .collect();
    let high = defined.iter().filter(|t| t.abs() > 2.0).count();
    let frac_high = if defined.is_empty() {
        0.0
    } else {
        high as f64 / defined.len() as f64
    };
    let flag_counts: std::collections::BTreeMap<&str, usize> = report.flag_counts();
    emit(
        &serde_json::json!({
            "out": args.out_dir,
            "subjects": cohort.subjects.len(),
            "draws_per_subject": cohort.m,
            "dims": report.dims,
            "weighting": weighting.name(),
            "defined_voxels": defined.len(),
            "frac_abs_t_above_2": frac_high,
            "flag_counts": flag_counts,
            "version": crate::VERSION,
        }),
        None,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_phantom(args: PhantomArgs) -> Result<ExitCode> {
    let dims = parse_fixed::<3>(&args.dims, "--dims")?;
    let tensor_field = TensorField::preset(&args.preset)?;
    let kind: NoiseKind = args.noise.parse()?;
    if kind == NoiseKind::None && args.sigma != 0.0 {
        return Err(Error::InvalidArgument(
            "--sigma requires --noise rician or gaussian".into(),
        ));
    }
    let spec = PhantomSpec {
        dims,
        tensor_field,
        s0: args.s0,
        gradients: gradient_scheme(args.directions, args.b0_count, args.bvalue),
        noise: NoiseSpec {
            kind,
            sigma: args.sigma,
        },
        seed: args.seed,
    };
    let (ds, truth) = simulate_signal(&spec)?;
    save_phantom(&args.out, &ds, &truth)?;
    emit(
        &serde_json::json!({
            "out": args.out,
            "dims": dims,
            "preset": args.preset,
            "noise": args.noise,
            "sigma": args.sigma,
            "s0": args.s0,
            "measurements": ds.gradients.len(),
            "seed": args.seed,
            "gradient_fingerprint": ds.gradients.fingerprint(),
            "version": crate::VERSION,
        }),
        None,
    )?;
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_tuples_parse_and_reject() {
        assert_eq!(parse_fixed::<3>("1,2,3", "x").unwrap(), [1, 2, 3]);
        assert_eq!(parse_fixed::<2>(" 0 , 7 ", "x").unwrap(), [0, 7]);
        assert!(parse_fixed::<3>("1,2", "x").is_err());
        assert!(parse_fixed::<3>("1,2,-3", "x").is_err());
        assert!(parse_fixed::<3>("1,2,a", "x").is_err());
    }

    #[test]
    fn region_bounds_parse_and_reject() {
        assert_eq!(
            parse_region_bounds("0:4,1:3,2:2").unwrap(),
            [[0, 4], [1, 3], [2, 2]]
        );
        assert!(parse_region_bounds("0:4,1:3").is_err());
        assert!(parse_region_bounds("0-4,1:3,2:2").is_err());
        assert!(parse_region_bounds("0:x,1:3,2:2").is_err());
    }

    #[test]
    fn kernel_flags_resolve() {
        assert_eq!(resolve_kernel(&None, None, None, None).unwrap(), None);
        assert!(resolve_kernel(&None, Some(2), None, None).is_err());

        let lin = resolve_kernel(&Some("linear".into()), None, None, None).unwrap();
        assert_eq!(lin, Some(KernelSpec::Linear));
        assert!(resolve_kernel(&Some("linear".into()), None, Some(1.0), None).is_err());

        let poly = resolve_kernel(&Some("polynomial".into()), None, Some(4.0), None)
            .unwrap()
            .unwrap();
        assert_eq!(
            poly,
            KernelSpec::Polynomial {
                degree: 2,
                scale: 4.0,
                offset: 1.0
            }
        );
        // polynomial and rbf need an explicit scale
        assert!(resolve_kernel(&Some("polynomial".into()), None, None, None).is_err());
        assert!(resolve_kernel(&Some("rbf".into()), None, None, None).is_err());

        let rbf = resolve_kernel(&Some("rbf".into()), None, Some(0.5), None)
            .unwrap()
            .unwrap();
        assert_eq!(rbf, KernelSpec::Rbf { scale: 0.5 });
        assert!(resolve_kernel(&Some("rbf".into()), Some(3), Some(0.5), None).is_err());

        assert!(resolve_kernel(&Some("sigmoid".into()), None, None, None).is_err());
    }

    #[test]
    fn cli_parses_typical_invocations() {
        use clap::Parser;
        let cli = Cli::try_parse_from([
            "nuq", "score", "--posterior", "p", "--voxel", "1,2,3", "--draws", "5",
        ])
        .unwrap();
        match cli.command {
            Command::Score(args) => {
                assert_eq!(args.voxel.as_deref(), Some("1,2,3"));
                assert_eq!(args.draws, 5);
                assert_eq!(args.property, "fa");
            }
            _ => panic!("expected score"),
        }

        // --region and --voxel are mutually exclusive.
        assert!(Cli::try_parse_from([
            "nuq",
            "score",
            "--posterior",
            "p",
            "--voxel",
            "1,2,3",
            "--region",
            "0:1,0:1,0:1",
        ])
        .is_err());

        let cli = Cli::try_parse_from([
            "nuq",
            "phantom",
            "--preset",
            "fa_gradient",
            "--noise",
            "rician",
            "--sigma",
            "0.05",
            "--out",
            "d",
            "--threads",
            "2",
        ])
        .unwrap();
        assert_eq!(cli.threads, Some(2));
        match cli.command {
            Command::Phantom(args) => {
                assert_eq!(args.preset, "fa_gradient");
                assert_eq!(args.sigma, 0.05);
            }
            _ => panic!("expected phantom"),
        }
    }

    #[test]
    fn help_is_available_for_every_subcommand() {
        use clap::Parser;
        for sub in ["fit", "sample", "map", "score", "compare", "group", "phantom"] {
            let err = Cli::try_parse_from(["nuq", sub, "--help"]).unwrap_err();
            assert_eq!(err.kind(), clap::error::ErrorKind::DisplayHelp);
            let text = err.to_string();
            assert!(text.contains("--"), "{sub} help lists flags");
        }
    }
}
