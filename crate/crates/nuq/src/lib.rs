//! NUQ: no-reference noise/uncertainty quantification for diffusion MRI.
//!
//! The toolkit never needs a ground-truth reference scan. Instead it fits a
//! per-voxel linear model to the log-signal and keeps the *whole* closed-form
//! Bayesian posterior over the coefficients (a multivariate Student-t), then
//! propagates posterior draws through scalar property functions (FA, MD) and
//! pools the spread of the resulting property maps with a kernel maximum
//! mean discrepancy (MMD) statistic. Noisier data ⇒ wider posteriors ⇒
//! larger discrepancy between two independent sets of draws ⇒ higher score.
//!
//! Pipeline (each stage is one module):
//!
//! 1. [`dwi_io`] — NIfTI-1 volumes, FSL `bval`/`bvec` tables, dataset
//!    validation.
//! 2. [`model_dti`] — DTI log-linear design matrix, WLS weights, tensor
//!    eigen-analysis, FA/MD property functions.
//! 3. [`bayes_fit`] — closed-form per-voxel posterior, multivariate-t
//!    sampling, posterior persistence.
//! 4. [`discrepancy`] — kernels, MMD² (biased V-statistic), median
//!    heuristic, 1-D Wasserstein.
//! 5. [`nuq_metric`] — voxel quality maps, region/subject scores,
//!    before/after dataset comparison.
//! 6. [`group_stats`] — precision-weighted Bayesian t-maps over cohorts of
//!    posterior sample stacks.
//! 7. [`phantom`] — synthetic tensor phantoms with Rician/Gaussian noise
//!    and known ground truth.
//! 8. [`cli`] — the `nuq` command-line front end (one thin binary).
//!
//! Every stochastic operation takes an explicit 64-bit seed and uses one
//! counter-derived stream per voxel ([`rng`]), so results are reproducible
//! bit-for-bit regardless of thread count or scheduling.
//!
//! The `examples/` directory holds one runnable walk-through per major
//! capability; start with `phantom_to_score`.

pub mod error;
pub(crate) mod numeric;
pub mod rng;

pub mod dwi_io;
pub mod model_dti;

pub mod bayes_fit;
pub mod discrepancy;
pub mod group_stats;
pub mod nuq_metric;
pub mod phantom;

pub mod cli;

pub use error::{Error, Result};

/// Software version recorded in reports and manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
