//! Did processing help? Score a noisy dataset against a cleaner version of
//! the same geometry and read the verdict off the score delta.
//!
//! The "processed" dataset here is simulated with lower noise, standing in
//! for the output of a denoising pipeline. A negative delta (processed −
//! raw) means the processing reduced posterior uncertainty; the
//! `processed_worse_than_raw` flag drives the CLI's quality-gate exit code.
//!
//! Run with: `cargo run --release --example compare_denoising`

use nuq::nuq_metric::{compare_datasets, CompareConfig};
use nuq::phantom::{gradient_scheme, simulate_signal, NoiseSpec, PhantomSpec, TensorField};

fn main() -> nuq::Result<()> {
    let base = PhantomSpec {
        dims: [10, 10, 10],
        tensor_field: TensorField::UniformIso,
        s0: 1.0,
        gradients: gradient_scheme(32, 4, 1000.0),
        noise: NoiseSpec::rician(0.10),
        seed: 20,
    };
    let (raw, _) = simulate_signal(&base)?;

    let denoised_spec = PhantomSpec {
        noise: NoiseSpec::rician(0.02),
        seed: 21,
        ..base
    };
    let (denoised, _) = simulate_signal(&denoised_spec)?;

    let config = CompareConfig {
        seed: 5,
        ..CompareConfig::default()
    };
    let report = compare_datasets(&raw, &denoised, &config)?;
    println!("raw score       {:.6e}", report.raw.score);
    println!("processed score {:.6e}", report.processed.score);
    println!("delta           {:+.6e}", report.delta);
    println!(
        "sigma2 medians  raw {:?}  processed {:?}",
        report.sigma2_median_raw, report.sigma2_median_processed
    );
    assert!(!report.processed_worse_than_raw);
    println!("verdict: processing helped");

    // Swapping the roles flips the sign of the delta and trips the gate.
    let swapped = compare_datasets(&denoised, &raw, &config)?;
    assert!(swapped.processed_worse_than_raw);
    println!("role swap trips the gate, delta {:+.6e}", swapped.delta);
    Ok(())
}
