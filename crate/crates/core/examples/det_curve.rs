//! Sweeps thresholds over genuine and impostor distances and prints the
//! DET curve and its equal error rate.
//!
//! `cargo run --example det_curve`

use filterbench::metrics::{compute_eer, threshold_grid, verification_sweep, Polarity};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> filterbench::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let genuine_dist = Normal::new(0.8, 0.25).expect("valid normal");
    let impostor_dist = Normal::new(1.6, 0.3).expect("valid normal");
    let genuine: Vec<f64> = (0..200).map(|_| genuine_dist.sample(&mut rng)).collect();
    let impostor: Vec<f64> = (0..2000).map(|_| impostor_dist.sample(&mut rng)).collect();

    let grid = threshold_grid(genuine.iter().chain(&impostor).copied());
    let curve = verification_sweep(&genuine, &impostor, &grid, Polarity::LowerIsBetter)?;
    let eer = compute_eer(&curve)?;

    for p in curve.points.iter().step_by(curve.points.len() / 20) {
        println!("threshold {:>8.4}  FAR {:.4}  FRR {:.4}", p.threshold, p.x, p.y);
    }
    println!("EER {:.4} at threshold {:.4}", eer.eer, eer.threshold);
    Ok(())
}
