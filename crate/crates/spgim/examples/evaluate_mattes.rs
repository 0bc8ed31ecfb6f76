//! Score predicted mattes with the four benchmark metrics, whole-image and
//! unknown-region, including a degradation sweep that shows their scaling.
//!
//!     cargo run --example evaluate_mattes

use ndarray::Array2;
use spgim::data::synth;
use spgim::metrics::{self, Region};

fn main() -> anyhow::Result<()> {
    let (fg, _) = synth::synth_foreground(5, 64, 64);
    let gt = fg.alpha.0.clone();

    println!("perturbation sweep on a 64x64 synthetic matte:");
    println!("{:>10} {:>10} {:>12} {:>10} {:>10}", "noise", "SAD", "MSE", "Grad", "Conn");
    for noise in [0.0, 0.01, 0.05, 0.1] {
        let pred = perturb(&gt, noise);
        let report = metrics::evaluate_pair(&pred, &gt, None, Region::WholeImage)?;
        println!(
            "{noise:>10.3} {:>10.4} {:>12.6} {:>10.4} {:>10.4}",
            report.sad, report.mse, report.grad, report.conn
        );
    }

    // Unknown-region scoring against a generated trimap.
    let trimap = spgim::data::make_trimap(&fg.alpha, 0.0, 1.0, (2, 2), 0)?;
    let mask = metrics::unknown_mask(&trimap.labels);
    let pred = perturb(&gt, 0.05);
    let whole = metrics::evaluate_pair(&pred, &gt, None, Region::WholeImage)?;
    let unknown = metrics::evaluate_pair(&pred, &gt, Some(&mask), Region::UnknownOnly)?;
    println!("\nwhole-image  SAD {:.4}  MSE {:.6}", whole.sad, whole.mse);
    println!("unknown-only SAD {:.4}  MSE {:.6}", unknown.sad, unknown.mse);
    Ok(())
}

fn perturb(gt: &Array2<f64>, scale: f64) -> Array2<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(9);
    gt.mapv(|v| (v + rng.random_range(-scale..=scale)).clamp(0.0, 1.0))
}
