//! Per-pixel depth training with and without mean normalization.

use ddvo::training::{bundled_triplet, train_triplet, TrainConfig, TrainMode};

fn main() -> ddvo::Result<()> {
    let inputs = bundled_triplet();
    for normalize in [false, true] {
        let trace = train_triplet(&inputs, &TrainConfig::demo(TrainMode::PoseParam, normalize))?;
        println!("normalization {}", if normalize { "on" } else { "off" });
        println!("  {:>5} {:>10} {:>12} {:>10} {:>10}", "step", "total", "appearance", "mean d", "gt error");
        for r in trace.records.iter().step_by(50).chain([trace.last()]) {
            println!(
                "  {:>5} {:>10.5} {:>12.5} {:>10.4} {:>10.4}",
                r.step,
                r.total,
                r.appearance,
                r.mean_inv_depth,
                r.gt_error.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
