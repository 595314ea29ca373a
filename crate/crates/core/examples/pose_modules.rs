//! Compares the ways of supplying poses to the depth objective.
//!
//! Pass `large` to train on the wide-motion clip.

use ddvo::training::{bundled_large_motion_triplet, bundled_triplet, train_triplet, TrainConfig, TrainMode};
use std::time::Instant;

fn main() -> ddvo::Result<()> {
    let large = std::env::args().nth(1).as_deref() == Some("large");
    let inputs = if large { bundled_large_motion_triplet() } else { bundled_triplet() };
    println!("{} clip", if large { "large-motion" } else { "small-motion" });
    println!("{:<14} {:>10} {:>10} {:>10} {:>8}", "mode", "total", "gt error", "start", "secs");
    for mode in TrainMode::ALL {
        let start = Instant::now();
        let trace = train_triplet(&inputs, &TrainConfig::demo(mode, true))?;
        let secs = start.elapsed().as_secs_f64();
        match trace.halted_at {
            Some(step) => println!("{:<14} halted at step {step}", mode.name()),
            None => println!(
                "{:<14} {:>10.5} {:>10.4} {:>10.4} {:>8.1}",
                mode.name(),
                trace.last().total,
                trace.last().gt_error.unwrap_or(f64::NAN),
                trace.first().gt_error.unwrap_or(f64::NAN),
                secs
            ),
        }
    }
    Ok(())
}
