//! A wide-baseline pair that a single resolution cannot register.

use ddvo::dvo::{pose_errors, solve_coarse_to_fine, DvoSettings};
use ddvo::geometry::Pose6D;
use ddvo::synth::bundled_wide_baseline_pair;

fn main() -> ddvo::Result<()> {
    let pair = bundled_wide_baseline_pair();
    let floor = solve_coarse_to_fine(
        &pair.reference,
        &pair.depth,
        &pair.src,
        &pair.intrinsics,
        pair.truth,
        &DvoSettings { levels: 1, max_iters_per_level: 1, step_norm_tol: f64::INFINITY, ..DvoSettings::default() },
    )?
    .final_residual;
    println!("residual at the true pose: {floor:.3e}");
    for levels in 1..=4 {
        let settings = DvoSettings { levels, ..DvoSettings::default() };
        let r = solve_coarse_to_fine(&pair.reference, &pair.depth, &pair.src, &pair.intrinsics, Pose6D::identity(), &settings)?;
        let (deg, rel) = pose_errors(&r.pose, &pair.truth);
        println!(
            "{levels} level(s): residual {:.3e} ({:.0}× floor), rotation error {deg:.4}°, translation error {:.2}%",
            r.final_residual,
            r.final_residual / floor,
            100.0 * rel
        );
        for (l, h) in r.residual_history.iter().enumerate() {
            let first = h.first().copied().unwrap_or(f64::NAN);
            let last = h.last().copied().unwrap_or(f64::NAN);
            println!("    pass {l}: {} steps, {first:.3e} -> {last:.3e}", h.len());
        }
    }
    Ok(())
}
