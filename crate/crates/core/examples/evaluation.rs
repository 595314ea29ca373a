//! Depth metrics with median alignment and trajectory error with similarity alignment.

use ddvo::geometry::Pose6D;
use ddvo::metrics::{ate, depth_metrics, DepthMetrics, Trajectory};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ddvo::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt: Vec<f64> = (0..1000).map(|_| rng.gen_range(2.0..60.0)).collect();
    // Right up to a factor of 3.7, plus 10% multiplicative noise.
    let pred: Vec<f64> = gt.iter().map(|g| 3.7 * g * rng.gen_range(0.9..1.1)).collect();

    println!("{:<12} {}", "", DepthMetrics::CSV_HEADER);
    println!("{:<12} {}", "raw", depth_metrics(&pred, &gt, None, false, None)?.csv_row());
    println!("{:<12} {}", "aligned", depth_metrics(&pred, &gt, None, true, None)?.csv_row());
    println!("{:<12} {}", "aligned <50", depth_metrics(&pred, &gt, None, true, Some(50.0))?.csv_row());

    let forward = |rng: &mut ChaCha8Rng, noise: f64| {
        Pose6D::new(
            Vector3::new(rng.gen_range(-noise..noise), rng.gen_range(-noise..noise), -1.0),
            Vector3::new(0.0, rng.gen_range(-0.02..0.02), 0.0),
        )
    };
    let truth: Vec<Pose6D> = (0..40).map(|_| forward(&mut rng, 0.05)).collect();
    let gt_traj = Trajectory::from_relative(&truth)?;
    // Monocular estimates: same motion at half the scale, with drift.
    let est: Vec<Pose6D> = truth
        .iter()
        .map(|p| Pose6D::new(0.5 * p.t + Vector3::new(rng.gen_range(-0.01..0.01), 0.0, 0.0), p.omega))
        .collect();
    let est_traj = Trajectory::from_relative(&est)?;
    for snippet in [3, 5, 10] {
        let r = ate(&est_traj, &gt_traj, snippet)?;
        println!("ATE over {snippet}-frame snippets: {:.4} ± {:.4} ({} windows)", r.mean, r.std, r.per_window.len());
    }
    Ok(())
}
