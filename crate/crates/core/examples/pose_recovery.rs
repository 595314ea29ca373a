//! Recovers known camera motions from rendered image pairs.

use ddvo::dvo::{pose_errors, solve_coarse_to_fine, DvoSettings};
use ddvo::geometry::Pose6D;
use ddvo::synth::{random_motion, Scene, SceneKind, SceneSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ddvo::Result<()> {
    let kinds = [SceneKind::TexturedPlane, SceneKind::TwoPlane, SceneKind::SmoothHeightField];
    let settings = DvoSettings::default();
    println!("{:<20} {:>10} {:>10} {:>12} {:>10}", "scene", "rot err °", "trans err", "residual", "iters");
    for (seed, kind) in kinds.into_iter().enumerate() {
        let scene = Scene::new(SceneSpec::new(kind, seed as u64, 160, 128, (2.0, 4.0)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let truth = random_motion(&mut rng, 0.03, 0.5f64.to_radians());
        let view = scene.render_view(&truth);
        let r = solve_coarse_to_fine(
            &scene.reference_image(),
            &scene.reference_depth(),
            &view.image,
            &scene.spec.intrinsics,
            Pose6D::identity(),
            &settings,
        )?;
        let (deg, rel) = pose_errors(&r.pose, &truth);
        let iters: usize = r.iterations_used.iter().sum();
        println!(
            "{:<20} {:>10.5} {:>9.3}% {:>12.3e} {:>10}",
            format!("{kind:?}"),
            deg,
            100.0 * rel,
            r.final_residual,
            iters
        );
    }
    Ok(())
}
