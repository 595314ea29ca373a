//! Shrinking depth and growing translation leaves appearance unchanged but lowers the prior.

use ddvo::geometry::Pose6D;
use ddvo::imaging::InverseDepthMap;
use ddvo::losses::{normalize_inverse_depth, triplet_loss, LossWeights, PoseSource, Triplet};
use ddvo::training::bundled_triplet;

fn scale(d: &InverseDepthMap, s: f64) -> ddvo::Result<InverseDepthMap> {
    InverseDepthMap::new(d.width(), d.height(), d.data().iter().map(|v| v * s).collect())
}

fn main() -> ddvo::Result<()> {
    let inputs = bundled_triplet();
    let weights = LossWeights::default();
    let gt = inputs.gt.as_ref().expect("bundled triplet has ground truth");
    let base = Triplet { images: inputs.images.clone(), depths: gt.depths.clone(), p21: gt.p21, p23: gt.p23 };

    println!("{:>6} {:>14} {:>14} {:>14} {:>14}", "s", "appearance", "prior", "total", "normalized");
    for s in [2.0, 1.0, 0.5, 0.25, 0.1] {
        let t = Triplet {
            depths: [scale(&base.depths[0], s)?, scale(&base.depths[1], s)?, scale(&base.depths[2], s)?],
            p21: Pose6D::new(base.p21.t / s, base.p21.omega),
            p23: Pose6D::new(base.p23.t / s, base.p23.omega),
            ..base.clone()
        };
        let b = triplet_loss(&t, &inputs.intrinsics, &weights, &PoseSource::Fixed)?.breakdown;
        // Dividing by the mean undoes s, so with the original poses the
        // normalized objective cannot drift.
        let n = Triplet {
            depths: [
                normalize_inverse_depth(&t.depths[0])?,
                normalize_inverse_depth(&t.depths[1])?,
                normalize_inverse_depth(&t.depths[2])?,
            ],
            ..base.clone()
        };
        let nb = triplet_loss(&n, &inputs.intrinsics, &weights, &PoseSource::Fixed)?.breakdown;
        println!("{s:>6} {:>14.8} {:>14.8} {:>14.8} {:>14.8}", b.appearance(), b.prior(), b.total, nb.total);
    }
    Ok(())
}
