//! Renders a synthetic triplet and writes it to a directory (default: a temp dir).

use ddvo::geometry::Pose6D;
use ddvo::imaging::{write_pfm, write_pgm, Endianness};
use ddvo::synth::{Scene, SceneKind, SceneSpec};
use nalgebra::Vector3;
use std::path::PathBuf;

fn main() -> ddvo::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ddvo-scene"));
    std::fs::create_dir_all(&out).map_err(|source| ddvo::Error::Io { path: out.clone(), source })?;

    let mut spec = SceneSpec::new(SceneKind::SmoothHeightField, 11, 160, 128, (2.0, 6.0));
    spec.wavelength_range = (10.0, 50.0);
    let scene = Scene::new(spec)?;
    let p21 = Pose6D::new(Vector3::new(-0.08, 0.0, 0.02), Vector3::new(0.0, 0.01, 0.0));
    let p23 = Pose6D::new(Vector3::new(0.08, 0.0, -0.02), Vector3::new(0.0, -0.01, 0.0));
    let t = scene.triplet(p21, p23);

    for (i, (img, depth)) in t.images.iter().zip(&t.depths).enumerate() {
        write_pgm(out.join(format!("frame{}.pgm", i + 1)), img)?;
        write_pfm(out.join(format!("frame{}_inv_depth.pfm", i + 1)), depth.image(), Endianness::Little)?;
        println!(
            "frame {}: mean intensity {:.3}, inverse depth in [{:.3}, {:.3}]",
            i + 1,
            img.mean(),
            depth.data().iter().copied().fold(f64::INFINITY, f64::min),
            depth.data().iter().copied().fold(f64::NEG_INFINITY, f64::max)
        );
    }
    let view = scene.render_view(&Pose6D::new(Vector3::new(0.6, 0.0, 0.0), Vector3::zeros()));
    println!("a 0.6-unit sideways view sees {:.1}% of its pixels in the reference", 100.0 * view.mask.fraction());
    println!("wrote {}", out.display());
    Ok(())
}
