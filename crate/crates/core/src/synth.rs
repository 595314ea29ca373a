//! Procedural scenes with exact ground truth.
//!
//! A scene is an analytic inverse-depth surface seen from the reference camera
//! plus a band-limited texture painted onto it from that camera. Other views
//! are rendered by inverting the warp per target pixel, so the texture is
//! evaluated analytically and never resampled.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{warp_with_rotation, CameraIntrinsics, NormalizedPoint, Pose6D};
use crate::imaging::{BilinearSample, ImageBuffer, InverseDepthMap, ValidityMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// Fronto-parallel plane at the middle of the depth range.
    TexturedPlane,
    /// Two slanted planes meeting in a vertical crease (a room corner).
    TwoPlane,
    /// Smooth undulating surface spanning the depth range.
    SmoothHeightField,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textured-plane" => Ok(SceneKind::TexturedPlane),
            "two-plane" => Ok(SceneKind::TwoPlane),
            "smooth-height-field" => Ok(SceneKind::SmoothHeightField),
            _ => Err(Error::Config(format!("unknown scene kind '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Nearest and farthest surface depth in scene units.
    pub depth_range: (f64, f64),
    pub intrinsics: CameraIntrinsics,
    /// Shortest and longest texture wavelength in reference pixels.
    pub wavelength_range: (f64, f64),
}

impl SceneSpec {
    /// A spec with a ~53° horizontal field of view centered on the grid.
    pub fn new(kind: SceneKind, seed: u64, width: usize, height: usize, depth_range: (f64, f64)) -> Self {
        let f = width as f64;
        SceneSpec {
            kind,
            seed,
            width,
            height,
            depth_range,
            intrinsics: CameraIntrinsics {
                fx: f,
                fy: f,
                cx: (width as f64 - 1.0) / 2.0,
                cy: (height as f64 - 1.0) / 2.0,
            },
            wavelength_range: (12.0, 40.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (near, far) = self.depth_range;
        if !(near > 0.0 && far >= near && far.is_finite()) {
            return Err(Error::Config(format!("invalid depth range ({near}, {far})")));
        }
        let (lo, hi) = self.wavelength_range;
        if !(lo >= 2.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid wavelength range ({lo}, {hi})")));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::GridTooSmall {
                width: self.width,
                height: self.height,
                min_width: 16,
                min_height: 16,
            });
        }
        Ok(())
    }

    /// Mean of the depth range, the reference length for motion magnitudes.
    pub fn scene_depth(&self) -> f64 {
        0.5 * (self.depth_range.0 + self.depth_range.1)
    }
}

#[derive(Clone, Debug)]
struct Wave {
    amplitude: f64,
    kx: f64,
    ky: f64,
    phase: f64,
}

#[derive(Clone, Debug)]
enum Surface {
    Plane { inv_depth: f64 },
    Corner { planes: [[f64; 3]; 2] },
    Height { mid: f64, amp: f64, waves: [[f64; 4]; 2] },
}

impl Surface {
    fn inverse_depth(&self, x: NormalizedPoint) -> f64 {
        match self {
            Surface::Plane { inv_depth } => *inv_depth,
            Surface::Corner { planes } => planes
                .iter()
                .map(|[a, b, c]| a + b * x.u + c * x.v)
                .fold(f64::MIN, f64::max),
            Surface::Height { mid, amp, waves } => {
                let bump: f64 = waves
                    .iter()
                    .map(|[fu, fv, pu, pv]| (fu * x.u + pu).sin() * (fv * x.v + pv).cos())
                    .sum::<f64>()
                    / 2.0;
                1.0 / (mid + amp * bump)
            }
        }
    }
}

/// A generated scene: texture and surface seen from the reference camera.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: SceneSpec,
    waves: Vec<Wave>,
    surface: Surface,
}

/// A rendered view with its exact inverse depth.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub image: ImageBuffer,
    pub mask: ValidityMask,
    pub inverse_depth: InverseDepthMap,
}

/// Three frames around a reference (frame 2) with ground-truth geometry.
#[derive(Clone, Debug)]
pub struct SyntheticTriplet {
    pub images: [ImageBuffer; 3],
    pub depths: [InverseDepthMap; 3],
    /// Frame 2 to frame 1.
    pub p21: Pose6D,
    /// Frame 2 to frame 3.
    pub p23: Pose6D,
    pub intrinsics: CameraIntrinsics,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let count = 6;
        let waves = (0..count)
            .map(|_| {
                let wavelength = rng.gen_range(spec.wavelength_range.0..spec.wavelength_range.1);
                let angle = rng.gen_range(0.0..PI);
                let k = 2.0 * PI / wavelength;
                Wave {
                    amplitude: 0.45 / count as f64 * rng.gen_range(0.6..1.0),
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    phase: rng.gen_range(0.0..2.0 * PI),
                }
            })
            .collect();
        let (near, far) = spec.depth_range;
        let half_fov = (spec.width as f64 / 2.0) / spec.intrinsics.fx;
        let surface = match spec.kind {
            SceneKind::TexturedPlane => Surface::Plane {
                inv_depth: 1.0 / (0.5 * (near + far)),
            },
            SceneKind::TwoPlane => {
                let crease = rng.gen_range(-0.2..0.2) * half_fov;
                let tilt_v = rng.gen_range(-0.2..0.2) / far;
                // Both walls reach 1/far at the crease and 1/near at their outer edge.
                let slope = (1.0 / near - 1.0 / far) / (half_fov + crease.abs());
                let a1 = 1.0 / far - slope * crease;
                let a2 = 1.0 / far + slope * crease;
                Surface::Corner {
                    planes: [[a1, slope, tilt_v], [a2, -slope, tilt_v]],
                }
            }
            SceneKind::SmoothHeightField => {
                let mut w = || {
                    [
                        rng.gen_range(1.0..3.0) / half_fov,
                        rng.gen_range(1.0..3.0) / half_fov,
                        rng.gen_range(0.0..2.0 * PI),
                        rng.gen_range(0.0..2.0 * PI),
                    ]
                };
                Surface::Height {
                    mid: 0.5 * (near + far),
                    amp: 0.5 * (far - near),
                    waves: [w(), w()],
                }
            }
        };
        Ok(Scene {
            spec,
            waves,
            surface,
        })
    }

    /// Texture value at reference pixel `(col, row)`, within `[0, 1]`.
    pub fn texture_at(&self, col: f64, row: f64) -> f64 {
        0.5 + self
            .waves
            .iter()
            .map(|w| w.amplitude * (w.kx * col + w.ky * row + w.phase).sin())
            .sum::<f64>()
    }

    /// Analytic inverse depth of the surface along reference ray `x`.
    pub fn inverse_depth_at(&self, x: NormalizedPoint) -> f64 {
        self.surface.inverse_depth(x)
    }

    pub fn reference_image(&self) -> ImageBuffer {
        let s = &self.spec;
        ImageBuffer::from_fn(s.width, s.height, 1, |x, y, _| self.texture_at(x as f64, y as f64))
    }

    pub fn reference_depth(&self) -> InverseDepthMap {
        let s = &self.spec;
        let k = s.intrinsics;
        let img = ImageBuffer::from_fn(s.width, s.height, 1, |x, y, _| {
            self.inverse_depth_at(k.normalize(x as f64, y as f64))
        });
        InverseDepthMap::from_image(img).expect("analytic inverse depth is positive")
    }

    /// Reference ray seen at normalized point `y` of the view `p`, plus its inverse depth.
    fn trace(&self, y: NormalizedPoint, p: &Pose6D, r: &nalgebra::Matrix3<f64>) -> Option<(NormalizedPoint, f64)> {
        invert_warp(y, r, &p.t, |x| self.inverse_depth_at(x))
    }

    /// Renders the view related to the reference by `p` (reference → view).
    pub fn render_view(&self, p: &Pose6D) -> RenderedView {
        let s = &self.spec;
        let k = s.intrinsics;
        let r = p.rotation().0;
        let mut mask = ValidityMask::all(s.width, s.height, false);
        let mut image = ImageBuffer::zeros(s.width, s.height, 1);
        let mut depth = vec![0.0; s.width * s.height];
        for row in 0..s.height {
            for col in 0..s.width {
                let i = row * s.width + col;
                let y = k.normalize(col as f64, row as f64);
                let Some((x, d)) = self.trace(y, p, &r) else { continue };
                let pt = r * x.homogeneous() + d * p.t;
                depth[i] = (d / pt.z).max(0.0);
                let (u, v) = k.to_pixel(x);
                let inside = u >= 0.0 && u <= (s.width - 1) as f64 && v >= 0.0 && v <= (s.height - 1) as f64;
                mask.data[i] = inside;
                image.set(col, row, 0, self.texture_at(u, v));
            }
        }
        RenderedView {
            image,
            mask,
            inverse_depth: InverseDepthMap::new(s.width, s.height, depth).expect("non-negative"),
        }
    }

    /// Frames 1 and 3 rendered around the reference.
    pub fn triplet(&self, p21: Pose6D, p23: Pose6D) -> SyntheticTriplet {
        let v1 = self.render_view(&p21);
        let v3 = self.render_view(&p23);
        SyntheticTriplet {
            images: [v1.image, self.reference_image(), v3.image],
            depths: [v1.inverse_depth, self.reference_depth(), v3.inverse_depth],
            p21,
            p23,
            intrinsics: self.spec.intrinsics,
        }
    }
}

/// Solves `W(x; p, d(x)) = y` for the reference point `x` by fixed-point iteration.
pub(crate) fn invert_warp(
    y: NormalizedPoint,
    r: &nalgebra::Matrix3<f64>,
    t: &Vector3<f64>,
    depth: impl Fn(NormalizedPoint) -> f64,
) -> Option<(NormalizedPoint, f64)> {
    let mut x = y;
    for _ in 0..200 {
        let d = depth(x);
        let w = warp_with_rotation(x, r, t, d).ok()?;
        let (eu, ev) = (y.u - w.u, y.v - w.v);
        x = NormalizedPoint::new(x.u + eu, x.v + ev);
        if eu.abs().max(ev.abs()) < 1e-14 {
            let d = depth(x);
            return Some((x, d));
        }
    }
    None
}

/// Renders the view `p` from a reference raster and its inverse depth.
///
/// Depth and intensity are looked up bilinearly, so this is only as exact as
/// the rasters; [`Scene::render_view`] is the analytic counterpart.
pub fn render_view(
    reference: &ImageBuffer,
    depth: &InverseDepthMap,
    p: &Pose6D,
    k: &CameraIntrinsics,
) -> Result<(ImageBuffer, ValidityMask)> {
    if !reference.same_grid(depth) {
        return Err(Error::ShapeMismatch("image and depth grids differ".into()));
    }
    let (w, h) = (reference.width(), reference.height());
    let r = p.rotation().0;
    let lookup = |x: NormalizedPoint| {
        let (u, v) = k.to_pixel(x);
        let s = BilinearSample::locate(w, h, u.clamp(0.0, (w - 1) as f64), v.clamp(0.0, (h - 1) as f64));
        s.value(depth.image(), 0)
    };
    let mut mask = ValidityMask::all(w, h, false);
    let mut out = ImageBuffer::zeros(w, h, reference.channels());
    for row in 0..h {
        for col in 0..w {
            let y = k.normalize(col as f64, row as f64);
            let Some((x, _)) = invert_warp(y, &r, &p.t, lookup) else { continue };
            let (u, v) = k.to_pixel(x);
            let s = BilinearSample::locate(w, h, u, v);
            if s.in_view {
                mask.data[row * w + col] = true;
                for c in 0..reference.channels() {
                    out.set(col, row, c, s.value(reference, c));
                }
            }
        }
    }
    Ok((out, mask))
}

/// A reference frame with its inverse depth, one source view and the motion between them.
#[derive(Clone, Debug)]
pub struct PosePair {
    pub reference: ImageBuffer,
    pub depth: InverseDepthMap,
    pub src: ImageBuffer,
    pub intrinsics: CameraIntrinsics,
    pub truth: Pose6D,
}

/// A 160×128 pair whose translation is 5% of the mean scene depth, textured
/// with wavelengths from 6 to 80 pixels.
pub fn bundled_wide_baseline_pair() -> PosePair {
    let mut spec = SceneSpec::new(SceneKind::TwoPlane, 2, 160, 128, (2.0, 4.0));
    spec.wavelength_range = (6.0, 80.0);
    let scene = Scene::new(spec).expect("valid bundled scene");
    let truth = Pose6D::new(Vector3::new(0.13, -0.06, 0.03), Vector3::new(0.002, 0.004, -0.003));
    PosePair {
        reference: scene.reference_image(),
        depth: scene.reference_depth(),
        src: scene.render_view(&truth).image,
        intrinsics: scene.spec.intrinsics,
        truth,
    }
}

/// A random motion with `‖t‖ = translation` and rotation angle up to `max_angle` radians.
pub fn random_motion(rng: &mut impl Rng, translation: f64, max_angle: f64) -> Pose6D {
    let dir = random_unit(rng);
    let axis = random_unit(rng);
    let angle = rng.gen_range(0.0..=max_angle);
    Pose6D::new(dir * translation, axis * angle)
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::warp_point;

    fn spec(kind: SceneKind) -> SceneSpec {
        SceneSpec::new(kind, 42, 40, 32, (2.0, 4.0))
    }

    #[test]
    fn plane_has_constant_inverse_depth() {
        let mut s = spec(SceneKind::TexturedPlane);
        s.depth_range = (2.5, 2.5);
        let d = Scene::new(s).unwrap().reference_depth();
        assert!(d.data().iter().all(|&v| v == 1.0 / 2.5));
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        for kind in [SceneKind::TexturedPlane, SceneKind::TwoPlane, SceneKind::SmoothHeightField] {
            let a = Scene::new(spec(kind)).unwrap();
            let b = Scene::new(spec(kind)).unwrap();
            assert_eq!(a.reference_image(), b.reference_image());
            assert_eq!(a.reference_depth(), b.reference_depth());
            assert!(a.reference_image().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let d = a.reference_depth();
            assert!(d.data().iter().all(|&v| (0.9 / 4.0..=1.1 / 2.0).contains(&v)));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(SceneKind::TwoPlane);
        s.width = 8;
        assert!(Scene::new(s).is_err());
        let mut s = spec(SceneKind::TwoPlane);
        s.depth_range = (0.0, 1.0);
        assert!(Scene::new(s).is_err());
    }

    #[test]
    fn identity_view_reproduces_reference() {
        for kind in [SceneKind::TwoPlane, SceneKind::SmoothHeightField] {
            let scene = Scene::new(spec(kind)).unwrap();
            let v = scene.render_view(&Pose6D::identity());
            assert_eq!(v.image, scene.reference_image());
            assert!(v.mask.data.iter().all(|&b| b));
            let (img, mask) = render_view(
                &scene.reference_image(),
                &scene.reference_depth(),
                &Pose6D::identity(),
                &scene.spec.intrinsics,
            )
            .unwrap();
            assert_eq!(img, scene.reference_image());
            assert!(mask.data.iter().all(|&b| b));
        }
    }

    #[test]
    fn forward_translation_scales_about_the_principal_point() {
        let scene = Scene::new(spec(SceneKind::TexturedPlane)).unwrap();
        let z0 = 3.0;
        let tz = -0.15;
        let p = Pose6D::new(Vector3::new(0.0, 0.0, tz), Vector3::zeros());
        let v = scene.render_view(&p);
        let k = scene.spec.intrinsics;
        let scale = 1.0 + tz / z0;
        let mut checked = 0;
        for i in 0..20 {
            let col = 5 + (i * 7) % 30;
            let row = 4 + (i * 5) % 24;
            let src_u = k.cx + (col as f64 - k.cx) * scale;
            let src_v = k.cy + (row as f64 - k.cy) * scale;
            assert!(v.mask.data[row * 40 + col]);
            let expect = scene.texture_at(src_u, src_v);
            assert!((v.image.get(col, row, 0) - expect).abs() < 1e-12);
            checked += 1;
        }
        assert_eq!(checked, 20);
    }

    #[test]
    fn rendered_views_are_consistent_with_the_warp() {
        let scene = Scene::new(spec(SceneKind::SmoothHeightField)).unwrap();
        let p = Pose6D::new(Vector3::new(0.03, -0.02, 0.04), Vector3::new(0.004, -0.003, 0.002));
        let v = scene.render_view(&p);
        let k = scene.spec.intrinsics;
        let depth = scene.reference_depth();
        // pixels whose warp lands on a view lattice point see the same texture value
        for row in 2..30 {
            for col in 2..38 {
                let x = k.normalize(col as f64, row as f64);
                let y = warp_point(x, &p, depth.get(col, row, 0)).unwrap();
                let (u, w) = k.to_pixel(y);
                let (ru, rw) = (u.round(), w.round());
                if (u - ru).abs() < 1e-3 && (w - rw).abs() < 1e-3 && ru >= 0.0 && rw >= 0.0 && ru < 40.0 && rw < 32.0 {
                    let got = v.image.get(ru as usize, rw as usize, 0);
                    assert!((got - scene.texture_at(col as f64, row as f64)).abs() < 1e-2);
                }
            }
        }
        // mask flags exactly the pixels whose reference lookup left the grid
        let masked = v.mask.data.iter().filter(|&&b| !b).count();
        assert!(masked > 0 && masked < 40 * 32 / 4);
    }

    #[test]
    fn view_depth_matches_transformed_points() {
        let scene = Scene::new(spec(SceneKind::TwoPlane)).unwrap();
        let p = Pose6D::new(Vector3::new(0.05, 0.0, -0.03), Vector3::new(0.0, 0.01, 0.0));
        let v = scene.render_view(&p);
        let k = scene.spec.intrinsics;
        // Round trip: the view's depth warped back by the inverse pose lands on the reference surface.
        let inv = p.inverse();
        for (col, row) in [(10usize, 10usize), (20, 16), (30, 8)] {
            let y = k.normalize(col as f64, row as f64);
            let d = v.inverse_depth.get(col, row, 0);
            let x = warp_point(y, &inv, d).unwrap();
            let r = inv.rotation().0;
            let z = (r * y.homogeneous() + d * inv.t).z;
            assert!((d / z - scene.inverse_depth_at(x)).abs() < 1e-10);
        }
    }
}
