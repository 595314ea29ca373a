//! Inverse-compositional Gauss-Newton direct visual odometry.
//!
//! The Jacobian of the reference image under an infinitesimal warp is
//! precomputed once per pyramid level. Each iteration warps the source image
//! with the current pose, solves the masked normal equations
//! `(JᵀWJ + λI) Δ = JᵀW(I − I'_p)` and applies `Δ` with
//! [`compose_left`](crate::geometry::compose_left).

use nalgebra::{DMatrix, Matrix6, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{compose_left, warp_jacobian_identity, CameraIntrinsics, NormalizedPoint, Pose6D};
use crate::imaging::{build_pyramid, spatial_gradient, BilinearSample, ImageBuffer, InverseDepthMap};
use crate::warp::{pixel_rays, PoseFrame};

/// Systems with a larger condition estimate are reported as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Below this in-view ratio an iterate is rejected.
pub const MIN_VALID_FRACTION: f64 = 0.25;

/// Per-pixel work is spread over threads above this many pixels.
const PARALLEL_PIXELS: usize = 8192;

/// Levenberg term added to the diagonal of the normal equations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Damping {
    /// `λ = c · trace(JᵀJ) / 6`, scaled with the texture energy.
    Relative(f64),
    /// A fixed `λ`.
    Absolute(f64),
}

impl Default for Damping {
    fn default() -> Self {
        Damping::Relative(1e-6)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DvoSettings {
    pub levels: usize,
    pub max_iters_per_level: usize,
    pub step_norm_tol: f64,
    pub damping: Damping,
}

impl Default for DvoSettings {
    fn default() -> Self {
        DvoSettings {
            levels: 4,
            max_iters_per_level: 20,
            step_norm_tol: 1e-8,
            damping: Damping::default(),
        }
    }
}

impl DvoSettings {
    pub fn validate(&self) -> Result<()> {
        let damping_ok = match self.damping {
            Damping::Relative(c) | Damping::Absolute(c) => c >= 0.0 && c.is_finite(),
        };
        if self.levels == 0 || self.max_iters_per_level == 0 || !(self.step_norm_tol > 0.0) || !damping_ok {
            return Err(Error::Config(format!("invalid solver settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DvoResult {
    pub pose: Pose6D,
    /// Mean squared photometric error over in-view pixels at `pose`.
    pub final_residual: f64,
    /// Iterations run at each level, indexed by level (0 = finest).
    pub iterations_used: Vec<usize>,
    /// In-view pixel ratio at `pose`.
    pub valid_fraction: f64,
    /// Mean squared error at every iterate, per level in the order solved.
    pub residual_history: Vec<Vec<f64>>,
}

/// Precomputed quantities of the reference frame at one resolution.
#[derive(Clone, Debug)]
pub struct ReferenceSystem {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub rays: Vec<NormalizedPoint>,
    pub intensity: Vec<f64>,
    pub depth: Vec<f64>,
    /// Image gradient with respect to normalized coordinates, `(∂I/∂x·fx, ∂I/∂y·fy)`.
    pub gradient: Vec<[f64; 2]>,
    /// Rows of `J`, one per pixel.
    pub rows: Vec<[f64; 6]>,
    pub damping: f64,
    /// `c` when the damping is relative to `trace(JᵀJ)`.
    pub(crate) damping_scale: Option<f64>,
}

impl ReferenceSystem {
    /// Builds `J` from a single-channel reference and its inverse depth.
    pub fn new(
        reference: &ImageBuffer,
        depth: &InverseDepthMap,
        k: &CameraIntrinsics,
        damping: Damping,
    ) -> Result<Self> {
        if !reference.same_grid(depth) {
            return Err(Error::ShapeMismatch("reference image and depth grids differ".into()));
        }
        let gray = reference.to_gray();
        let grad = spatial_gradient(&gray)?;
        let (w, h) = (gray.width(), gray.height());
        let rays = pixel_rays(k, w, h);
        let mut gradient = Vec::with_capacity(w * h);
        let mut rows = Vec::with_capacity(w * h);
        let mut trace = 0.0;
        for (i, &x) in rays.iter().enumerate() {
            let g = [grad.data()[2 * i] * k.fx, grad.data()[2 * i + 1] * k.fy];
            let m = warp_jacobian_identity(x, depth.data()[i]);
            let row: [f64; 6] = std::array::from_fn(|c| g[0] * m[(0, c)] + g[1] * m[(1, c)]);
            trace += row.iter().map(|v| v * v).sum::<f64>();
            gradient.push(g);
            rows.push(row);
        }
        let (damping, damping_scale) = match damping {
            Damping::Relative(c) => (c * trace / 6.0, Some(c)),
            Damping::Absolute(l) => (l, None),
        };
        Ok(ReferenceSystem {
            width: w,
            height: h,
            intrinsics: *k,
            rays,
            intensity: gray.into_data(),
            depth: depth.data().to_vec(),
            gradient,
            rows,
            damping,
            damping_scale,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.rows.len()
    }

    /// `J` as an `N × 6` matrix.
    pub fn jacobian(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), 6, |i, j| self.rows[i][j])
    }

    /// `JᵀJ + λI` over every pixel.
    pub fn normal_matrix(&self) -> Matrix6<f64> {
        let mut h = Matrix6::zeros();
        for row in &self.rows {
            accumulate_outer(&mut h, row);
        }
        finish_normal_matrix(&mut h, self.damping);
        h
    }

    /// `(JᵀJ + λI)⁻¹Jᵀ`.
    pub fn pseudo_inverse(&self) -> Result<DMatrix<f64>> {
        let h = self.normal_matrix();
        check_conditioning(&h)?;
        let inv = h
            .try_inverse()
            .ok_or(Error::SingularSystem { condition: f64::INFINITY })?;
        Ok(DMatrix::from_fn(6, self.rows.len(), |r, i| {
            (0..6).map(|c| inv[(r, c)] * self.rows[i][c]).sum()
        }))
    }
}

/// `J` and its damped pseudo-inverse for a reference frame.
pub fn precompute_reference_system(
    reference: &ImageBuffer,
    depth: &InverseDepthMap,
    k: &CameraIntrinsics,
    damping: Damping,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sys = ReferenceSystem::new(reference, depth, k, damping)?;
    let pinv = sys.pseudo_inverse()?;
    Ok((sys.jacobian(), pinv))
}

#[inline]
pub(crate) fn accumulate_outer(h: &mut Matrix6<f64>, row: &[f64; 6]) {
    for a in 0..6 {
        for b in a..6 {
            h[(a, b)] += row[a] * row[b];
        }
    }
}

/// Mirrors the upper triangle and adds the damping.
pub(crate) fn finish_normal_matrix(h: &mut Matrix6<f64>, damping: f64) {
    for a in 0..6 {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
        h[(a, a)] += damping;
    }
}

pub(crate) fn check_conditioning(h: &Matrix6<f64>) -> Result<()> {
    let eig = h.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(min > 0.0) || !(max / min <= MAX_CONDITION) {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::SingularSystem { condition });
    }
    Ok(())
}

/// Warp result for one reference pixel.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct PixelSample {
    pub valid: bool,
    pub residual: f64,
    pub grad: [f64; 2],
}

/// Everything one Gauss-Newton iteration computed.
#[derive(Clone, Debug)]
pub(crate) struct StepRecord {
    pub pose: Pose6D,
    pub samples: Vec<PixelSample>,
    pub hessian: Matrix6<f64>,
    pub delta: Vector6<f64>,
    pub mse: f64,
    pub valid_fraction: f64,
}

/// Warps `src` by `pose` and samples it at every reference pixel.
pub(crate) fn sample_source(sys: &ReferenceSystem, src: &ImageBuffer, pose: &Pose6D) -> Vec<PixelSample> {
    let frame = PoseFrame::new(pose);
    let k = sys.intrinsics;
    let (w, h) = (src.width(), src.height());
    let eval = |i: usize| {
        let Some((u, v, _)) = frame.pixel(&k, sys.rays[i], sys.depth[i]) else {
            return PixelSample::default();
        };
        let s = BilinearSample::locate(w, h, u, v);
        if !s.in_view {
            return PixelSample::default();
        }
        PixelSample {
            valid: true,
            residual: sys.intensity[i] - s.value(src, 0),
            grad: s.gradient(src, 0),
        }
    };
    let n = sys.pixel_count();
    if n >= PARALLEL_PIXELS {
        (0..n).into_par_iter().map(eval).collect()
    } else {
        (0..n).map(eval).collect()
    }
}

/// Mean squared residual and in-view fraction.
pub(crate) fn residual_stats(samples: &[PixelSample]) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for s in samples.iter().filter(|s| s.valid) {
        n += 1;
        sum += s.residual * s.residual;
    }
    let mse = if n > 0 { sum / n as f64 } else { 0.0 };
    (mse, n as f64 / samples.len() as f64)
}

/// One inverse-compositional iteration at `pose`.
pub(crate) fn gauss_newton_step(sys: &ReferenceSystem, src: &ImageBuffer, pose: &Pose6D) -> Result<StepRecord> {
    let samples = sample_source(sys, src, pose);
    let (mse, valid_fraction) = residual_stats(&samples);
    if valid_fraction < MIN_VALID_FRACTION {
        return Err(Error::DegenerateOverlap {
            fraction: valid_fraction,
        });
    }
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for (s, row) in samples.iter().zip(&sys.rows) {
        if !s.valid {
            continue;
        }
        accumulate_outer(&mut h, row);
        for a in 0..6 {
            g[a] += row[a] * s.residual;
        }
    }
    finish_normal_matrix(&mut h, sys.damping);
    check_conditioning(&h)?;
    let chol = h
        .cholesky()
        .ok_or(Error::SingularSystem { condition: f64::INFINITY })?;
    let delta = chol.solve(&g);
    Ok(StepRecord {
        pose: *pose,
        samples,
        hessian: h,
        delta,
        mse,
        valid_fraction,
    })
}

/// Grayscale images, depth and intrinsics for every pyramid level.
pub(crate) struct LevelStack {
    pub refs: Vec<ImageBuffer>,
    pub srcs: Vec<ImageBuffer>,
    pub depths: Vec<InverseDepthMap>,
    pub intrinsics: Vec<CameraIntrinsics>,
}

impl LevelStack {
    pub fn build(
        reference: &ImageBuffer,
        depth: &InverseDepthMap,
        src: &ImageBuffer,
        k: &CameraIntrinsics,
        levels: usize,
    ) -> Result<Self> {
        if !reference.same_grid(depth) || !reference.same_grid(src) {
            return Err(Error::ShapeMismatch(format!(
                "reference {}x{}, depth {}x{}, source {}x{}",
                reference.width(),
                reference.height(),
                depth.width(),
                depth.height(),
                src.width(),
                src.height()
            )));
        }
        let refs = build_pyramid(&reference.to_gray(), levels)?.levels;
        let srcs = build_pyramid(&src.to_gray(), levels)?.levels;
        let depths = build_pyramid(depth.image(), levels)?
            .levels
            .into_iter()
            .map(InverseDepthMap::from_image)
            .collect::<Result<Vec<_>>>()?;
        let intrinsics = (0..levels).map(|l| k.at_level(l)).collect();
        Ok(LevelStack {
            refs,
            srcs,
            depths,
            intrinsics,
        })
    }
}

struct LevelOutcome {
    pose: Pose6D,
    iterations: usize,
    history: Vec<f64>,
}

fn iterate_level(
    sys: &ReferenceSystem,
    src: &ImageBuffer,
    init: Pose6D,
    settings: &DvoSettings,
) -> Result<LevelOutcome> {
    let mut pose = init;
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..settings.max_iters_per_level {
        let step = gauss_newton_step(sys, src, &pose)?;
        history.push(step.mse);
        iterations += 1;
        pose = compose_left(&Pose6D::from_vector(&step.delta), &pose);
        if step.delta.norm() < settings.step_norm_tol {
            break;
        }
    }
    Ok(LevelOutcome {
        pose,
        iterations,
        history,
    })
}

fn finish(sys: &ReferenceSystem, src: &ImageBuffer, pose: Pose6D, iterations_used: Vec<usize>, residual_history: Vec<Vec<f64>>) -> DvoResult {
    let (final_residual, valid_fraction) = residual_stats(&sample_source(sys, src, &pose));
    DvoResult {
        pose,
        final_residual,
        iterations_used,
        valid_fraction,
        residual_history,
    }
}

/// Solves for the pose at a single resolution (`settings.levels` is ignored).
pub fn solve_level(
    reference: &ImageBuffer,
    depth: &InverseDepthMap,
    src: &ImageBuffer,
    k: &CameraIntrinsics,
    init: Pose6D,
    settings: &DvoSettings,
) -> Result<DvoResult> {
    solve_coarse_to_fine(reference, depth, src, k, init, &DvoSettings { levels: 1, ..*settings })
}

/// Solves coarsest to finest, warm-starting each level with the previous pose.
pub fn solve_coarse_to_fine(
    reference: &ImageBuffer,
    depth: &InverseDepthMap,
    src: &ImageBuffer,
    k: &CameraIntrinsics,
    init: Pose6D,
    settings: &DvoSettings,
) -> Result<DvoResult> {
    settings.validate()?;
    let stack = LevelStack::build(reference, depth, src, k, settings.levels)?;
    let mut pose = init;
    let mut iterations_used = vec![0; settings.levels];
    let mut history = Vec::with_capacity(settings.levels);
    let mut finest = None;
    for l in (0..settings.levels).rev() {
        let sys = ReferenceSystem::new(&stack.refs[l], &stack.depths[l], &stack.intrinsics[l], settings.damping)?;
        let out = iterate_level(&sys, &stack.srcs[l], pose, settings)?;
        pose = out.pose;
        iterations_used[l] = out.iterations;
        history.push(out.history);
        if l == 0 {
            finest = Some(sys);
        }
    }
    let sys = finest.expect("at least one level");
    Ok(finish(&sys, &stack.srcs[0], pose, iterations_used, history))
}

/// Rotation angle (degrees) and relative translation error between two poses.
pub fn pose_errors(estimate: &Pose6D, truth: &Pose6D) -> (f64, f64) {
    let r = estimate.rotation().0.transpose() * truth.rotation().0;
    let angle = crate::geometry::rotation_log(&r).norm().to_degrees();
    let trans = (estimate.t - truth.t).norm() / truth.t.norm();
    (angle, trans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::warp_point;
    use crate::synth::{random_motion, Scene, SceneKind, SceneSpec};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 1, |x, y, _| {
            let (x, y) = (x as f64, y as f64);
            0.5 + 0.2 * (0.9 * x + 0.3 * y).sin() + 0.15 * (0.4 * x - 1.1 * y + 0.5).cos() + 0.1 * (0.7 * y).sin()
        })
    }

    #[test]
    fn constant_reference_is_singular() {
        let img = ImageBuffer::from_fn(10, 10, 1, |_, _, _| 0.5);
        let depth = InverseDepthMap::constant(10, 10, 0.5);
        let k = CameraIntrinsics::new(10.0, 10.0, 4.5, 4.5).unwrap();
        let err = precompute_reference_system(&img, &depth, &k, Damping::Absolute(0.0)).unwrap_err();
        assert!(matches!(err, Error::SingularSystem { .. }));
        let (j, _) = (ReferenceSystem::new(&img, &depth, &k, Damping::Absolute(0.0)).unwrap().jacobian(), ());
        assert!(j.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pseudo_inverse_is_a_left_inverse_without_damping() {
        let img = textured(12, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let depth = InverseDepthMap::new(12, 10, (0..120).map(|_| rng.gen_range(0.3..0.6)).collect()).unwrap();
        let k = CameraIntrinsics::new(12.0, 12.0, 5.5, 4.5).unwrap();
        let (j, pinv) = precompute_reference_system(&img, &depth, &k, Damping::Absolute(0.0)).unwrap();
        let eye = &pinv * &j;
        assert!((eye - DMatrix::<f64>::identity(6, 6)).amax() < 1e-8);
    }

    #[test]
    fn jacobian_matches_finite_differences_of_warped_intensity() {
        let img = textured(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let depth = InverseDepthMap::new(8, 8, (0..64).map(|_| rng.gen_range(0.2..0.8)).collect()).unwrap();
        let k = CameraIntrinsics::new(8.0, 8.0, 3.5, 3.5).unwrap();
        let sys = ReferenceSystem::new(&img, &depth, &k, Damping::Absolute(0.0)).unwrap();
        let h = 1e-6;
        let warped = |p: &Pose6D, i: usize| {
            let y = warp_point(sys.rays[i], p, sys.depth[i]).unwrap();
            let (u, v) = k.to_pixel(y);
            BilinearSample::locate(8, 8, u, v).value(&img, 0)
        };
        let mut worst: f64 = 0.0;
        for row in 1..7 {
            for col in 1..7 {
                let i = row * 8 + col;
                for c in 0..6 {
                    let mut e = Vector6::zeros();
                    e[c] = h;
                    let fd = (warped(&Pose6D::from_vector(&e), i) - warped(&Pose6D::from_vector(&-e), i)) / (2.0 * h);
                    worst = worst.max((fd - sys.rows[i][c]).abs());
                }
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    fn scene() -> Scene {
        Scene::new(SceneSpec::new(SceneKind::SmoothHeightField, 3, 80, 64, (2.0, 4.0))).unwrap()
    }

    #[test]
    fn zero_motion_returns_identity() {
        let s = scene();
        let img = s.reference_image();
        let d = s.reference_depth();
        let r = solve_level(&img, &d, &img, &s.spec.intrinsics, Pose6D::identity(), &DvoSettings::default()).unwrap();
        assert!(r.pose.to_vector().amax() < 1e-10);
        assert!(r.final_residual < 1e-20);
        assert_eq!(r.iterations_used, vec![1]);
        for levels in 1..=4 {
            let settings = DvoSettings { levels, ..Default::default() };
            let r = solve_coarse_to_fine(&img, &d, &img, &s.spec.intrinsics, Pose6D::identity(), &settings).unwrap();
            assert!(r.pose.to_vector().amax() < 1e-10);
        }
    }

    #[test]
    fn recovers_small_synthetic_motion() {
        let s = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let truth = random_motion(&mut rng, 0.01 * s.spec.scene_depth(), 0.5f64.to_radians());
        let view = s.render_view(&truth);
        let r = solve_level(
            &s.reference_image(),
            &s.reference_depth(),
            &view.image,
            &s.spec.intrinsics,
            Pose6D::identity(),
            &DvoSettings::default(),
        )
        .unwrap();
        let (rot, trans) = pose_errors(&r.pose, &truth);
        assert!(rot < 0.05 && trans < 0.02, "rot {rot} deg, trans {trans}");
        assert!(r.valid_fraction > 0.5 && r.valid_fraction <= 1.0);
    }

    #[test]
    fn starting_at_the_optimum_stops_after_one_step() {
        // A pure sideways move of a fronto-parallel plane by exactly two pixels
        // keeps every warped sample on the lattice, so the rendering is exact.
        let mut spec = SceneSpec::new(SceneKind::TexturedPlane, 5, 48, 40, (2.0, 2.0));
        spec.intrinsics.fx = 40.0;
        let s = Scene::new(spec).unwrap();
        let tx = 2.0 / (40.0 * 0.5);
        let truth = Pose6D::new(Vector3::new(tx, 0.0, 0.0), Vector3::zeros());
        let view = s.render_view(&truth);
        let settings = DvoSettings::default();
        let r = solve_level(&s.reference_image(), &s.reference_depth(), &view.image, &s.spec.intrinsics, truth, &settings).unwrap();
        assert_eq!(r.iterations_used, vec![1]);
        assert!((r.pose.to_vector() - truth.to_vector()).amax() < 1e-8);
        assert!(r.final_residual < 1e-20);
    }

    #[test]
    fn inverted_update_moves_away_from_the_optimum() {
        // Applying the increment as T(Δ)⁻¹·T(p) with the residual sign I − I'_p
        // walks away from the solution; the uninverted left update converges.
        let s = scene();
        let truth = Pose6D::new(Vector3::new(0.02, 0.0, 0.0), Vector3::zeros());
        let view = s.render_view(&truth);
        let sys = ReferenceSystem::new(&s.reference_image(), &s.reference_depth(), &s.spec.intrinsics, Damping::default()).unwrap();
        let step = gauss_newton_step(&sys, &view.image, &Pose6D::identity()).unwrap();
        let delta = Pose6D::from_vector(&step.delta);
        let forward = compose_left(&delta, &Pose6D::identity());
        let inverted = compose_left(&delta.inverse(), &Pose6D::identity());
        let err = |p: &Pose6D| (p.t - truth.t).norm();
        assert!(err(&forward) < 0.2 * truth.t.norm());
        assert!(err(&inverted) > truth.t.norm());
    }

    #[test]
    fn one_level_matches_solve_level() {
        let s = scene();
        let truth = Pose6D::new(Vector3::new(0.01, 0.02, -0.01), Vector3::new(0.002, 0.0, -0.003));
        let view = s.render_view(&truth);
        let args = (&s.reference_image(), &s.reference_depth(), &view.image, &s.spec.intrinsics);
        let settings = DvoSettings { levels: 1, ..Default::default() };
        let a = solve_level(args.0, args.1, args.2, args.3, Pose6D::identity(), &settings).unwrap();
        let b = solve_coarse_to_fine(args.0, args.1, args.2, args.3, Pose6D::identity(), &settings).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_overlap_is_reported() {
        let s = scene();
        let img = s.reference_image();
        let far_away = Pose6D::new(Vector3::new(3.0, 0.0, 0.0), Vector3::zeros());
        let err = solve_level(&img, &s.reference_depth(), &img, &s.spec.intrinsics, far_away, &DvoSettings::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateOverlap { .. }));
    }

    #[test]
    fn settings_are_validated() {
        assert!(DvoSettings { levels: 0, ..Default::default() }.validate().is_err());
        assert!(DvoSettings { step_norm_tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(DvoSettings { damping: Damping::Absolute(-1.0), ..Default::default() }.validate().is_err());
    }
}
