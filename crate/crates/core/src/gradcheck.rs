//! Finite-difference checks of the analytic gradients.
//!
//! Every check compares a directional derivative `⟨∇f, e⟩` against the
//! central difference `(f(x + h·e) − f(x − h·e)) / 2h` along a seeded
//! direction `e`, and reports `|analytic − numeric| / max(|analytic|, |numeric|)`.

use std::fmt;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ddvo::{ddvo_backward, ddvo_forward, ddvo_forward_frozen_jacobian, DdvoSettings};
use crate::geometry::{CameraIntrinsics, NormalizedPoint, Pose6D};
use crate::imaging::{ImageBuffer, InverseDepthMap};
use crate::losses::{
    appearance_loss, normalize_inverse_depth, normalize_inverse_depth_backward, smoothness_prior, triplet_loss,
    LossWeights, PoseSource, Triplet,
};
use crate::synth::{invert_warp, PosePair, Scene, SceneKind, SceneSpec};
use crate::{Error, Result};

/// Tolerance on the solver's depth gradient.
pub const DDVO_TOLERANCE: f64 = 1e-3;
/// Tolerance on the loss gradients.
pub const LOSS_TOLERANCE: f64 = 1e-4;

const DDVO_STEP: f64 = 1e-5;
const APPEARANCE_STEP: f64 = 1e-7;
const LOSS_STEP: f64 = 1e-8;
const FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    /// Random instances per check.
    pub instances: usize,
    /// Side length of the solver instances.
    pub size: usize,
    pub unroll_iters: usize,
    pub levels: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            instances: 50,
            size: 16,
            unroll_iters: 2,
            levels: 1,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.size < 8 || self.unroll_iters == 0 || self.levels == 0 {
            return Err(Error::Config(format!("invalid gradient check settings {self:?}")));
        }
        if self.size >> (self.levels - 1) < 4 {
            return Err(Error::Config(format!("{} levels leave fewer than 4 pixels per side", self.levels)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "skipped",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub component: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
}

impl CheckRow {
    fn measured(component: &'static str, errors: &[f64], tolerance: f64) -> Self {
        let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
        let status = if max_rel_error < tolerance {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        CheckRow {
            component,
            max_rel_error,
            tolerance,
            status,
        }
    }

    fn skipped(component: &'static str, tolerance: f64) -> Self {
        CheckRow {
            component,
            max_rel_error: f64::NAN,
            tolerance,
            status: CheckStatus::Skipped,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<CheckRow>,
}

impl GradcheckReport {
    /// True when no row failed; skipped rows do not count as failures.
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.status != CheckStatus::Fail)
    }

    pub fn row(&self, component: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.component == component)
    }

    /// CSV table with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,max_rel_error,tolerance,status\n");
        for r in &self.rows {
            let err = if r.max_rel_error.is_nan() {
                String::new()
            } else {
                format!("{:e}", r.max_rel_error)
            };
            out.push_str(&format!("{},{},{:e},{}\n", r.component, err, r.tolerance, r.status));
        }
        out
    }
}

/// Builds a seeded instance from an analytic texture seen over a smooth surface.
pub fn solver_instance(width: usize, height: usize, seed: u64) -> PosePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 3]> = (0..4)
        .map(|_| [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(0.0..6.0)])
        .collect();
    let tex = |x: f64, y: f64| 0.5 + waves.iter().map(|[a, b, c]| 0.1 * (a * x + b * y + c).sin()).sum::<f64>();
    let (w, h) = (width as f64, height as f64);
    let k = CameraIntrinsics {
        fx: w,
        fy: w,
        cx: (w - 1.0) / 2.0,
        cy: (h - 1.0) / 2.0,
    };
    let phase = rng.gen_range(0.0..6.0);
    let surface = |x: NormalizedPoint| 0.35 + 0.08 * (3.0 * x.u + phase).sin() * (2.0 * x.v).cos();
    let truth = Pose6D::new(
        Vector3::new(rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03), rng.gen_range(-0.02..0.02)),
        Vector3::new(rng.gen_range(-0.004..0.004), rng.gen_range(-0.004..0.004), rng.gen_range(-0.004..0.004)),
    );
    let r = truth.rotation().0;
    let reference = ImageBuffer::from_fn(width, height, 1, |x, y, _| tex(x as f64, y as f64));
    let src = ImageBuffer::from_fn(width, height, 1, |x, y, _| {
        let (p, _) = invert_warp(k.normalize(x as f64, y as f64), &r, &truth.t, surface)
            .expect("small motions keep every ray in front of the surface");
        let (u, v) = k.to_pixel(p);
        tex(u, v)
    });
    let depth = InverseDepthMap::new(
        width,
        height,
        crate::warp::pixel_rays(&k, width, height)
            .into_iter()
            .map(|x| surface(x) * rng.gen_range(0.9..1.1))
            .collect(),
    )
    .expect("positive surface");
    PosePair {
        reference,
        depth,
        src,
        intrinsics: k,
        truth,
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn direction(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random magnitudes carrying the signs of `g`, so the directional
/// derivative does not cancel down to rounding level.
fn aligned(rng: &mut impl Rng, g: &[f64]) -> Vec<f64> {
    g.iter().map(|v| rng.gen_range(0.5..1.0) * v.signum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn shifted(d: &InverseDepthMap, e: &[f64], step: f64) -> InverseDepthMap {
    let data = d.data().iter().zip(e).map(|(v, e)| v + step * e).collect();
    InverseDepthMap::new(d.width(), d.height(), data).expect("small steps keep depth positive")
}

fn central(f: impl Fn(f64) -> Result<f64>, step: f64) -> Result<f64> {
    Ok((f(step)? - f(-step)?) / (2.0 * step))
}

fn pose_dot(seed: &[f64; 6], p: &Pose6D) -> f64 {
    dot(seed, p.to_vector().as_slice())
}

/// Runs every check. `ddvo` supplies damping and the Jacobian-path switch;
/// the instance size, unroll count and level count come from `cfg`.
pub fn run(cfg: &GradcheckConfig, ddvo: &DdvoSettings, weights: &LossWeights, seed: u64) -> Result<GradcheckReport> {
    cfg.validate()?;
    ddvo.validate()?;
    weights.validate()?;
    let settings = DdvoSettings {
        unroll_iters: cfg.unroll_iters,
        levels: cfg.levels,
        init_pose: Pose6D::identity(),
        ..*ddvo
    };
    let n = cfg.size * cfg.size;
    let mut full = Vec::new();
    let mut warp_only = Vec::new();
    let mut app_fine = Vec::new();
    let mut app_coarse = Vec::new();
    let mut prior = Vec::new();
    let mut norm = Vec::new();
    let mut total = Vec::new();
    for i in 0..cfg.instances as u64 {
        let inst = solver_instance(cfg.size, cfg.size, seed.wrapping_mul(1_000_003).wrapping_add(i));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9 + i));
        let pose_seed: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let e = direction(&mut rng, n);

        if settings.grad_through_jacobian {
            let (_, tape) = ddvo_forward(&inst.reference, &inst.depth, &inst.src, &inst.intrinsics, &settings)?;
            let an = dot(&ddvo_backward(&tape, &pose_seed)?, &e);
            let fd = central(
                |h| {
                    let d = shifted(&inst.depth, &e, h);
                    let (p, _) = ddvo_forward(&inst.reference, &d, &inst.src, &inst.intrinsics, &settings)?;
                    Ok(pose_dot(&pose_seed, &p))
                },
                DDVO_STEP,
            )?;
            full.push(relative_error(an, fd));
        }

        let partial = DdvoSettings {
            grad_through_jacobian: false,
            ..settings
        };
        let (_, tape) = ddvo_forward(&inst.reference, &inst.depth, &inst.src, &inst.intrinsics, &partial)?;
        let an = dot(&ddvo_backward(&tape, &pose_seed)?, &e);
        let fd = central(
            |h| {
                let d = shifted(&inst.depth, &e, h);
                let (p, _) = ddvo_forward_frozen_jacobian(&inst.reference, &d, &inst.depth, &inst.src, &inst.intrinsics, &partial)?;
                Ok(pose_dot(&pose_seed, &p))
            },
            DDVO_STEP,
        )?;
        warp_only.push(relative_error(an, fd));

        let pose = Pose6D::new(inst.truth.t * 1.2, inst.truth.omega * 0.8);
        for (scale, errors) in [(0, &mut app_fine), (1, &mut app_coarse)] {
            let a = appearance_loss(&inst.reference, &inst.src, &inst.depth, &pose, &inst.intrinsics, scale, weights)?;
            let e = aligned(&mut rng, &a.grad_depth);
            let fd = central(
                |h| {
                    let d = shifted(&inst.depth, &e, h);
                    Ok(appearance_loss(&inst.reference, &inst.src, &d, &pose, &inst.intrinsics, scale, weights)?.loss)
                },
                APPEARANCE_STEP,
            )?;
            errors.push(relative_error(dot(&a.grad_depth, &e), fd));
        }

        let (_, g) = smoothness_prior(&inst.depth, &inst.reference)?;
        let e = aligned(&mut rng, &g);
        let fd = central(|h| Ok(smoothness_prior(&shifted(&inst.depth, &e, h), &inst.reference)?.0), LOSS_STEP)?;
        prior.push(relative_error(dot(&g, &e), fd));

        let probe = direction(&mut rng, n);
        let g = normalize_inverse_depth_backward(&inst.depth, &probe);
        let e = aligned(&mut rng, &g);
        let fd = central(|h| Ok(dot(normalize_inverse_depth(&shifted(&inst.depth, &e, h))?.data(), &probe)), LOSS_STEP)?;
        norm.push(relative_error(dot(&g, &e), fd));

        total.push(normalized_triplet_error(seed.wrapping_add(i), weights, &mut rng)?);
    }

    let mut rows = Vec::new();
    if settings.grad_through_jacobian {
        rows.push(CheckRow::measured("ddvo full chain", &full, DDVO_TOLERANCE));
    } else {
        rows.push(CheckRow::skipped("ddvo full chain", DDVO_TOLERANCE));
    }
    rows.push(CheckRow::measured("ddvo warp path", &warp_only, DDVO_TOLERANCE));
    rows.push(CheckRow::measured("appearance ssim+l1", &app_fine, LOSS_TOLERANCE));
    rows.push(CheckRow::measured("appearance l1", &app_coarse, LOSS_TOLERANCE));
    rows.push(CheckRow::measured("smoothness prior", &prior, LOSS_TOLERANCE));
    rows.push(CheckRow::measured("normalization", &norm, LOSS_TOLERANCE));
    rows.push(CheckRow::measured("normalized triplet total", &total, LOSS_TOLERANCE));
    Ok(GradcheckReport { rows })
}

/// Total triplet loss through the normalization, moving all three depth maps.
fn normalized_triplet_error(seed: u64, weights: &LossWeights, rng: &mut ChaCha8Rng) -> Result<f64> {
    const SIDE: usize = 32;
    let scene = Scene::new(SceneSpec::new(SceneKind::TwoPlane, seed, SIDE, SIDE, (2.0, 4.0)))?;
    let p21 = Pose6D::new(Vector3::new(-0.04, 0.01, 0.02), Vector3::new(0.0, 0.01, 0.005));
    let p23 = Pose6D::new(Vector3::new(0.04, -0.01, -0.02), Vector3::new(0.002, -0.01, 0.0));
    let tr = scene.triplet(p21, p23);
    let raw: [InverseDepthMap; 3] = tr.depths.map(|d| {
        let data = d.data().iter().map(|v| v * rng.gen_range(0.8..1.2)).collect();
        InverseDepthMap::new(SIDE, SIDE, data).expect("positive depth")
    });
    let eval = |depths: [InverseDepthMap; 3]| -> Result<_> {
        let used = [
            normalize_inverse_depth(&depths[0])?,
            normalize_inverse_depth(&depths[1])?,
            normalize_inverse_depth(&depths[2])?,
        ];
        let t = Triplet {
            images: tr.images.clone(),
            depths: used,
            p21: Pose6D::new(p21.t * 0.3, p21.omega),
            p23: Pose6D::new(p23.t * 0.3, p23.omega),
        };
        triplet_loss(&t, &tr.intrinsics, weights, &PoseSource::Fixed)
    };
    let loss = eval(raw.clone())?;
    let mut an = 0.0;
    let mut dirs = Vec::with_capacity(3);
    for (d, grad) in raw.iter().zip(&loss.gradients.depths) {
        let g = normalize_inverse_depth_backward(d, grad);
        let e = aligned(rng, &g);
        an += dot(&g, &e);
        dirs.push(e);
    }
    let fd = central(
        |h| {
            let moved: [InverseDepthMap; 3] = std::array::from_fn(|f| shifted(&raw[f], &dirs[f], h));
            Ok(eval(moved)?.breakdown.total)
        },
        LOSS_STEP,
    )?;
    Ok(relative_error(an, fd))
}
