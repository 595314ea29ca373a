//! Desk-scale optimization of per-pixel inverse depth over one triplet.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ddvo::DdvoSettings;
use crate::dvo::{solve_coarse_to_fine, DvoSettings};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose6D};
use crate::imaging::{write_atomic, ImageBuffer, InverseDepthMap};
use crate::losses::{
    normalize_inverse_depth, normalize_inverse_depth_backward, triplet_loss, LossBreakdown, LossWeights, PoseSource,
    Triplet,
};
use crate::metrics::depth_metrics;
use crate::synth::{Scene, SceneKind, SceneSpec, SyntheticTriplet};

/// Per-pixel logits decoded as `d = 10·σ(l) + 0.01`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthParam {
    pub width: usize,
    pub height: usize,
    pub logits: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl DepthParam {
    pub const SCALE: f64 = 10.0;
    pub const OFFSET: f64 = 0.01;

    /// Logits decoding to `1 ± 0.01` (uniform, seeded).
    pub fn init(width: usize, height: usize, rng: &mut impl Rng) -> Self {
        let logits = (0..width * height)
            .map(|_| Self::logit_of(1.0 + rng.gen_range(-0.01..0.01)))
            .collect();
        DepthParam { width, height, logits }
    }

    /// Logits reproducing `depth` (values clamped into the decodable range).
    pub fn from_depth(depth: &InverseDepthMap) -> Self {
        DepthParam {
            width: depth.width(),
            height: depth.height(),
            logits: depth.data().iter().map(|&d| Self::logit_of(d)).collect(),
        }
    }

    fn logit_of(d: f64) -> f64 {
        let s = ((d - Self::OFFSET) / Self::SCALE).clamp(1e-12, 1.0 - 1e-12);
        (s / (1.0 - s)).ln()
    }

    pub fn decode(&self) -> InverseDepthMap {
        let data = self.logits.iter().map(|&l| Self::SCALE * sigmoid(l) + Self::OFFSET).collect();
        InverseDepthMap::new(self.width, self.height, data).expect("decoded depth is positive")
    }

    /// Gradient with respect to the logits given the gradient at the decoded depth.
    pub fn decode_backward(&self, grad: &[f64]) -> Vec<f64> {
        self.logits
            .iter()
            .zip(grad)
            .map(|(&l, g)| {
                let s = sigmoid(l);
                g * Self::SCALE * s * (1.0 - s)
            })
            .collect()
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "Adam state holds {} moments for {} parameters and {} gradients",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// How the poses entering the loss are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Ground-truth poses.
    FixedPoseGt,
    /// Poses are free parameters optimized alongside depth.
    PoseParam,
    /// Differentiable solve from the identity at every step.
    Ddvo,
    /// Pose-parameter warmup, then differentiable refinement from the frozen parameters.
    DdvoHybrid,
    /// Non-differentiable solve each step, pose held constant for the depth update.
    DvoEm,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] = [
        TrainMode::FixedPoseGt,
        TrainMode::PoseParam,
        TrainMode::Ddvo,
        TrainMode::DdvoHybrid,
        TrainMode::DvoEm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::FixedPoseGt => "fixed-pose-gt",
            TrainMode::PoseParam => "pose-param",
            TrainMode::Ddvo => "ddvo",
            TrainMode::DdvoHybrid => "ddvo-hybrid",
            TrainMode::DvoEm => "dvo-em",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown training mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub normalize_depth: bool,
    pub steps: usize,
    pub weights: LossWeights,
    /// Solver used by `ddvo` mode.
    pub ddvo: DdvoSettings,
    /// Solver used after the warmup of `ddvo-hybrid` mode.
    pub hybrid_ddvo: DdvoSettings,
    /// Solver used by `dvo-em` mode.
    pub dvo: DvoSettings,
    pub seed: u64,
    /// Adam step size for the depth logits.
    pub lr: f64,
    /// Adam step size for pose parameters.
    pub pose_lr: f64,
    /// Pose-parameter steps before `ddvo-hybrid` switches to the solver.
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::PoseParam,
            normalize_depth: true,
            steps: 500,
            weights: LossWeights::default(),
            ddvo: DdvoSettings::default(),
            hybrid_ddvo: DdvoSettings::finest_only(Pose6D::identity()),
            dvo: DvoSettings::default(),
            seed: 0,
            lr: 1e-4,
            pose_lr: 1e-4,
            warmup_steps: 200,
        }
    }
}

impl TrainConfig {
    /// Settings sized for the bundled 80×64 triplets.
    ///
    /// Per-pixel logits have no shared scale parameter, so the global scale
    /// only moves at step sizes far above the network default. Three pyramid
    /// levels keep the coarsest solver grid at 20×16.
    pub fn demo(mode: TrainMode, normalize_depth: bool) -> Self {
        let mut cfg = TrainConfig {
            mode,
            normalize_depth,
            lr: 0.2,
            pose_lr: 0.01,
            ..TrainConfig::default()
        };
        cfg.ddvo.levels = 3;
        cfg.dvo.levels = 3;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.lr > 0.0) || !(self.pose_lr >= 0.0) {
            return Err(Error::Config(format!("invalid training settings {self:?}")));
        }
        self.weights.validate()?;
        self.ddvo.validate()?;
        self.hybrid_ddvo.validate()?;
        self.dvo.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub depths: [InverseDepthMap; 3],
    pub p21: Pose6D,
    pub p23: Pose6D,
}

/// Frames to train on, frame 2 (index 1) being the reference.
#[derive(Clone, Debug)]
pub struct TrainInputs {
    pub images: [ImageBuffer; 3],
    pub intrinsics: CameraIntrinsics,
    pub gt: Option<GroundTruth>,
}

impl From<SyntheticTriplet> for TrainInputs {
    fn from(t: SyntheticTriplet) -> Self {
        TrainInputs {
            images: t.images,
            intrinsics: t.intrinsics,
            gt: Some(GroundTruth {
                depths: t.depths,
                p21: t.p21,
                p23: t.p23,
            }),
        }
    }
}

fn demo_scene() -> Scene {
    let mut spec = SceneSpec::new(SceneKind::TwoPlane, 7, 80, 64, (2.0, 4.0));
    spec.wavelength_range = (24.0, 64.0);
    Scene::new(spec).expect("valid demo scene")
}

/// Small-motion synthetic triplet used by the demos.
pub fn bundled_triplet() -> TrainInputs {
    use nalgebra::Vector3;
    let p21 = Pose6D::new(Vector3::new(-0.06, 0.01, 0.02), Vector3::new(0.002, -0.006, 0.001));
    let p23 = Pose6D::new(Vector3::new(0.06, -0.01, -0.02), Vector3::new(-0.002, 0.006, -0.001));
    demo_scene().triplet(p21, p23).into()
}

/// Triplet with several times the motion of [`bundled_triplet`].
pub fn bundled_large_motion_triplet() -> TrainInputs {
    use nalgebra::Vector3;
    let p21 = Pose6D::new(Vector3::new(-0.2, 0.03, 0.05), Vector3::new(0.006, -0.02, 0.004));
    let p23 = Pose6D::new(Vector3::new(0.2, -0.03, -0.05), Vector3::new(-0.006, 0.02, -0.004));
    demo_scene().triplet(p21, p23).into()
}

/// One row of the training trace, evaluated before that step's update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub total: f64,
    pub appearance: f64,
    pub prior: f64,
    /// Mean of the depths entering the loss (normalized when normalization is on).
    pub mean_inv_depth: f64,
    /// Mean of the decoded depths before normalization.
    pub mean_raw_inv_depth: f64,
    /// Median-aligned absolute relative depth error of frame 2.
    pub gt_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub mode: TrainMode,
    pub records: Vec<TraceRecord>,
    /// Decoded depths after the last update.
    pub final_depths: [InverseDepthMap; 3],
    /// Poses used by the last recorded step.
    pub final_poses: (Pose6D, Pose6D),
    /// Step at which a non-finite loss stopped the run.
    pub halted_at: Option<usize>,
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str = "step,total,appearance,prior,mean_inv_depth,gt_error";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let gt = r.gt_error.map(|e| e.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.total, r.appearance, r.prior, r.mean_inv_depth, gt
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }

    /// `DivergenceDetected` if the run stopped on a non-finite loss.
    pub fn divergence(&self) -> Option<Error> {
        self.halted_at.map(|step| Error::DivergenceDetected {
            step,
            loss: self.records.last().map_or(f64::NAN, |r| r.total),
        })
    }

    pub fn first(&self) -> &TraceRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("at least one record")
    }
}

fn mean(d: &InverseDepthMap) -> f64 {
    d.data().iter().sum::<f64>() / d.pixel_count() as f64
}

fn gt_error(pred: &InverseDepthMap, gt: &InverseDepthMap) -> Result<f64> {
    let p: Vec<f64> = pred.data().iter().map(|d| 1.0 / d).collect();
    let g: Vec<f64> = gt.data().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
    Ok(depth_metrics(&p, &g, None, true, None)?.abs_rel)
}

/// Runs `cfg.steps` updates and records the objective before each.
pub fn train_triplet(inputs: &TrainInputs, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let [w, h] = [inputs.images[1].width(), inputs.images[1].height()];
    let gt_poses = match (&inputs.gt, cfg.mode) {
        // Normalized depths have unit mean, so translations move to the same units.
        (Some(gt), _) if cfg.normalize_depth => {
            let mean = gt.depths[1].mean();
            let rescale = |p: Pose6D| Pose6D::new(p.t * mean, p.omega);
            Some((rescale(gt.p21), rescale(gt.p23)))
        }
        (Some(gt), _) => Some((gt.p21, gt.p23)),
        (None, TrainMode::FixedPoseGt) => {
            return Err(Error::Config("fixed-pose-gt mode needs ground-truth poses".into()));
        }
        (None, _) => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params: [DepthParam; 3] = std::array::from_fn(|_| DepthParam::init(w, h, &mut rng));
    let mut depth_adam: [AdamState; 3] = std::array::from_fn(|_| AdamState::new(w * h, cfg.lr));
    let mut pose_params = [0.0; 12];
    let mut pose_adam = AdamState::new(12, cfg.pose_lr);
    let k = inputs.intrinsics;

    let mut records = Vec::with_capacity(cfg.steps);
    let mut final_poses = (Pose6D::identity(), Pose6D::identity());
    let mut halted_at = None;
    for step in 0..cfg.steps {
        let raw: [InverseDepthMap; 3] = std::array::from_fn(|f| params[f].decode());
        let used: [InverseDepthMap; 3] = if cfg.normalize_depth {
            [normalize_inverse_depth(&raw[0])?, normalize_inverse_depth(&raw[1])?, normalize_inverse_depth(&raw[2])?]
        } else {
            raw.clone()
        };
        let param_poses = (
            Pose6D::from_vector(&Vector6::from_column_slice(&pose_params[..6])),
            Pose6D::from_vector(&Vector6::from_column_slice(&pose_params[6..])),
        );
        let learn_poses = matches!(cfg.mode, TrainMode::PoseParam)
            || (cfg.mode == TrainMode::DdvoHybrid && step < cfg.warmup_steps);
        let ((p21, p23), source) = match cfg.mode {
            TrainMode::FixedPoseGt => (gt_poses.expect("checked above"), PoseSource::Fixed),
            TrainMode::PoseParam => (param_poses, PoseSource::Fixed),
            TrainMode::DdvoHybrid if learn_poses => (param_poses, PoseSource::Fixed),
            TrainMode::DdvoHybrid => (
                param_poses,
                PoseSource::Ddvo {
                    settings: cfg.hybrid_ddvo,
                    warm_start: true,
                },
            ),
            TrainMode::Ddvo => (
                (Pose6D::identity(), Pose6D::identity()),
                PoseSource::Ddvo {
                    settings: cfg.ddvo,
                    warm_start: false,
                },
            ),
            TrainMode::DvoEm => {
                let solve = |src: &ImageBuffer| {
                    solve_coarse_to_fine(&inputs.images[1], &used[1], src, &k, Pose6D::identity(), &cfg.dvo)
                        .map(|r| r.pose)
                };
                ((solve(&inputs.images[0])?, solve(&inputs.images[2])?), PoseSource::Fixed)
            }
        };
        let triplet = Triplet {
            images: inputs.images.clone(),
            depths: used.clone(),
            p21,
            p23,
        };
        let loss = triplet_loss(&triplet, &k, &cfg.weights, &source)?;
        let b: LossBreakdown = loss.breakdown;
        records.push(TraceRecord {
            step,
            total: b.total,
            appearance: b.appearance(),
            prior: b.prior(),
            mean_inv_depth: used.iter().map(mean).sum::<f64>() / 3.0,
            mean_raw_inv_depth: raw.iter().map(mean).sum::<f64>() / 3.0,
            gt_error: match &inputs.gt {
                Some(gt) => Some(gt_error(&used[1], &gt.depths[1])?),
                None => None,
            },
        });
        final_poses = (loss.p21, loss.p23);
        if !b.total.is_finite() {
            halted_at = Some(step);
            break;
        }

        for f in 0..3 {
            let mut g = loss.gradients.depths[f].clone();
            if cfg.normalize_depth {
                g = normalize_inverse_depth_backward(&raw[f], &g);
            }
            let g = params[f].decode_backward(&g);
            adam_step(&mut depth_adam[f], &mut params[f].logits, &g)?;
        }
        if learn_poses {
            let mut g = [0.0; 12];
            g[..6].copy_from_slice(loss.gradients.p21.as_slice());
            g[6..].copy_from_slice(loss.gradients.p23.as_slice());
            adam_step(&mut pose_adam, &mut pose_params, &g)?;
        }
    }
    Ok(TrainTrace {
        mode: cfg.mode,
        records,
        final_depths: std::array::from_fn(|f| params[f].decode()),
        final_poses,
        halted_at,
    })
}

/// Alternates a pose solve and a depth update at every step.
pub fn em_alternation(inputs: &TrainInputs, cfg: &TrainConfig) -> Result<TrainTrace> {
    train_triplet(
        inputs,
        &TrainConfig {
            mode: TrainMode::DvoEm,
            ..*cfg
        },
    )
}
