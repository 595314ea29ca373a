//! Differentiable direct visual odometry.
//!
//! [`ddvo_forward`] runs a fixed number of Gauss-Newton steps per pyramid
//! level and records a [`DdvoTape`]. [`ddvo_backward`] replays the tape in
//! reverse and returns the vector-Jacobian product of the output pose with
//! respect to the finest inverse-depth map. Every dependence on depth is
//! followed: the source warp, the rows of `J`, the damped normal matrix and
//! the relative damping term. The in-view mask is held constant.

use nalgebra::{DMatrix, Matrix6, Vector6};
use rayon::prelude::*;

use crate::dvo::{gauss_newton_step, Damping, LevelStack, ReferenceSystem, StepRecord};
use crate::error::{Error, Result};
use crate::geometry::{compose_left_with_jacobians, CameraIntrinsics, Pose6D};
use crate::imaging::{downsample2_adjoint, ImageBuffer, InverseDepthMap};
use crate::warp::PoseFrame;

/// Largest pixel count accepted by [`pose_depth_jacobian_dense`].
pub const DENSE_JACOBIAN_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdvoSettings {
    pub unroll_iters: usize,
    pub levels: usize,
    pub damping: Damping,
    pub init_pose: Pose6D,
    /// Follow the depth dependence of `J` and the damping, not only of the warp.
    pub grad_through_jacobian: bool,
}

impl Default for DdvoSettings {
    fn default() -> Self {
        DdvoSettings {
            unroll_iters: 3,
            levels: 5,
            damping: Damping::default(),
            init_pose: Pose6D::identity(),
            grad_through_jacobian: true,
        }
    }
}

impl DdvoSettings {
    /// Three steps at the finest level only, for refining a good initial pose.
    pub fn finest_only(init_pose: Pose6D) -> Self {
        DdvoSettings {
            levels: 1,
            init_pose,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let damping_ok = match self.damping {
            Damping::Relative(c) | Damping::Absolute(c) => c >= 0.0 && c.is_finite(),
        };
        if self.unroll_iters == 0 || self.levels == 0 || !damping_ok || !self.init_pose.is_finite() {
            return Err(Error::Config(format!("invalid differentiable solver settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct IterationTape {
    step: StepRecord,
    /// Jacobians of the composed pose with respect to the increment and the previous pose.
    d_delta: Matrix6<f64>,
    d_pose: Matrix6<f64>,
}

#[derive(Clone, Debug)]
struct LevelTape {
    sys: ReferenceSystem,
    src: ImageBuffer,
    iterations: Vec<IterationTape>,
}

/// Intermediates of an unrolled solve, coarsest level first.
#[derive(Clone, Debug)]
pub struct DdvoTape {
    settings: DdvoSettings,
    width: usize,
    height: usize,
    levels: Vec<LevelTape>,
    pose: Pose6D,
}

impl DdvoTape {
    pub fn pose(&self) -> Pose6D {
        self.pose
    }

    pub fn settings(&self) -> &DdvoSettings {
        &self.settings
    }

    /// Number of recorded iterations over all levels.
    pub fn len(&self) -> usize {
        self.levels.iter().map(|l| l.iterations.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pose at the start of every recorded iteration.
    pub fn iterate_poses(&self) -> Vec<Pose6D> {
        self.levels
            .iter()
            .flat_map(|l| l.iterations.iter().map(|it| it.step.pose))
            .collect()
    }

    /// Per-iteration in-view fractions.
    pub fn valid_fractions(&self) -> Vec<f64> {
        self.levels
            .iter()
            .flat_map(|l| l.iterations.iter().map(|it| it.step.valid_fraction))
            .collect()
    }

    /// Recomputes the forward pass from the recorded inputs.
    pub fn replay(&self) -> Result<Pose6D> {
        let mut pose = self.settings.init_pose;
        for level in &self.levels {
            for _ in 0..level.iterations.len() {
                let step = gauss_newton_step(&level.sys, &level.src, &pose)?;
                pose = compose_left_with_jacobians(&Pose6D::from_vector(&step.delta), &pose).0;
            }
        }
        Ok(pose)
    }

    fn check(&self) -> Result<()> {
        let expected = self.settings.unroll_iters * self.settings.levels;
        if self.levels.len() != self.settings.levels || self.len() != expected {
            return Err(Error::TapeMismatch(format!(
                "tape holds {} iterations over {} levels, expected {expected}",
                self.len(),
                self.levels.len()
            )));
        }
        Ok(())
    }
}

/// Unrolled coarse-to-fine solve with a recorded tape.
pub fn ddvo_forward(
    reference: &ImageBuffer,
    depth: &InverseDepthMap,
    src: &ImageBuffer,
    k: &CameraIntrinsics,
    settings: &DdvoSettings,
) -> Result<(Pose6D, DdvoTape)> {
    forward(reference, depth, None, src, k, settings)
}

/// Forward pass whose Jacobian is built from `jacobian_depth` while the warp
/// uses `depth`, so the depth derivative covers the warp path only.
pub(crate) fn ddvo_forward_frozen_jacobian(
    reference: &ImageBuffer,
    depth: &InverseDepthMap,
    jacobian_depth: &InverseDepthMap,
    src: &ImageBuffer,
    k: &CameraIntrinsics,
    settings: &DdvoSettings,
) -> Result<(Pose6D, DdvoTape)> {
    forward(reference, depth, Some(jacobian_depth), src, k, settings)
}

fn forward(
    reference: &ImageBuffer,
    depth: &InverseDepthMap,
    jacobian_depth: Option<&InverseDepthMap>,
    src: &ImageBuffer,
    k: &CameraIntrinsics,
    settings: &DdvoSettings,
) -> Result<(Pose6D, DdvoTape)> {
    settings.validate()?;
    let stack = LevelStack::build(reference, depth, src, k, settings.levels)?;
    let frozen = match jacobian_depth {
        Some(d) => Some(LevelStack::build(reference, d, src, k, settings.levels)?.depths),
        None => None,
    };
    let mut pose = settings.init_pose;
    let mut levels = Vec::with_capacity(settings.levels);
    for l in (0..settings.levels).rev() {
        let jac_depth = frozen.as_ref().map_or(&stack.depths[l], |d| &d[l]);
        let mut sys = ReferenceSystem::new(&stack.refs[l], jac_depth, &stack.intrinsics[l], settings.damping)?;
        if frozen.is_some() {
            sys.depth = stack.depths[l].data().to_vec();
        }
        let src = stack.srcs[l].clone();
        let mut iterations = Vec::with_capacity(settings.unroll_iters);
        for _ in 0..settings.unroll_iters {
            let step = gauss_newton_step(&sys, &src, &pose)?;
            let (next, d_delta, d_pose) = compose_left_with_jacobians(&Pose6D::from_vector(&step.delta), &pose);
            iterations.push(IterationTape { step, d_delta, d_pose });
            pose = next;
        }
        levels.push(LevelTape { sys, src, iterations });
    }
    let tape = DdvoTape {
        settings: *settings,
        width: reference.width(),
        height: reference.height(),
        levels,
        pose,
    };
    Ok((pose, tape))
}

/// `(∂pose/∂d)ᵀ · grad_pose` over the finest inverse-depth map.
pub fn ddvo_backward(tape: &DdvoTape, grad_pose: &[f64]) -> Result<Vec<f64>> {
    if grad_pose.len() != 6 {
        return Err(Error::TapeMismatch(format!("pose gradient has {} entries, expected 6", grad_pose.len())));
    }
    tape.check()?;
    let mut p_bar = Vector6::from_column_slice(grad_pose);
    // Depth gradients per level, finest first once reversed.
    let mut per_level: Vec<Vec<f64>> = Vec::with_capacity(tape.levels.len());
    for level in tape.levels.iter().rev() {
        let (d_bar, next) = backward_level(level, p_bar, tape.settings.grad_through_jacobian);
        p_bar = next;
        per_level.push(d_bar);
    }
    // per_level runs finest to coarsest; fold each coarse gradient onto the next finer grid.
    let sizes: Vec<(usize, usize)> = tape.levels.iter().rev().map(|l| (l.sys.width, l.sys.height)).collect();
    let mut acc = per_level.pop().expect("at least one level");
    while let Some(mut finer) = per_level.pop() {
        let (coarse_w, _) = sizes[per_level.len() + 1];
        let (fine_w, fine_h) = sizes[per_level.len()];
        let spread = downsample2_adjoint(&acc, coarse_w, fine_w, fine_h);
        for (f, s) in finer.iter_mut().zip(spread) {
            *f += s;
        }
        acc = finer;
    }
    debug_assert_eq!(acc.len(), tape.width * tape.height);
    Ok(acc)
}

/// Reverse pass through one level. Returns the depth gradient at that level
/// and the gradient with respect to the level's initial pose.
fn backward_level(level: &LevelTape, mut p_bar: Vector6<f64>, through_jacobian: bool) -> (Vec<f64>, Vector6<f64>) {
    let sys = &level.sys;
    let n = sys.pixel_count();
    let k = sys.intrinsics;
    let mut d_bar = vec![0.0; n];
    let mut j_bar = if through_jacobian { vec![[0.0; 6]; n] } else { Vec::new() };
    let mut lambda_bar = 0.0;

    for it in level.iterations.iter().rev() {
        let step = &it.step;
        let delta_bar = it.d_delta.transpose() * p_bar;
        p_bar = it.d_pose.transpose() * p_bar;
        let y = step
            .hessian
            .cholesky()
            .expect("system was factorized in the forward pass")
            .solve(&delta_bar);
        // Δ = H⁻¹g  ⇒  ḡ = y, H̄ = −yΔᵀ.
        let h_bar = -(y * step.delta.transpose());
        let h_sym = h_bar + h_bar.transpose();
        lambda_bar += h_bar.trace();

        let frame = PoseFrame::new(&step.pose);
        let pixel_grad = |i: usize| -> Option<(f64, Vector6<f64>)> {
            let s = &step.samples[i];
            if !s.valid {
                return None;
            }
            let row = &sys.rows[i];
            let r_bar: f64 = (0..6).map(|c| row[c] * y[c]).sum();
            // r = a − b, so b̄ = −r̄.
            let b_bar = -r_bar;
            let g = [b_bar * s.grad[0], b_bar * s.grad[1]];
            let (_, _, point) = frame
                .pixel(&k, sys.rays[i], sys.depth[i])
                .expect("valid pixels are in front of the camera");
            Some(frame.backprop(&k, sys.rays[i], sys.depth[i], &point, g))
        };
        let contributions: Vec<Option<(f64, Vector6<f64>)>> = if n >= 8192 {
            (0..n).into_par_iter().map(pixel_grad).collect()
        } else {
            (0..n).map(pixel_grad).collect()
        };
        for (i, c) in contributions.into_iter().enumerate() {
            if let Some((gd, gp)) = c {
                d_bar[i] += gd;
                p_bar += gp;
            }
        }
        if through_jacobian {
            for (i, s) in step.samples.iter().enumerate() {
                if !s.valid {
                    continue;
                }
                let row = Vector6::from_column_slice(&sys.rows[i]);
                let add = y * s.residual + h_sym * row;
                for c in 0..6 {
                    j_bar[i][c] += add[c];
                }
            }
        }
    }

    if through_jacobian {
        let lambda_coef = sys.damping_scale.map(|c| lambda_bar * c * 2.0 / 6.0);
        for i in 0..n {
            let row = &sys.rows[i];
            let jb = &mut j_bar[i];
            if let Some(coef) = lambda_coef {
                for c in 0..6 {
                    jb[c] += coef * row[c];
                }
            }
            let x = sys.rays[i];
            let [g0, g1] = sys.gradient[i];
            d_bar[i] += jb[0] * g0 + jb[1] * g1 - jb[2] * (g0 * x.u + g1 * x.v);
        }
    }
    (d_bar, p_bar)
}

/// Dense `6 × N` Jacobian of the output pose with respect to inverse depth.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseDepthJacobian {
    pub matrix: DMatrix<f64>,
}

/// Materializes [`PoseDepthJacobian`] from six backward passes.
pub fn pose_depth_jacobian_dense(
    reference: &ImageBuffer,
    depth: &InverseDepthMap,
    src: &ImageBuffer,
    k: &CameraIntrinsics,
    settings: &DdvoSettings,
) -> Result<PoseDepthJacobian> {
    let n = reference.pixel_count();
    if n > DENSE_JACOBIAN_LIMIT {
        return Err(Error::InstanceTooLarge {
            pixels: n,
            limit: DENSE_JACOBIAN_LIMIT,
        });
    }
    let (_, tape) = ddvo_forward(reference, depth, src, k, settings)?;
    let mut matrix = DMatrix::zeros(6, n);
    for r in 0..6 {
        let mut seed = [0.0; 6];
        seed[r] = 1.0;
        let row = ddvo_backward(&tape, &seed)?;
        matrix.row_mut(r).copy_from_slice(&row);
    }
    Ok(PoseDepthJacobian { matrix })
}
