//! Training objective over an image triplet, with analytic gradients.
//!
//! Frame 2 is the reference. Frames 1 and 3 are warped toward it with `D₂`
//! and the poses `p₂₁`, `p₂₃`, and frame 2 is warped toward each of them with
//! `D₁`, `D₃` and the inverse poses. The appearance term is summed over four
//! pyramid scales; the smoothness prior only uses the two coarsest.

use nalgebra::Vector6;

use crate::ddvo::{ddvo_backward, ddvo_forward, DdvoSettings};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose6D};
use crate::imaging::{build_pyramid, downsample2_adjoint, laplacian, BilinearSample, ImageBuffer, InverseDepthMap};
use crate::warp::{pixel_rays, PoseFrame};

pub const SCALES: usize = 4;
/// Scales contributing to the smoothness prior.
pub const PRIOR_SCALES: [usize; 2] = [2, 3];
/// Means at or below this cannot be normalized.
pub const MIN_MEAN_DEPTH: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_prior: f64,
    /// Weight `α` of the SSIM term at the finest scale.
    pub ssim_weight: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_prior: 0.01,
            ssim_weight: 0.85,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_prior >= 0.0
            && (0.0..=1.0).contains(&self.ssim_weight)
            && self.ssim_c1 > 0.0
            && self.ssim_c2 > 0.0
            && self.lambda_prior.is_finite();
        if !ok {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// Sum over the four directed comparisons at each scale.
    pub appearance_per_scale: [f64; SCALES],
    /// Smoothness summed over the three depth maps at each of [`PRIOR_SCALES`], unweighted.
    pub prior_per_scale: [f64; 2],
    /// Appearance with frame 2 as the reference.
    pub forward: f64,
    /// Appearance with frames 1 and 3 as references.
    pub backward: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn appearance(&self) -> f64 {
        self.appearance_per_scale.iter().sum()
    }

    pub fn prior(&self) -> f64 {
        self.prior_per_scale.iter().sum()
    }
}

/// Three consecutive frames, their inverse depths and the poses from frame 2.
#[derive(Clone, Debug)]
pub struct Triplet {
    pub images: [ImageBuffer; 3],
    pub depths: [InverseDepthMap; 3],
    pub p21: Pose6D,
    pub p23: Pose6D,
}

impl Triplet {
    pub fn validate(&self) -> Result<()> {
        let base = &self.images[0];
        let all_match = self.images.iter().all(|i| i.same_grid(base) && i.channels() == base.channels())
            && self.depths.iter().all(|d| d.same_grid(base));
        if !all_match {
            return Err(Error::ShapeMismatch("triplet images and depths must share one grid".into()));
        }
        Ok(())
    }
}

/// Where the poses used by [`triplet_loss`] come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PoseSource {
    /// The triplet's own poses.
    Fixed,
    /// Solved from `D₂` by the differentiable solver. With `warm_start` each
    /// solve starts from the triplet's pose instead of `settings.init_pose`.
    Ddvo { settings: DdvoSettings, warm_start: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGradients {
    pub depths: [Vec<f64>; 3],
    /// Zero unless the poses are [`PoseSource::Fixed`].
    pub p21: Vector6<f64>,
    pub p23: Vector6<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletLoss {
    pub breakdown: LossBreakdown,
    pub gradients: LossGradients,
    /// Poses the appearance term was evaluated with.
    pub p21: Pose6D,
    pub p23: Pose6D,
}

/// Divides an inverse-depth map by its mean.
pub fn normalize_inverse_depth(depth: &InverseDepthMap) -> Result<InverseDepthMap> {
    let n = depth.pixel_count() as f64;
    let sum: f64 = depth.data().iter().sum();
    if !(sum / n > MIN_MEAN_DEPTH) {
        return Err(Error::DegenerateDepth(format!("mean inverse depth {} cannot be normalized", sum / n)));
    }
    let scale = n / sum;
    InverseDepthMap::new(depth.width(), depth.height(), depth.data().iter().map(|d| d * scale).collect())
}

/// Gradient with respect to the raw map given the gradient at the normalized one.
pub fn normalize_inverse_depth_backward(depth: &InverseDepthMap, grad: &[f64]) -> Vec<f64> {
    let n = depth.pixel_count() as f64;
    let sum: f64 = depth.data().iter().sum();
    let scale = n / sum;
    // Σ g·η / N with η = d·N/S.
    let mean_ge = grad.iter().zip(depth.data()).map(|(g, d)| g * d * scale).sum::<f64>() / n;
    grad.iter().map(|g| scale * (g - mean_ge)).collect()
}

fn require_3x3(img: &ImageBuffer) -> Result<()> {
    if img.width() < 3 || img.height() < 3 {
        return Err(Error::GridTooSmall {
            width: img.width(),
            height: img.height(),
            min_width: 3,
            min_height: 3,
        });
    }
    Ok(())
}

fn channel(img: &ImageBuffer, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(img.channels()).copied().collect()
}

/// Sum over the clipped 3×3 neighbourhood of every pixel.
fn box3(values: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    s += values[yy * w + xx];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// SSIM map of one channel with the partials needed for its adjoint.
struct SsimPlane {
    value: Vec<f64>,
    count: Vec<f64>,
    d_mu_b: Vec<f64>,
    d_ebb: Vec<f64>,
    d_eab: Vec<f64>,
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, c1: f64, c2: f64) -> SsimPlane {
    let count = box3(&vec![1.0; w * h], w, h);
    let sa = box3(a, w, h);
    let sb = box3(b, w, h);
    let saa = box3(&a.iter().map(|v| v * v).collect::<Vec<_>>(), w, h);
    let sbb = box3(&b.iter().map(|v| v * v).collect::<Vec<_>>(), w, h);
    let sab = box3(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>(), w, h);
    let n = w * h;
    let mut out = SsimPlane {
        value: vec![0.0; n],
        count,
        d_mu_b: vec![0.0; n],
        d_ebb: vec![0.0; n],
        d_eab: vec![0.0; n],
    };
    for i in 0..n {
        let m = out.count[i];
        let (ma, mb) = (sa[i] / m, sb[i] / m);
        let (eaa, ebb, eab) = (saa[i] / m, sbb[i] / m, sab[i] / m);
        let a1 = 2.0 * ma * mb + c1;
        let a2 = 2.0 * (eab - ma * mb) + c2;
        let b1 = ma * ma + mb * mb + c1;
        let b2 = (eaa - ma * ma) + (ebb - mb * mb) + c2;
        let s = a1 * a2 / (b1 * b2);
        out.value[i] = s;
        out.d_mu_b[i] = (2.0 * ma * a2 - 2.0 * ma * a1) / (b1 * b2) - s * (2.0 * mb / b1 - 2.0 * mb / b2);
        out.d_eab[i] = 2.0 * a1 / (b1 * b2);
        out.d_ebb[i] = -s / b2;
    }
    out
}

/// Per-pixel SSIM over clipped 3×3 windows, one output channel per input channel.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, weights: &LossWeights) -> Result<ImageBuffer> {
    if !a.same_grid(b) || a.channels() != b.channels() {
        return Err(Error::ShapeMismatch("SSIM inputs differ in shape".into()));
    }
    require_3x3(a)?;
    let (w, h, k) = (a.width(), a.height(), a.channels());
    let mut out = ImageBuffer::zeros(w, h, k);
    for c in 0..k {
        let plane = ssim_plane(&channel(a, c), &channel(b, c), w, h, weights.ssim_c1, weights.ssim_c2);
        for (i, v) in plane.value.into_iter().enumerate() {
            out.set(i % w, i / w, c, v);
        }
    }
    Ok(out)
}

/// Gradient of `Σᵢ gᵢ·SSIMᵢ` with respect to `b`.
fn ssim_plane_adjoint(plane: &SsimPlane, a: &[f64], b: &[f64], g: &[f64], w: usize, h: usize) -> Vec<f64> {
    let scaled = |d: &[f64]| -> Vec<f64> { (0..w * h).map(|i| g[i] * d[i] / plane.count[i]).collect() };
    let mu = box3(&scaled(&plane.d_mu_b), w, h);
    let bb = box3(&scaled(&plane.d_ebb), w, h);
    let ab = box3(&scaled(&plane.d_eab), w, h);
    (0..w * h).map(|j| mu[j] + 2.0 * b[j] * bb[j] + a[j] * ab[j]).collect()
}

/// Source image sampled at the warped reference pixels.
struct Warped {
    values: ImageBuffer,
    valid: Vec<bool>,
    samples: Vec<Option<(BilinearSample, nalgebra::Vector3<f64>)>>,
    count: usize,
}

fn warp_source(
    reference: &ImageBuffer,
    src: &ImageBuffer,
    depth: &InverseDepthMap,
    frame: &PoseFrame,
    k: &CameraIntrinsics,
    rays: &[crate::geometry::NormalizedPoint],
) -> Warped {
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    let mut values = reference.clone();
    let mut valid = vec![false; w * h];
    let mut samples = vec![None; w * h];
    let mut count = 0;
    for i in 0..w * h {
        let Some((u, v, point)) = frame.pixel(k, rays[i], depth.data()[i]) else { continue };
        let s = BilinearSample::locate(w, h, u, v);
        if !s.in_view {
            continue;
        }
        for c in 0..ch {
            values.set(i % w, i / w, c, s.value(src, c));
        }
        valid[i] = true;
        samples[i] = Some((s, point));
        count += 1;
    }
    Warped {
        values,
        valid,
        samples,
        count,
    }
}

/// Photometric dissimilarity between `reference` and `src` warped into it.
#[derive(Clone, Debug, PartialEq)]
pub struct Appearance {
    pub loss: f64,
    pub grad_depth: Vec<f64>,
    pub grad_pose: Vector6<f64>,
    pub valid_fraction: f64,
}

/// Appearance term of one directed comparison at one scale. All inputs,
/// including `k`, describe the grid of that scale; `scale_index` 0 adds SSIM.
pub fn appearance_loss(
    reference: &ImageBuffer,
    src: &ImageBuffer,
    depth: &InverseDepthMap,
    p: &Pose6D,
    k: &CameraIntrinsics,
    scale_index: usize,
    weights: &LossWeights,
) -> Result<Appearance> {
    if !reference.same_grid(src) || !reference.same_grid(depth) || reference.channels() != src.channels() {
        return Err(Error::ShapeMismatch("appearance inputs differ in shape".into()));
    }
    if scale_index >= SCALES {
        return Err(Error::Config(format!("scale index {scale_index} is not below {SCALES}")));
    }
    let (w, h, ch) = (reference.width(), reference.height(), reference.channels());
    let n = w * h;
    let frame = PoseFrame::new(p);
    let rays = pixel_rays(k, w, h);
    let warped = warp_source(reference, src, depth, &frame, k, &rays);
    let valid_fraction = warped.count as f64 / n as f64;
    if valid_fraction < crate::dvo::MIN_VALID_FRACTION {
        return Err(Error::DegenerateOverlap {
            fraction: valid_fraction,
        });
    }
    let norm = 1.0 / (warped.count * ch) as f64;
    let alpha = if scale_index == 0 { weights.ssim_weight } else { 0.0 };
    let l1_weight = 1.0 - alpha;

    // Gradient with respect to the warped values, channel-interleaved.
    let mut b_bar = vec![0.0; n * ch];
    let mut loss = 0.0;
    for c in 0..ch {
        let a = channel(reference, c);
        let b = channel(&warped.values, c);
        let plane = (alpha > 0.0).then(|| {
            require_3x3(reference)?;
            Ok::<_, Error>(ssim_plane(&a, &b, w, h, weights.ssim_c1, weights.ssim_c2))
        });
        let plane = plane.transpose()?;
        let mut s_bar = vec![0.0; n];
        for i in (0..n).filter(|&i| warped.valid[i]) {
            let diff = b[i] - a[i];
            loss += l1_weight * diff.abs() * norm;
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            b_bar[i * ch + c] += l1_weight * sign * norm;
            if let Some(plane) = &plane {
                loss += alpha * (1.0 - plane.value[i]) / 2.0 * norm;
                s_bar[i] = -alpha / 2.0 * norm;
            }
        }
        if let Some(plane) = &plane {
            for (j, g) in ssim_plane_adjoint(plane, &a, &b, &s_bar, w, h).into_iter().enumerate() {
                b_bar[j * ch + c] += g;
            }
        }
    }

    let mut grad_depth = vec![0.0; n];
    let mut grad_pose = Vector6::zeros();
    for i in 0..n {
        let Some((s, point)) = &warped.samples[i] else { continue };
        let mut g = [0.0; 2];
        for c in 0..ch {
            let gb = b_bar[i * ch + c];
            if gb != 0.0 {
                let sg = s.gradient(src, c);
                g[0] += gb * sg[0];
                g[1] += gb * sg[1];
            }
        }
        let (gd, gp) = frame.backprop(k, rays[i], depth.data()[i], point, g);
        grad_depth[i] = gd;
        grad_pose += gp;
    }
    Ok(Appearance {
        loss,
        grad_depth,
        grad_pose,
        valid_fraction,
    })
}

/// Edge-aware second-order smoothness and its gradient.
pub fn smoothness_prior(depth: &InverseDepthMap, image: &ImageBuffer) -> Result<(f64, Vec<f64>)> {
    if !depth.same_grid(image) {
        return Err(Error::ShapeMismatch("depth and image grids differ".into()));
    }
    require_3x3(image)?;
    let (w, h) = (depth.width(), depth.height());
    let lap = laplacian(image)?;
    let d = depth.data();
    let at = |x: usize, y: usize| d[y * w + x];
    let norm = 1.0 / ((w - 2) * (h - 2)) as f64;
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let mut loss = 0.0;
    let mut grad = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let wt = (-lap.data()[y * w + x]).exp() * norm;
            let dxx = at(x - 1, y) - 2.0 * at(x, y) + at(x + 1, y);
            let dyy = at(x, y - 1) - 2.0 * at(x, y) + at(x, y + 1);
            let dxy = (at(x + 1, y + 1) - at(x + 1, y - 1) - at(x - 1, y + 1) + at(x - 1, y - 1)) / 4.0;
            loss += wt * (dxx.abs() + dxy.abs() + dyy.abs());
            let (gxx, gyy, gxy) = (wt * sign(dxx), wt * sign(dyy), wt * sign(dxy) / 4.0);
            grad[y * w + x - 1] += gxx;
            grad[y * w + x + 1] += gxx;
            grad[(y - 1) * w + x] += gyy;
            grad[(y + 1) * w + x] += gyy;
            grad[y * w + x] -= 2.0 * (gxx + gyy);
            grad[(y + 1) * w + x + 1] += gxy;
            grad[(y - 1) * w + x + 1] -= gxy;
            grad[(y + 1) * w + x - 1] -= gxy;
            grad[(y - 1) * w + x - 1] += gxy;
        }
    }
    Ok((loss, grad))
}

/// Depth pyramid by area averaging, finest first.
fn depth_pyramid(depth: &InverseDepthMap) -> Result<Vec<InverseDepthMap>> {
    build_pyramid(depth.image(), SCALES)?
        .levels
        .into_iter()
        .map(InverseDepthMap::from_image)
        .collect()
}

/// Pulls per-scale gradients back onto the finest grid.
fn collapse_pyramid_grad(mut grads: Vec<Vec<f64>>, sizes: &[(usize, usize)]) -> Vec<f64> {
    let mut acc = grads.pop().expect("non-empty pyramid");
    while let Some(mut finer) = grads.pop() {
        let (coarse_w, _) = sizes[grads.len() + 1];
        let (fine_w, fine_h) = sizes[grads.len()];
        for (f, s) in finer.iter_mut().zip(downsample2_adjoint(&acc, coarse_w, fine_w, fine_h)) {
            *f += s;
        }
        acc = finer;
    }
    acc
}

/// Full objective: four-scale bidirectional appearance plus the weighted prior.
pub fn triplet_loss(
    t: &Triplet,
    k: &CameraIntrinsics,
    weights: &LossWeights,
    source: &PoseSource,
) -> Result<TripletLoss> {
    t.validate()?;
    weights.validate()?;
    let images = t
        .images
        .iter()
        .map(|img| build_pyramid(img, SCALES).map(|p| p.levels))
        .collect::<Result<Vec<_>>>()?;
    let depths = t.depths.iter().map(depth_pyramid).collect::<Result<Vec<_>>>()?;
    let sizes: Vec<(usize, usize)> = depths[0].iter().map(|d| (d.width(), d.height())).collect();

    let mut tapes = None;
    let (p21, p23) = match source {
        PoseSource::Fixed => (t.p21, t.p23),
        PoseSource::Ddvo { settings, warm_start } => {
            let solve = |src: &ImageBuffer, init: Pose6D| {
                let s = DdvoSettings {
                    init_pose: if *warm_start { init } else { settings.init_pose },
                    ..*settings
                };
                ddvo_forward(&t.images[1], &t.depths[1], src, k, &s)
            };
            let (p21, tape21) = solve(&t.images[0], t.p21)?;
            let (p23, tape23) = solve(&t.images[2], t.p23)?;
            tapes = Some((tape21, tape23));
            (p21, p23)
        }
    };
    let (p12, jac12) = p21.inverse_with_jacobian();
    let (p32, jac32) = p23.inverse_with_jacobian();

    let mut breakdown = LossBreakdown::default();
    let mut depth_grads: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| sizes.iter().map(|(w, h)| vec![0.0; w * h]).collect())
        .collect();
    let mut g21 = Vector6::zeros();
    let mut g23 = Vector6::zeros();
    let mut g12 = Vector6::zeros();
    let mut g32 = Vector6::zeros();

    for s in 0..SCALES {
        let ks = k.at_level(s);
        // (reference frame, source frame, pose, pose gradient slot)
        let pairs: [(usize, usize, &Pose6D, &mut Vector6<f64>); 4] =
            [(1, 0, &p21, &mut g21), (1, 2, &p23, &mut g23), (0, 1, &p12, &mut g12), (2, 1, &p32, &mut g32)];
        for (idx, (r, src, pose, slot)) in pairs.into_iter().enumerate() {
            let a = appearance_loss(&images[r][s], &images[src][s], &depths[r][s], pose, &ks, s, weights)?;
            breakdown.appearance_per_scale[s] += a.loss;
            if idx < 2 {
                breakdown.forward += a.loss;
            } else {
                breakdown.backward += a.loss;
            }
            for (g, v) in depth_grads[r][s].iter_mut().zip(&a.grad_depth) {
                *g += v;
            }
            *slot += a.grad_pose;
        }
    }
    for (slot, &s) in PRIOR_SCALES.iter().enumerate() {
        for f in 0..3 {
            let (loss, grad) = smoothness_prior(&depths[f][s], &images[f][s])?;
            breakdown.prior_per_scale[slot] += loss;
            for (g, v) in depth_grads[f][s].iter_mut().zip(&grad) {
                *g += weights.lambda_prior * v;
            }
        }
    }
    breakdown.total = breakdown.appearance() + weights.lambda_prior * breakdown.prior();

    g21 += jac12.transpose() * g12;
    g23 += jac32.transpose() * g32;
    let mut grads: Vec<Vec<f64>> = depth_grads.into_iter().map(|g| collapse_pyramid_grad(g, &sizes)).collect();
    let (g21, g23) = match tapes {
        None => (g21, g23),
        Some((tape21, tape23)) => {
            for (tape, g) in [(&tape21, &g21), (&tape23, &g23)] {
                let through = ddvo_backward(tape, g.as_slice())?;
                for (a, b) in grads[1].iter_mut().zip(through) {
                    *a += b;
                }
            }
            (Vector6::zeros(), Vector6::zeros())
        }
    };
    let [d1, d2, d3]: [Vec<f64>; 3] = grads.try_into().expect("three frames");
    Ok(TripletLoss {
        breakdown,
        gradients: LossGradients {
            depths: [d1, d2, d3],
            p21: g21,
            p23: g23,
        },
        p21,
        p23,
    })
}
