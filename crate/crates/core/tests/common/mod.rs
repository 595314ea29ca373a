//! Property suites shared by the integration tests. Each returns `Err` with a
//! description of the first violation.

#![allow(dead_code)]

use ddvo::ddvo::{ddvo_backward, ddvo_forward, DdvoSettings};
use ddvo::dvo::{solve_coarse_to_fine, DvoSettings};
use ddvo::geometry::{
    compose_left, rodrigues, warp_jacobian_identity, warp_point, CameraIntrinsics, NormalizedPoint, Pose6D,
};
use ddvo::gradcheck::solver_instance;
use ddvo::imaging::{
    build_pyramid, downsample2, laplacian, sample_bilinear, sample_bilinear_grad, ImageBuffer, InverseDepthMap,
};
use ddvo::losses::{
    appearance_loss, normalize_inverse_depth, smoothness_prior, ssim, triplet_loss, LossWeights, PoseSource, Triplet,
};
use ddvo::metrics::{ate, depth_metrics, Trajectory};
use ddvo::synth::{random_motion, Scene, SceneKind, SceneSpec};
use ddvo::training::{bundled_triplet, train_triplet, TrainConfig, TrainMode};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_omega(r: &mut ChaCha8Rng, max: f64) -> Vector3<f64> {
    Vector3::new(r.gen_range(-max..max), r.gen_range(-max..max), r.gen_range(-max..max))
}

pub const KINDS: [SceneKind; 3] = [SceneKind::TwoPlane, SceneKind::SmoothHeightField, SceneKind::TexturedPlane];

/// One of the small-motion pose-recovery pairs: 160×128, ‖t‖ = 1% of the
/// mean scene depth, rotation up to 0.5°.
pub fn recovery_pair(seed: u64) -> (ImageBuffer, InverseDepthMap, ImageBuffer, CameraIntrinsics, Pose6D) {
    let spec = SceneSpec::new(KINDS[(seed % 3) as usize], seed, 160, 128, (2.0, 4.0));
    let scene = Scene::new(spec).unwrap();
    let mut r = rng(1000 + seed);
    let truth = random_motion(&mut r, 0.03, 0.5f64.to_radians());
    let view = scene.render_view(&truth);
    (scene.reference_image(), scene.reference_depth(), view.image, scene.spec.intrinsics, truth)
}

// Geometry.

pub fn rodrigues_orthonormal() -> Check {
    let mut r = rng(1);
    for _ in 0..10_000 {
        let w = random_omega(&mut r, 3.0);
        let m = rodrigues(&w).0;
        let err = (m.transpose() * m - Matrix3::identity()).amax();
        ensure(err < 1e-10 && (m.determinant() - 1.0).abs() < 1e-10, || format!("ω = {w:?}: RᵀR error {err}"))?;
        let back = (m * rodrigues(&-w).0 - Matrix3::identity()).amax();
        ensure(back < 1e-10, || format!("R(ω)R(−ω) error {back}"))?;
    }
    Ok(())
}

pub fn warp_identity_exact() -> Check {
    let mut r = rng(2);
    for _ in 0..1000 {
        let x = NormalizedPoint::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        let d = r.gen_range(0.0..5.0);
        let y = warp_point(x, &Pose6D::identity(), d).map_err(|e| e.to_string())?;
        ensure(y == x, || format!("identity moved {x:?} to {y:?}"))?;
    }
    Ok(())
}

pub fn warp_jacobian_fd() -> Check {
    let mut r = rng(3);
    let h = 1e-7;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = NormalizedPoint::new(r.gen_range(-0.8..0.8), r.gen_range(-0.8..0.8));
        let d = r.gen_range(0.05..2.0);
        let j = warp_jacobian_identity(x, d);
        for c in 0..6 {
            let mut e = Vector6::zeros();
            e[c] = h;
            let p = warp_point(x, &Pose6D::from_vector(&e), d).unwrap();
            let m = warp_point(x, &Pose6D::from_vector(&-e), d).unwrap();
            worst = worst.max(((p.u - m.u) / (2.0 * h) - j[(0, c)]).abs());
            worst = worst.max(((p.v - m.v) / (2.0 * h) - j[(1, c)]).abs());
        }
    }
    ensure(worst < 1e-6, || format!("max abs error {worst}"))
}

pub fn compose_associative() -> Check {
    let mut r = rng(4);
    let pose = |r: &mut ChaCha8Rng| {
        Pose6D::new(
            Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)),
            random_omega(r, 1.0),
        )
    };
    for _ in 0..1000 {
        let (a, b, c) = (pose(&mut r), pose(&mut r), pose(&mut r));
        let composed = compose_left(&a, &compose_left(&b, &c)).to_matrix();
        let chained: Matrix4<f64> = a.to_matrix() * b.to_matrix() * c.to_matrix();
        let err = (composed - chained).amax();
        ensure(err < 1e-9, || format!("associativity error {err}"))?;
    }
    Ok(())
}

// Imaging.

fn random_image(r: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, c, |_, _, _| r.gen_range(0.0..1.0))
}

pub fn bilinear_lattice_exact() -> Check {
    let mut r = rng(5);
    let img = random_image(&mut r, 13, 9, 3);
    for y in 0..9 {
        for x in 0..13 {
            let (v, inside) = sample_bilinear(&img, x as f64, y as f64);
            for (c, value) in v.iter().enumerate() {
                ensure(inside && *value == img.get(x, y, c), || format!("lattice ({x},{y}) channel {c}"))?;
            }
        }
    }
    Ok(())
}

pub fn bilinear_grad_fd() -> Check {
    let mut r = rng(6);
    let img = random_image(&mut r, 20, 16, 1);
    let h = 1e-7;
    for _ in 0..1000 {
        // Keep clear of cell edges, where the sample is not differentiable.
        let x = r.gen_range(0..18) as f64 + r.gen_range(0.01..0.99);
        let y = r.gen_range(0..14) as f64 + r.gen_range(0.01..0.99);
        let g = sample_bilinear_grad(&img, x, y)[0];
        let fx = (sample_bilinear(&img, x + h, y).0[0] - sample_bilinear(&img, x - h, y).0[0]) / (2.0 * h);
        let fy = (sample_bilinear(&img, x, y + h).0[0] - sample_bilinear(&img, x, y - h).0[0]) / (2.0 * h);
        ensure((fx - g[0]).abs() < 1e-6 && (fy - g[1]).abs() < 1e-6, || {
            format!("({x},{y}): {g:?} vs ({fx},{fy})")
        })?;
    }
    Ok(())
}

pub fn downsample_mean() -> Check {
    let mut r = rng(7);
    for (w, h) in [(16, 12), (8, 8), (30, 2)] {
        let img = random_image(&mut r, w, h, 1);
        let small = downsample2(&img).map_err(|e| e.to_string())?;
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                let block = (img.get(2 * x, 2 * y, 0)
                    + img.get(2 * x + 1, 2 * y, 0)
                    + img.get(2 * x, 2 * y + 1, 0)
                    + img.get(2 * x + 1, 2 * y + 1, 0))
                    / 4.0;
                ensure((small.get(x, y, 0) - block).abs() < 1e-15, || format!("block ({x},{y})"))?;
            }
        }
        ensure((small.mean() - img.mean()).abs() < 1e-12, || format!("{w}x{h} mean changed"))?;
    }
    Ok(())
}

pub fn laplacian_affine_zero() -> Check {
    let img = ImageBuffer::from_fn(12, 9, 1, |x, y, _| 0.3 + 0.05 * x as f64 - 0.02 * y as f64);
    let lap = laplacian(&img).map_err(|e| e.to_string())?;
    for y in 1..8 {
        for x in 1..11 {
            ensure(lap.get(x, y, 0).abs() < 1e-12, || format!("interior ({x},{y}) = {}", lap.get(x, y, 0)))?;
        }
    }
    Ok(())
}

pub fn pyramid_floor_halving() -> Check {
    for (w, h) in [(160, 128), (81, 63), (37, 29)] {
        let p = build_pyramid(&ImageBuffer::zeros(w, h, 1), 4).map_err(|e| e.to_string())?;
        let (mut ew, mut eh) = (w, h);
        for l in 0..4 {
            let lv = p.level(l);
            ensure(lv.width() == ew && lv.height() == eh, || {
                format!("{w}x{h} level {l}: {}x{}", lv.width(), lv.height())
            })?;
            ew /= 2;
            eh /= 2;
        }
    }
    Ok(())
}

// Solvers.

/// Fraction of non-increasing consecutive residuals across the pair suite.
pub fn residual_monotone_fraction(pairs: u64) -> f64 {
    let (mut good, mut total) = (0usize, 0usize);
    for seed in 0..pairs {
        let (reference, depth, src, k, _) = recovery_pair(seed);
        let r = solve_coarse_to_fine(&reference, &depth, &src, &k, Pose6D::identity(), &DvoSettings::default()).unwrap();
        for level in &r.residual_history {
            for w in level.windows(2) {
                total += 1;
                if w[1] <= w[0] {
                    good += 1;
                }
            }
        }
    }
    good as f64 / total as f64
}

pub fn residual_monotone() -> Check {
    let f = residual_monotone_fraction(20);
    ensure(f >= 0.95, || format!("only {:.1}% of steps were non-increasing", 100.0 * f))
}

pub fn dvo_determinism() -> Check {
    let (reference, depth, src, k, _) = recovery_pair(4);
    let a = solve_coarse_to_fine(&reference, &depth, &src, &k, Pose6D::identity(), &DvoSettings::default()).unwrap();
    let b = solve_coarse_to_fine(&reference, &depth, &src, &k, Pose6D::identity(), &DvoSettings::default()).unwrap();
    ensure(a == b, || "two identical solves differ".into())
}

pub fn warm_start_dominates() -> Check {
    for seed in 0..20 {
        let (reference, depth, src, k, truth) = recovery_pair(seed);
        let s = DvoSettings::default();
        let cold = solve_coarse_to_fine(&reference, &depth, &src, &k, Pose6D::identity(), &s).unwrap();
        let warm = solve_coarse_to_fine(&reference, &depth, &src, &k, truth, &s).unwrap();
        ensure(warm.final_residual <= cold.final_residual * (1.0 + 1e-9), || {
            format!("seed {seed}: warm {} > cold {}", warm.final_residual, cold.final_residual)
        })?;
    }
    Ok(())
}

pub fn ddvo_zero_cases() -> Check {
    let inst = solver_instance(16, 16, 9);
    let settings = DdvoSettings {
        unroll_iters: 2,
        levels: 1,
        ..Default::default()
    };
    let (_, tape) =
        ddvo_forward(&inst.reference, &inst.depth, &inst.src, &inst.intrinsics, &settings).map_err(|e| e.to_string())?;
    let zero_seed = ddvo_backward(&tape, &[0.0; 6]).map_err(|e| e.to_string())?;
    ensure(zero_seed.iter().all(|&g| g == 0.0), || "zero seed gave a nonzero gradient".into())?;

    let flat = ImageBuffer::from_fn(16, 16, 1, |_, _, _| 0.4);
    let damped = DdvoSettings {
        damping: ddvo::dvo::Damping::Absolute(1.0),
        ..settings
    };
    let (_, tape) = ddvo_forward(&flat, &inst.depth, &flat, &inst.intrinsics, &damped).map_err(|e| e.to_string())?;
    let g = ddvo_backward(&tape, &[1.0; 6]).map_err(|e| e.to_string())?;
    ensure(g.iter().all(|&v| v == 0.0), || "textureless images gave a nonzero gradient".into())?;

    let warp_only = DdvoSettings {
        grad_through_jacobian: false,
        ..settings
    };
    let (_, tape) = ddvo_forward(&inst.reference, &inst.depth, &inst.reference, &inst.intrinsics, &warp_only)
        .map_err(|e| e.to_string())?;
    let g = ddvo_backward(&tape, &[1.0; 6]).map_err(|e| e.to_string())?;
    ensure(g.iter().all(|&v| v == 0.0), || "zero residual gave a nonzero warp-path gradient".into())
}

pub fn ddvo_determinism() -> Check {
    let inst = solver_instance(24, 20, 11);
    let settings = DdvoSettings {
        levels: 2,
        ..Default::default()
    };
    let run = || {
        let (p, tape) = ddvo_forward(&inst.reference, &inst.depth, &inst.src, &inst.intrinsics, &settings).unwrap();
        (p, ddvo_backward(&tape, &[0.3, -1.0, 0.2, 2.0, 0.5, -0.7]).unwrap())
    };
    ensure(run() == run(), || "forward/backward not bit-reproducible".into())
}

// Losses.

fn loss_triplet(seed: u64) -> (Triplet, CameraIntrinsics) {
    let s = Scene::new(SceneSpec::new(SceneKind::TwoPlane, seed, 32, 32, (2.0, 4.0))).unwrap();
    let p21 = Pose6D::new(Vector3::new(-0.04, 0.01, 0.02), Vector3::new(0.0, 0.01, 0.005));
    let p23 = Pose6D::new(Vector3::new(0.04, -0.01, -0.02), Vector3::new(0.002, -0.01, 0.0));
    let t = s.triplet(p21, p23);
    let mut r = rng(seed);
    let depths = t.depths.map(|d| {
        InverseDepthMap::new(32, 32, d.data().iter().map(|v| v * r.gen_range(0.8..1.2)).collect()).unwrap()
    });
    (
        Triplet {
            images: t.images,
            depths,
            p21: Pose6D::new(p21.t * 1.1, p21.omega),
            p23: Pose6D::new(p23.t * 0.9, p23.omega),
        },
        t.intrinsics,
    )
}

fn scaled(d: &InverseDepthMap, s: f64) -> InverseDepthMap {
    InverseDepthMap::new(d.width(), d.height(), d.data().iter().map(|v| v * s).collect()).unwrap()
}

pub fn appearance_rescale_invariant() -> Check {
    let (t, k) = loss_triplet(3);
    let w = LossWeights::default();
    for s in [0.5, 0.3, 2.7] {
        for scale in 0..2 {
            let a = appearance_loss(&t.images[1], &t.images[0], &t.depths[1], &t.p21, &k, scale, &w).unwrap().loss;
            let p = Pose6D::new(t.p21.t / s, t.p21.omega);
            let b = appearance_loss(&t.images[1], &t.images[0], &scaled(&t.depths[1], s), &p, &k, scale, &w)
                .unwrap()
                .loss;
            ensure((a - b).abs() < 1e-10, || format!("s = {s}, scale {scale}: {a} vs {b}"))?;
        }
    }
    Ok(())
}

pub fn smoothness_homogeneous() -> Check {
    let (t, _) = loss_triplet(4);
    let (base, _) = smoothness_prior(&t.depths[1], &t.images[1]).unwrap();
    for s in [0.1, 0.5, 3.0] {
        let (v, _) = smoothness_prior(&scaled(&t.depths[1], s), &t.images[1]).unwrap();
        ensure((v - s * base).abs() <= 1e-12 * v.abs().max(1.0), || format!("s = {s}: {v} vs {}", s * base))?;
    }
    Ok(())
}

fn normalized_total(t: &Triplet, k: &CameraIntrinsics, s: f64) -> f64 {
    let depths = [
        normalize_inverse_depth(&scaled(&t.depths[0], s)).unwrap(),
        normalize_inverse_depth(&scaled(&t.depths[1], s)).unwrap(),
        normalize_inverse_depth(&scaled(&t.depths[2], s)).unwrap(),
    ];
    let n = Triplet { depths, ..t.clone() };
    triplet_loss(&n, k, &LossWeights::default(), &PoseSource::Fixed).unwrap().breakdown.total
}

pub fn normalization_invariance() -> Check {
    let (t, k) = loss_triplet(5);
    let n = normalize_inverse_depth(&t.depths[1]).unwrap();
    ensure((n.mean() - 1.0).abs() < 1e-12, || format!("normalized mean {}", n.mean()))?;
    let base = normalized_total(&t, &k, 1.0);
    for s in [0.25, 4.0, 1024.0] {
        let v = normalized_total(&t, &k, s);
        ensure(v == base, || format!("power-of-two s = {s}: {v} vs {base}"))?;
    }
    for s in [0.37, 3.3, 1e3] {
        let v = normalized_total(&t, &k, s);
        ensure((v - base).abs() <= 1e-12 * base, || format!("s = {s}: {v} vs {base}"))?;
    }
    Ok(())
}

pub fn loss_terms_nonnegative() -> Check {
    for seed in 0..5 {
        let (t, k) = loss_triplet(10 + seed);
        let b = triplet_loss(&t, &k, &LossWeights::default(), &PoseSource::Fixed).unwrap().breakdown;
        let terms = b.appearance_per_scale.iter().chain(&b.prior_per_scale).chain([&b.forward, &b.backward, &b.total]);
        for v in terms {
            ensure(*v >= 0.0, || format!("negative term in {b:?}"))?;
        }
        let s = ssim(&t.images[1], &t.images[0], &LossWeights::default()).unwrap();
        ensure(s.data().iter().all(|v| (-1.0..=1.0).contains(v)), || "SSIM outside [−1, 1]".into())?;
    }
    Ok(())
}

pub fn rescaling_lowers_total() -> Check {
    let (t, k) = loss_triplet(6);
    let w = LossWeights::default();
    let base = triplet_loss(&t, &k, &w, &PoseSource::Fixed).unwrap().breakdown;
    ensure(base.prior() > 0.0, || "prior vanished".into())?;
    let s = 0.5;
    let moved = Triplet {
        depths: [scaled(&t.depths[0], s), scaled(&t.depths[1], s), scaled(&t.depths[2], s)],
        p21: Pose6D::new(t.p21.t / s, t.p21.omega),
        p23: Pose6D::new(t.p23.t / s, t.p23.omega),
        ..t.clone()
    };
    let b = triplet_loss(&moved, &k, &w, &PoseSource::Fixed).unwrap().breakdown;
    ensure(b.total < base.total && (b.appearance() - base.appearance()).abs() < 1e-10, || {
        format!("{base:?} -> {b:?}")
    })
}

// Training.

pub fn training_reproducible() -> Check {
    let inputs = bundled_triplet();
    for mode in [TrainMode::PoseParam, TrainMode::Ddvo] {
        let cfg = TrainConfig {
            steps: 5,
            ..TrainConfig::demo(mode, true)
        };
        let a = train_triplet(&inputs, &cfg).unwrap();
        let b = train_triplet(&inputs, &cfg).unwrap();
        ensure(a == b, || format!("{mode} runs differ"))?;
    }
    Ok(())
}

pub fn trace_invariants() -> Check {
    let inputs = bundled_triplet();
    for mode in TrainMode::ALL {
        let cfg = TrainConfig {
            steps: 4,
            warmup_steps: 2,
            ..TrainConfig::demo(mode, true)
        };
        let t = train_triplet(&inputs, &cfg).unwrap();
        ensure(t.records.len() == 4 && t.halted_at.is_none(), || format!("{mode}: {} records", t.records.len()))?;
        for (i, r) in t.records.iter().enumerate() {
            let ok = r.step == i
                && r.total >= 0.0
                && r.appearance >= 0.0
                && r.prior >= 0.0
                && (r.total - (r.appearance + cfg.weights.lambda_prior * r.prior)).abs() < 1e-12
                && (r.mean_inv_depth - 1.0).abs() < 1e-9
                && r.gt_error.is_some_and(|e| e >= 0.0);
            ensure(ok, || format!("{mode} step {i}: {r:?}"))?;
        }
    }
    Ok(())
}

// Synthesis.

pub fn render_round_trip() -> Check {
    for seed in 0..3 {
        let (reference, depth, src, k, truth) = recovery_pair(seed);
        let r = solve_coarse_to_fine(&reference, &depth, &src, &k, Pose6D::identity(), &DvoSettings::default()).unwrap();
        let (deg, rel) = ddvo::dvo::pose_errors(&r.pose, &truth);
        ensure(deg < 0.05 && rel < 0.02, || format!("seed {seed}: {deg}° / {rel}"))?;
    }
    Ok(())
}

pub fn render_deterministic_and_masked() -> Check {
    let spec = SceneSpec::new(SceneKind::SmoothHeightField, 8, 48, 40, (2.0, 4.0));
    let a = Scene::new(spec.clone()).unwrap();
    let b = Scene::new(spec).unwrap();
    let p = Pose6D::new(Vector3::new(0.3, 0.0, 0.0), Vector3::new(0.0, 0.05, 0.0));
    let (va, vb) = (a.render_view(&p), b.render_view(&p));
    ensure(va.image == vb.image && va.mask == vb.mask, || "renders differ".into())?;
    // A large sideways motion must leave part of the view unseen from the reference.
    ensure(va.mask.count() < va.mask.data.len() && va.mask.count() > 0, || "mask did not flag the border".into())
}

// Metrics.

pub fn metric_scale_invariance() -> Check {
    let mut r = rng(12);
    let gt: Vec<f64> = (0..200).map(|_| r.gen_range(1.0..80.0)).collect();
    let pred: Vec<f64> = gt.iter().map(|g| g * r.gen_range(0.7..1.4)).collect();
    let base = depth_metrics(&pred, &gt, None, true, None).unwrap();
    for s in [0.5, 2.0, 8.0] {
        let p: Vec<f64> = pred.iter().map(|v| v * s).collect();
        let m = depth_metrics(&p, &gt, None, true, None).unwrap();
        ensure(m == base, || format!("s = {s}: {m:?} vs {base:?}"))?;
    }
    for _ in 0..50 {
        let p: Vec<f64> = gt.iter().map(|g| g * r.gen_range(0.2..3.0)).collect();
        let m = depth_metrics(&p, &gt, None, r.gen_bool(0.5), None).unwrap();
        ensure(m.delta1 <= m.delta2 && m.delta2 <= m.delta3, || format!("{m:?}"))?;
    }
    Ok(())
}

pub fn ate_similarity_invariance() -> Check {
    let mut r = rng(13);
    let rel: Vec<Pose6D> = (0..12)
        .map(|_| Pose6D::new(Vector3::new(0.0, 0.0, 1.0) + random_omega(&mut r, 0.1), random_omega(&mut r, 0.05)))
        .collect();
    let gt = Trajectory::from_relative(&rel).unwrap();
    let zero = ate(&gt, &gt, 5).unwrap();
    ensure(zero.mean.abs() < 1e-9, || format!("identical: {}", zero.mean))?;
    let g = Pose6D::new(Vector3::new(3.0, -1.0, 2.0), Vector3::new(0.3, -0.2, 0.5)).to_matrix();
    let s = 2.5;
    let moved = |t: &Trajectory| {
        let poses = t
            .poses()
            .iter()
            .map(|m| {
                let mut out = g * m;
                let p = out.fixed_view::<3, 1>(0, 3) * s;
                out.fixed_view_mut::<3, 1>(0, 3).copy_from(&p);
                out
            })
            .collect();
        Trajectory::new(poses).unwrap()
    };
    let pred = moved(&gt);
    let a = ate(&pred, &gt, 5).unwrap();
    ensure(a.mean.abs() < 1e-9, || format!("pred moved: {}", a.mean))?;
    let noisy: Vec<Pose6D> = rel
        .iter()
        .map(|p| Pose6D::new(p.t + random_omega(&mut r, 0.05), p.omega))
        .collect();
    let noisy = Trajectory::from_relative(&noisy).unwrap();
    let before = ate(&noisy, &gt, 5).unwrap();
    let after = ate(&moved(&noisy), &moved(&gt), 5).unwrap();
    // Errors are measured in ground-truth units, so they scale with s.
    ensure((after.mean - s * before.mean).abs() < 1e-9 * before.mean.max(1.0), || {
        format!("both moved: {} vs {}", before.mean, after.mean)
    })
}

pub type Suite = (&'static str, fn() -> Check);

/// Every property suite, by name.
pub fn property_suites() -> Vec<Suite> {
    vec![
        ("rodrigues orthonormal and inverse", rodrigues_orthonormal as fn() -> Check),
        ("warp identity exact", warp_identity_exact),
        ("warp jacobian vs differences", warp_jacobian_fd),
        ("compose associative", compose_associative),
        ("bilinear lattice exact", bilinear_lattice_exact),
        ("bilinear gradient vs differences", bilinear_grad_fd),
        ("downsample preserves means", downsample_mean),
        ("laplacian of affine is zero", laplacian_affine_zero),
        ("pyramid floor halving", pyramid_floor_halving),
        ("dvo residual soft monotone", residual_monotone),
        ("dvo deterministic", dvo_determinism),
        ("dvo warm start dominates", warm_start_dominates),
        ("ddvo zero gradients", ddvo_zero_cases),
        ("ddvo deterministic", ddvo_determinism),
        ("appearance rescale invariant", appearance_rescale_invariant),
        ("smoothness homogeneous", smoothness_homogeneous),
        ("normalization invariance", normalization_invariance),
        ("loss terms non-negative", loss_terms_nonnegative),
        ("rescaling lowers the total", rescaling_lowers_total),
        ("training reproducible", training_reproducible),
        ("trace invariants", trace_invariants),
        ("render then solve", render_round_trip),
        ("render deterministic and masked", render_deterministic_and_masked),
        ("metrics scale invariant", metric_scale_invariance),
        ("ate similarity invariant", ate_similarity_invariance),
    ]
}
