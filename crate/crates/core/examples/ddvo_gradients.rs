//! Gradients of an unrolled pose solve with respect to the reference depth.

use ddvo::ddvo::{ddvo_backward, ddvo_forward, DdvoSettings};
use ddvo::gradcheck::{self, solver_instance, GradcheckConfig};
use ddvo::imaging::InverseDepthMap;
use ddvo::losses::LossWeights;

fn main() -> ddvo::Result<()> {
    let inst = solver_instance(24, 20, 3);
    let settings = DdvoSettings { levels: 2, unroll_iters: 3, ..DdvoSettings::default() };
    let (pose, tape) = ddvo_forward(&inst.reference, &inst.depth, &inst.src, &inst.intrinsics, &settings)?;
    println!("true pose      {:?}", inst.truth.to_vector().as_slice());
    println!("unrolled pose  {:?}", pose.to_vector().as_slice());

    // Seed: derivative of the x-translation.
    let seed = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let grad = ddvo_backward(&tape, &seed)?;
    let (i, g) = grad
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("non-empty depth");
    let h = 1e-6;
    let shifted = |delta: f64| -> ddvo::Result<f64> {
        let mut data = inst.depth.data().to_vec();
        data[i] += delta;
        let d = InverseDepthMap::new(inst.depth.width(), inst.depth.height(), data)?;
        Ok(ddvo_forward(&inst.reference, &d, &inst.src, &inst.intrinsics, &settings)?.0.t.x)
    };
    let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
    println!("∂t_x/∂d[{i}]: reverse mode {g:.6e}, central difference {fd:.6e}");

    let warp_only = DdvoSettings { grad_through_jacobian: false, ..settings };
    let (_, tape) = ddvo_forward(&inst.reference, &inst.depth, &inst.src, &inst.intrinsics, &warp_only)?;
    println!("same entry through the warp alone: {:.6e}", ddvo_backward(&tape, &seed)?[i]);

    let cfg = GradcheckConfig { instances: 10, ..GradcheckConfig::default() };
    let report = gradcheck::run(&cfg, &DdvoSettings::default(), &LossWeights::default(), 0)?;
    print!("\n{}", report.to_csv());
    Ok(())
}
