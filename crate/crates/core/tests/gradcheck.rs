//! Analytic gradients of every graph primitive against central differences.

use atlasd::autodiff::{Graph, NodeId};
use atlasd::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error between analytic and numeric gradients of `sum(w * f(params))`.
fn grad_error(params: Vec<Tensor>, seed: u64, build: impl Fn(&mut Graph, &[NodeId]) -> NodeId) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .enumerate()
        .map(|(i, p)| g.param(&format!("p{i}"), p.clone()))
        .collect();
    let out = build(&mut g, &ids);
    let shape = g.evaluate([], out).unwrap().shape().to_vec();
    let w = g.constant(random(&shape, &mut rng));
    let prod = g.mul(out, w);
    let loss = g.sum(prod);
    g.evaluate([], loss).unwrap();
    let grads = g.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, p) in params.iter().enumerate() {
        let name = format!("p{i}");
        let analytic = grads.get(&name).expect("trainable param has a gradient");
        let mut numeric = vec![0.0; p.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = p.clone();
            plus.data_mut()[j] += H;
            g.set_param(&name, plus).unwrap();
            let fp = g.evaluate([], loss).unwrap().item();
            let mut minus = p.clone();
            minus.data_mut()[j] -= H;
            g.set_param(&name, minus).unwrap();
            let fm = g.evaluate([], loss).unwrap().item();
            *slot = (fp - fm) / (2.0 * H);
        }
        g.set_param(&name, p.clone()).unwrap();
        let numeric = Tensor::new(p.shape().to_vec(), numeric).unwrap();
        let scale = analytic.norm().max(numeric.norm()).max(1e-8);
        worst = worst.max(analytic.sub(&numeric).norm() / scale);
    }
    worst
}

fn away_from_zero(t: Tensor) -> Tensor {
    t.map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

fn assert_close(name: &str, err: f64) {
    assert!(err <= TOL, "{name}: relative gradient error {err:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_binary(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[3, 4], &mut rng);
        let row = random(&[4], &mut rng);
        let col = random(&[3, 1], &mut rng);
        let pos = random(&[3, 4], &mut rng).map(|v| 1.5 + v);
        assert_close("add", grad_error(vec![a.clone(), row.clone()], seed, |g, p| g.add(p[0], p[1])));
        assert_close("sub", grad_error(vec![a.clone(), col.clone()], seed, |g, p| g.sub(p[0], p[1])));
        assert_close("mul", grad_error(vec![a.clone(), b.clone()], seed, |g, p| g.mul(p[0], p[1])));
        assert_close("mul-bcast", grad_error(vec![col.clone(), row.clone()], seed, |g, p| g.mul(p[0], p[1])));
        assert_close("div", grad_error(vec![a.clone(), pos.clone()], seed, |g, p| g.div(p[0], p[1])));
        assert_close("powf", grad_error(vec![pos.clone()], seed, |g, p| g.powf(p[0], 1.7)));
    }

    #[test]
    fn elementwise_unary(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = away_from_zero(random(&[2, 5], &mut rng));
        assert_close("neg", grad_error(vec![a.clone()], seed, |g, p| g.neg(p[0])));
        assert_close("scale", grad_error(vec![a.clone()], seed, |g, p| g.scale(p[0], -2.5)));
        assert_close("relu", grad_error(vec![a.clone()], seed, |g, p| g.relu(p[0])));
        assert_close("tanh", grad_error(vec![a.clone()], seed, |g, p| g.tanh(p[0])));
        assert_close("abs", grad_error(vec![a.clone()], seed, |g, p| g.abs(p[0])));
        let shifted = a.map(|v| if (v - 0.3).abs() < 0.05 { v + 0.1 } else { v });
        assert_close("min_scalar", grad_error(vec![shifted], seed, |g, p| g.min_scalar(p[0], 0.3)));
    }

    #[test]
    fn reductions_and_layout(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[2, 3, 4], &mut rng);
        let b = random(&[2, 1, 4], &mut rng);
        assert_close("sum", grad_error(vec![a.clone()], seed, |g, p| g.sum(p[0])));
        assert_close("mean", grad_error(vec![a.clone()], seed, |g, p| g.mean(p[0])));
        assert_close("norm", grad_error(vec![a.clone()], seed, |g, p| g.norm(p[0])));
        assert_close("concat", grad_error(vec![a.clone(), b.clone()], seed, |g, p| g.concat(&[p[0], p[1]], 1)));
        assert_close("reshape", grad_error(vec![a.clone()], seed, |g, p| g.reshape(p[0], &[6, 4])));
        assert_close("select", grad_error(vec![a.clone()], seed, |g, p| g.select(p[0], 1)));
        assert_close("crop2d", grad_error(vec![a.clone()], seed, |g, p| g.crop2d(p[0], 1, 1, 2, 2)));
    }

    #[test]
    fn linear_algebra(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let sq = random(&[3, 3], &mut rng).add(&Tensor::eye(3).scale(2.0));
        assert_close("matmul", grad_error(vec![a.clone(), b], seed, |g, p| g.matmul(p[0], p[1])));
        assert_close("transpose", grad_error(vec![a], seed, |g, p| g.transpose(p[0])));
        assert_close("inverse", grad_error(vec![sq.clone()], seed, |g, p| g.inverse(p[0])));
        assert_close("det", grad_error(vec![sq], seed, |g, p| g.det(p[0])));
    }

    #[test]
    fn matexp_gradient(seed in 0u64..10_000, m in 2usize..5, scale in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, m], &mut rng).scale(scale);
        assert_close("matexp", grad_error(vec![a], seed, |g, p| g.matexp(p[0])));
    }

    #[test]
    fn conv2d_gradient(seed in 0u64..10_000, pad in 0usize..2, batched in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = if batched { random(&[2, 2, 5, 5], &mut rng) } else { random(&[2, 5, 5], &mut rng) };
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        assert_close(
            "conv2d",
            grad_error(vec![x, w, b], seed, move |g, p| g.conv2d(p[0], p[1], Some(p[2]), pad)),
        );
    }

    #[test]
    fn grid_sample_gradient(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patch = random(&[2, 7, 7], &mut rng);
        // Keep every sample position away from the pixel lattice, where bilinear
        // interpolation has kinks that a finite difference would straddle.
        let g_inv = loop {
            let cand = Tensor::eye(2).add(&random(&[2, 2], &mut rng).scale(0.3));
            let ok = (0..7).all(|i| (0..7).all(|j| {
                let (x, y) = (j as f64 - 3.0, i as f64 - 3.0);
                let c = cand.at2(0, 0) * x + cand.at2(0, 1) * y;
                let r = cand.at2(1, 0) * x + cand.at2(1, 1) * y;
                let off = |v: f64| (v - v.round()).abs();
                (i, j) == (3, 3) || (off(c) > 1e-3 && off(r) > 1e-3)
            }));
            if ok { break cand; }
        };
        assert_close("grid_sample", grad_error(vec![patch, g_inv], seed, |g, p| g.grid_sample(p[0], p[1], 0.0)));
    }
}

#[test]
fn grid_sample_sum_gradient_wrt_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let patch = random(&[1, 9, 9], &mut rng);
    // Entries chosen so no sample lands on the pixel lattice, where bilinear weights kink.
    let g_inv = Tensor::from_rows(&[[0.9317, -0.2683], [0.3121, 1.0743]]);
    let mut g = Graph::new();
    let p = g.constant(patch);
    let t = g.param("g", g_inv.clone());
    let warped = g.grid_sample(p, t, 0.0);
    let s = g.sum(warped);
    g.evaluate([], s).unwrap();
    let analytic = g.backward(s).unwrap().get("g").unwrap().clone();
    for k in 0..4 {
        let mut plus = g_inv.clone();
        plus.data_mut()[k] += H;
        g.set_param("g", plus).unwrap();
        let fp = g.evaluate([], s).unwrap().item();
        let mut minus = g_inv.clone();
        minus.data_mut()[k] -= H;
        g.set_param("g", minus).unwrap();
        let fm = g.evaluate([], s).unwrap().item();
        let numeric = (fp - fm) / (2.0 * H);
        let rel = (analytic.data()[k] - numeric).abs() / numeric.abs().max(1e-8);
        assert!(rel <= TOL, "entry {k}: analytic {} numeric {numeric}", analytic.data()[k]);
    }
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a0 = random(&[3, 3], &mut rng).scale(0.5);
    let mut g = Graph::new();
    let a = g.param("a", a0);
    let e = g.matexp(a);
    let t = g.tanh(a);
    let f1 = g.norm(e);
    let f2 = g.sum(t);
    let both = g.add(f1, f2);
    g.evaluate([], both).unwrap();
    let g12 = g.backward(both).unwrap();
    let g1 = g.backward(f1).unwrap();
    let g2 = g.backward(f2).unwrap();
    let sum = g1.get("a").unwrap().add(g2.get("a").unwrap());
    assert!(sum.max_abs_diff(g12.get("a").unwrap()) <= 1e-12);
}
