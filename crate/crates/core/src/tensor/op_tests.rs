use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck;

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn conv_identity_kernel_reproduces_input() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::full([1, 1, 4, 4], 1.0));
    let mut w = Tensor::zeros([1, 1, 3, 3]);
    w.set([0, 0, 1, 1], 1.0);
    let w = g.input(w);
    let y = g.conv2d(x, w, None).unwrap();
    assert_eq!(g.value(y), &Tensor::full([1, 1, 4, 4], 1.0));
}

#[test]
fn conv_counts_taps_under_zero_padding() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::full([1, 1, 5, 5], 1.0));
    let w = g.input(Tensor::full([1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, w, None).unwrap();
    assert_eq!(g.value(y).get([0, 0, 2, 2]), 9.0);
    assert_eq!(g.value(y).get([0, 0, 0, 0]), 4.0);
    assert_eq!(g.value(y).get([0, 0, 0, 2]), 6.0);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::zeros([1, 2, 4, 4]));
    let w = g.input(Tensor::zeros([4, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, w, None), Err(AsiError::Shape(_))));
}

#[test]
fn conv_weight_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random([1, 2, 6, 6], &mut rng);
    let w = random([3, 2, 3, 3], &mut rng);
    let b = random([1, 3, 1, 1], &mut rng);
    let r = gradcheck::check(&[x, w, b], 1e-3, 64, |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]))?;
        Ok(g.mean(y))
    })
    .unwrap();
    assert!(r.max_rel_error() < 1e-4, "{r:?}");
}

#[test]
fn batchnorm_train_mode_standardises_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::<f64>::new();
    let x = g.input(random([4, 2, 3, 3], &mut rng).map(|v| 3.0 * v + 1.5));
    let gamma = g.input(Tensor::full([1, 2, 1, 1], 1.0));
    let beta = g.input(Tensor::zeros([1, 2, 1, 1]));
    let (y, stats) = g
        .batch_norm(x, gamma, beta, BnMode::Train { eps: 1e-5 })
        .unwrap();
    assert!(stats.is_some());
    let yv = g.value(y);
    for c in 0..2 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| (0..9).map(move |i| (n, i)))
            .map(|(n, i)| yv.get([n, c, i / 3, i % 3]))
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-4);
        assert!((v - 1.0).abs() < 1e-4);
    }
}

#[test]
fn batchnorm_eval_mode_uses_running_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xt = random([2, 2, 2, 2], &mut rng);
    let mut g = Graph::<f64>::new();
    let x = g.input(xt.clone());
    let gamma = g.input(Tensor::from_vec([1, 2, 1, 1], vec![2.0, 0.5]).unwrap());
    let beta = g.input(Tensor::from_vec([1, 2, 1, 1], vec![0.1, -0.3]).unwrap());
    let (mean, var) = ([0.2, -0.4], [1.5, 0.25]);
    let (y, stats) = g
        .batch_norm(
            x,
            gamma,
            beta,
            BnMode::Eval {
                mean: &mean,
                var: &var,
                eps: 1e-5,
            },
        )
        .unwrap();
    assert!(stats.is_none());
    let (gm, bt) = ([2.0, 0.5], [0.1, -0.3]);
    for (i, &v) in xt.data().iter().enumerate() {
        let c = (i / 4) % 2;
        let want = (v - mean[c]) / (var[c] + 1e-5f64).sqrt() * gm[c] + bt[c];
        assert!((g.value(y).data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_zero_variance_single_item_is_finite() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::full([1, 1, 2, 2], 3.0));
    let gamma = g.input(Tensor::full([1, 1, 1, 1], 1.0));
    let beta = g.input(Tensor::zeros([1, 1, 1, 1]));
    let (y, _) = g
        .batch_norm(x, gamma, beta, BnMode::Train { eps: 1e-5 })
        .unwrap();
    assert!(g.value(y).all_finite());
}

#[test]
fn batchnorm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random([2, 3, 4, 4], &mut rng);
    let gamma = random([1, 3, 1, 1], &mut rng);
    let beta = random([1, 3, 1, 1], &mut rng);
    let weights = random([2, 3, 4, 4], &mut rng);
    let r = gradcheck::check(&[x, gamma, beta], 1e-3, 96, |g, v| {
        let (y, _) = g.batch_norm(v[0], v[1], v[2], BnMode::Train { eps: 1e-5 })?;
        let wv = g.input(weights.clone());
        let p = g.mul(y, wv)?;
        Ok(g.mean(p))
    })
    .unwrap();
    assert!(r.max_rel_error() < 1e-3, "{r:?}");
}

#[test]
fn avg_pool_values_and_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.avg_pool2(x).unwrap();
    assert_eq!(g.value(y).item(), 2.5);
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.25; 4]);

    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::full([2, 3, 4, 6], 0.7));
    let y = g.avg_pool2(x).unwrap();
    assert_eq!(g.value(y), &Tensor::full([2, 3, 2, 3], 0.7));
    let odd = g.input(Tensor::zeros([1, 1, 3, 4]));
    assert!(g.avg_pool2(odd).is_err());
}

#[test]
fn upsample_is_right_inverse_of_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random([2, 2, 3, 5], &mut rng));
    let u = g.upsample_nearest2(x);
    assert_eq!(g.value(u).shape(), [2, 2, 6, 10]);
    let p = g.avg_pool2(u).unwrap();
    assert_eq!(g.value(p), g.value(x));

    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros([1, 1, 1, 1]));
    let u = g.upsample_nearest2(x);
    let s = g.mean(u);
    g.backward(s).unwrap();
    // d(mean of 4 copies)/dx = 4 · 1/4
    assert_eq!(g.grad(x).unwrap().item(), 1.0);
}

#[test]
fn leaky_relu_values_and_zero_subgradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 3.0, 0.0]).unwrap());
    let y = g.leaky_relu(x, 0.2);
    assert_eq!(g.value(y).data(), &[-0.2, 3.0, 0.0]);
    let s = g.mean(y);
    g.backward(s).unwrap();
    let d = g.grad(x).unwrap().data();
    assert!((d[0] - 0.2 / 3.0).abs() < 1e-15);
    assert!((d[1] - 1.0 / 3.0).abs() < 1e-15);
    assert!((d[2] - 0.2 / 3.0).abs() < 1e-15);
}

#[test]
fn sigmoid_values_and_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_vec([1, 1, 1, 3], vec![0.0, 30.0, -30.0]).unwrap());
    let y = g.sigmoid(x);
    let v = g.value(y).data();
    assert_eq!(v[0], 0.5);
    assert!(v.iter().all(|&s| s > 0.0 && s < 1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random([1, 2, 3, 3], &mut rng).map(|v| 4.0 * v);
    let r = gradcheck::check(&[x], 1e-3, 64, |g, v| {
        let y = g.sigmoid(v[0]);
        let y2 = g.mul(y, y)?;
        Ok(g.mean(y2))
    })
    .unwrap();
    assert!(r.max_rel_error() < 1e-4, "{r:?}");
}

#[test]
fn mse_values_and_closed_form_gradient() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::zeros([1, 1, 2, 3]));
    let b = g.leaf(Tensor::full([1, 1, 2, 3], 1.0));
    let aa = g.mse(a, a).unwrap();
    assert_eq!(g.value(aa).item(), 0.0);
    let l = g.mse(a, b).unwrap();
    assert_eq!(g.value(l).item(), 1.0);
    g.backward(l).unwrap();
    // 2 (a - b) / n
    for &d in g.grad(a).unwrap().data() {
        assert!((d + 2.0 / 6.0).abs() < 1e-15);
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::zeros([1, 1, 2, 2]));
    let y = g.scale(x, 2.0);
    assert!(g.backward(y).is_err());
}

#[test]
fn elementwise_and_filter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random([2, 1, 7, 6], &mut rng);
    let b = random([2, 1, 7, 6], &mut rng).map(|v| v.abs() + 0.5);
    let kernel = [0.25, 0.5, 0.25];
    let r = gradcheck::check(&[a, b], 1e-3, 84, |g, v| {
        let m = g.mul(v[0], v[1])?;
        let d = g.div(m, v[1])?;
        let q = g.div(v[0], v[1])?;
        let s = g.sub(d, q)?;
        let s = g.add_scalar(s, 0.3);
        let cat = g.concat_batch(&[s, v[0]])?;
        let part = g.narrow_batch(cat, 1, 2)?;
        let f = g.sep_filter_valid(part, &kernel)?;
        let sq = g.mul(f, f)?;
        let sc = g.scale(sq, 1.7);
        Ok(g.mean(sc))
    })
    .unwrap();
    assert!(r.max_rel_error() < 1e-4, "{r:?}");
}

#[test]
fn unreachable_params_get_zero_grad() {
    let mut g = Graph::<f32>::new();
    let p = g.param("b.used", &Tensor::full([1, 1, 1, 2], 2.0));
    let _q = g.param("a.unused", &Tensor::full([1, 1, 1, 2], 2.0));
    let l = g.mean(p);
    g.backward(l).unwrap();
    let grads = g.param_grads();
    let names: Vec<_> = grads.keys().cloned().collect();
    assert_eq!(names, ["a.unused", "b.used"]);
    assert_eq!(grads["a.unused"].data(), &[0.0, 0.0]);
    assert_eq!(grads["b.used"].data(), &[0.5, 0.5]);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random([1, 1, 4, 4], &mut rng);
    let w = random([2, 1, 3, 3], &mut rng);
    let grads = |a: f64, b: f64| {
        let mut g = Graph::<f64>::new();
        let xv = g.input(x.clone());
        let wv = g.param("w", &w);
        let y = g.conv2d(xv, wv, None).unwrap();
        let s = g.sigmoid(y);
        let l1 = g.mean(s);
        let t = g.input(Tensor::full([1, 2, 4, 4], 0.3));
        let l2 = g.mse(s, t).unwrap();
        let l1 = g.scale(l1, a);
        let l2 = g.scale(l2, b);
        let l = g.add(l1, l2).unwrap();
        g.backward(l).unwrap();
        g.param_grads().remove("w").unwrap()
    };
    let (g1, g2, gc) = (grads(1.0, 0.0), grads(0.0, 1.0), grads(2.5, -0.75));
    for i in 0..g1.numel() {
        let want = 2.5 * g1.data()[i] - 0.75 * g2.data()[i];
        assert!((gc.data()[i] - want).abs() < 1e-6);
    }
    assert_eq!(grads(2.5, -0.75), gc, "bit-identical across runs");
}
