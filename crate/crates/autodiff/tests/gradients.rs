//! Finite-difference and adjoint checks for every differentiable op.

use mdphd_autodiff::{
    check_gradients, AutodiffError, ConvSpec, GradCheckOptions, Graph, NormMode, Padding,
    ParamStore, RenormLimits, RenormState, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OP_TOL: f64 = 1e-4;
const INSTANCES: u64 = 5;

type R = Result<Var, AutodiffError>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Projects an op output onto a fixed random direction so every output
/// element contributes to the scalar.
fn project(g: &mut Graph, y: Var, seed: u64) -> R {
    let w = Tensor::randn(g.shape(y).to_vec(), &mut rng(seed ^ 0xabcd));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn assert_grad<F>(inputs: Vec<Tensor>, f: F, what: &str)
where
    F: FnMut(&mut Graph, &[Var]) -> R,
{
    let report = check_gradients(
        &inputs,
        f,
        GradCheckOptions {
            max_coords: 48,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.passes(OP_TOL), "{what}: {report:?}");
}

#[test]
fn conv1d_dilated_kernel_and_input_gradients() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let x = Tensor::randn(vec![2, 3, 16], &mut r);
        let k = Tensor::randn(vec![2, 3, 3], &mut r);
        assert_grad(
            vec![x, k],
            |g, v| {
                let y = g.conv1d_dilated(v[0], v[1], 4)?;
                project(g, y, seed)
            },
            "conv1d_dilated",
        );
    }
}

#[test]
fn conv1d_dilated_sum_gradient_wrt_kernel() {
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let x = Tensor::randn(vec![2, 3, 16], &mut r);
        let k = Tensor::randn(vec![4, 3, 3], &mut r);
        assert_grad(
            vec![x, k],
            |g, v| {
                let y = g.conv1d_dilated(v[0], v[1], 4)?;
                Ok(g.sum(y))
            },
            "conv1d_dilated sum",
        );
    }
}

#[test]
fn strided_conv2d_gradients() {
    for seed in 0..INSTANCES {
        let mut r = rng(200 + seed);
        let x = Tensor::randn(vec![2, 2, 8, 8], &mut r);
        let k = Tensor::randn(vec![3, 2, 3, 3], &mut r);
        assert_grad(
            vec![x, k],
            |g, v| {
                let y = g.conv(v[0], v[1], ConvSpec::new((2, 2), Padding::Same))?;
                project(g, y, seed)
            },
            "conv2d",
        );
    }
}

#[test]
fn transposed_conv_gradients() {
    for seed in 0..INSTANCES {
        let mut r = rng(300 + seed);
        let y = Tensor::randn(vec![2, 3, 4, 5], &mut r);
        let k = Tensor::randn(vec![3, 2, 5, 5], &mut r);
        assert_grad(
            vec![y, k],
            |g, v| {
                let x =
                    g.conv_transpose(v[0], v[1], ConvSpec::new((2, 2), Padding::Same), (8, 10))?;
                project(g, x, seed)
            },
            "conv_transpose2d",
        );
        let y = Tensor::randn(vec![2, 4, 6], &mut r);
        let k = Tensor::randn(vec![4, 3, 8], &mut r);
        assert_grad(
            vec![y, k],
            |g, v| {
                let x =
                    g.conv_transpose(v[0], v[1], ConvSpec::time(4, 1, Padding::Same), (1, 24))?;
                project(g, x, seed)
            },
            "conv_transpose1d",
        );
    }
}

/// `<conv(x), y> == <x, conv_transpose(y)>` for shared kernels.
#[test]
fn transposed_conv_is_exact_adjoint() {
    let cases: Vec<(Vec<usize>, Vec<usize>, ConvSpec)> = vec![
        (
            vec![2, 3, 9, 11],
            vec![4, 3, 5, 5],
            ConvSpec::new((2, 2), Padding::Same),
        ),
        (
            vec![1, 2, 8, 8],
            vec![3, 2, 3, 3],
            ConvSpec::new((1, 1), Padding::Valid),
        ),
        (
            vec![2, 2, 7, 13],
            vec![2, 2, 3, 2],
            ConvSpec::new((2, 3), Padding::Explicit(1, 0, 2, 1)).dilated((2, 1)),
        ),
        (
            vec![3, 2, 64],
            vec![5, 2, 16],
            ConvSpec::time(8, 1, Padding::Same),
        ),
        (
            vec![2, 4, 33],
            vec![4, 4, 3],
            ConvSpec::time(1, 8, Padding::Explicit(0, 0, 8, 8)),
        ),
    ];
    for (i, (xs, ks, spec)) in cases.into_iter().enumerate() {
        for seed in 0..INSTANCES {
            let mut r = rng(400 + 10 * i as u64 + seed);
            let mut g = Graph::new();
            let x = g.constant(Tensor::randn(xs.clone(), &mut r));
            let k = g.constant(Tensor::randn(ks.clone(), &mut r));
            let cx = g.conv(x, k, spec).unwrap();
            let y = g.constant(Tensor::randn(g.shape(cx).to_vec(), &mut r));
            let target = if xs.len() == 3 {
                (1, xs[2])
            } else {
                (xs[2], xs[3])
            };
            let ty = g.conv_transpose(y, k, spec, target).unwrap();
            let lhs = g.value(cx).dot(g.value(y));
            let rhs = g.value(x).dot(g.value(ty));
            let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
            assert!(rel <= 1e-10, "case {i}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn batch_renorm_gradients_with_frozen_corrections() {
    for seed in 0..INSTANCES {
        let mut r = rng(500 + seed);
        let x = Tensor::randn(vec![3, 2, 5], &mut r).map(|v| 2.0 * v + 1.0);
        let gamma = Tensor::randn(vec![2], &mut r);
        let beta = Tensor::randn(vec![2], &mut r);
        let rc: Vec<f64> = (0..2).map(|_| r.gen_range(0.5..2.0)).collect();
        let dc: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();
        assert_grad(
            vec![x, gamma, beta],
            |g, v| {
                let y = g.batch_renorm_with(v[0], v[1], v[2], &rc, &dc, 1e-5)?;
                project(g, y, seed)
            },
            "batch_renorm",
        );
    }
}

#[test]
fn batch_renorm_eval_mode_gradients() {
    for seed in 0..INSTANCES {
        let mut r = rng(550 + seed);
        let x = Tensor::randn(vec![2, 3, 2, 3], &mut r);
        let gamma = Tensor::randn(vec![3], &mut r);
        let beta = Tensor::randn(vec![3], &mut r);
        let mut state = RenormState::new(3, 0.1);
        state.running_mean = vec![0.3, -0.2, 1.0];
        state.running_var = vec![2.0, 0.5, 1.5];
        assert_grad(
            vec![x, gamma, beta],
            |g, v| {
                let mut s = state.clone();
                let y = g.batch_renorm(v[0], v[1], v[2], &mut s, NormMode::Eval)?;
                project(g, y, seed)
            },
            "batch_renorm eval",
        );
    }
}

#[test]
fn pointwise_and_reduction_gradients() {
    for seed in 0..INSTANCES {
        let mut r = rng(600 + seed);
        let a = Tensor::randn(vec![2, 7], &mut r);
        let b = Tensor::randn(vec![2, 7], &mut r);
        let pos = Tensor::randn(vec![2, 7], &mut r).map(|v| v.abs() + 0.5);
        assert_grad(
            vec![a.clone(), b.clone()],
            |g, v| {
                let s = g.add(v[0], v[1])?;
                let d = g.sub(s, v[1])?;
                let m = g.mul(d, v[1])?;
                let l = g.leaky_relu(m, 0.2);
                let sg = g.sigmoid(l);
                let sq = g.square(sg);
                let sc = g.scale(sq, -1.7);
                let off = g.add_scalar(sc, 0.25);
                let ab = g.abs(off);
                let n1 = g.l1_norm(ab);
                let mu = g.mean(v[0]);
                let both = g.add(n1, mu)?;
                Ok(both)
            },
            "pointwise chain",
        );
        assert_grad(
            vec![pos, b],
            |g, v| {
                let lg = g.ln(v[0])?;
                let rt = g.sqrt(v[0])?;
                let per = g.sum_per_item(rt)?;
                let floor = g.constant(Tensor::full(vec![2], 1.0));
                let cl = g.clamp_min(per, floor)?;
                let s = g.sum(cl);
                let d = g.div_scalar_var(lg, s)?;
                let d3 = g.reshape(d, &[2, 1, 7])?;
                let b3 = g.reshape(v[1], &[2, 1, 7])?;
                let cat = g.concat_channels(d3, b3)?;
                let padded = g.resize2d(cat, 3, 9)?;
                let cropped = g.resize2d(padded, 2, 5)?;
                project(g, cropped, seed)
            },
            "log/sqrt/shape chain",
        );
    }
}

#[test]
fn channel_bias_gradient() {
    for seed in 0..INSTANCES {
        let mut r = rng(700 + seed);
        let x = Tensor::randn(vec![2, 3, 4], &mut r);
        let b = Tensor::randn(vec![3], &mut r);
        assert_grad(
            vec![x, b],
            |g, v| {
                let y = g.add_channel_bias(v[0], v[1])?;
                project(g, y, seed)
            },
            "add_channel_bias",
        );
    }
}

fn tiny_model(seed: u64) -> ParamStore {
    let mut r = rng(seed);
    let mut s = ParamStore::new();
    s.insert("a.kernel", Tensor::randn(vec![2, 1, 3], &mut r))
        .unwrap();
    s.insert("a.bias", Tensor::randn(vec![2], &mut r)).unwrap();
    s.insert("unused.kernel", Tensor::randn(vec![2, 2, 3], &mut r))
        .unwrap();
    s
}

fn tiny_loss(g: &mut Graph, store: &ParamStore, x: &Tensor) -> Var {
    let x = g.constant(x.clone());
    let k = g.param(store, "a.kernel").unwrap();
    let b = g.param(store, "a.bias").unwrap();
    let y = g.conv1d_dilated(x, k, 2).unwrap();
    let y = g.add_channel_bias(y, b).unwrap();
    let y = g.leaky_relu(y, 0.2);
    g.l1_norm(y)
}

#[test]
fn unreachable_parameters_get_zero_not_stale_gradients() {
    let mut store = tiny_model(1);
    let x = Tensor::randn(vec![1, 1, 10], &mut rng(2));
    for p in store.iter_mut() {
        p.grad = p.grad.map(|_| 9.0);
    }
    store.zero_grad();
    let mut g = Graph::new();
    let loss = tiny_loss(&mut g, &store, &x);
    let grads = g.backward(loss).unwrap();
    assert!(g.is_empty(), "tape cleared after backward");
    assert_eq!(grads.accumulate_into(&mut store), 2);
    assert!(store
        .get("unused.kernel")
        .unwrap()
        .grad
        .data()
        .iter()
        .all(|&v| v == 0.0));
    assert!(store.get("a.kernel").unwrap().grad.max_abs() > 0.0);
}

#[test]
fn gradients_accumulate_across_backward_calls() {
    let mut store = tiny_model(3);
    let x = Tensor::randn(vec![1, 1, 10], &mut rng(4));
    let mut once = store.clone();
    for s in [&mut once, &mut store] {
        s.zero_grad();
    }
    let mut g = Graph::new();
    let l = tiny_loss(&mut g, &once, &x);
    g.backward(l).unwrap().accumulate_into(&mut once);
    for _ in 0..2 {
        let l = tiny_loss(&mut g, &store, &x);
        g.backward(l).unwrap().accumulate_into(&mut store);
    }
    let a = &once.get("a.kernel").unwrap().grad;
    let b = &store.get("a.kernel").unwrap().grad;
    for (x1, x2) in a.data().iter().zip(b.data()) {
        assert_eq!(2.0 * x1, *x2);
    }
}

#[test]
fn repeated_passes_are_bitwise_identical() {
    let run = || {
        let store = tiny_model(11);
        let x = Tensor::randn(vec![1, 1, 32], &mut rng(12));
        let mut st = RenormState::new(2, 0.1);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let k = g.param(&store, "a.kernel").unwrap();
        let y = g.conv1d_dilated(xv, k, 1).unwrap();
        let gamma = g.constant(Tensor::full(vec![2], 1.0));
        let beta = g.constant(Tensor::zeros(vec![2]));
        let y = g
            .batch_renorm(
                y,
                gamma,
                beta,
                &mut st,
                NormMode::Train(RenormLimits::ramped(10, 100, 3.0, 5.0)),
            )
            .unwrap();
        let l = g.l1_norm(y);
        let grads = g.backward(l).unwrap();
        grads.param("a.kernel").unwrap().clone()
    };
    let a = run();
    let b = run();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn shared_parameter_loaded_once_per_graph() {
    let store = tiny_model(5);
    let mut g = Graph::new();
    let a = g.param(&store, "a.kernel").unwrap();
    let b = g.param(&store, "a.kernel").unwrap();
    assert_eq!(a, b);
}
