mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bcdunet::{Graph, Padding, Tensor, Var};
use common::random_tensor;

type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Var + 'a;

fn projected(build: &Build<'_>, inputs: &[Tensor<f64>], proj: &Tensor<f64>) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let r = g.constant(proj.clone());
    let w = g.hadamard(out, r).unwrap();
    let s = g.sum(w);
    g.value(s).item().unwrap()
}

/// Largest relative error between backward and central differences of
/// `sum(R * build(inputs))`.
fn fd_error(build: &Build<'_>, inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let proj = random_tensor(rng, g.shape(out), 1.0);
    let r = g.constant(proj.clone());
    let w = g.hadamard(out, r).unwrap();
    let s = g.sum(w);
    g.backward(s).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for j in 0..inputs[k].numel() {
            let mut probe = inputs.to_vec();
            probe[k].data_mut()[j] += eps;
            let plus = projected(build, &probe, &proj);
            probe[k].data_mut()[j] -= 2.0 * eps;
            let minus = projected(build, &probe, &proj);
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

fn check_op(name: &str, shapes: &[&[usize]], build: &Build) {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s, 1.0)).collect();
        let err = fd_error(build, &inputs, &mut rng, 1e-5);
        assert!(err < 1e-4, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn conv2d_same_and_valid_gradients() {
    check_op("conv same", &[&[1, 2, 4, 4], &[2, 2, 3, 3], &[2]], &|g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), Padding::Same).unwrap()
    });
    check_op("conv valid", &[&[2, 1, 4, 4], &[1, 1, 3, 3]], &|g, v| {
        g.conv2d(v[0], v[1], None, Padding::Valid).unwrap()
    });
    check_op("conv even same", &[&[1, 2, 4, 4], &[1, 2, 2, 2], &[1]], &|g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), Padding::Same).unwrap()
    });
}

#[test]
fn conv2d_fd_at_step_1e_4() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![random_tensor(&mut rng, &[1, 4, 4], 1.0), random_tensor(&mut rng, &[2, 1, 3, 3], 1.0)];
    let err = fd_error(
        &|g, v| g.conv2d(v[0], v[1], None, Padding::Same).unwrap(),
        &inputs,
        &mut rng,
        1e-4,
    );
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn pooling_and_upsampling_gradients() {
    check_op("maxpool2", &[&[1, 2, 4, 4]], &|g, v| g.maxpool2(v[0]).unwrap());
    check_op("upsample2", &[&[1, 2, 2, 2]], &|g, v| g.upsample2(v[0]).unwrap());
}

#[test]
fn elementwise_gradients() {
    let s: &[&[usize]] = &[&[2, 3, 4], &[2, 3, 4]];
    check_op("add", s, &|g, v| g.add(v[0], v[1]).unwrap());
    check_op("sub", s, &|g, v| g.sub(v[0], v[1]).unwrap());
    check_op("hadamard", s, &|g, v| g.hadamard(v[0], v[1]).unwrap());
    check_op("mul_broadcast", &[&[2, 3, 4], &[3, 4]], &|g, v| g.mul_broadcast(v[0], v[1]).unwrap());
    check_op("sigmoid", &s[..1], &|g, v| g.sigmoid(v[0]));
    check_op("tanh", &s[..1], &|g, v| g.tanh(v[0]));
    check_op("relu", &s[..1], &|g, v| g.relu(v[0]));
    check_op("scale", &s[..1], &|g, v| g.scale(v[0], -2.5));
}

#[test]
fn reduction_and_shape_gradients() {
    check_op("sum", &[&[3, 5]], &|g, v| g.sum(v[0]));
    check_op("mean", &[&[3, 5]], &|g, v| g.mean(v[0]));
    check_op("concat", &[&[1, 2, 3, 3], &[1, 1, 3, 3]], &|g, v| g.concat_channels(&[v[0], v[1]]).unwrap());
    check_op("narrow", &[&[2, 4, 3]], &|g, v| g.narrow(v[0], 1, 1, 2).unwrap());
}

#[test]
fn batchnorm_and_bce_gradients() {
    check_op("batchnorm", &[&[3, 2, 2, 2], &[2], &[2]], &|g, v| {
        g.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0
    });
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..12).map(|_| rng.gen_range(0.05..0.95)).collect();
        let y: Vec<f64> = (0..12).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let target = Tensor::from_vec(&[12], y).unwrap();
        let inputs = vec![Tensor::from_vec(&[12], p).unwrap()];
        let err = fd_error(&|g, v| g.bce(v[0], &target).unwrap(), &inputs, &mut rng, 1e-5);
        assert!(err < 1e-4, "bce seed {seed}: {err:e}");
    }
}

#[test]
fn replayed_graph_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let x = g.param(random_tensor(&mut rng, &[2, 2, 4, 4], 1.0));
        let k = g.param(random_tensor(&mut rng, &[3, 2, 3, 3], 1.0));
        let y = g.conv2d(x, k, None, Padding::Same).unwrap();
        let y = g.tanh(y);
        let y = g.maxpool2(y).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        (g.value(y).data().to_vec(), g.grad(k).unwrap().data().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

fn conv_value(x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::from_vec(&[1, 2, 4, 4], x.to_vec()).unwrap());
    let kv = g.constant(Tensor::from_vec(&[2, 2, 3, 3], k.to_vec()).unwrap());
    let y = g.conv2d(xv, kv, None, Padding::Same).unwrap();
    g.value(y).data().to_vec()
}

proptest! {
    #[test]
    fn conv_is_linear_in_input(
        x1 in prop::collection::vec(-2.0f64..2.0, 32),
        x2 in prop::collection::vec(-2.0f64..2.0, 32),
        k in prop::collection::vec(-1.0f64..1.0, 36),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mixed: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
        let lhs = conv_value(&mixed, &k);
        let r1 = conv_value(&x1, &k);
        let r2 = conv_value(&x2, &k);
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * r1[i] + b * r2[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn maxpool_output_is_bounded_by_window(x in prop::collection::vec(-5.0f64..5.0, 2 * 4 * 6)) {
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::from_vec(&[2, 4, 6], x.clone()).unwrap());
        let y = g.maxpool2(xv).unwrap();
        prop_assert_eq!(g.shape(y), &[2, 2, 3]);
        let out = g.value(y).data();
        for c in 0..2 {
            for i in 0..2 {
                for j in 0..3 {
                    let window: Vec<f64> = (0..2)
                        .flat_map(|dy| (0..2).map(move |dx| (dy, dx)))
                        .map(|(dy, dx)| x[(c * 4 + 2 * i + dy) * 6 + 2 * j + dx])
                        .collect();
                    let v = out[(c * 2 + i) * 3 + j];
                    prop_assert!(window.iter().all(|&w| w <= v));
                    prop_assert!(window.contains(&v));
                }
            }
        }
    }
}
