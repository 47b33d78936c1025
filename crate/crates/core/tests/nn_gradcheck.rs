mod common;

use common::{fd_params, gaussian, max_rel_err, stored_grads, top_singular_value};
use direal::nn::checkpoint::{read_network, write_network};
use direal::nn::{initial_u, power_iteration, Activation, FeatureShape, LayerSpec, Mode, Network};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Randomizes every parameter so gradients are not dominated by the tiny init.
fn scramble(net: &mut Network, scale: f64, rng: &mut impl Rng) {
    for p in net.params_mut() {
        for v in p.value.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// Loss ⟨R, net(x)⟩ with fixed R; its output gradient is R.
fn linear_probe(net: &Network, x: &Array2<f64>, r: &Array2<f64>) -> f64 {
    let mut n = net.clone();
    (n.forward(x, Mode::Train).unwrap().output() * r).sum()
}

/// Backprop of ⟨R, net(x)⟩ compared against finite differences for every
/// parameter and every input entry.
fn check(specs: &[LayerSpec], input: FeatureShape, batch: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(input, specs, seed).unwrap();
    scramble(&mut net, 0.5, &mut rng);
    let x = gaussian(batch, input.len(), &mut rng);
    let pass = net.forward(&x, Mode::Train).unwrap();
    let r = gaussian(pass.output().nrows(), pass.output().ncols(), &mut rng);
    net.zero_grad();
    let dx = net.backward(&pass, &r).unwrap();

    let analytic = stored_grads(&net);
    let numeric = fd_params(&net, 1e-5, &mut |n| linear_probe(n, &x, &r));
    let param_err = max_rel_err(&analytic, &numeric, 1e-6);

    let h = 1e-5;
    let numeric_dx = Array2::from_shape_fn(x.raw_dim(), |(i, j)| {
        let mut p = x.clone();
        p[[i, j]] += h;
        let mut m = x.clone();
        m[[i, j]] -= h;
        (linear_probe(&net, &p, &r) - linear_probe(&net, &m, &r)) / (2.0 * h)
    });
    let dx: Vec<f64> = dx.iter().copied().collect();
    let numeric_dx: Vec<f64> = numeric_dx.iter().copied().collect();
    let input_err = max_rel_err(&dx, &numeric_dx, 1e-6);
    (param_err, input_err)
}

#[test]
fn dense_network_2_16_16_1() {
    let specs = [
        LayerSpec::Dense { units: 16 },
        LayerSpec::Activation(Activation::LeakyRelu),
        LayerSpec::Dense { units: 16 },
        LayerSpec::Activation(Activation::Tanh),
        LayerSpec::Dense { units: 1 },
        LayerSpec::Activation(Activation::Sigmoid),
    ];
    let (p, x) = check(&specs, FeatureShape::flat(2), 8, 1);
    assert!(p < 1e-4 && x < 1e-4, "params {p:e}, input {x:e}");
}

#[test]
fn conv_layer_on_4x4_input() {
    for padding in [0, 1] {
        let specs = [LayerSpec::Conv {
            channels: 2,
            kernel: 3,
            stride: 1,
            padding,
        }];
        let (p, x) = check(&specs, FeatureShape::image(1, 4, 4), 3, 2);
        assert!(
            p < 1e-4 && x < 1e-4,
            "padding {padding}: params {p:e}, input {x:e}"
        );
    }
}

#[test]
fn strided_conv_stack() {
    let specs = [
        LayerSpec::Conv {
            channels: 3,
            kernel: 4,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Activation(Activation::LeakyRelu),
        LayerSpec::Conv {
            channels: 2,
            kernel: 3,
            stride: 2,
            padding: 1,
        },
    ];
    let (p, x) = check(&specs, FeatureShape::image(2, 8, 8), 2, 3);
    assert!(p < 1e-4 && x < 1e-4, "params {p:e}, input {x:e}");
}

#[test]
fn transposed_conv_stack() {
    let specs = [
        LayerSpec::ConvTranspose {
            channels: 3,
            kernel: 4,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::ConvTranspose {
            channels: 1,
            kernel: 4,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Activation(Activation::Tanh),
    ];
    let (p, x) = check(&specs, FeatureShape::image(2, 3, 3), 2, 4);
    assert!(p < 1e-4 && x < 1e-4, "params {p:e}, input {x:e}");
}

#[test]
fn batchnorm_in_train_mode() {
    let dense = [
        LayerSpec::Dense { units: 5 },
        LayerSpec::BatchNorm,
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Dense { units: 2 },
    ];
    let (p, x) = check(&dense, FeatureShape::flat(3), 6, 5);
    assert!(p < 1e-4 && x < 1e-4, "dense: params {p:e}, input {x:e}");

    let conv = [
        LayerSpec::Conv {
            channels: 2,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        LayerSpec::BatchNorm,
        LayerSpec::Activation(Activation::LeakyRelu),
    ];
    let (p, x) = check(&conv, FeatureShape::image(1, 4, 4), 3, 6);
    assert!(p < 1e-4 && x < 1e-4, "conv: params {p:e}, input {x:e}");
}

#[test]
fn batchnorm_standardizes_each_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // flat features
    let mut net = Network::init(FeatureShape::flat(4), &[LayerSpec::BatchNorm], 0).unwrap();
    let x = gaussian(32, 4, &mut rng) * 3.0 + 7.0;
    let y = net.forward(&x, Mode::Train).unwrap().into_output();
    for col in y.columns() {
        let mean = col.mean().unwrap();
        let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
    // image channels pool over batch and space
    let mut net = Network::init(FeatureShape::image(3, 2, 2), &[LayerSpec::BatchNorm], 0).unwrap();
    let x = gaussian(8, 12, &mut rng) * 2.0 - 1.0;
    let y = net.forward(&x, Mode::Train).unwrap().into_output();
    for c in 0..3 {
        let vals: Vec<f64> = y
            .axis_iter(Axis(0))
            .flat_map(|row| row.iter().skip(c * 4).take(4).copied().collect::<Vec<_>>())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(
            mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-4,
            "channel {c}: {mean} {var}"
        );
    }
}

#[test]
fn power_iteration_converges_to_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..10 {
        let m = gaussian(32, 16, &mut rng);
        let exact = top_singular_value(&m);
        let mut u = initial_u(32, k);
        let est = power_iteration(m.view(), &mut u, 1000);
        assert!((est - exact).abs() < 1e-9 * exact, "{est} vs {exact}");
    }
}

#[test]
fn more_power_iterations_never_move_away_from_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for k in 0..5 {
        let m = gaussian(12, 7, &mut rng);
        let exact = top_singular_value(&m);
        let mut prev = f64::INFINITY;
        for iters in 1..=30 {
            let mut u = initial_u(12, k);
            let err = (power_iteration(m.view(), &mut u, iters) - exact).abs();
            assert!(err <= prev + 1e-12, "iters {iters}: {err} > {prev}");
            prev = err;
        }
    }
}

#[test]
fn spectral_normalization_bounds_conv_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut net = Network::init(
        FeatureShape::image(2, 6, 6),
        &[LayerSpec::Conv {
            channels: 5,
            kernel: 3,
            stride: 1,
            padding: 1,
        }],
        0,
    )
    .unwrap();
    scramble(&mut net, 1.0, &mut rng);
    net.spectral_normalize(0, 100).unwrap();
    let sigma = top_singular_value(net.kernel_matrix(0).unwrap().values());
    assert!((sigma - 1.0).abs() < 1e-3, "{sigma}");
}

#[test]
fn checkpoint_preserves_outputs_bitwise() {
    let specs = [
        LayerSpec::Dense { units: 2 * 3 * 3 },
        LayerSpec::BatchNorm,
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Reshape {
            channels: 2,
            height: 3,
            width: 3,
        },
        LayerSpec::ConvTranspose {
            channels: 2,
            kernel: 4,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Conv {
            channels: 3,
            kernel: 3,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Activation(Activation::LeakyRelu),
        LayerSpec::Dense { units: 1 },
        LayerSpec::Activation(Activation::Sigmoid),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut net = Network::init(FeatureShape::flat(4), &specs, 7).unwrap();
    scramble(&mut net, 0.3, &mut rng);
    let x = gaussian(5, 4, &mut rng);
    // update running statistics so eval mode differs from the init
    net.forward(&x, Mode::Train).unwrap();
    let mut bytes = Vec::new();
    write_network(&mut bytes, &net).unwrap();
    let back = read_network(&mut bytes.as_slice()).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        let a = net.clone().forward(&x, mode).unwrap().into_output();
        let b = back.clone().forward(&x, mode).unwrap().into_output();
        assert_eq!(a, b);
    }
}
