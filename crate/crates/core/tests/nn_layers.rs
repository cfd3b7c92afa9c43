mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use specrecon::error::Error;
use specrecon::nn::{
    ExternalInput, LayerKind, LayerSpec, Network, Padding, Tape, Tensor, INPUT,
};

#[test]
fn identity_convolution_passes_input_through() {
    let mut r = rng(1);
    let x = random_tensor([2, 1, 7], &mut r);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let w = tape.leaf(Tensor::scalar(1.0), false);
    let b = tape.leaf(Tensor::zeros([1, 1, 1]), false);
    let y = tape.conv1d(xv, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).unwrap(), &x);

    let loss = tape.sum(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.wrt(xv).unwrap().data().iter().all(|&g| g == 1.0));
}

#[test]
fn prelu_matches_definition() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new([1, 1, 3], vec![-2.0, 0.0, 3.0]).unwrap(), true);
    let a = tape.leaf(Tensor::scalar(0.25), true);
    let y = tape.prelu(x, a).unwrap();
    assert_eq!(tape.value(y).unwrap().data(), &[-0.5, 0.0, 3.0]);

    // The kink at exactly zero takes the positive branch.
    let loss = tape.sum(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[0.25, 1.0, 1.0]);
    assert_eq!(grads.wrt(a).unwrap().data(), &[-2.0]);
}

#[test]
fn leaky_relu_matches_definition() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new([1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap(), true);
    let y = tape.leaky_relu(x, 0.2).unwrap();
    assert_eq!(tape.value(y).unwrap().data(), &[-0.2, 0.0, 2.0]);
}

#[test]
fn strided_convolution_matches_nested_loops() {
    let mut r = rng(2);
    let x = random_tensor([1, 2, 9], &mut r);
    let w = random_tensor([3, 2, 3], &mut r);
    let b = random_tensor([1, 3, 1], &mut r);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (
        tape.constant(x.clone()),
        tape.constant(w.clone()),
        tape.constant(b.clone()),
    );
    let y = tape.conv1d(xv, wv, bv, 2, 0).unwrap();
    let want = naive_conv1d(&x, &w, &b, 2, 0);
    assert_eq!(tape.value(y).unwrap().shape(), [1, 3, 4]);
    for (g, e) in tape.value(y).unwrap().data().iter().zip(want.data()) {
        assert!((g - e).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convolution_agrees_with_oracle(
        batch in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        len in 1usize..=32, k in 1usize..=5, stride in 1usize..4, pad in 0usize..3,
        seed in any::<u64>(),
    ) {
        prop_assume!(len + 2 * pad >= k);
        let mut r = rng(seed);
        let x = random_tensor([batch, cin, len], &mut r);
        let w = random_tensor([cout, cin, k], &mut r);
        let b = random_tensor([1, cout, 1], &mut r);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv1d(xv, wv, bv, stride, pad).unwrap();
        let want = naive_conv1d(&x, &w, &b, stride, pad);
        prop_assert_eq!(tape.value(y).unwrap().shape(), want.shape());
        for (g, e) in tape.value(y).unwrap().data().iter().zip(want.data()) {
            prop_assert!((g - e).abs() < 1e-9);
        }
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    for case in 0..10u64 {
        let mut r = rng(100 + case);
        let cin = r.random_range(1..4);
        let cout = r.random_range(1..4);
        let k = r.random_range(1..6);
        let stride = r.random_range(1..4);
        let pad = r.random_range(0..3);
        let len = r.random_range(k.max(2)..12);
        let inputs = vec![
            random_tensor([2, cin, len], &mut r),
            random_tensor([cout, cin, k], &mut r),
            random_tensor([1, cout, 1], &mut r),
        ];
        let check = grad_check(&inputs, 1e-4, |tape, v| {
            let y = tape.conv1d(v[0], v[1], v[2], stride, pad).unwrap();
            project(tape, y, case)
        });
        assert!(check.worst_relative_error <= 1e-4, "case {case}: {check:?}");
    }
}

#[test]
fn activation_gradients_match_finite_differences() {
    for case in 0..10u64 {
        let mut r = rng(200 + case);
        let ch = r.random_range(1..4);
        let x = random_tensor_away_from_zero([2, ch, 6], &mut r);
        let per_channel = case % 2 == 0;
        let a = if per_channel {
            random_tensor([1, ch, 1], &mut r)
        } else {
            random_tensor([1, 1, 1], &mut r)
        };
        let check = grad_check(&[x.clone(), a], 1e-4, |tape, v| {
            let y = tape.prelu(v[0], v[1]).unwrap();
            project(tape, y, case)
        });
        assert!(check.worst_relative_error <= 1e-4, "prelu {case}: {check:?}");

        let check = grad_check(&[x], 1e-4, |tape, v| {
            let y = tape.leaky_relu(v[0], 0.2).unwrap();
            project(tape, y, case)
        });
        assert!(check.worst_relative_error <= 1e-4, "leaky {case}: {check:?}");
    }
}

#[test]
fn structural_gradients_match_finite_differences() {
    for case in 0..10u64 {
        let mut r = rng(300 + case);
        let ch = r.random_range(1..4);
        let len = r.random_range(2..8);
        let out_units = r.random_range(1..5);
        let a = random_tensor([2, ch, len], &mut r);
        let b = random_tensor([2, ch, len], &mut r);
        let c = random_tensor([2, 2, len], &mut r);
        let w = random_tensor([out_units, ch * len, 1], &mut r);
        let bias = random_tensor([1, out_units, 1], &mut r);

        let check = grad_check(&[a.clone(), w, bias], 1e-4, |tape, v| {
            let y = tape.linear(v[0], v[1], v[2]).unwrap();
            project(tape, y, case)
        });
        assert!(check.worst_relative_error <= 1e-4, "linear {case}: {check:?}");

        let check = grad_check(&[a.clone(), b], 1e-4, |tape, v| {
            let y = tape.add(v[0], v[1]).unwrap();
            project(tape, y, case)
        });
        assert!(check.worst_relative_error <= 1e-4, "add {case}: {check:?}");

        let check = grad_check(&[a, c], 1e-4, |tape, v| {
            let y = tape.concat(v[0], v[1]).unwrap();
            project(tape, y, case)
        });
        assert!(check.worst_relative_error <= 1e-4, "concat {case}: {check:?}");
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut r = rng(5);
    let x = random_tensor([1, 2, 6], &mut r);
    let w = random_tensor([3, 2, 3], &mut r);
    let b = random_tensor([1, 3, 1], &mut r);
    let t1 = random_tensor([1, 3, 6], &mut r);
    let t2 = random_tensor([1, 3, 6], &mut r);
    let (ka, kb) = (0.7, -1.3);

    let grads_of = |which: u8| {
        let mut tape = Tape::new();
        let wv = tape.leaf(w.clone(), true);
        let xv = tape.constant(x.clone());
        let bv = tape.constant(b.clone());
        let y = tape.conv1d(xv, wv, bv, 1, 1).unwrap();
        let l1 = tape.sum_squared_diff(y, &t1).unwrap();
        let l2 = tape.sum_squared_diff(y, &t2).unwrap();
        let loss = match which {
            1 => l1,
            2 => l2,
            _ => {
                let a = tape.scale(l1, ka).unwrap();
                let c = tape.scale(l2, kb).unwrap();
                tape.add(a, c).unwrap()
            }
        };
        tape.backward(loss).unwrap().wrt(wv).unwrap()
    };
    let (g1, g2, g) = (grads_of(1), grads_of(2), grads_of(0));
    for ((a, b), c) in g1.data().iter().zip(g2.data()).zip(g.data()) {
        assert!((ka * a + kb * b - c).abs() < 1e-9);
    }
}

#[test]
fn cleared_tape_reports_missing_graph() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(2.0), true);
    let y = tape.square(x).unwrap();
    tape.clear();
    assert!(matches!(tape.backward(y), Err(Error::GraphNotRecorded)));
    let other = Tape::<f64>::new();
    assert!(matches!(other.value(x), Err(Error::GraphNotRecorded)));
}

#[test]
fn non_finite_activation_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(f64::MAX), false);
    assert!(matches!(
        tape.scale(x, 10.0),
        Err(Error::NonFiniteActivation(_))
    ));
}

#[test]
fn unused_parameters_get_zero_gradients() {
    let specs = vec![
        LayerSpec::conv("c1", 3, 1, 2),
        LayerSpec::new("act", LayerKind::Prelu { per_channel: true }),
    ];
    let net = Network::<f64>::new(specs, (1, 8), vec![], 3).unwrap();
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, true);
    let x = tape.constant(random_tensor([1, 1, 8], &mut rng(1)));
    let unused = tape.leaf(Tensor::scalar(1.0), true);
    let acts = net.forward(&mut tape, x, &params, &[]).unwrap();
    let loss = tape.sum(acts.output()).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.wrt(unused).unwrap().data(), &[0.0]);
}

fn mixed_network(seed: u64) -> Network<f64> {
    let specs = vec![
        LayerSpec::conv("c1", 3, 1, 3),
        LayerSpec::new("p1", LayerKind::Prelu { per_channel: true }),
        LayerSpec::conv("c2", 3, 1, 3),
        LayerSpec::new("res", LayerKind::ResidualAdd { source: "p1".into() }),
        LayerSpec::new(
            "down",
            LayerKind::Conv1d {
                kernel: 3,
                stride: 2,
                out_channels: 2,
                padding: Padding::Explicit(1),
            },
        ),
        LayerSpec::new("lr", LayerKind::LeakyRelu { slope: 0.2 }),
        LayerSpec::new("cat", LayerKind::Concat { source: "cond".into() }),
        LayerSpec::new("fc", LayerKind::FullyConnected { out_units: 1 }),
    ];
    Network::new(
        specs,
        (2, 8),
        vec![ExternalInput {
            name: "cond".into(),
            channels: 1,
        }],
        seed,
    )
    .unwrap()
}

#[test]
fn network_shape_inference_and_external_inputs() {
    let net = mixed_network(1);
    assert_eq!(net.output_shape(), (1, 1));
    assert_eq!(net.external_length("cond"), Some(4));
    assert_eq!(
        net.layer_shapes(),
        vec![(3, 8), (3, 8), (3, 8), (3, 8), (2, 4), (2, 4), (3, 4), (1, 1)]
    );
    let names: Vec<_> = net.params().iter().map(|p| p.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "c1.weight", "c1.bias", "p1.slope", "c2.weight", "c2.bias", "down.weight",
            "down.bias", "fc.weight", "fc.bias"
        ]
    );
}

#[test]
fn network_parameter_gradients_match_finite_differences() {
    for case in 0..10u64 {
        let net = mixed_network(case);
        let mut r = rng(400 + case);
        let x = random_tensor([2, 2, 8], &mut r);
        let cond = random_tensor([2, 1, 4], &mut r);
        let params: Vec<Tensor<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
        let check = grad_check(&params, 1e-4, |tape, v| {
            let xv = tape.constant(x.clone());
            let cv = tape.constant(cond.clone());
            let acts = net.forward(tape, xv, v, &[("cond", cv)]).unwrap();
            project(tape, acts.output(), case)
        });
        assert!(check.worst_relative_error <= 1e-4, "case {case}: {check:?}");
    }
}

#[test]
fn network_rejects_bad_specs() {
    let dup = vec![LayerSpec::conv("a", 1, 1, 1), LayerSpec::conv("a", 1, 1, 1)];
    assert!(Network::<f64>::new(dup, (1, 4), vec![], 0).is_err());
    let forward_ref = vec![LayerSpec::new("r", LayerKind::ResidualAdd { source: "later".into() })];
    assert!(Network::<f64>::new(forward_ref, (1, 4), vec![], 0).is_err());
    let bad_slope = vec![LayerSpec::new("l", LayerKind::LeakyRelu { slope: 1.5 })];
    assert!(Network::<f64>::new(bad_slope, (1, 4), vec![], 0).is_err());
    let reserved = vec![LayerSpec::conv(INPUT, 1, 1, 1)];
    assert!(Network::<f64>::new(reserved, (1, 4), vec![], 0).is_err());
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let net = mixed_network(9);
        let mut tape = Tape::new();
        let params = net.bind(&mut tape, true);
        let x = tape.constant(random_tensor([2, 2, 8], &mut rng(3)));
        let c = tape.constant(random_tensor([2, 1, 4], &mut rng(4)));
        let acts = net.forward(&mut tape, x, &params, &[("cond", c)]).unwrap();
        let loss = tape.sum(acts.output()).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut bits: Vec<u64> = tape.value(acts.output()).unwrap().data().iter().map(|v| v.to_bits()).collect();
        for p in &params {
            bits.extend(grads.wrt(*p).unwrap().data().iter().map(|v| v.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}
