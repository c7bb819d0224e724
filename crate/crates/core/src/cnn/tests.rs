use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

/// Smallest input that survives two 5x5-conv/2x2-pool stages with an odd
/// first conv output (17 -> 13 -> 6 -> 2 -> 1).
const TINY: Geometry = Geometry {
    input: 17,
    towers: 3,
    maps1: 3,
    maps2: 4,
    hidden: 8,
    classes: 4,
};

fn random_input(g: &Geometry, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..g.input_len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn loss_of(net: &Cnn, x: &[f64], label: usize) -> f64 {
    nll_loss(&net.forward(x).unwrap(), label).value
}

/// Gradients below this are compared in absolute terms.
const GRAD_FLOOR: f64 = 1e-4;

/// Central differences against backprop over every parameter; returns the
/// worst relative error.
fn gradient_check(net: &Cnn, x: &[f64], label: usize) -> f64 {
    let mut grads = Params::zeros(&net.geometry());
    let mut trace = Trace::new(&net.geometry());
    net.forward_with(x, &mut trace).unwrap();
    net.backward(&mut trace, label, &mut grads).unwrap();
    let analytic = grads.to_flat();

    let eps = 1e-5;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.params.flat_mut(i).unwrap();
        *probe.params.flat_mut(i).unwrap() = orig + eps;
        let up = loss_of(&probe, x, label);
        *probe.params.flat_mut(i).unwrap() = orig - eps;
        let down = loss_of(&probe, x, label);
        *probe.params.flat_mut(i).unwrap() = orig;
        let numeric = (up - down) / (2.0 * eps);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn canonical_extents_and_counts() {
    let g = Geometry::CANONICAL;
    let e = g.extents();
    assert_eq!(e.conv1, [29, 29, 30]);
    assert_eq!(e.pool1, [14, 14, 30]);
    assert_eq!(e.conv2, [10, 10, 45]);
    assert_eq!(e.pool2, [5, 5, 45]);
    assert_eq!((e.hidden, e.output), (100, 4));
    assert_eq!(g.flat_len(), 1125);

    let net = Cnn::init(g, DEFAULT_SLOPE, 1).unwrap();
    let b = net.params.breakdown();
    assert_eq!(b.conv1, 780);
    assert_eq!(b.conv2, 11_295);
    assert_eq!(b.hidden, 112_600);
    assert_eq!(b.output, 404);
    assert_eq!(net.param_count(), 125_079);
    assert_eq!(b.total(), 125_079);
}

#[test]
fn layered_forward_reports_layer_shapes() {
    let g = Geometry::CANONICAL;
    let net = Cnn::init(g, DEFAULT_SLOPE, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_input(&g, &mut rng);
    let (stages, probs) = net.forward_layers(&x).unwrap();
    let dims: Vec<Vec<usize>> = stages.iter().map(|t| t.dims().to_vec()).collect();
    assert_eq!(
        dims,
        vec![vec![30, 29, 29], vec![30, 14, 14], vec![45, 10, 10], vec![45, 5, 5], vec![100], vec![4]]
    );
    let fused = net.forward(&x).unwrap();
    for (a, b) in probs.iter().zip(&fused) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn init_is_seeded_and_follows_the_recipe() {
    let g = Geometry::CANONICAL;
    let a = Cnn::init(g, DEFAULT_SLOPE, 42).unwrap();
    let b = Cnn::init(g, DEFAULT_SLOPE, 42).unwrap();
    let c = Cnn::init(g, DEFAULT_SLOPE, 43).unwrap();
    assert!(a.params.to_flat().iter().zip(b.params.to_flat()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_ne!(a.params, c.params);

    for t in &a.params.towers {
        assert!(t.conv1.biases.iter().chain(&t.conv2.biases).all(|&v| v == 1.0));
    }
    assert!(a.params.hidden.biases.iter().all(|&v| v == 1.0));
    assert!(a.params.output.biases.iter().any(|&v| v != 1.0));

    // tower conv1: fan_in 25, fan_out 250
    let w: Vec<f64> = a.params.towers.iter().flat_map(|t| t.conv1.kernels.clone()).collect();
    assert_eq!(w.len(), 750);
    let bound = (6.0f64 / 275.0).sqrt();
    assert!(w.iter().all(|v| v.abs() <= bound));
    let mean = w.iter().sum::<f64>() / 750.0;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 749.0;
    let want = 2.0 / 275.0;
    assert!((var - want).abs() < 0.2 * want, "variance {var} vs {want}");
}

#[test]
fn probabilities_sum_to_one() {
    let g = Geometry::CANONICAL;
    let net = Cnn::init(g, DEFAULT_SLOPE, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let p = net.forward(&random_input(&g, &mut rng)).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn zero_network_is_uniform() {
    let g = Geometry::CANONICAL;
    let mut net = Cnn::init(g, DEFAULT_SLOPE, 9).unwrap();
    for l in net.params.layers_mut() {
        l.weights.fill(0.0);
    }
    net.params.output.biases.fill(0.0);
    let p = net.forward(&vec![0.0; g.input_len()]).unwrap();
    assert!(p.iter().all(|&v| v == p[0]));
    assert!((p[0] - 0.25).abs() < 1e-15);
}

#[test]
fn backprop_matches_finite_differences() {
    for seed in 0..5 {
        let net = Cnn::init(TINY, DEFAULT_SLOPE, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random_input(&TINY, &mut rng);
        let worst = gradient_check(&net, &x, (seed as usize) % 4);
        assert!(worst < 1e-5, "seed {seed}: worst relative error {worst}");
    }
}

#[test]
fn disconnected_map_gets_no_gradient() {
    let mut net = Cnn::init(TINY, DEFAULT_SLOPE, 3).unwrap();
    // cut tower 1, conv2 map 2 off from the hidden layer
    let seg = TINY.maps2 * TINY.pool2_side().pow(2);
    let per_map = TINY.pool2_side().pow(2);
    let cols: Vec<usize> = (0..per_map).map(|i| seg + 2 * per_map + i).collect();
    let inputs = net.params.hidden.inputs;
    for o in 0..TINY.hidden {
        for &c in &cols {
            net.params.hidden.weights[o * inputs + c] = 0.0;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_input(&TINY, &mut rng);
    let mut grads = Params::zeros(&TINY);
    let mut trace = Trace::new(&TINY);
    net.forward_with(&x, &mut trace).unwrap();
    net.backward(&mut trace, 1, &mut grads).unwrap();
    let k = &grads.towers[1].conv2;
    let per = TINY.maps1 * 25;
    assert!(k.kernels[2 * per..3 * per].iter().all(|&v| v == 0.0));
    assert_eq!(k.biases[2], 0.0);
    assert!(k.kernels[..per].iter().any(|&v| v != 0.0));
}

#[test]
fn duplicated_sample_doubles_gradient() {
    let net = Cnn::init(TINY, DEFAULT_SLOPE, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_input(&TINY, &mut rng);
    let mut trace = Trace::new(&TINY);
    let mut once = Params::zeros(&TINY);
    net.forward_with(&x, &mut trace).unwrap();
    net.backward(&mut trace, 2, &mut once).unwrap();
    let mut twice = Params::zeros(&TINY);
    for _ in 0..2 {
        net.forward_with(&x, &mut trace).unwrap();
        net.backward(&mut trace, 2, &mut twice).unwrap();
    }
    for (a, b) in once.to_flat().iter().zip(twice.to_flat()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn backward_needs_a_forward_pass() {
    let net = Cnn::init(TINY, DEFAULT_SLOPE, 1).unwrap();
    let mut trace = Trace::new(&TINY);
    let mut grads = Params::zeros(&TINY);
    assert!(matches!(net.backward(&mut trace, 0, &mut grads), Err(Error::Usage(_))));
    let other = Trace::new(&Geometry::CANONICAL);
    let x = vec![0.0; TINY.input_len()];
    assert!(net.forward_with(&x, &mut other.clone()).is_err());
}

/// Dyadic parameters and inputs make every sum exact, so tower order cannot
/// change a single bit of the result.
#[test]
fn permuting_towers_with_their_weights_is_invisible() {
    let g = TINY;
    let mut net = Cnn::init(g, 0.25, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for l in net.params.layers_mut() {
        for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
            *v = rng.random_range(-8i32..=8) as f64 / 16.0;
        }
    }
    let x: Vec<f64> = (0..g.input_len()).map(|_| rng.random_range(-8i32..=8) as f64 / 8.0).collect();
    let base = net.forward(&x).unwrap();

    let perm = [2usize, 0, 1];
    let plane = g.input * g.input;
    let seg = g.maps2 * g.pool2_side().pow(2);
    let mut px = vec![0.0; x.len()];
    let mut pnet = net.clone();
    for (slot, &src) in perm.iter().enumerate() {
        px[slot * plane..(slot + 1) * plane].copy_from_slice(&x[src * plane..(src + 1) * plane]);
        pnet.params.towers[slot] = net.params.towers[src].clone();
        for o in 0..g.hidden {
            let row = o * g.flat_len();
            pnet.params.hidden.weights[row + slot * seg..row + (slot + 1) * seg]
                .copy_from_slice(&net.params.hidden.weights[row + src * seg..row + (src + 1) * seg]);
        }
    }
    let permuted = pnet.forward(&px).unwrap();
    for (a, b) in base.iter().zip(&permuted) {
        assert_eq!(a.to_bits(), b.to_bits());
    }

    // with random weights the wiring still holds to rounding
    let net = Cnn::init(g, DEFAULT_SLOPE, 7).unwrap();
    let mut pnet = net.clone();
    for (slot, &src) in perm.iter().enumerate() {
        pnet.params.towers[slot] = net.params.towers[src].clone();
        for o in 0..g.hidden {
            let row = o * g.flat_len();
            pnet.params.hidden.weights[row + slot * seg..row + (slot + 1) * seg]
                .copy_from_slice(&net.params.hidden.weights[row + src * seg..row + (src + 1) * seg]);
        }
    }
    let base = net.forward(&x).unwrap();
    let permuted = pnet.forward(&px).unwrap();
    for (a, b) in base.iter().zip(&permuted) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fseg");
    let net = Cnn::init(Geometry::CANONICAL, DEFAULT_SLOPE, 77).unwrap();
    save_model(&net, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.param_count(), 125_079);
    assert_eq!(back.geometry(), net.geometry());
    assert_eq!(back.seed(), 77);
    assert!(back.params.to_flat().iter().zip(net.params.to_flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(encode_model(&back), std::fs::read(&path).unwrap());
}

#[test]
fn truncated_model_is_rejected() {
    let bytes = encode_model(&Cnn::init(TINY, DEFAULT_SLOPE, 1).unwrap());
    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_model(&bytes[..cut]), Err(Error::CorruptModel(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(decode_model(&flipped), Err(Error::CorruptModel(m)) if m.contains("checksum")));
    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(decode_model(&bad_magic).is_err());
}

/// Rewrite one dim of layer `layer` (tower1.conv2 is index 3) and fix up the
/// sample count and checksum so only the shape check can fail.
#[test]
fn mismatched_shape_names_the_layer() {
    let net = Cnn::init(TINY, DEFAULT_SLOPE, 1).unwrap();
    let mut tampered = net.clone();
    tampered.params.towers[1].conv2 = ConvLayer::zeros(TINY.maps2, TINY.maps1 + 1);
    let bytes = encode_model(&tampered);
    match decode_model(&bytes) {
        Err(Error::CorruptModel(msg)) => assert!(msg.contains("tower1.conv2"), "{msg}"),
        other => panic!("expected corrupt model, got {other:?}"),
    }
}
