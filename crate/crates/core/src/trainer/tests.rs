use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::cnn::{decode_model, encode_model, Cnn, Geometry, Params, DEFAULT_SLOPE};
use crate::error::Error;
use crate::patch::PatchInput;

const TINY: Geometry = Geometry {
    input: 17,
    towers: 3,
    maps1: 3,
    maps2: 4,
    hidden: 8,
    classes: 4,
};

/// Two separable classes: background patches brighter than vessel patches.
fn toy_task(n: usize, seed: u64) -> (PrecomputedInputs, Vec<TrainSample>) {
    let len = TINY.input_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n * len);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Class::Background } else { Class::Vessel };
        let level = if label == Class::Background { 0.5 } else { -0.5 };
        rows.extend((0..len).map(|_| level + 0.3 * (rng.random::<f64>() - 0.5)));
        samples.push(TrainSample::new(i, 0, 0, label));
    }
    (PrecomputedInputs::new(len, rows).unwrap(), samples)
}

fn toy_hyper(n: usize) -> Hyperparams {
    Hyperparams {
        eta: 0.01,
        lambda: 0.1,
        kappa: 10,
        phi: n,
        epochs: 4,
        seed: 11,
    }
}

fn bits(net: &Cnn) -> Vec<u64> {
    net.params.to_flat().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn canonical_decay_factor() {
    let h = Hyperparams::default();
    h.validate().unwrap();
    assert_eq!(h.decay(), 1.0 - 0.01 * 0.1 / 750_000.0);
    // 1 - 1.333...e-9, to within the spacing of doubles near 1
    assert!((1.0 - h.decay() - 1.0 / 750_000_000.0).abs() < 2e-16);
    assert!(Hyperparams { kappa: 0, ..h }.validate().is_err());
    assert!(Hyperparams { phi: 5, ..h }.validate().is_err());
    assert!(Hyperparams { eta: 0.0, ..h }.validate().is_err());
}

#[test]
fn zero_gradient_only_decays_weights() {
    let mut net = Cnn::init(Geometry::CANONICAL, DEFAULT_SLOPE, 1).unwrap();
    let before = net.clone();
    let h = Hyperparams::default();
    let f = h.decay();
    let zero = Params::zeros(&net.geometry());
    apply_update(&mut net, &zero, 10, &h).unwrap();
    for (a, b) in net.params.layers().iter().zip(before.params.layers()) {
        for (&w1, &w0) in a.weights.iter().zip(b.weights) {
            assert_eq!(w1, w0 * f);
        }
        assert_eq!(a.biases, b.biases);
    }
}

#[test]
fn decay_free_step_is_plain_sgd() {
    let mut net = Cnn::init(TINY, DEFAULT_SLOPE, 2).unwrap();
    let before = net.clone();
    let mut g = Params::zeros(&TINY);
    g.output.weights[5] = 0.75;
    g.hidden.biases[2] = -2.0;
    let h = Hyperparams {
        eta: 0.1,
        lambda: 0.0,
        kappa: 1,
        phi: 1,
        ..Hyperparams::default()
    };
    apply_update(&mut net, &g, 1, &h).unwrap();
    assert_eq!(net.params.output.weights[5], before.params.output.weights[5] - 0.1 * 0.75);
    assert_eq!(net.params.hidden.biases[2], before.params.hidden.biases[2] + 0.1 * 2.0);
    assert_eq!(net.params.output.weights[4], before.params.output.weights[4]);
}

#[test]
fn duplicated_sample_matches_single_step() {
    let base = Cnn::init(TINY, DEFAULT_SLOPE, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..TINY.input_len()).map(|_| rng.random::<f64>() - 0.5).collect();
    let patch = PatchInput::new(17, x, (0, 0)).unwrap();
    let h = Hyperparams {
        kappa: 1,
        phi: 100,
        ..Hyperparams::default()
    };
    let mut one = base.clone();
    sgd_step(&mut one, &[(patch.clone(), Class::Fovea)], &h).unwrap();
    let mut two = base.clone();
    sgd_step(&mut two, &[(patch.clone(), Class::Fovea), (patch, Class::Fovea)], &Hyperparams { kappa: 2, ..h }).unwrap();
    for (a, b) in one.params.to_flat().iter().zip(two.params.to_flat()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn non_finite_gradient_names_the_layer() {
    let mut net = Cnn::init(TINY, DEFAULT_SLOPE, 4).unwrap();
    let before = net.clone();
    let mut g = Params::zeros(&TINY);
    g.towers[2].conv2.kernels[7] = f64::NAN;
    match apply_update(&mut net, &g, 1, &toy_hyper(100)) {
        Err(Error::NonFiniteGradient { layer, index, .. }) => {
            assert_eq!(layer, "tower2.conv2");
            assert_eq!(index, 7);
        }
        other => panic!("expected non-finite gradient error, got {other:?}"),
    }
    assert_eq!(net, before);
}

#[test]
fn toy_loss_decreases() {
    let (inputs, samples) = toy_task(100, 5);
    let h = toy_hyper(100);
    let mut net = Cnn::init(TINY, DEFAULT_SLOPE, 5).unwrap();
    let mut ws = BatchWorkspace::new(&TINY, h.kappa);
    let losses: Vec<f64> = (1..=5)
        .map(|e| run_epoch(&mut net, &inputs, &samples, &h, &mut epoch_rng(h.seed, e), &mut ws).unwrap())
        .collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "losses {losses:?}");
    }
}

#[test]
fn whole_set_batch_is_one_update() {
    let (inputs, samples) = toy_task(20, 6);
    let h = Hyperparams {
        kappa: 20,
        ..toy_hyper(20)
    };
    let base = Cnn::init(TINY, DEFAULT_SLOPE, 6).unwrap();
    let mut net = base.clone();
    let mut ws = BatchWorkspace::new(&TINY, h.kappa);
    run_epoch(&mut net, &inputs, &samples, &h, &mut epoch_rng(1, 1), &mut ws).unwrap();
    let batch: Vec<(PatchInput, Class)> = samples
        .iter()
        .map(|s| (PatchInput::new(17, inputs.row(s.image as usize).to_vec(), (0, 0)).unwrap(), s.label))
        .collect();
    let mut direct = base;
    sgd_step(&mut direct, &batch, &h).unwrap();
    for (a, b) in net.params.to_flat().iter().zip(direct.params.to_flat()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn training_is_reproducible_across_worker_counts() {
    let (inputs, samples) = toy_task(60, 7);
    let h = toy_hyper(60);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let out = train_select(
                TrainState::fresh(Cnn::init(TINY, DEFAULT_SLOPE, 7).unwrap()),
                &inputs,
                &samples,
                &h,
                |_| Ok(0.5),
                |_, _| Ok(()),
            )
            .unwrap();
            (bits(&out.last), out.log.iter().map(|r| r.mean_loss.to_bits()).collect::<Vec<_>>())
        })
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3));
}

#[test]
fn eval_takes_every_fourth_point() {
    let pools: Pools = [8usize, 4, 4, 4].map(|n| (0..n).map(|i| TrainSample::new(i, 0, 0, Class::Background)).collect());
    let pts = eval_points(&pools);
    assert_eq!(pts.len(), 5);
    assert_eq!(pts.iter().map(|p| p.image).collect::<Vec<_>>(), vec![0, 4, 0, 0, 0]);
}

#[test]
fn biased_net_is_perfect_on_its_class() {
    let mut net = Cnn::init(TINY, DEFAULT_SLOPE, 8).unwrap();
    net.params.output.weights.fill(0.0);
    net.params.output.biases = vec![0.0, 0.0, 50.0, 0.0];
    let (inputs, _) = toy_task(40, 8);
    let mut pools: Pools = Default::default();
    pools[2] = (0..40).map(|i| TrainSample::new(i, 0, 0, Class::Fovea)).collect();
    let r = epoch_eval(&net, &inputs, &pools).unwrap();
    assert_eq!((r.evaluated(), r.correct()), (10, 10));
    assert_eq!(r.accuracy(), 1.0);
}

#[test]
fn untrained_net_is_near_chance() {
    let g = Geometry::CANONICAL;
    let per_class = 1000;
    let evaluated = per_class / 4;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<f64> = (0..4 * evaluated * g.input_len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let inputs = PrecomputedInputs::new(g.input_len(), rows).unwrap();
    let pools: Pools = Class::ALL.map(|c| {
        (0..per_class)
            .map(|i| TrainSample::new(c.index() * evaluated + i / 4, 0, 0, c))
            .collect()
    });
    let net = Cnn::init(g, DEFAULT_SLOPE, 9).unwrap();
    let r = epoch_eval(&net, &inputs, &pools).unwrap();
    assert_eq!(r.evaluated(), 1000);
    assert!((0.15..=0.40).contains(&r.accuracy()), "accuracy {}", r.accuracy());
}

#[test]
fn best_epoch_prefers_the_earliest_tie() {
    let (inputs, samples) = toy_task(20, 10);
    let h = toy_hyper(20);
    let seq = [0.8, 0.9, 0.9, 0.7];
    let mut k = 0;
    let mut seen = Vec::new();
    let out = train_select(
        TrainState::fresh(Cnn::init(TINY, DEFAULT_SLOPE, 10).unwrap()),
        &inputs,
        &samples,
        &h,
        |_| {
            k += 1;
            Ok(seq[k - 1])
        },
        |r, net| {
            seen.push((r.epoch, net.clone()));
            Ok(())
        },
    )
    .unwrap();
    assert_eq!(out.best_epoch, 2);
    assert_eq!(best_epoch(&out.log), Some(2));
    assert_eq!(out.best, seen[1].1);
    assert_eq!(out.last, seen[3].1);
    assert_eq!(out.log.iter().map(|r| r.eval_accuracy).collect::<Vec<_>>(), seq);

    let mut k = 0;
    let rising = train_select(
        TrainState::fresh(Cnn::init(TINY, DEFAULT_SLOPE, 10).unwrap()),
        &inputs,
        &samples,
        &h,
        |_| {
            k += 1;
            Ok(k as f64 / 10.0)
        },
        |_, _| Ok(()),
    )
    .unwrap();
    assert_eq!(rising.best_epoch, 4);
    assert_eq!(rising.best, rising.last);
}

#[test]
fn resume_from_checkpoint_is_exact() {
    let (inputs, samples) = toy_task(40, 12);
    let h = toy_hyper(40);
    let eval = |net: &Cnn| Ok(net.params.output.biases[0].abs().fract());
    let init = Cnn::init(TINY, DEFAULT_SLOPE, 12).unwrap();

    let mut checkpoints = Vec::new();
    let straight = train_select(TrainState::fresh(init.clone()), &inputs, &samples, &h, eval, |_, net| {
        checkpoints.push(encode_model(net));
        Ok(())
    })
    .unwrap();

    let half = Hyperparams { epochs: 2, ..h };
    let first = train_select(TrainState::fresh(init), &inputs, &samples, &half, eval, |_, _| Ok(())).unwrap();
    let restored = decode_model(&checkpoints[1]).unwrap();
    assert_eq!(restored, first.last);
    let best = decode_model(&checkpoints[first.best_epoch - 1]).unwrap();
    let state = TrainState::resume(restored, first.log.clone(), best).unwrap();
    let resumed = train_select(state, &inputs, &samples, &h, eval, |_, _| Ok(())).unwrap();

    assert_eq!(bits(&resumed.last), bits(&straight.last));
    assert_eq!(bits(&resumed.best), bits(&straight.best));
    assert_eq!(resumed.best_epoch, straight.best_epoch);
    let strip = |log: &[EpochRecord]| -> Vec<(usize, u64, u64)> {
        log.iter().map(|r| (r.epoch, r.mean_loss.to_bits(), r.eval_accuracy.to_bits())).collect()
    };
    assert_eq!(strip(&resumed.log), strip(&straight.log));
}

#[test]
fn log_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train_log.csv");
    let log = vec![
        EpochRecord {
            epoch: 1,
            mean_loss: 0.1 + 0.2,
            eval_accuracy: 2.0 / 3.0,
            wall_seconds: 1.5,
        },
        EpochRecord {
            epoch: 2,
            mean_loss: 1e-300,
            eval_accuracy: 1.0,
            wall_seconds: 0.25,
        },
    ];
    write_log(&path, &log).unwrap();
    assert_eq!(read_log(&path).unwrap(), log);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("epoch,mean_loss,eval_accuracy,wall_seconds\n1,"));
    std::fs::write(&path, "epoch,mean_loss,eval_accuracy,wall_seconds\n1,x,0.5,1\n").unwrap();
    assert!(read_log(&path).is_err());
    assert_eq!(checkpoint_path("/tmp/run", 7), std::path::PathBuf::from("/tmp/run/epoch_007.fseg"));
}
