use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use sca_core::cdp::CdpConfig;
use sca_core::data::{generate, Sample, SynthConfig};
use sca_core::rng::seeded;
use sca_core::segnet::{build_network, checkpoint, predict_labels, Mode, Network, NetworkConfig};
use sca_core::training::{
    accumulate_confusion, class_weights, evaluate, history_csv, metrics_from_confusion, poly_lr, sample_gradient,
    train, Metrics, TrainConfig,
};
use sca_core::{LabelMap, IGNORE_LABEL};

fn tiny(mode: Mode) -> NetworkConfig {
    NetworkConfig {
        input_height: 16,
        input_width: 16,
        encoder_widths: vec![4, 6],
        downsample: 4,
        sca_in: 6,
        sca_out: 6,
        cdp: CdpConfig { layers: 1, features: 4 },
        classes: 4,
        mode,
    }
}

fn tiny_data(n: usize) -> Vec<Sample> {
    generate(&SynthConfig {
        height: 16,
        width: 16,
        train_samples: n,
        test_samples: 1,
        cue_size: 3,
        region_size: 8,
        cue_gap: 1,
        ..SynthConfig::default()
    })
    .unwrap()
    .train
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

/// Metrics straight from the definitions, one pixel at a time.
fn oracle(pairs: &[(LabelMap, LabelMap)], k: usize) -> Metrics {
    let mut confusion = vec![vec![0u64; k]; k];
    let (mut total, mut correct) = (0u64, 0u64);
    let mut truth_count = vec![0u64; k];
    let mut pred_count = vec![0u64; k];
    let mut hits = vec![0u64; k];
    for (pred, truth) in pairs {
        for r in 0..truth.height() {
            for c in 0..truth.width() {
                let t = truth.get(r, c);
                if t == IGNORE_LABEL {
                    continue;
                }
                let p = pred.get(r, c);
                let (t, p) = (t as usize, p as usize);
                confusion[t][p] += 1;
                total += 1;
                truth_count[t] += 1;
                pred_count[p] += 1;
                if t == p {
                    correct += 1;
                    hits[t] += 1;
                }
            }
        }
    }
    let mut class_accuracy = Vec::new();
    let mut class_iou = Vec::new();
    for c in 0..k {
        class_accuracy.push(if truth_count[c] > 0 { Some(hits[c] as f64 / truth_count[c] as f64) } else { None });
        let union = truth_count[c] + pred_count[c] - hits[c];
        class_iou.push(if union > 0 { Some(hits[c] as f64 / union as f64) } else { None });
    }
    let mean = |v: &Vec<Option<f64>>| {
        let (mut s, mut n) = (0.0, 0usize);
        for x in v.iter().flatten() {
            s += x;
            n += 1;
        }
        s / n as f64
    };
    Metrics {
        ppa: correct as f64 / total as f64,
        caa: mean(&class_accuracy),
        miou: mean(&class_iou),
        class_accuracy,
        class_iou,
        confusion,
    }
}

fn random_labels(rng: &mut impl Rng, h: usize, w: usize, k: u8, ignore: bool) -> LabelMap {
    let data = (0..h * w)
        .map(|_| if ignore && rng.gen_bool(0.1) { IGNORE_LABEL } else { rng.gen_range(0..k) })
        .collect();
    LabelMap::from_vec(h, w, data).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let net = build_network(&tiny(Mode::Sca), 1).unwrap();
    let cfg = TrainConfig {
        lr_encoder: 0.0,
        lr_sca_decoder: 0.0,
        ..quick(2)
    };
    let out = train(net.clone(), &tiny_data(6), &cfg).unwrap();
    assert_eq!(out.network.params, net.params);
    assert_eq!(out.history.len(), 2);
}

#[test]
fn fixed_batch_loss_mostly_decreases() {
    let samples = tiny_data(3);
    let mut net = build_network(&tiny(Mode::Sca), 2).unwrap();
    let weights = vec![1.0; 4];
    let batch_loss = |net: &Network| -> (f64, Vec<Vec<f64>>) {
        let mut total = 0.0;
        let mut grad: Option<Vec<Vec<f64>>> = None;
        for s in &samples {
            let (l, g) = sample_gradient(net, s, &weights).unwrap();
            total += l / 3.0;
            let flat: Vec<Vec<f64>> = g.tensors().iter().map(|t| t.data.to_vec()).collect();
            grad = Some(match grad {
                None => flat,
                Some(acc) => acc
                    .into_iter()
                    .zip(flat)
                    .map(|(a, b)| a.iter().zip(&b).map(|(x, y)| x + y).collect())
                    .collect(),
            });
        }
        (total, grad.unwrap())
    };
    let (mut prev, _) = batch_loss(&net);
    let mut decreases = 0;
    for _ in 0..10 {
        let (_, g) = batch_loss(&net);
        for ((_, p), gt) in net.params.tensors_mut().into_iter().zip(&g) {
            for (v, d) in p.iter_mut().zip(gt) {
                *v -= 1e-3 * d / 3.0;
            }
        }
        let (now, _) = batch_loss(&net);
        decreases += usize::from(now < prev);
        prev = now;
    }
    assert!(decreases >= 5, "only {decreases} of 10 steps decreased the loss");
}

#[test]
fn training_is_bit_reproducible_across_runs_and_thread_counts() {
    let data = tiny_data(7);
    let run = |threads: usize| {
        let cfg = TrainConfig { threads, ..quick(3) };
        let out = train(build_network(&tiny(Mode::Sca), 5).unwrap(), &data, &cfg).unwrap();
        (checkpoint::to_bytes(&out.network), history_csv(&out.history))
    };
    let first = run(1);
    assert_eq!(first, run(1));
    assert_eq!(first, run(3));
}

#[test]
fn confusion_metrics_match_the_loop_oracle_on_fifty_pairs() {
    let mut rng = seeded(11);
    for _ in 0..50 {
        let k = rng.gen_range(2..6usize);
        let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let pairs: Vec<(LabelMap, LabelMap)> = (0..rng.gen_range(1..4))
            .map(|_| (random_labels(&mut rng, h, w, k as u8, false), random_labels(&mut rng, h, w, k as u8, true)))
            .collect();
        if pairs.iter().all(|(_, t)| t.data().iter().all(|&v| v == IGNORE_LABEL)) {
            continue;
        }
        let mut confusion = vec![vec![0u64; k]; k];
        for (p, t) in &pairs {
            accumulate_confusion(&mut confusion, p, t).unwrap();
        }
        assert_eq!(metrics_from_confusion(confusion).unwrap(), oracle(&pairs, k));
    }
}

#[test]
fn evaluate_matches_oracle_and_ignores_sample_order() {
    let net = build_network(&tiny(Mode::Sca), 3).unwrap();
    let mut samples = tiny_data(12);
    let pairs: Vec<(LabelMap, LabelMap)> = samples
        .iter()
        .map(|s| (predict_labels(&net.forward(&s.image).unwrap().logits), s.labels.clone()))
        .collect();
    let m = evaluate(&net, &samples).unwrap();
    assert_eq!(m, oracle(&pairs, 4));
    samples.shuffle(&mut seeded(4));
    assert_eq!(evaluate(&net, &samples).unwrap(), m);
}

#[test]
fn uniform_frequencies_give_unit_weights() {
    for k in 1..8 {
        assert_eq!(class_weights(&vec![1.0 / k as f64; k]).unwrap(), vec![1.0; k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weights_depend_only_on_ratios(counts in prop::collection::vec(0u64..100_000, 2..7), shift in 1u32..20) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let normalise = |scale: u64| {
            let total: u64 = counts.iter().map(|c| c * scale).sum();
            counts.iter().map(|c| (c * scale) as f64 / total as f64).collect::<Vec<_>>()
        };
        let w = class_weights(&normalise(1)).unwrap();
        prop_assert_eq!(&w, &class_weights(&normalise(2)).unwrap());
        prop_assert_eq!(&w, &class_weights(&normalise(1 << shift)).unwrap());
        prop_assert!(w.iter().all(|v| (1.0..=16.0).contains(v) && v.log2().fract() == 0.0));
    }

    #[test]
    fn poly_schedule_strictly_decreases(base in 1e-6f64..10.0, max in 1usize..5000) {
        let mut prev = f64::INFINITY;
        for it in 0..=max.min(300) {
            let lr = poly_lr(base, it, max).unwrap();
            prop_assert!(lr < prev);
            prev = lr;
        }
        prop_assert_eq!(poly_lr(base, max, max).unwrap(), 0.0);
    }
}
