use proptest::prelude::*;
use sca_core::data::pnm::{decode_labels, decode_ppm, encode_labels, encode_ppm};
use sca_core::data::{generate, load_dataset, save_dataset, ClassLayout, Dataset, Sample, SynthConfig};
use sca_core::{FeatureMap, LabelMap};

fn ambiguous_pixels(samples: &[Sample], layout: &ClassLayout) -> Vec<([f64; 3], bool)> {
    let mut out = Vec::new();
    for s in samples {
        for (p, &label) in s.labels.data().iter().enumerate() {
            if layout.is_ambiguous(label) {
                let v = s.image.neuron(p);
                out.push(([v[0], v[1], v[2]], label == layout.ambiguous_a));
            }
        }
    }
    out
}

/// Best accuracy of any single-channel threshold rule `v > t ⇒ A` (or its
/// reverse), found by sweeping every distinct value.
fn best_stump(pixels: &[([f64; 3], bool)]) -> f64 {
    let total = pixels.len() as f64;
    let total_a = pixels.iter().filter(|p| p.1).count() as f64;
    let mut best = 0.0f64;
    for c in 0..3 {
        let mut sorted: Vec<(f64, bool)> = pixels.iter().map(|(v, a)| (v[c], *a)).collect();
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
        // rule "above the cut is A": correct = A above + B at or below
        let (mut a_below, mut b_below) = (0.0, 0.0);
        let mut k = 0;
        loop {
            let correct = (total_a - a_below) + b_below;
            best = best.max(correct / total).max((total - correct) / total);
            if k == sorted.len() {
                break;
            }
            let v = sorted[k].0;
            while k < sorted.len() && sorted[k].0 == v {
                if sorted[k].1 {
                    a_below += 1.0;
                } else {
                    b_below += 1.0;
                }
                k += 1;
            }
        }
    }
    best
}

#[test]
fn single_pixel_stump_cannot_beat_chance_but_the_cue_decides() {
    let cfg = SynthConfig::default();
    let ds = generate(&cfg).unwrap();
    let layout = ClassLayout::for_classes(cfg.classes).unwrap();
    for split in [&ds.train, &ds.test] {
        let pixels = ambiguous_pixels(split, &layout);
        assert!(!pixels.is_empty());
        let acc = best_stump(&pixels);
        assert!(acc <= 0.55, "stump accuracy {acc}");

        // reading the cue colour anywhere in the image labels every ambiguous pixel
        let mut hits = 0usize;
        let mut seen = 0usize;
        for s in split {
            let cue_a = (0..s.image.neurons()).any(|p| {
                let v = s.image.neuron(p);
                v[0] - v[2] > 0.4
            });
            for &label in s.labels.data() {
                if layout.is_ambiguous(label) {
                    seen += 1;
                    hits += usize::from((label == layout.ambiguous_a) == cue_a);
                }
            }
        }
        assert_eq!(hits, seen);
    }
}

#[test]
fn dataset_round_trip_bounds() {
    let cfg = SynthConfig {
        train_samples: 6,
        test_samples: 4,
        classes: 5,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back: Dataset = load_dataset(dir.path(), 5).unwrap();
    assert_eq!(back.train.len(), 6);
    assert_eq!(back.test.len(), 4);
    for (a, b) in ds.train.iter().chain(&ds.test).zip(back.train.iter().chain(&back.test)) {
        assert_eq!(a.labels, b.labels);
        assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-12);
    }
    // a second save of the loaded data is byte-stable
    let again = tempfile::tempdir().unwrap();
    save_dataset(&back, again.path()).unwrap();
    assert_eq!(load_dataset(again.path(), 5).unwrap(), back);
}

#[test]
fn frequencies_sum_to_one() {
    let ds = generate(&SynthConfig {
        train_samples: 10,
        test_samples: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let f = ds.class_frequencies().unwrap();
    assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(f.iter().all(|&v| v > 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pnm_round_trip(h in 1usize..9, w in 1usize..9, seed in 0u64..10_000) {
        let mut rng = sca_core::rng::seeded(seed);
        let image = FeatureMap::random(h, w, 3, 0.0, 1.0, &mut rng);
        let decoded = decode_ppm(&encode_ppm(&image).unwrap()).unwrap();
        prop_assert!(image.max_abs_diff(&decoded) <= 0.5 / 255.0 + 1e-12);
        prop_assert_eq!(encode_ppm(&decoded).unwrap(), encode_ppm(&image).unwrap());
        let labels = LabelMap::from_vec(h, w, (0..h * w).map(|k| ((k as u64 * 37 + seed) % 256) as u8).collect()).unwrap();
        prop_assert_eq!(decode_labels(&encode_labels(&labels)).unwrap(), labels);
    }
}
