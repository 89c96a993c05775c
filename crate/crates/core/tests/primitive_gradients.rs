//! Every primitive backward against central differences (step 1e-5).

use proptest::prelude::*;
use rand::Rng;
use sca_core::nn::{
    bilinear_upsample, bilinear_upsample_backward, conv1x1, conv1x1_backward, conv3x3, conv3x3_backward, relu,
    relu_backward, softplus, softplus_backward, weighted_cross_entropy,
};
use sca_core::rng::seeded;
use sca_core::tensor::dot;
use sca_core::{FeatureMap, LabelMap, Matrix};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Returns the worst relative error of `analytic` against central
/// differences of `loss` over every coordinate of `values`.
fn check(values: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut v = values.to_vec();
    for k in 0..v.len() {
        let base = v[k];
        v[k] = base + STEP;
        let plus = loss(&v);
        v[k] = base - STEP;
        let minus = loss(&v);
        v[k] = base;
        worst = worst.max(rel(analytic[k], (plus - minus) / (2.0 * STEP)));
    }
    worst
}

fn map_like(x: &FeatureMap, v: &[f64]) -> FeatureMap {
    FeatureMap::from_vec(x.height(), x.width(), x.channels(), v.to_vec()).unwrap()
}

#[test]
fn conv1x1_gradients() {
    for seed in 0..5 {
        let mut rng = seeded(seed);
        let x = FeatureMap::random(6, 5, 4, -1.0, 1.0, &mut rng);
        let w = Matrix::random(3, 4, -1.0, 1.0, &mut rng);
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = FeatureMap::random(6, 5, 3, -1.0, 1.0, &mut rng);
        let g = conv1x1_backward(&x, &w, &r).unwrap();
        let f = |x: &FeatureMap, w: &Matrix, b: &[f64]| dot(conv1x1(x, w, b).unwrap().data(), r.data());
        assert!(check(x.data(), g.input.data(), |v| f(&map_like(&x, v), &w, &b)) < TOL);
        assert!(check(w.data(), g.weight.data(), |v| f(&x, &Matrix::from_vec(3, 4, v.to_vec()).unwrap(), &b)) < TOL);
        assert!(check(&b, &g.bias, |v| f(&x, &w, v)) < TOL);
    }
}

#[test]
fn conv3x3_gradients_both_strides() {
    for (seed, stride, (h, wd)) in [(0, 1, (5, 5)), (1, 2, (6, 6)), (2, 2, (5, 6)), (3, 1, (3, 4))] {
        let mut rng = seeded(seed);
        let x = FeatureMap::random(h, wd, 3, -1.0, 1.0, &mut rng);
        let w = Matrix::random(4, 27, -1.0, 1.0, &mut rng);
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = conv3x3(&x, &w, &b, stride).unwrap();
        let r = FeatureMap::random(out.height(), out.width(), 4, -1.0, 1.0, &mut rng);
        let g = conv3x3_backward(&x, &w, stride, &r).unwrap();
        let f = |x: &FeatureMap, w: &Matrix, b: &[f64]| dot(conv3x3(x, w, b, stride).unwrap().data(), r.data());
        assert!(check(x.data(), g.input.data(), |v| f(&map_like(&x, v), &w, &b)) < TOL);
        assert!(check(w.data(), g.weight.data(), |v| f(&x, &Matrix::from_vec(4, 27, v.to_vec()).unwrap(), &b)) < TOL);
        assert!(check(&b, &g.bias, |v| f(&x, &w, v)) < TOL);
    }
}

#[test]
fn activation_gradients() {
    let mut rng = seeded(4);
    // keep ReLU inputs away from the kink so ±step never crosses it
    let x = FeatureMap::random(4, 4, 3, -1.0, 1.0, &mut rng).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let r = FeatureMap::random(4, 4, 3, -1.0, 1.0, &mut rng);
    let g = relu_backward(&relu(&x), &r);
    assert!(check(x.data(), g.data(), |v| dot(relu(&map_like(&x, v)).data(), r.data())) < TOL);
    let x = FeatureMap::random(4, 4, 3, -8.0, 8.0, &mut rng);
    let g = softplus_backward(&x, &r);
    assert!(check(x.data(), g.data(), |v| dot(softplus(&map_like(&x, v)).data(), r.data())) < TOL);
}

#[test]
fn upsample_gradients() {
    let mut rng = seeded(5);
    for factor in 1..5 {
        let x = FeatureMap::random(3, 2, 2, -1.0, 1.0, &mut rng);
        let r = FeatureMap::random(3 * factor, 2 * factor, 2, -1.0, 1.0, &mut rng);
        let g = bilinear_upsample_backward(x.dims(), factor, &r).unwrap();
        let worst = check(x.data(), g.data(), |v| {
            dot(bilinear_upsample(&map_like(&x, v), factor).unwrap().data(), r.data())
        });
        assert!(worst < TOL);
    }
}

#[test]
fn cross_entropy_loss_and_gradient() {
    let mut rng = seeded(6);
    let z = FeatureMap::random(2, 2, 3, -2.0, 2.0, &mut rng);
    let y = LabelMap::from_vec(2, 2, vec![0, 2, 255, 1]).unwrap();
    let w = [1.0, 2.0, 4.0];
    let (loss, g) = weighted_cross_entropy(&z, &y, &w, Some(255)).unwrap();

    // independent evaluation of the mean weighted negative log-likelihood
    let mut want = 0.0;
    for (p, &label) in y.data().iter().enumerate() {
        if label == 255 {
            continue;
        }
        let logits = &z.data()[p * 3..p * 3 + 3];
        let norm: f64 = logits.iter().map(|v| v.exp()).sum();
        want += w[label as usize] * -(logits[label as usize].exp() / norm).ln();
    }
    assert!((loss - want / 3.0).abs() < 1e-12);
    assert!(check(z.data(), g.data(), |v| weighted_cross_entropy(&map_like(&z, v), &y, &w, Some(255)).unwrap().0) < TOL);
    assert!(g.pixel(1, 0).iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv1x1_is_linear(seed in 0u64..100_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = seeded(seed);
        let x = FeatureMap::random(3, 2, 4, -1.0, 1.0, &mut rng);
        let y = FeatureMap::random(3, 2, 4, -1.0, 1.0, &mut rng);
        let w = Matrix::random(5, 4, -1.0, 1.0, &mut rng);
        let zero = vec![0.0; 5];
        let combo: Vec<f64> = x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect();
        let lhs = conv1x1(&map_like(&x, &combo), &w, &zero).unwrap();
        let cx = conv1x1(&x, &w, &zero).unwrap();
        let cy = conv1x1(&y, &w, &zero).unwrap();
        let rhs: Vec<f64> = cx.data().iter().zip(cy.data()).map(|(u, v)| a * u + b * v).collect();
        prop_assert!(lhs.max_abs_diff(&map_like(&lhs, &rhs)) <= 1e-12);
    }

    #[test]
    fn constant_map_mean_is_preserved(v in -100.0f64..100.0, factor in 1usize..6, h in 1usize..5, w in 1usize..5) {
        let up = bilinear_upsample(&FeatureMap::filled(h, w, 2, v), factor).unwrap();
        prop_assert!(up.data().iter().all(|&u| u == v));
    }

    #[test]
    fn uniform_weight_gradient_sums_to_zero(seed in 0u64..100_000) {
        let mut rng = seeded(seed);
        let z = FeatureMap::random(3, 3, 4, -5.0, 5.0, &mut rng);
        let y = LabelMap::from_vec(3, 3, (0..9).map(|_| rng.gen_range(0..4u8)).collect()).unwrap();
        let (_, g) = weighted_cross_entropy(&z, &y, &[1.0; 4], None).unwrap();
        for p in 0..9 {
            prop_assert!(g.data()[p * 4..p * 4 + 4].iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
