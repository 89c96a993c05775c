use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, LabelMap};

/// Class-weighted softmax cross-entropy, averaged over supervised pixels.
///
/// `loss = (1 / P) Σ_p w[y_p] · (−log softmax(z_p)[y_p])` where `P` counts
/// pixels whose label differs from `ignore`. Returns the loss and its
/// gradient with respect to `logits`; ignored pixels get zero gradient.
pub fn weighted_cross_entropy(
    logits: &FeatureMap,
    labels: &LabelMap,
    class_weights: &[f64],
    ignore: Option<u8>,
) -> Result<(f64, FeatureMap)> {
    let k = logits.channels();
    if labels.height() != logits.height() || labels.width() != logits.width() {
        return Err(Error::shape(format!(
            "cross entropy: labels {}x{} vs logits {}",
            labels.height(),
            labels.width(),
            logits.shape_string()
        )));
    }
    if class_weights.len() != k {
        return Err(Error::shape(format!(
            "cross entropy: {} class weights for {k} classes",
            class_weights.len()
        )));
    }
    let mut supervised = 0usize;
    for &y in labels.data() {
        if Some(y) == ignore {
            continue;
        }
        if usize::from(y) >= k {
            return Err(Error::data(format!("label {y} out of range for {k} classes")));
        }
        supervised += 1;
    }
    let mut grad = FeatureMap::zeros(logits.height(), logits.width(), k);
    if supervised == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / supervised as f64;
    let mut total = 0.0;
    let mut probs = vec![0.0; k];
    for ((z, g), &y) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k))
        .zip(labels.data())
    {
        if Some(y) == ignore {
            continue;
        }
        let y = usize::from(y);
        let top = (0..k).fold(0, |m, c| if z[c] > z[m] { c } else { m });
        let max = z[top];
        let mut rest = 0.0;
        for (c, (p, &zi)) in probs.iter_mut().zip(z).enumerate() {
            *p = (zi - max).exp();
            if c != top {
                rest += *p;
            }
        }
        let sum = 1.0 + rest;
        let w = class_weights[y];
        total += w * (rest.ln_1p() - (z[y] - max));
        for (c, (gi, p)) in g.iter_mut().zip(&probs).enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            *gi = w * inv * (p / sum - target);
        }
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::IGNORE_LABEL;

    #[test]
    fn uniform_logits_give_log_k() {
        let z = FeatureMap::filled(2, 3, 2, 0.4);
        let y = LabelMap::from_vec(2, 3, vec![0, 1, 0, 1, 1, 0]).unwrap();
        let (loss, _) = weighted_cross_entropy(&z, &y, &[1.0, 1.0], None).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let y = LabelMap::from_vec(1, 1, vec![1]).unwrap();
        let mut prev = f64::INFINITY;
        for big in [1.0, 10.0, 100.0, 1000.0] {
            let z = FeatureMap::from_vec(1, 1, 3, vec![0.0, big, 0.0]).unwrap();
            let (loss, g) = weighted_cross_entropy(&z, &y, &[1.0; 3], None).unwrap();
            assert!(loss < prev && loss.is_finite() && g.all_finite());
            prev = loss;
        }
        assert!(prev < 1e-300);
    }

    #[test]
    fn uniform_weights_gradient_sums_to_zero_per_pixel() {
        let mut rng = crate::rng::seeded(9);
        let z = FeatureMap::random(3, 3, 4, -3.0, 3.0, &mut rng);
        let y = LabelMap::from_vec(3, 3, vec![0, 1, 2, 3, 0, 1, 2, 3, 0]).unwrap();
        let (_, g) = weighted_cross_entropy(&z, &y, &[1.0; 4], None).unwrap();
        for px in g.data().chunks(4) {
            assert!(px.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn ignored_pixels_do_not_contribute() {
        let z = FeatureMap::from_vec(1, 2, 2, vec![0.0, 0.0, 5.0, -5.0]).unwrap();
        let y = LabelMap::from_vec(1, 2, vec![0, IGNORE_LABEL]).unwrap();
        let (loss, g) = weighted_cross_entropy(&z, &y, &[1.0, 1.0], Some(IGNORE_LABEL)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(&g.data()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let z = FeatureMap::zeros(1, 1, 2);
        let y = LabelMap::from_vec(1, 1, vec![2]).unwrap();
        assert!(matches!(
            weighted_cross_entropy(&z, &y, &[1.0, 1.0], None),
            Err(Error::Data(_))
        ));
    }
}
