use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::segnet::{predict_labels, Network};
use crate::tensor::{LabelMap, IGNORE_LABEL};

/// Segmentation scores. `confusion[t][p]` counts pixels of true class `t`
/// predicted as `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub ppa: f64,
    pub caa: f64,
    pub miou: f64,
    /// `None` for classes absent from the ground truth.
    pub class_accuracy: Vec<Option<f64>>,
    /// `None` for classes absent from both ground truth and prediction.
    pub class_iou: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

/// Adds one prediction / ground-truth pair to `confusion`, skipping ignored pixels.
pub fn accumulate_confusion(confusion: &mut [Vec<u64>], predicted: &LabelMap, truth: &LabelMap) -> Result<()> {
    let k = confusion.len();
    if (predicted.height(), predicted.width()) != (truth.height(), truth.width()) {
        return Err(Error::shape(format!(
            "prediction {}x{} vs labels {}x{}",
            predicted.height(),
            predicted.width(),
            truth.height(),
            truth.width()
        )));
    }
    for (&p, &t) in predicted.data().iter().zip(truth.data()) {
        if t == IGNORE_LABEL {
            continue;
        }
        let (t, p) = (usize::from(t), usize::from(p));
        if t >= k || p >= k {
            return Err(Error::data(format!("label pair ({t}, {p}) out of range for {k} classes")));
        }
        confusion[t][p] += 1;
    }
    Ok(())
}

pub fn metrics_from_confusion(confusion: Vec<Vec<u64>>) -> Result<Metrics> {
    let k = confusion.len();
    if confusion.iter().any(|row| row.len() != k) {
        return Err(Error::shape("confusion matrix must be square"));
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::data("no labelled pixels to evaluate"));
    }
    let diag: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let mut class_accuracy = Vec::with_capacity(k);
    let mut class_iou = Vec::with_capacity(k);
    for c in 0..k {
        let truth: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        let hit = confusion[c][c];
        class_accuracy.push((truth > 0).then(|| hit as f64 / truth as f64));
        let union = truth + predicted - hit;
        class_iou.push((union > 0).then(|| hit as f64 / union as f64));
    }
    let mean = |v: &[Option<f64>]| {
        let present: Vec<f64> = v.iter().flatten().copied().collect();
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(Metrics {
        ppa: diag as f64 / total as f64,
        caa: mean(&class_accuracy),
        miou: mean(&class_iou),
        class_accuracy,
        class_iou,
        confusion,
    })
}

/// Confusion matrix of `net` over `samples`, then [`metrics_from_confusion`].
///
/// Samples are scored in parallel on the current rayon pool; the counts are
/// integers, so the result does not depend on the thread count.
pub fn evaluate(net: &Network, samples: &[Sample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::data("cannot evaluate on an empty sample set"));
    }
    let k = net.config().classes;
    let partial: Vec<Vec<Vec<u64>>> = samples
        .par_iter()
        .map(|s| {
            let logits = net.forward(&s.image)?.logits;
            let mut c = vec![vec![0u64; k]; k];
            accumulate_confusion(&mut c, &predict_labels(&logits), &s.labels)?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0u64; k]; k];
    for c in partial {
        for (row, add) in confusion.iter_mut().zip(c) {
            for (a, b) in row.iter_mut().zip(add) {
                *a += b;
            }
        }
    }
    metrics_from_confusion(confusion)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_confusion_fixture() {
        let m = metrics_from_confusion(vec![vec![3, 1], vec![2, 4]]).unwrap();
        assert!((m.ppa - 0.7).abs() < 1e-12);
        assert!((m.caa - (0.75 + 4.0 / 6.0) / 2.0).abs() < 1e-12);
        assert!((m.miou - (3.0 / 6.0 + 4.0 / 7.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_are_skipped() {
        let m = metrics_from_confusion(vec![vec![5, 0, 0], vec![0, 0, 0], vec![1, 0, 0]]).unwrap();
        assert_eq!(m.class_accuracy, vec![Some(1.0), None, Some(0.0)]);
        assert_eq!(m.class_iou, vec![Some(5.0 / 6.0), None, Some(0.0)]);
        assert!((m.caa - 0.5).abs() < 1e-15);
        assert!(metrics_from_confusion(vec![vec![0; 2]; 2]).is_err());
    }

    #[test]
    fn perfect_and_hopeless() {
        let truth = LabelMap::from_vec(1, 4, vec![0, 1, 1, IGNORE_LABEL]).unwrap();
        let mut c = vec![vec![0; 2]; 2];
        accumulate_confusion(&mut c, &LabelMap::from_vec(1, 4, vec![0, 1, 1, 0]).unwrap(), &truth).unwrap();
        let m = metrics_from_confusion(c).unwrap();
        assert_eq!((m.ppa, m.caa, m.miou), (1.0, 1.0, 1.0));
        let mut c = vec![vec![0; 2]; 2];
        accumulate_confusion(&mut c, &LabelMap::from_vec(1, 4, vec![1, 0, 0, 0]).unwrap(), &truth).unwrap();
        assert_eq!(metrics_from_confusion(c).unwrap().ppa, 0.0);
    }
}
