use crate::tensor::FeatureMap;

#[inline]
pub fn relu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `log(1 + exp(x))` without overflow for large `|x|`.
#[inline]
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of softplus, the logistic sigmoid.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(input: &FeatureMap) -> FeatureMap {
    input.map(relu_scalar)
}

/// Backward of ReLU given its forward *output* (the gate is `output > 0`).
pub fn relu_backward(output: &FeatureMap, d_out: &FeatureMap) -> FeatureMap {
    assert!(output.same_dims(d_out));
    let mut d = d_out.clone();
    for (g, &y) in d.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    d
}

pub fn softplus(input: &FeatureMap) -> FeatureMap {
    input.map(softplus_scalar)
}

/// Backward of softplus given its forward *input*.
pub fn softplus_backward(input: &FeatureMap, d_out: &FeatureMap) -> FeatureMap {
    assert!(input.same_dims(d_out));
    let mut d = d_out.clone();
    for (g, &x) in d.data_mut().iter_mut().zip(input.data()) {
        *g *= sigmoid_scalar(x);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        assert_eq!(relu_scalar(-1.0), 0.0);
        assert_eq!(relu_scalar(2.0), 2.0);
    }

    #[test]
    fn softplus_values() {
        assert!((softplus_scalar(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus_scalar(50.0) - 50.0).abs() < 1e-9);
        assert!(softplus_scalar(800.0).is_finite());
        assert!(softplus_scalar(-800.0) >= 0.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(sigmoid_scalar(-800.0).is_finite());
        assert_eq!(sigmoid_scalar(800.0), 1.0);
    }
}
