//! Direct-loop 1×1 and 3×3 convolutions with their backward passes.
//!
//! A 3×3 kernel is stored as a `Matrix[Cout, 9·Cin]` whose column index is
//! `(ky * 3 + kx) * Cin + ci`; padding is one zero pixel on every border.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Matrix};

/// Weights and bias of one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(out_channels: usize, fan_in: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_channels, fan_in),
            bias: vec![0.0; out_channels],
        }
    }

    /// He-uniform weights, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero bias.
    pub fn he_uniform<R: Rng>(out_channels: usize, fan_in: usize, rng: &mut R) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        Self {
            weight: Matrix::random(out_channels, fan_in, -limit, limit, rng),
            bias: vec![0.0; out_channels],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: FeatureMap,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

fn check_bias(weight: &Matrix, bias: &[f64]) -> Result<()> {
    if bias.len() != weight.rows() {
        return Err(Error::shape(format!(
            "bias length {} does not match weight rows {}",
            bias.len(),
            weight.rows()
        )));
    }
    Ok(())
}

pub fn conv1x1(input: &FeatureMap, weight: &Matrix, bias: &[f64]) -> Result<FeatureMap> {
    if weight.cols() != input.channels() {
        return Err(Error::shape(format!(
            "conv1x1: weight {} expects {} input channels, input is {}",
            weight.shape_string(),
            weight.cols(),
            input.shape_string()
        )));
    }
    check_bias(weight, bias)?;
    let cout = weight.rows();
    let mut out = FeatureMap::zeros(input.height(), input.width(), cout);
    for (x, y) in input
        .data()
        .chunks_exact(input.channels())
        .zip(out.data_mut().chunks_exact_mut(cout))
    {
        weight.mul_vec_into(x, y);
        for (yo, b) in y.iter_mut().zip(bias) {
            *yo += b;
        }
    }
    Ok(out)
}

pub fn conv1x1_backward(input: &FeatureMap, weight: &Matrix, d_out: &FeatureMap) -> Result<ConvGrads> {
    let cout = weight.rows();
    if weight.cols() != input.channels()
        || d_out.height() != input.height()
        || d_out.width() != input.width()
        || d_out.channels() != cout
    {
        return Err(Error::shape(format!(
            "conv1x1_backward: input {}, weight {}, upstream {}",
            input.shape_string(),
            weight.shape_string(),
            d_out.shape_string()
        )));
    }
    let mut d_input = FeatureMap::zeros(input.height(), input.width(), input.channels());
    let mut d_weight = Matrix::zeros(cout, input.channels());
    let mut d_bias = vec![0.0; cout];
    for ((x, dy), dx) in input
        .data()
        .chunks_exact(input.channels())
        .zip(d_out.data().chunks_exact(cout))
        .zip(d_input.data_mut().chunks_exact_mut(input.channels()))
    {
        weight.mul_transpose_vec_acc(dy, dx);
        d_weight.add_outer(1.0, dy, x);
        for (db, g) in d_bias.iter_mut().zip(dy) {
            *db += g;
        }
    }
    Ok(ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}

pub fn conv3x3_output_size(size: usize, stride: usize) -> usize {
    size.div_ceil(stride)
}

fn check_conv3x3(input: &FeatureMap, weight: &Matrix, stride: usize) -> Result<()> {
    if stride != 1 && stride != 2 {
        return Err(Error::shape(format!("conv3x3: stride must be 1 or 2, got {stride}")));
    }
    if weight.cols() != 9 * input.channels() {
        return Err(Error::shape(format!(
            "conv3x3: weight {} expects {} input channels, input is {}",
            weight.shape_string(),
            weight.cols() / 9,
            input.shape_string()
        )));
    }
    Ok(())
}

/// Gathers the zero-padded 3×3 neighbourhood centred at input `(cy, cx)`.
fn gather_patch(input: &FeatureMap, cy: usize, cx: usize, patch: &mut [f64]) {
    let cin = input.channels();
    for ky in 0..3 {
        for kx in 0..3 {
            let dst = &mut patch[(ky * 3 + kx) * cin..(ky * 3 + kx + 1) * cin];
            let iy = (cy + ky).wrapping_sub(1);
            let ix = (cx + kx).wrapping_sub(1);
            if iy < input.height() && ix < input.width() {
                dst.copy_from_slice(input.pixel(iy, ix));
            } else {
                dst.fill(0.0);
            }
        }
    }
}

pub fn conv3x3(input: &FeatureMap, weight: &Matrix, bias: &[f64], stride: usize) -> Result<FeatureMap> {
    check_conv3x3(input, weight, stride)?;
    check_bias(weight, bias)?;
    let oh = conv3x3_output_size(input.height(), stride);
    let ow = conv3x3_output_size(input.width(), stride);
    let mut out = FeatureMap::zeros(oh, ow, weight.rows());
    let mut patch = vec![0.0; weight.cols()];
    for oy in 0..oh {
        for ox in 0..ow {
            gather_patch(input, oy * stride, ox * stride, &mut patch);
            let y = out.pixel_mut(oy, ox);
            weight.mul_vec_into(&patch, y);
            for (yo, b) in y.iter_mut().zip(bias) {
                *yo += b;
            }
        }
    }
    Ok(out)
}

pub fn conv3x3_backward(
    input: &FeatureMap,
    weight: &Matrix,
    stride: usize,
    d_out: &FeatureMap,
) -> Result<ConvGrads> {
    check_conv3x3(input, weight, stride)?;
    let oh = conv3x3_output_size(input.height(), stride);
    let ow = conv3x3_output_size(input.width(), stride);
    if d_out.dims() != (oh, ow, weight.rows()) {
        return Err(Error::shape(format!(
            "conv3x3_backward: upstream {} does not match output {oh}x{ow}x{}",
            d_out.shape_string(),
            weight.rows()
        )));
    }
    let cin = input.channels();
    let mut d_input = FeatureMap::zeros(input.height(), input.width(), cin);
    let mut d_weight = Matrix::zeros(weight.rows(), weight.cols());
    let mut d_bias = vec![0.0; weight.rows()];
    let mut patch = vec![0.0; weight.cols()];
    let mut d_patch = vec![0.0; weight.cols()];
    for oy in 0..oh {
        for ox in 0..ow {
            let dy = d_out.pixel(oy, ox);
            if dy.iter().all(|&g| g == 0.0) {
                continue;
            }
            let (cy, cx) = (oy * stride, ox * stride);
            gather_patch(input, cy, cx, &mut patch);
            d_weight.add_outer(1.0, dy, &patch);
            for (db, g) in d_bias.iter_mut().zip(dy) {
                *db += g;
            }
            d_patch.fill(0.0);
            weight.mul_transpose_vec_acc(dy, &mut d_patch);
            for ky in 0..3 {
                for kx in 0..3 {
                    let iy = (cy + ky).wrapping_sub(1);
                    let ix = (cx + kx).wrapping_sub(1);
                    if iy < input.height() && ix < input.width() {
                        let src = &d_patch[(ky * 3 + kx) * cin..(ky * 3 + kx + 1) * cin];
                        for (d, s) in d_input.pixel_mut(iy, ix).iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}
