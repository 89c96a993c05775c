//! Bilinear upsampling by an integer factor with the align-corners-false
//! convention: output index `o` samples input coordinate
//! `(o + 0.5) / factor - 0.5`, clamped to the valid range.

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Per output index: `(lower input index, upper input index, upper weight)`.
fn sample_positions(input: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let t = if hi == lo { 0.0 } else { src - lo as f64 };
            (lo, hi, t)
        })
        .collect()
}

pub fn bilinear_upsample(input: &FeatureMap, factor: usize) -> Result<FeatureMap> {
    if factor == 0 {
        return Err(Error::shape("bilinear_upsample: factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let (h, w, c) = input.dims();
    let ys = sample_positions(h, factor);
    let xs = sample_positions(w, factor);
    let mut out = FeatureMap::zeros(h * factor, w * factor, c);
    for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
            let (p00, p01, p10, p11) = (
                input.pixel(y0, x0),
                input.pixel(y0, x1),
                input.pixel(y1, x0),
                input.pixel(y1, x1),
            );
            for (k, o) in out.pixel_mut(oy, ox).iter_mut().enumerate() {
                let top = p00[k] + tx * (p01[k] - p00[k]);
                let bottom = p10[k] + tx * (p11[k] - p10[k]);
                *o = top + ty * (bottom - top);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_upsample`]: scatters `d_out` back onto the input grid.
pub fn bilinear_upsample_backward(
    input_dims: (usize, usize, usize),
    factor: usize,
    d_out: &FeatureMap,
) -> Result<FeatureMap> {
    let (h, w, c) = input_dims;
    if factor == 0 || d_out.dims() != (h * factor, w * factor, c) {
        return Err(Error::shape(format!(
            "bilinear_upsample_backward: upstream {} does not match {h}x{w}x{c} at factor {factor}",
            d_out.shape_string()
        )));
    }
    if factor == 1 {
        return Ok(d_out.clone());
    }
    let ys = sample_positions(h, factor);
    let xs = sample_positions(w, factor);
    let mut d_in = FeatureMap::zeros(h, w, c);
    for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
            let g = d_out.pixel(oy, ox);
            let taps = [
                (y0, x0, (1.0 - ty) * (1.0 - tx)),
                (y0, x1, (1.0 - ty) * tx),
                (y1, x0, ty * (1.0 - tx)),
                (y1, x1, ty * tx),
            ];
            for (yy, xx, wt) in taps {
                if wt != 0.0 {
                    for (d, gk) in d_in.pixel_mut(yy, xx).iter_mut().zip(g) {
                        *d += wt * gk;
                    }
                }
            }
        }
    }
    Ok(d_in)
}
