//! End-to-end segmentation network:
//! conv3x3 encoder → context aggregation → 1×1 class head → bilinear ×s.
//!
//! The aggregation step gets its dependency matrix from the predictor in
//! [`Mode::Sca`], or uses a fixed matrix in the two ablation modes.

pub mod checkpoint;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{from_bytes, load, save, to_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::cdp::{cdp_backward, cdp_forward, CdpCache, CdpConfig, CdpParams};
use crate::error::{Error, Result};
use crate::nn::{
    bilinear_upsample, bilinear_upsample_backward, conv1x1, conv1x1_backward, conv3x3, conv3x3_backward, relu,
    relu_backward, ConvParams,
};
use crate::rng;
use crate::sca::{sca_backward, sca_forward, DependencyMatrix, ScaParams};
use crate::tensor::{FeatureMap, LabelMap};

/// How the dependency matrix is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Predicted per image by the dependency predictor.
    Sca,
    /// Identity matrix: no context, the operator reduces to a 1×1 convolution.
    BaselineNo,
    /// All-ones matrix: every neuron receives the mean context feature.
    BaselineAve,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::BaselineNo, Mode::BaselineAve, Mode::Sca];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sca => "sca",
            Mode::BaselineNo => "baseline_no",
            Mode::BaselineAve => "baseline_ave",
        }
    }

    fn code(self) -> u32 {
        match self {
            Mode::Sca => 0,
            Mode::BaselineNo => 1,
            Mode::BaselineAve => 2,
        }
    }

    fn from_code(code: u32) -> Option<Mode> {
        match code {
            0 => Some(Mode::Sca),
            1 => Some(Mode::BaselineNo),
            2 => Some(Mode::BaselineAve),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "sca" => Ok(Mode::Sca),
            "baseline_no" => Ok(Mode::BaselineNo),
            "baseline_ave" => Ok(Mode::BaselineAve),
            other => Err(Error::config(
                "mode",
                format!("unknown mode {other:?}; expected sca, baseline_no or baseline_ave"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Widths of the encoder blocks before the last one; the last block outputs `sca_in` channels.
    pub encoder_widths: Vec<usize>,
    /// Total encoder downsampling `s`, a power of two. The first `log2(s)` blocks use stride 2.
    pub downsample: usize,
    /// Aggregation input channels `N`.
    pub sca_in: usize,
    /// Aggregation output channels `M`.
    pub sca_out: usize,
    pub cdp: CdpConfig,
    pub classes: usize,
    pub mode: Mode,
}

impl Default for NetworkConfig {
    /// Desk-scale network: 32×32 input, widths 16/32/32, `s = 4`, `N = M = 32`,
    /// three hidden predictor layers of 32 channels, four classes.
    fn default() -> Self {
        Self {
            input_height: 32,
            input_width: 32,
            encoder_widths: vec![16, 32],
            downsample: 4,
            sca_in: 32,
            sca_out: 32,
            cdp: CdpConfig::DESK,
            classes: 4,
            mode: Mode::Sca,
        }
    }
}

impl NetworkConfig {
    /// Full-width aggregation and predictor: `N = M = 512`, `K_l = 3`, `K_f = 512`.
    pub fn full_width(input_height: usize, input_width: usize, classes: usize) -> Self {
        Self {
            input_height,
            input_width,
            encoder_widths: vec![64, 128],
            downsample: 4,
            sca_in: 512,
            sca_out: 512,
            cdp: CdpConfig::default(),
            classes,
            mode: Mode::Sca,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("downsample", self.downsample),
            ("sca_in", self.sca_in),
            ("sca_out", self.sca_out),
            ("cdp_features", self.cdp.features),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.downsample.is_power_of_two() {
            return Err(Error::config("downsample", format!("{} is not a power of two", self.downsample)));
        }
        let blocks = self.encoder_widths.len() + 1;
        if self.downsample.trailing_zeros() as usize > blocks {
            return Err(Error::config(
                "downsample",
                format!("{} needs more than the {blocks} encoder blocks", self.downsample),
            ));
        }
        if self.encoder_widths.contains(&0) {
            return Err(Error::config("encoder_widths", "widths must be positive"));
        }
        if self.input_height % self.downsample != 0 {
            return Err(Error::config(
                "input_height",
                format!("{} is not divisible by downsample {}", self.input_height, self.downsample),
            ));
        }
        if self.input_width % self.downsample != 0 {
            return Err(Error::config(
                "input_width",
                format!("{} is not divisible by downsample {}", self.input_width, self.downsample),
            ));
        }
        if !(2..=255).contains(&self.classes) {
            return Err(Error::config("classes", format!("must lie in [2, 255], got {}", self.classes)));
        }
        Ok(())
    }

    /// Grid of neurons the aggregation operates on.
    pub fn feature_dims(&self) -> (usize, usize) {
        (self.input_height / self.downsample, self.input_width / self.downsample)
    }

    pub fn neurons(&self) -> usize {
        let (h, w) = self.feature_dims();
        h * w
    }

    /// Stride of each encoder block.
    pub fn encoder_strides(&self) -> Vec<usize> {
        let halvings = self.downsample.trailing_zeros() as usize;
        (0..self.encoder_widths.len() + 1)
            .map(|l| if l < halvings { 2 } else { 1 })
            .collect()
    }

    /// `(in, out)` channels of each encoder block.
    pub fn encoder_channels(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![3];
        widths.extend(&self.encoder_widths);
        widths.push(self.sca_in);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Which learning-rate tier a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Sca,
    Cdp,
    Decoder,
}

/// Read-only view of one named parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamTensor<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

/// Every trainable tensor of a [`Network`]; gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    /// conv3x3 blocks; weights are `Cout × 9·Cin`.
    pub encoder: Vec<ConvParams>,
    pub sca: ScaParams,
    pub cdp: Option<CdpParams>,
    /// 1×1 class head, `K × M`.
    pub classifier: ConvParams,
}

fn conv_dims(p: &ConvParams, kernel3: bool) -> Vec<usize> {
    if kernel3 {
        vec![p.weight.rows(), 3, 3, p.weight.cols() / 9]
    } else {
        vec![p.weight.rows(), p.weight.cols()]
    }
}

impl NetParams {
    fn zeros(config: &NetworkConfig) -> Self {
        let encoder = config
            .encoder_channels()
            .into_iter()
            .map(|(cin, cout)| ConvParams::zeros(cout, 9 * cin))
            .collect();
        let sca = ScaParams {
            w_d: crate::tensor::Matrix::zeros(config.sca_out, config.sca_in),
            w_c: crate::tensor::Matrix::zeros(config.sca_out, config.sca_in),
        };
        let cdp = (config.mode == Mode::Sca).then(|| CdpParams::zeros(config.sca_in, config.cdp));
        Self {
            encoder,
            sca,
            cdp,
            classifier: ConvParams::zeros(config.classes, config.sca_out),
        }
    }

    /// A zero tensor of every shape, used to accumulate gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// All tensors in fixed order with names, groups and logical dims.
    pub fn tensors(&self) -> Vec<ParamTensor<'_>> {
        let mut out = Vec::new();
        for (l, p) in self.encoder.iter().enumerate() {
            out.push(ParamTensor {
                name: format!("encoder.{l}.weight"),
                group: ParamGroup::Encoder,
                dims: conv_dims(p, true),
                data: p.weight.data(),
            });
            out.push(ParamTensor {
                name: format!("encoder.{l}.bias"),
                group: ParamGroup::Encoder,
                dims: vec![p.bias.len()],
                data: &p.bias,
            });
        }
        for (name, m) in [("sca.w_d", &self.sca.w_d), ("sca.w_c", &self.sca.w_c)] {
            out.push(ParamTensor {
                name: name.to_string(),
                group: ParamGroup::Sca,
                dims: vec![m.rows(), m.cols()],
                data: m.data(),
            });
        }
        if let Some(cdp) = &self.cdp {
            let layers = cdp
                .hidden
                .iter()
                .enumerate()
                .map(|(l, p)| (format!("cdp.hidden.{l}"), p))
                .chain(std::iter::once(("cdp.head".to_string(), &cdp.head)));
            for (prefix, p) in layers {
                out.push(ParamTensor {
                    name: format!("{prefix}.weight"),
                    group: ParamGroup::Cdp,
                    dims: conv_dims(p, false),
                    data: p.weight.data(),
                });
                out.push(ParamTensor {
                    name: format!("{prefix}.bias"),
                    group: ParamGroup::Cdp,
                    dims: vec![p.bias.len()],
                    data: &p.bias,
                });
            }
        }
        out.push(ParamTensor {
            name: "decoder.weight".to_string(),
            group: ParamGroup::Decoder,
            dims: conv_dims(&self.classifier, false),
            data: self.classifier.weight.data(),
        });
        out.push(ParamTensor {
            name: "decoder.bias".to_string(),
            group: ParamGroup::Decoder,
            dims: vec![self.classifier.bias.len()],
            data: &self.classifier.bias,
        });
        out
    }

    /// Mutable tensors in the same order as [`NetParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::new();
        for p in &mut self.encoder {
            out.push((ParamGroup::Encoder, p.weight.data_mut()));
            out.push((ParamGroup::Encoder, &mut p.bias));
        }
        out.push((ParamGroup::Sca, self.sca.w_d.data_mut()));
        out.push((ParamGroup::Sca, self.sca.w_c.data_mut()));
        if let Some(cdp) = &mut self.cdp {
            for p in cdp.hidden.iter_mut().chain(std::iter::once(&mut cdp.head)) {
                out.push((ParamGroup::Cdp, p.weight.data_mut()));
                out.push((ParamGroup::Cdp, &mut p.bias));
            }
        }
        out.push((ParamGroup::Decoder, self.classifier.weight.data_mut()));
        out.push((ParamGroup::Decoder, &mut self.classifier.bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &NetParams) {
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        assert_eq!(src.len(), dst.len());
        for ((_, d), s) in dst.iter_mut().zip(&src) {
            for (a, b) in d.iter_mut().zip(s.data) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// FNV-style hash over the bit patterns of every parameter, one 64-bit word per step.
    pub fn fingerprint(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for t in self.tensors() {
            for v in t.data {
                hash = (hash ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3).rotate_left(29);
            }
        }
        hash
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    pub params: NetParams,
}

/// Deterministic He-uniform initialisation from `seed`.
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<Network> {
    config.validate()?;
    let mut rng = rng::seeded(seed);
    let encoder = config
        .encoder_channels()
        .into_iter()
        .map(|(cin, cout)| ConvParams::he_uniform(cout, 9 * cin, &mut rng))
        .collect();
    let sca = ScaParams::he_uniform(config.sca_in, config.sca_out, &mut rng);
    let cdp = (config.mode == Mode::Sca).then(|| CdpParams::he_uniform(config.sca_in, config.cdp, &mut rng));
    let classifier = ConvParams::he_uniform(config.classes, config.sca_out, &mut rng);
    Ok(Network {
        config: config.clone(),
        params: NetParams {
            encoder,
            sca,
            cdp,
            classifier,
        },
    })
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    fingerprint: u64,
    /// `encoder[0]` is the image, `encoder[l + 1]` the output of block `l`.
    encoder: Vec<FeatureMap>,
    cdp: Option<CdpCache>,
    dependencies: DependencyMatrix,
    aggregated: FeatureMap,
    coarse_logits: FeatureMap,
}

impl ForwardCache {
    pub fn dependencies(&self) -> &DependencyMatrix {
        &self.dependencies
    }

    /// Encoder output `X`, the input of the aggregation step.
    pub fn features(&self) -> &FeatureMap {
        self.encoder.last().expect("image present")
    }

    /// Context-aware map `H`.
    pub fn aggregated(&self) -> &FeatureMap {
        &self.aggregated
    }

    pub fn coarse_logits(&self) -> &FeatureMap {
        &self.coarse_logits
    }

    /// Sign pattern of every ReLU input; finite-difference checks skip
    /// coordinates whose perturbation changes it.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut bits: Vec<bool> = self.encoder[1..]
            .iter()
            .flat_map(|m| m.data().iter().map(|&v| v > 0.0))
            .collect();
        if let Some(c) = &self.cdp {
            bits.extend(c.activations()[1..].iter().flat_map(|m| m.data().iter().map(|&v| v > 0.0)));
        }
        bits
    }
}

#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `H_img × W_img × K` class scores.
    pub logits: FeatureMap,
    pub cache: ForwardCache,
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    /// Rebuilds a network around existing parameters, checking every shape.
    pub fn from_parts(config: NetworkConfig, params: NetParams) -> Result<Network> {
        config.validate()?;
        let template = NetParams::zeros(&config);
        let want = template.tensors();
        let got = params.tensors();
        if want.len() != got.len() {
            return Err(Error::shape(format!(
                "config needs {} tensors, parameters have {}",
                want.len(),
                got.len()
            )));
        }
        for (w, g) in want.iter().zip(&got) {
            if w.name != g.name || w.dims != g.dims {
                return Err(Error::shape(format!(
                    "tensor {} has dims {:?}, config needs {} with {:?}",
                    g.name, g.dims, w.name, w.dims
                )));
            }
        }
        Ok(Network { config, params })
    }

    fn check_image(&self, image: &FeatureMap) -> Result<()> {
        let want = (self.config.input_height, self.config.input_width, 3);
        if image.dims() != want {
            return Err(Error::shape(format!(
                "image is {} but the network expects {}x{}x3",
                image.shape_string(),
                want.0,
                want.1
            )));
        }
        Ok(())
    }

    fn run_encoder(&self, image: &FeatureMap) -> Result<Vec<FeatureMap>> {
        let strides = self.config.encoder_strides();
        let mut acts = Vec::with_capacity(strides.len() + 1);
        acts.push(image.clone());
        for (p, &stride) in self.params.encoder.iter().zip(&strides) {
            let pre = conv3x3(acts.last().expect("image present"), &p.weight, &p.bias, stride)?;
            acts.push(relu(&pre));
        }
        Ok(acts)
    }

    /// Encoder output only. Does not require the input to match the configured size.
    pub fn encode(&self, image: &FeatureMap) -> Result<FeatureMap> {
        if image.channels() != 3 {
            return Err(Error::shape(format!("image must have 3 channels, got {}", image.shape_string())));
        }
        Ok(self.run_encoder(image)?.pop().expect("image present"))
    }

    pub fn forward(&self, image: &FeatureMap) -> Result<ForwardPass> {
        self.forward_impl(image, None)
    }

    /// Forward pass with a caller-supplied dependency matrix instead of the
    /// one this network's mode would use. The predictor is not run.
    pub fn forward_with_dependencies(&self, image: &FeatureMap, a: DependencyMatrix) -> Result<ForwardPass> {
        if a.n() != self.config.neurons() {
            return Err(Error::shape(format!(
                "dependency matrix has n = {} but the network has {} neurons",
                a.n(),
                self.config.neurons()
            )));
        }
        self.forward_impl(image, Some(a))
    }

    fn forward_impl(&self, image: &FeatureMap, dependencies: Option<DependencyMatrix>) -> Result<ForwardPass> {
        self.check_image(image)?;
        let encoder = self.run_encoder(image)?;
        let x = encoder.last().expect("image present");
        let n = x.neurons();
        let (dependencies, cdp) = match (dependencies, self.config.mode) {
            (Some(a), _) => (a, None),
            (None, Mode::BaselineNo) => (DependencyMatrix::identity(n), None),
            (None, Mode::BaselineAve) => (DependencyMatrix::ones(n), None),
            (None, Mode::Sca) => {
                let params = self
                    .params
                    .cdp
                    .as_ref()
                    .ok_or_else(|| Error::usage("sca mode network has no predictor parameters"))?;
                let (a, cache) = cdp_forward(x, params)?;
                (a, Some(cache))
            }
        };
        let aggregated = sca_forward(x, &dependencies, &self.params.sca)?;
        let coarse_logits = conv1x1(&aggregated, &self.params.classifier.weight, &self.params.classifier.bias)?;
        let logits = bilinear_upsample(&coarse_logits, self.config.downsample)?;
        Ok(ForwardPass {
            logits,
            cache: ForwardCache {
                fingerprint: self.params.fingerprint(),
                encoder,
                cdp,
                dependencies,
                aggregated,
                coarse_logits,
            },
        })
    }

    /// Gradients of every parameter given `∂L/∂logits`.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &FeatureMap) -> Result<NetParams> {
        Ok(self.backward_with_input(cache, d_logits)?.0)
    }

    /// As [`Network::backward`], also returning the gradient with respect to the image.
    pub fn backward_with_input(&self, cache: &ForwardCache, d_logits: &FeatureMap) -> Result<(NetParams, FeatureMap)> {
        if cache.fingerprint != self.params.fingerprint() {
            return Err(Error::usage(
                "stale forward cache: network parameters changed since the forward pass",
            ));
        }
        let d_coarse = bilinear_upsample_backward(cache.coarse_logits.dims(), self.config.downsample, d_logits)?;
        let head = conv1x1_backward(&cache.aggregated, &self.params.classifier.weight, &d_coarse)?;
        let x = cache.features();
        let sca = sca_backward(x, &cache.dependencies, &self.params.sca, &head.input)?;
        let mut d_x = sca.x;
        let cdp_grads = match (&cache.cdp, &self.params.cdp) {
            (Some(c), Some(p)) => {
                let g = cdp_backward(p, c, &sca.a)?;
                for (d, e) in d_x.data_mut().iter_mut().zip(g.x.data()) {
                    *d += e;
                }
                Some(g.params)
            }
            _ => self.params.cdp.as_ref().map(|p| {
                let mut z = p.clone();
                for layer in z.hidden.iter_mut().chain(std::iter::once(&mut z.head)) {
                    layer.weight.data_mut().fill(0.0);
                    layer.bias.fill(0.0);
                }
                z
            }),
        };

        let strides = self.config.encoder_strides();
        let mut encoder_grads = Vec::with_capacity(strides.len());
        let mut d_act = d_x;
        for (l, (p, &stride)) in self.params.encoder.iter().zip(&strides).enumerate().rev() {
            let d_pre = relu_backward(&cache.encoder[l + 1], &d_act);
            let g = conv3x3_backward(&cache.encoder[l], &p.weight, stride, &d_pre)?;
            encoder_grads.push(ConvParams {
                weight: g.weight,
                bias: g.bias,
            });
            d_act = g.input;
        }
        encoder_grads.reverse();
        Ok((
            NetParams {
                encoder: encoder_grads,
                sca: ScaParams {
                    w_d: sca.w_d,
                    w_c: sca.w_c,
                },
                cdp: cdp_grads,
                classifier: ConvParams {
                    weight: head.weight,
                    bias: head.bias,
                },
            },
            d_act,
        ))
    }

    /// Row `neuron` of the predicted dependency matrix on the `(H/s) × (W/s)`
    /// grid, divided by its maximum.
    pub fn dependency_mask(&self, image: &FeatureMap, neuron: usize) -> Result<FeatureMap> {
        if self.config.mode != Mode::Sca {
            return Err(Error::usage(format!(
                "dependency masks need an sca network, this one is {}",
                self.config.mode
            )));
        }
        let n = self.config.neurons();
        if neuron >= n {
            return Err(Error::usage(format!("neuron index {neuron} out of range for {n} neurons")));
        }
        let pass = self.forward(image)?;
        Ok(mask_from_row(pass.cache.dependencies().row(neuron), self.config.feature_dims()))
    }
}

fn mask_from_row(row: &[f64], (h, w): (usize, usize)) -> FeatureMap {
    let max = row.iter().copied().fold(0.0, f64::max);
    let values = if max > 0.0 {
        row.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; row.len()]
    };
    FeatureMap::from_vec(h, w, 1, values).expect("row length matches the neuron grid")
}

/// Per-pixel argmax over channels; ties resolve to the lowest class index.
pub fn predict_labels(logits: &FeatureMap) -> LabelMap {
    let k = logits.channels();
    let labels = logits
        .data()
        .chunks_exact(k)
        .map(|px| {
            let mut best = 0;
            for c in 1..k {
                if px[c] > px[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::from_vec(logits.height(), logits.width(), labels).expect("logit dims are positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small_config(mode: Mode) -> NetworkConfig {
        NetworkConfig {
            input_height: 16,
            input_width: 16,
            encoder_widths: vec![4, 6],
            downsample: 4,
            sca_in: 5,
            sca_out: 4,
            cdp: CdpConfig { layers: 2, features: 3 },
            classes: 3,
            mode,
        }
    }

    #[test]
    fn default_parameter_count_matches_layer_arithmetic() {
        let net = build_network(&NetworkConfig::default(), 0).unwrap();
        // encoder: (3·9·16 + 16) + (16·9·32 + 32) + (32·9·32 + 32)
        let encoder = 448 + 4640 + 9248;
        let sca = 2 * 32 * 32;
        // three hidden 32→32 layers plus a 64→1 head
        let cdp = 3 * (32 * 32 + 32) + 65;
        let decoder = 4 * 32 + 4;
        assert_eq!(net.parameter_count(), encoder + sca + cdp + decoder);
        assert_eq!(net.parameter_count(), 19_749);
    }

    #[test]
    fn baseline_no_allocates_no_predictor() {
        let net = build_network(&small_config(Mode::BaselineNo), 1).unwrap();
        assert!(net.params.cdp.is_none());
        assert!(net.params.tensors().iter().all(|t| t.group != ParamGroup::Cdp));
    }

    #[test]
    fn same_seed_same_network() {
        let a = build_network(&small_config(Mode::Sca), 7).unwrap();
        let b = build_network(&small_config(Mode::Sca), 7).unwrap();
        let c = build_network(&small_config(Mode::Sca), 8).unwrap();
        assert_eq!(to_bytes(&a), to_bytes(&b));
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn invalid_config_names_the_field() {
        let mut cfg = small_config(Mode::Sca);
        cfg.input_width = 18;
        match build_network(&cfg, 0) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "input_width"),
            other => panic!("expected config error, got {other:?}"),
        }
        cfg.input_width = 16;
        cfg.downsample = 3;
        assert!(matches!(build_network(&cfg, 0), Err(Error::Config { .. })));
        cfg.downsample = 16;
        assert!(matches!(build_network(&cfg, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn forward_shapes() {
        let net = build_network(&small_config(Mode::Sca), 2).unwrap();
        let image = FeatureMap::random(16, 16, 3, 0.0, 1.0, &mut seeded(3));
        let pass = net.forward(&image).unwrap();
        assert_eq!(pass.logits.dims(), (16, 16, 3));
        assert_eq!(pass.cache.dependencies().n(), 16);
        assert!(net.forward(&FeatureMap::zeros(8, 16, 3)).is_err());
    }

    #[test]
    fn baseline_ave_on_constant_image() {
        let net = build_network(&small_config(Mode::BaselineAve), 4).unwrap();
        let pass = net.forward(&FeatureMap::filled(16, 16, 3, 0.4)).unwrap();
        let x = pass.cache.features();
        let h = pass.cache.aggregated();
        // Interior neurons see identical features; border neurons differ through zero padding,
        // so compare each neuron with W_d x_i + mean_{j≠i} W_c x_j directly.
        let n = x.neurons();
        let mut d = vec![0.0; 4];
        let mut c = vec![0.0; 4];
        for i in 0..n {
            net.params.sca.w_d.mul_vec_into(x.neuron(i), &mut d);
            let mut mean = [0.0; 4];
            for j in (0..n).filter(|&j| j != i) {
                net.params.sca.w_c.mul_vec_into(x.neuron(j), &mut c);
                for k in 0..4 {
                    mean[k] += c[k] / (n - 1) as f64;
                }
            }
            for k in 0..4 {
                assert!((h.neuron(i)[k] - d[k] - mean[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = build_network(&small_config(Mode::Sca), 5).unwrap();
        let image = FeatureMap::random(16, 16, 3, 0.0, 1.0, &mut seeded(6));
        let pass = net.forward(&image).unwrap();
        let g = net.backward(&pass.cache, &FeatureMap::zeros(16, 16, 3)).unwrap();
        assert!(g.tensors().iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn baseline_no_never_trains_context_projection() {
        let net = build_network(&small_config(Mode::BaselineNo), 5).unwrap();
        let mut rng = seeded(7);
        let image = FeatureMap::random(16, 16, 3, 0.0, 1.0, &mut rng);
        let pass = net.forward(&image).unwrap();
        let d = FeatureMap::random(16, 16, 3, -1.0, 1.0, &mut rng);
        let g = net.backward(&pass.cache, &d).unwrap();
        assert!(g.sca.w_c.data().iter().all(|&v| v == 0.0));
        assert!(g.sca.w_d.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn stale_cache_is_usage_error() {
        let mut net = build_network(&small_config(Mode::BaselineAve), 5).unwrap();
        let image = FeatureMap::random(16, 16, 3, 0.0, 1.0, &mut seeded(8));
        let pass = net.forward(&image).unwrap();
        net.params.classifier.bias[0] += 0.1;
        assert!(matches!(
            net.backward(&pass.cache, &FeatureMap::zeros(16, 16, 3)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn argmax_rules() {
        let logits = FeatureMap::from_vec(1, 3, 3, vec![0.0, 1.0, 0.0, 2.0, 2.0, 1.0, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(predict_labels(&logits).data(), &[1, 0, 0]);
    }

    #[test]
    fn argmax_matches_loop() {
        let mut rng = seeded(10);
        let logits = FeatureMap::random(5, 4, 6, -2.0, 2.0, &mut rng);
        let labels = predict_labels(&logits);
        for h in 0..5 {
            for w in 0..4 {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for c in 0..6 {
                    if logits.get(h, w, c) > best_v {
                        best_v = logits.get(h, w, c);
                        best = c;
                    }
                }
                assert_eq!(labels.get(h, w) as usize, best);
            }
        }
    }

    #[test]
    fn mask_requires_sca_and_valid_index() {
        let image = FeatureMap::random(16, 16, 3, 0.0, 1.0, &mut seeded(11));
        let net = build_network(&small_config(Mode::BaselineAve), 5).unwrap();
        assert!(matches!(net.dependency_mask(&image, 0), Err(Error::Usage(_))));
        let net = build_network(&small_config(Mode::Sca), 5).unwrap();
        assert!(matches!(net.dependency_mask(&image, 16), Err(Error::Usage(_))));
        let mask = net.dependency_mask(&image, 5).unwrap();
        assert_eq!(mask.dims(), (4, 4, 1));
        assert!(mask.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn mask_with_all_zero_row() {
        let m = mask_from_row(&[0.0; 4], (2, 2));
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("baseline-ave".parse::<Mode>().unwrap(), Mode::BaselineAve);
        assert_eq!("SCA".parse::<Mode>().unwrap(), Mode::Sca);
        assert!("mean".parse::<Mode>().is_err());
    }
}
