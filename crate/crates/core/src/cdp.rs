//! Contextual dependency predictor.
//!
//! Maps a feature map with `n` neurons to an `n × n` [`DependencyMatrix`]:
//!
//! 1. `K_l` hidden 1×1 convolutions with `K_f` channels, each followed by ReLU;
//! 2. the map is flattened to `n` neuron vectors `f_1..f_n`;
//! 3. H-replicate (`R_h[i,j] = f_i`) and V-replicate (`R_v[i,j] = f_j`) are
//!    concatenated along channels into an `n × n` pair map;
//! 4. a 1×1 head with one output channel, then softplus, gives `a_ij`;
//! 5. the diagonal is overwritten with 1.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{conv1x1, conv1x1_backward, relu, relu_backward, sigmoid_scalar, softplus_scalar, ConvParams};
use crate::sca::DependencyMatrix;
use crate::tensor::{FeatureMap, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CdpConfig {
    /// Number of hidden 1×1 layers (`K_l`). Zero builds pairs from the input directly.
    pub layers: usize,
    /// Output channels of each hidden layer (`K_f`).
    pub features: usize,
}

impl CdpConfig {
    /// Three hidden layers of 512 channels; the default.
    pub const WIDE: CdpConfig = CdpConfig { layers: 3, features: 512 };
    /// Three hidden layers of 128 channels.
    pub const MEDIUM: CdpConfig = CdpConfig { layers: 3, features: 128 };
    /// Three hidden layers of 32 channels, used by the 32×32 desk-scale network.
    pub const DESK: CdpConfig = CdpConfig { layers: 3, features: 32 };
}

impl Default for CdpConfig {
    fn default() -> Self {
        Self::WIDE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CdpParams {
    pub hidden: Vec<ConvParams>,
    /// `1 × 2C` weights over `[f_i ; f_j]`.
    pub head: ConvParams,
}

impl CdpParams {
    pub fn zeros(in_channels: usize, cfg: CdpConfig) -> Self {
        Self::build(in_channels, cfg, |cout, fan_in| ConvParams::zeros(cout, fan_in))
    }

    pub fn he_uniform<R: Rng>(in_channels: usize, cfg: CdpConfig, rng: &mut R) -> Self {
        Self::build(in_channels, cfg, |cout, fan_in| ConvParams::he_uniform(cout, fan_in, rng))
    }

    fn build(in_channels: usize, cfg: CdpConfig, mut make: impl FnMut(usize, usize) -> ConvParams) -> Self {
        let mut hidden = Vec::with_capacity(cfg.layers);
        let mut c = in_channels;
        for _ in 0..cfg.layers {
            hidden.push(make(cfg.features, c));
            c = cfg.features;
        }
        let head = make(1, 2 * c);
        Self { hidden, head }
    }

    /// Channel count of the neuron vectors that enter the pair map.
    pub fn pair_channels(&self) -> usize {
        self.head.weight.cols() / 2
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden.iter().map(ConvParams::parameter_count).sum::<usize>() + self.head.parameter_count()
    }

    fn validate(&self, in_channels: usize) -> Result<()> {
        let mut c = in_channels;
        for (l, layer) in self.hidden.iter().enumerate() {
            if layer.weight.cols() != c {
                return Err(Error::shape(format!(
                    "cdp hidden layer {l} expects {} channels, gets {c}",
                    layer.weight.cols()
                )));
            }
            c = layer.out_channels();
        }
        if self.head.weight.rows() != 1 || self.head.weight.cols() != 2 * c {
            return Err(Error::shape(format!(
                "cdp head is {} but must be 1x{}",
                self.head.weight.shape_string(),
                2 * c
            )));
        }
        Ok(())
    }
}

/// Neuron vectors in row-major `(h, w)` order as an `n × C` matrix.
pub fn flatten_neurons(x: &FeatureMap) -> Matrix {
    Matrix::from_vec(x.neurons(), x.channels(), x.data().to_vec()).expect("feature map dims are positive")
}

pub fn unflatten_neurons(f: &Matrix, height: usize, width: usize) -> Result<FeatureMap> {
    if height * width != f.rows() {
        return Err(Error::shape(format!(
            "cannot reshape {} neuron rows to {height}x{width}",
            f.rows()
        )));
    }
    FeatureMap::from_vec(height, width, f.cols(), f.data().to_vec())
}

/// `n × n` grid whose entry `(i, j)` is `[f_i ; f_j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMap(FeatureMap);

impl PairMap {
    pub fn n(&self) -> usize {
        self.0.height()
    }

    /// Channels per entry, `2C`.
    pub fn channels(&self) -> usize {
        self.0.channels()
    }

    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        self.0.pixel(i, j)
    }

    pub fn as_feature_map(&self) -> &FeatureMap {
        &self.0
    }

    pub fn from_feature_map(map: FeatureMap) -> Result<Self> {
        if map.height() != map.width() || map.channels() % 2 != 0 {
            return Err(Error::shape(format!(
                "pair map must be square with an even channel count, got {}",
                map.shape_string()
            )));
        }
        Ok(PairMap(map))
    }
}

/// Channel-concatenation of the H- and V-replicated neuron vectors.
pub fn pair_tensor(f: &Matrix) -> PairMap {
    let (n, c) = (f.rows(), f.cols());
    let mut map = FeatureMap::zeros(n, n, 2 * c);
    for i in 0..n {
        for j in 0..n {
            let entry = map.pixel_mut(i, j);
            entry[..c].copy_from_slice(f.row(i));
            entry[c..].copy_from_slice(f.row(j));
        }
    }
    PairMap(map)
}

/// Adjoint of [`pair_tensor`]:
/// `dF[i] += Σ_j dR_h[i,j]` and `dF[j] += Σ_i dR_v[i,j]`.
pub fn pair_tensor_backward(d_pair: &PairMap) -> Matrix {
    let n = d_pair.n();
    let c = d_pair.channels() / 2;
    let mut d_f = Matrix::zeros(n, c);
    for i in 0..n {
        for j in 0..n {
            let g = d_pair.entry(i, j);
            for (d, gk) in d_f.row_mut(i).iter_mut().zip(&g[..c]) {
                *d += gk;
            }
            for (d, gk) in d_f.row_mut(j).iter_mut().zip(&g[c..]) {
                *d += gk;
            }
        }
    }
    d_f
}

/// Everything [`cdp_backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct CdpCache {
    /// `activations[0]` is the input; `activations[l + 1]` is the output of hidden layer `l`.
    activations: Vec<FeatureMap>,
    pairs: PairMap,
    /// Head output before softplus, `n × n × 1`.
    logits: FeatureMap,
}

impl CdpCache {
    pub fn pair_map(&self) -> &PairMap {
        &self.pairs
    }

    /// Hidden-layer outputs, the last of which enters the pair map.
    pub fn activations(&self) -> &[FeatureMap] {
        &self.activations
    }

    pub fn input(&self) -> &FeatureMap {
        &self.activations[0]
    }
}

pub fn cdp_forward(x: &FeatureMap, params: &CdpParams) -> Result<(DependencyMatrix, CdpCache)> {
    params.validate(x.channels())?;
    let mut activations = Vec::with_capacity(params.hidden.len() + 1);
    activations.push(x.clone());
    for layer in &params.hidden {
        let pre = conv1x1(activations.last().expect("input present"), &layer.weight, &layer.bias)?;
        activations.push(relu(&pre));
    }
    let features = flatten_neurons(activations.last().expect("input present"));
    let pairs = pair_tensor(&features);
    let logits = conv1x1(pairs.as_feature_map(), &params.head.weight, &params.head.bias)?;
    let n = x.neurons();
    let mut coeffs: Vec<f64> = logits.data().iter().map(|&z| softplus_scalar(z)).collect();
    for i in 0..n {
        coeffs[i * n + i] = 1.0;
    }
    let a = DependencyMatrix::from_vec(n, coeffs)?;
    Ok((
        a,
        CdpCache {
            activations,
            pairs,
            logits,
        },
    ))
}

pub fn cdp_predict(x: &FeatureMap, params: &CdpParams) -> Result<DependencyMatrix> {
    cdp_forward(x, params).map(|(a, _)| a)
}

#[derive(Clone, Debug)]
pub struct CdpGrads {
    pub x: FeatureMap,
    pub params: CdpParams,
}

/// Reverse pass through the predictor given `∂L/∂A` (`n × n`, zero diagonal).
pub fn cdp_backward(params: &CdpParams, cache: &CdpCache, d_a: &[f64]) -> Result<CdpGrads> {
    let x = cache.input();
    let n = x.neurons();
    if d_a.len() != n * n || cache.logits.height() != n || cache.activations.len() != params.hidden.len() + 1 {
        return Err(Error::shape(format!(
            "cdp_backward: cache for {n} neurons and {} hidden layers, got {} coefficient gradients and {} layers",
            cache.activations.len() - 1,
            d_a.len(),
            params.hidden.len()
        )));
    }
    if (0..n).any(|i| d_a[i * n + i] != 0.0) {
        return Err(Error::usage("cdp_backward: diagonal of dA must be zero; a_ii is pinned to 1"));
    }
    let mut d_logits = FeatureMap::zeros(n, n, 1);
    for ((d, &g), &z) in d_logits.data_mut().iter_mut().zip(d_a).zip(cache.logits.data()) {
        *d = g * sigmoid_scalar(z);
    }
    let head = conv1x1_backward(cache.pairs.as_feature_map(), &params.head.weight, &d_logits)?;
    let d_features = pair_tensor_backward(&PairMap(head.input));
    let top = cache.activations.last().expect("input present");
    let mut d_act = unflatten_neurons(&d_features, top.height(), top.width())?;

    let mut hidden_grads = Vec::with_capacity(params.hidden.len());
    for (l, layer) in params.hidden.iter().enumerate().rev() {
        let d_pre = relu_backward(&cache.activations[l + 1], &d_act);
        let g = conv1x1_backward(&cache.activations[l], &layer.weight, &d_pre)?;
        hidden_grads.push(ConvParams {
            weight: g.weight,
            bias: g.bias,
        });
        d_act = g.input;
    }
    hidden_grads.reverse();
    Ok(CdpGrads {
        x: d_act,
        params: CdpParams {
            hidden: hidden_grads,
            head: ConvParams {
                weight: head.weight,
                bias: head.bias,
            },
        },
    })
}
