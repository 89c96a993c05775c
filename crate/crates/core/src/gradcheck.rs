//! Central finite-difference verification of the analytic gradients.
//!
//! Two harnesses are run per seed:
//!
//! * the aggregation operator alone, for `dX`, `dA`, `dW_d` and `dW_c`, with
//!   scalar loss `Σ r ⊙ H` for a random fixed `r`;
//! * a small end-to-end network in `sca` mode, for the predictor, encoder
//!   and decoder parameters, with the weighted cross-entropy loss.
//!
//! The per-entry error is `|g − f| / max(|g|, |f|, floor)` where `g` is the
//! analytic and `f` the numeric derivative. Coordinates whose ±step
//! perturbation flips any ReLU are skipped, since the loss is not
//! differentiable there.

use std::fmt;

use rand::Rng;

use crate::cdp::{cdp_backward, cdp_forward, CdpConfig, CdpParams};
use crate::error::{Error, Result};
use crate::nn::weighted_cross_entropy;
use crate::rng;
use crate::sca::{sca_backward, sca_forward, DependencyMatrix, ScaParams};
use crate::segnet::{build_network, Mode, Network, NetworkConfig, ParamGroup};
use crate::tensor::{dot, FeatureMap, LabelMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GradGroup {
    X,
    A,
    WD,
    WC,
    Cdp,
    Encoder,
    Decoder,
}

impl GradGroup {
    pub const ALL: [GradGroup; 7] = [
        GradGroup::X,
        GradGroup::A,
        GradGroup::WD,
        GradGroup::WC,
        GradGroup::Cdp,
        GradGroup::Encoder,
        GradGroup::Decoder,
    ];

    pub fn label(self) -> &'static str {
        match self {
            GradGroup::X => "dX",
            GradGroup::A => "dA",
            GradGroup::WD => "dW_d",
            GradGroup::WC => "dW_c",
            GradGroup::Cdp => "CDP params",
            GradGroup::Encoder => "encoder",
            GradGroup::Decoder => "decoder",
        }
    }
}

impl fmt::Display for GradGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub seeds: usize,
    pub first_seed: u64,
    /// Neuron grid of the operator harness; `n = height × width`.
    pub grid_height: usize,
    pub grid_width: usize,
    /// `N`.
    pub in_channels: usize,
    /// `M`.
    pub out_channels: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Test hook: corrupt the analytic gradient of this group before comparing.
    pub fault: Option<GradGroup>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            first_seed: 0,
            grid_height: 4,
            grid_width: 4,
            in_channels: 8,
            out_channels: 8,
            step: 1e-6,
            tolerance: 1e-4,
            floor: 1e-4,
            fault: None,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::config("seeds", "must be at least 1"));
        }
        if self.grid_height * self.grid_width < 2 {
            return Err(Error::config("grid", "need at least two neurons"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("in_channels/out_channels", "must be positive"));
        }
        if !(self.step > 0.0 && self.tolerance > 0.0 && self.floor > 0.0) {
            return Err(Error::config("step/tolerance/floor", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: GradGroup,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
    pub seeds: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups
            .iter()
            .all(|g| g.checked > 0 && g.max_rel_error < self.tolerance)
    }

    pub fn group(&self, group: GradGroup) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.group == group)
    }
}

#[derive(Default)]
struct Tally {
    max: f64,
    checked: usize,
    skipped: usize,
}

impl Tally {
    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.max = self.max.max(err);
        self.checked += 1;
    }
}

fn corrupt(values: &mut [f64]) {
    for v in values {
        *v = *v * 1.01 + 1e-3;
    }
}

pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, step: f64) -> Result<f64> {
    Ok((f(x + step)? - f(x - step)?) / (2.0 * step))
}

fn weighted_sum(h: &FeatureMap, r: &[f64]) -> f64 {
    dot(h.data(), r)
}

fn operator_seed(cfg: &GradcheckConfig, seed: u64, tallies: &mut [Tally; 7]) -> Result<()> {
    let mut rng = rng::stream(seed, 0x0c4e);
    let (gh, gw, n_in, m) = (cfg.grid_height, cfg.grid_width, cfg.in_channels, cfg.out_channels);
    let n = gh * gw;
    let x = FeatureMap::random(gh, gw, n_in, -1.0, 1.0, &mut rng);
    let a = DependencyMatrix::random(n, 0.1, 2.0, &mut rng);
    let params = ScaParams::he_uniform(n_in, m, &mut rng);
    let r: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let d_h = FeatureMap::from_vec(gh, gw, m, r.clone())?;
    let mut grads = sca_backward(&x, &a, &params, &d_h)?;
    match cfg.fault {
        Some(GradGroup::X) => corrupt(grads.x.data_mut()),
        Some(GradGroup::A) => {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    grads.a[i * n + j] = grads.a[i * n + j] * 1.01 + 1e-3;
                }
            }
        }
        Some(GradGroup::WD) => corrupt(grads.w_d.data_mut()),
        Some(GradGroup::WC) => corrupt(grads.w_c.data_mut()),
        _ => {}
    }
    let h = cfg.step;
    let floor = cfg.floor;

    for k in 0..x.data().len() {
        let fd = central_difference(
            |v| {
                let mut xp = x.clone();
                xp.data_mut()[k] = v;
                Ok(weighted_sum(&sca_forward(&xp, &a, &params)?, &r))
            },
            x.data()[k],
            h,
        )?;
        tallies[0].record(grads.x.data()[k], fd, floor);
    }
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let fd = central_difference(
                |v| {
                    let mut ap = a.clone();
                    ap.set_off_diagonal(i, j, v)?;
                    Ok(weighted_sum(&sca_forward(&x, &ap, &params)?, &r))
                },
                a.get(i, j),
                h,
            )?;
            tallies[1].record(grads.a[i * n + j], fd, floor);
        }
    }
    for (slot, which) in [(2usize, false), (3, true)] {
        let analytic = if which { &grads.w_c } else { &grads.w_d };
        for k in 0..analytic.data().len() {
            let base = if which { params.w_c.data()[k] } else { params.w_d.data()[k] };
            let fd = central_difference(
                |v| {
                    let mut p = params.clone();
                    let target = if which { &mut p.w_c } else { &mut p.w_d };
                    target.data_mut()[k] = v;
                    Ok(weighted_sum(&sca_forward(&x, &a, &p)?, &r))
                },
                base,
                h,
            )?;
            tallies[slot].record(analytic.data()[k], fd, floor);
        }
    }
    Ok(())
}

/// Network used by the end-to-end harness: a 16×16 image, `s = 4`, so `n = 16`.
pub fn harness_network_config(cfg: &GradcheckConfig) -> NetworkConfig {
    NetworkConfig {
        input_height: 16,
        input_width: 16,
        encoder_widths: vec![4, 4],
        downsample: 4,
        sca_in: cfg.in_channels,
        sca_out: cfg.out_channels,
        cdp: CdpConfig {
            layers: 2,
            features: cfg.in_channels,
        },
        classes: 3,
        mode: Mode::Sca,
    }
}

fn network_loss(net: &Network, image: &FeatureMap, labels: &LabelMap, weights: &[f64]) -> Result<(f64, Vec<bool>)> {
    let pass = net.forward(image)?;
    let (loss, _) = weighted_cross_entropy(&pass.logits, labels, weights, None)?;
    Ok((loss, pass.cache.relu_pattern()))
}

fn network_seed(cfg: &GradcheckConfig, seed: u64, tallies: &mut [Tally; 7]) -> Result<()> {
    let ncfg = harness_network_config(cfg);
    let net = build_network(&ncfg, seed)?;
    let mut rng = rng::stream(seed, 0x0e2e);
    let image = FeatureMap::random(16, 16, 3, 0.0, 1.0, &mut rng);
    let labels = LabelMap::from_vec(16, 16, (0..256).map(|_| rng.gen_range(0..3u8)).collect())?;
    let weights = [1.0, 2.0, 4.0];

    let pass = net.forward(&image)?;
    let pattern = pass.cache.relu_pattern();
    let (_, d_logits) = weighted_cross_entropy(&pass.logits, &labels, &weights, None)?;
    let mut grads = net.backward(&pass.cache, &d_logits)?;
    let target_of = |g: ParamGroup| match g {
        ParamGroup::Encoder => Some(GradGroup::Encoder),
        ParamGroup::Cdp => Some(GradGroup::Cdp),
        ParamGroup::Decoder => Some(GradGroup::Decoder),
        ParamGroup::Sca => None,
    };
    if let Some(fault) = cfg.fault {
        for (group, t) in grads.tensors_mut() {
            if target_of(group) == Some(fault) {
                corrupt(t);
            }
        }
    }
    let analytic: Vec<(ParamGroup, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|t| (t.group, t.data.to_vec()))
        .collect();

    let mut probe = net.clone();
    for (ti, (group, g)) in analytic.iter().enumerate() {
        let Some(target) = target_of(*group) else { continue };
        let slot = GradGroup::ALL.iter().position(|&x| x == target).expect("listed group");
        for (k, &gk) in g.iter().enumerate() {
            let base = net.params.tensors()[ti].data[k];
            let mut eval = |v: f64| -> Result<(f64, Vec<bool>)> {
                probe.params.tensors_mut()[ti].1[k] = v;
                network_loss(&probe, &image, &labels, &weights)
            };
            let (plus, p_plus) = eval(base + cfg.step)?;
            let (minus, p_minus) = eval(base - cfg.step)?;
            eval(base)?;
            if p_plus != pattern || p_minus != pattern {
                tallies[slot].skipped += 1;
                continue;
            }
            tallies[slot].record(gk, (plus - minus) / (2.0 * cfg.step), cfg.floor);
        }
    }
    Ok(())
}

/// Runs both harnesses on `cfg.seeds` consecutive seeds.
pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mut tallies: [Tally; 7] = Default::default();
    for s in 0..cfg.seeds as u64 {
        let seed = cfg.first_seed + s;
        operator_seed(cfg, seed, &mut tallies)?;
        network_seed(cfg, seed, &mut tallies)?;
    }
    Ok(GradcheckReport {
        groups: GradGroup::ALL
            .iter()
            .zip(tallies)
            .map(|(&group, t)| GroupReport {
                group,
                max_rel_error: t.max,
                checked: t.checked,
                skipped: t.skipped,
            })
            .collect(),
        tolerance: cfg.tolerance,
        seeds: cfg.seeds,
    })
}

/// Max relative error of `dX` and every predictor parameter for the
/// composition predictor → aggregation → `Σ r ⊙ H` on one random instance.
pub fn cdp_sca_max_error(seed: u64, grid: (usize, usize), channels: usize, cdp: CdpConfig, step: f64, floor: f64) -> Result<f64> {
    let mut rng = rng::stream(seed, 0x0cd9);
    let (gh, gw) = grid;
    let x = FeatureMap::random(gh, gw, channels, -1.0, 1.0, &mut rng);
    let params = CdpParams::he_uniform(channels, cdp, &mut rng);
    let sca = ScaParams::he_uniform(channels, channels, &mut rng);
    let r: Vec<f64> = (0..gh * gw * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |x: &FeatureMap, p: &CdpParams| -> Result<(f64, Vec<bool>)> {
        let (a, cache) = cdp_forward(x, p)?;
        let pattern = cache.activations()[1..]
            .iter()
            .flat_map(|m| m.data().iter().map(|&v| v > 0.0))
            .collect();
        Ok((weighted_sum(&sca_forward(x, &a, &sca)?, &r), pattern))
    };
    let (a, cache) = cdp_forward(&x, &params)?;
    let d_h = FeatureMap::from_vec(gh, gw, channels, r.clone())?;
    let sg = sca_backward(&x, &a, &sca, &d_h)?;
    let cg = cdp_backward(&params, &cache, &sg.a)?;
    let mut dx = sg.x;
    for (d, e) in dx.data_mut().iter_mut().zip(cg.x.data()) {
        *d += e;
    }
    let (_, pattern) = loss(&x, &params)?;
    let mut tally = Tally::default();
    let mut check = |analytic: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
        if plus.1 == pattern && minus.1 == pattern {
            tally.record(analytic, (plus.0 - minus.0) / (2.0 * step), floor);
        }
    };
    for k in 0..x.data().len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += step;
        let plus = loss(&xp, &params)?;
        xp.data_mut()[k] -= 2.0 * step;
        let minus = loss(&xp, &params)?;
        check(dx.data()[k], plus, minus);
    }
    let analytic = cdp_values(&cg.params);
    for (k, &g) in analytic.iter().enumerate() {
        let mut p = params.clone();
        let base = cdp_values(&params)[k];
        cdp_set(&mut p, k, base + step);
        let plus = loss(&x, &p)?;
        cdp_set(&mut p, k, base - step);
        let minus = loss(&x, &p)?;
        check(g, plus, minus);
    }
    Ok(tally.max)
}

fn cdp_values(p: &CdpParams) -> Vec<f64> {
    p.hidden
        .iter()
        .chain(std::iter::once(&p.head))
        .flat_map(|l| l.weight.data().iter().chain(&l.bias).copied())
        .collect()
}

fn cdp_set(p: &mut CdpParams, mut k: usize, value: f64) {
    for l in p.hidden.iter_mut().chain(std::iter::once(&mut p.head)) {
        for v in l.weight.data_mut().iter_mut().chain(l.bias.iter_mut()) {
            if k == 0 {
                *v = value;
                return;
            }
            k -= 1;
        }
    }
    panic!("parameter index out of range");
}
