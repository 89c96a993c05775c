//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sca_core::data::SynthConfig;
use sca_core::segnet::{Mode, NetworkConfig};
use sca_core::training::TrainConfig;
use sca_core::{Error, Result};

/// Everything a command may need. Image size, class count and seed are
/// shared between the data, network and training parts.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub net: NetworkConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let synth = SynthConfig {
            height: net.input_height,
            width: net.input_width,
            classes: net.classes,
            ..SynthConfig::default()
        };
        Self {
            synth,
            net,
            train: TrainConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "image_height",
    "image_width",
    "classes",
    "seed",
    "data_seed",
    "train_samples",
    "test_samples",
    "noise",
    "cue_size",
    "region_size",
    "cue_gap",
    "encoder_widths",
    "downsample",
    "sca_in",
    "sca_out",
    "cdp_layers",
    "cdp_features",
    "mode",
    "lr_encoder",
    "lr_sca_decoder",
    "momentum",
    "poly_power",
    "epochs",
    "batch_size",
    "reweight",
    "threads",
    "val_fraction",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "image_height" => {
                self.net.input_height = parse(key, value)?;
                self.synth.height = self.net.input_height;
            }
            "image_width" => {
                self.net.input_width = parse(key, value)?;
                self.synth.width = self.net.input_width;
            }
            "classes" => {
                self.net.classes = parse(key, value)?;
                self.synth.classes = self.net.classes;
            }
            "seed" => self.train.seed = parse(key, value)?,
            "data_seed" => self.synth.seed = parse(key, value)?,
            "train_samples" => self.synth.train_samples = parse(key, value)?,
            "test_samples" => self.synth.test_samples = parse(key, value)?,
            "noise" => self.synth.noise = parse(key, value)?,
            "cue_size" => self.synth.cue_size = parse(key, value)?,
            "region_size" => self.synth.region_size = parse(key, value)?,
            "cue_gap" => self.synth.cue_gap = parse(key, value)?,
            "encoder_widths" => self.net.encoder_widths = parse_list(key, value)?,
            "downsample" => self.net.downsample = parse(key, value)?,
            "sca_in" => self.net.sca_in = parse(key, value)?,
            "sca_out" => self.net.sca_out = parse(key, value)?,
            "cdp_layers" => self.net.cdp.layers = parse(key, value)?,
            "cdp_features" => self.net.cdp.features = parse(key, value)?,
            "mode" => self.net.mode = value.parse::<Mode>()?,
            "lr_encoder" => self.train.lr_encoder = parse(key, value)?,
            "lr_sca_decoder" => self.train.lr_sca_decoder = parse(key, value)?,
            "momentum" => self.train.momentum = parse(key, value)?,
            "poly_power" => self.train.poly_power = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "reweight" => self.train.reweight = parse_bool(key, value)?,
            "threads" => self.train.threads = parse(key, value)?,
            "val_fraction" => self.train.val_fraction = parse(key, value)?,
            _ => {
                return Err(Error::config(
                    key,
                    format!("unknown key; known keys are {}", KEYS.join(", ")),
                ))
            }
        }
        Ok(())
    }

    /// Applies `key=value` text: one pair per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", k + 1),
                    format!("expected key=value, got {line:?}"),
                ));
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies one `key=value` override from the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("override {pair:?} is not key=value")))?;
        self.set(key.trim(), value)
    }

    /// Effective configuration in the same format [`RunConfig::apply_text`] reads.
    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let n = &self.net;
        let t = &self.train;
        let widths: Vec<String> = n.encoder_widths.iter().map(|w| w.to_string()).collect();
        let mut out = String::new();
        let pairs: Vec<(&str, String)> = vec![
            ("image_height", n.input_height.to_string()),
            ("image_width", n.input_width.to_string()),
            ("classes", n.classes.to_string()),
            ("seed", t.seed.to_string()),
            ("data_seed", s.seed.to_string()),
            ("train_samples", s.train_samples.to_string()),
            ("test_samples", s.test_samples.to_string()),
            ("noise", s.noise.to_string()),
            ("cue_size", s.cue_size.to_string()),
            ("region_size", s.region_size.to_string()),
            ("cue_gap", s.cue_gap.to_string()),
            ("encoder_widths", widths.join(",")),
            ("downsample", n.downsample.to_string()),
            ("sca_in", n.sca_in.to_string()),
            ("sca_out", n.sca_out.to_string()),
            ("cdp_layers", n.cdp.layers.to_string()),
            ("cdp_features", n.cdp.features.to_string()),
            ("mode", n.mode.to_string()),
            ("lr_encoder", t.lr_encoder.to_string()),
            ("lr_sca_decoder", t.lr_sca_decoder.to_string()),
            ("momentum", t.momentum.to_string()),
            ("poly_power", t.poly_power.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("reweight", t.reweight.to_string()),
            ("threads", t.threads.to_string()),
            ("val_fraction", t.val_fraction.to_string()),
        ];
        for (k, v) in pairs {
            writeln!(out, "{k}={v}").expect("writing to a String");
        }
        out
    }
}
