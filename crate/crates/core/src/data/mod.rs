//! Synthetic "ambiguous texture" segmentation data.
//!
//! Each image holds one small coloured *cue* patch (type A or B) and one
//! textured *ambiguous region*. The region's pixels are drawn identically
//! whatever the cue type, but its label is "ambiguous-A" next to an A cue
//! and "ambiguous-B" next to a B cue, so the region can only be labelled
//! correctly by looking at the cue, which is placed away from it.
//!
//! Samples come in pairs that share geometry and every noise draw and differ
//! only in the cue type; an odd sample count drops the B half of the last pair.

pub mod io;
pub mod pnm;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{FeatureMap, LabelMap, IGNORE_LABEL};

pub use io::{load_dataset, save_dataset, MANIFEST_NAME};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// 3, 4 or 5; see [`ClassLayout`].
    pub classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Half-width of the uniform per-pixel noise added to every texture.
    pub noise: f64,
    /// Side of the square cue patch.
    pub cue_size: usize,
    /// Side of the square ambiguous region.
    pub region_size: usize,
    /// Minimum number of background pixels between cue and region.
    pub cue_gap: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            classes: 4,
            train_samples: 500,
            test_samples: 200,
            noise: 0.1,
            cue_size: 6,
            region_size: 20,
            cue_gap: 2,
            seed: 0,
        }
    }
}

/// Label assignment for each supported class count.
///
/// * 5 classes: background, cue-A, cue-B, ambiguous-A, ambiguous-B
/// * 4 classes: background, cue (either type), ambiguous-A, ambiguous-B
/// * 3 classes: background (cue pixels included), ambiguous-A, ambiguous-B
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassLayout {
    pub background: u8,
    pub cue_a: u8,
    pub cue_b: u8,
    pub ambiguous_a: u8,
    pub ambiguous_b: u8,
}

impl ClassLayout {
    pub fn for_classes(classes: usize) -> Result<Self> {
        match classes {
            5 => Ok(Self {
                background: 0,
                cue_a: 1,
                cue_b: 2,
                ambiguous_a: 3,
                ambiguous_b: 4,
            }),
            4 => Ok(Self {
                background: 0,
                cue_a: 1,
                cue_b: 1,
                ambiguous_a: 2,
                ambiguous_b: 3,
            }),
            3 => Ok(Self {
                background: 0,
                cue_a: 0,
                cue_b: 0,
                ambiguous_a: 1,
                ambiguous_b: 2,
            }),
            k => Err(Error::config("classes", format!("synthetic data supports 3, 4 or 5 classes, got {k}"))),
        }
    }

    pub fn is_ambiguous(&self, label: u8) -> bool {
        label == self.ambiguous_a || label == self.ambiguous_b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CueKind {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `H × W × 3`, values in `[0, 1]`.
    pub image: FeatureMap,
    /// Class indices, or [`IGNORE_LABEL`].
    pub labels: LabelMap,
}

impl Sample {
    pub fn flip_horizontal(&self) -> Sample {
        Sample {
            image: self.image.flip_horizontal(),
            labels: self.labels.flip_horizontal(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn class_frequencies(&self) -> Result<Vec<f64>> {
        class_frequencies(&self.train, self.classes)
    }
}

/// Square box with top-left corner `(top, left)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Rect {
    top: usize,
    left: usize,
    size: usize,
}

impl Rect {
    fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.size).contains(&y) && (self.left..self.left + self.size).contains(&x)
    }

    /// True when the boxes, grown by `gap` pixels, would intersect.
    fn too_close(&self, other: &Rect, gap: usize) -> bool {
        let apart = |a0: usize, a1: usize, b0: usize, b1: usize| a1 + gap <= b0 || b1 + gap <= a0;
        !(apart(self.top, self.top + self.size, other.top, other.top + other.size)
            || apart(self.left, self.left + self.size, other.left, other.left + other.size))
    }
}

const BACKGROUND_RGB: [f64; 3] = [0.35, 0.4, 0.35];
const REGION_LOW: f64 = 0.55;
const REGION_HIGH: f64 = 0.8;
const CUE_A_RGB: [f64; 3] = [0.9, 0.2, 0.15];
const CUE_B_RGB: [f64; 3] = [0.15, 0.2, 0.9];

/// Every region position that admits at least one cue position, with those cue positions.
fn placements(cfg: &SynthConfig) -> Vec<(Rect, Vec<Rect>)> {
    let mut out = Vec::new();
    for rt in 0..=cfg.height - cfg.region_size {
        for rl in 0..=cfg.width - cfg.region_size {
            let region = Rect {
                top: rt,
                left: rl,
                size: cfg.region_size,
            };
            let cues: Vec<Rect> = (0..=cfg.height - cfg.cue_size)
                .flat_map(|ct| {
                    (0..=cfg.width - cfg.cue_size).map(move |cl| Rect {
                        top: ct,
                        left: cl,
                        size: cfg.cue_size,
                    })
                })
                .filter(|cue| !cue.too_close(&region, cfg.cue_gap))
                .collect();
            if !cues.is_empty() {
                out.push((region, cues));
            }
        }
    }
    out
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        ClassLayout::for_classes(self.classes)?;
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("image_height/image_width", "image dims must be positive"));
        }
        if self.cue_size == 0 || self.region_size == 0 {
            return Err(Error::config("cue_size/region_size", "cue and region sizes must be positive"));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::config("noise", format!("must lie in [0, 0.5], got {}", self.noise)));
        }
        if self.cue_size > self.height.min(self.width) || self.region_size > self.height.min(self.width) {
            return Err(Error::config(
                "cue_size/region_size",
                format!(
                    "cue {} and region {} must fit inside {}x{}",
                    self.cue_size, self.region_size, self.height, self.width
                ),
            ));
        }
        if placements(self).is_empty() {
            return Err(Error::config(
                "cue_size/region_size/cue_gap",
                format!(
                    "no placement keeps a {0}x{0} cue {2} pixels away from a {1}x{1} region in {3}x{4}",
                    self.cue_size, self.region_size, self.cue_gap, self.height, self.width
                ),
            ));
        }
        Ok(())
    }
}

struct PairDraw {
    region: Rect,
    cue: Rect,
    /// Uniform `[-1, 1)` draws, `H × W × 3`.
    noise: Vec<f64>,
    /// Checkerboard phase of the region texture.
    phase: usize,
}

fn render(cfg: &SynthConfig, layout: &ClassLayout, draw: &PairDraw, kind: CueKind) -> Sample {
    let mut image = FeatureMap::zeros(cfg.height, cfg.width, 3);
    let mut labels = LabelMap::filled(cfg.height, cfg.width, layout.background);
    let (cue_rgb, cue_label, region_label) = match kind {
        CueKind::A => (CUE_A_RGB, layout.cue_a, layout.ambiguous_a),
        CueKind::B => (CUE_B_RGB, layout.cue_b, layout.ambiguous_b),
    };
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let base = if draw.region.contains(y, x) {
                labels.set(y, x, region_label);
                let v = if ((y / 2) + (x / 2) + draw.phase) % 2 == 0 {
                    REGION_LOW
                } else {
                    REGION_HIGH
                };
                [v; 3]
            } else if draw.cue.contains(y, x) {
                labels.set(y, x, cue_label);
                cue_rgb
            } else {
                BACKGROUND_RGB
            };
            for (c, b) in base.iter().enumerate() {
                let n = draw.noise[(y * cfg.width + x) * 3 + c];
                image.set(y, x, c, (b + cfg.noise * n).clamp(0.0, 1.0));
            }
        }
    }
    Sample { image, labels }
}

fn generate_split(cfg: &SynthConfig, layout: &ClassLayout, places: &[(Rect, Vec<Rect>)], split: u64, count: usize) -> Vec<Sample> {
    let mut out = Vec::with_capacity(count);
    for pair in 0..count.div_ceil(2) {
        let mut rng = rng::stream(cfg.seed, (split << 32) | pair as u64);
        let (region, cues) = &places[rng.gen_range(0..places.len())];
        let cue = cues[rng.gen_range(0..cues.len())];
        let noise = (0..cfg.height * cfg.width * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phase = rng.gen_range(0..2);
        let draw = PairDraw {
            region: *region,
            cue,
            noise,
            phase,
        };
        out.push(render(cfg, layout, &draw, CueKind::A));
        if out.len() < count {
            out.push(render(cfg, layout, &draw, CueKind::B));
        }
    }
    out
}

/// Builds the train and test splits. The splits use disjoint RNG streams.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let layout = ClassLayout::for_classes(cfg.classes)?;
    let places = placements(cfg);
    Ok(Dataset {
        classes: cfg.classes,
        train: generate_split(cfg, &layout, &places, 1, cfg.train_samples),
        test: generate_split(cfg, &layout, &places, 2, cfg.test_samples),
    })
}

/// Normalised pixel counts over `classes`, ignoring [`IGNORE_LABEL`].
pub fn class_frequencies(samples: &[Sample], classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; classes];
    for s in samples {
        for &y in s.labels.data() {
            if y == IGNORE_LABEL {
                continue;
            }
            let slot = counts
                .get_mut(usize::from(y))
                .ok_or_else(|| Error::data(format!("label {y} out of range for {classes} classes")))?;
            *slot += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::data("no labelled pixels to count"));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_samples: 12,
            test_samples: 5,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 12, ..small() }).unwrap();
        assert_ne!(a.train[0], c.train[0]);
    }

    #[test]
    fn splits_use_disjoint_streams() {
        let d = generate(&small()).unwrap();
        assert_eq!(d.train.len(), 12);
        assert_eq!(d.test.len(), 5);
        assert_ne!(d.train[0].image, d.test[0].image);
    }

    #[test]
    fn pairs_differ_only_on_the_cue() {
        let cfg = SynthConfig { classes: 5, ..small() };
        let layout = ClassLayout::for_classes(5).unwrap();
        let d = generate(&cfg).unwrap();
        for pair in d.train.chunks(2) {
            let (a, b) = (&pair[0], &pair[1]);
            for y in 0..32 {
                for x in 0..32 {
                    let (la, lb) = (a.labels.get(y, x), b.labels.get(y, x));
                    if la == layout.cue_a {
                        assert_eq!(lb, layout.cue_b);
                    } else {
                        assert_eq!(a.image.pixel(y, x), b.image.pixel(y, x));
                        if la == layout.ambiguous_a {
                            assert_eq!(lb, layout.ambiguous_b);
                        } else {
                            assert_eq!(la, lb);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cue_and_region_never_overlap() {
        let cfg = SynthConfig { classes: 5, ..small() };
        let layout = ClassLayout::for_classes(5).unwrap();
        let d = generate(&cfg).unwrap();
        for s in d.train.iter().chain(&d.test) {
            let count = |pred: &dyn Fn(u8) -> bool| s.labels.data().iter().filter(|&&l| pred(l)).count();
            assert_eq!(count(&|l| l == layout.cue_a || l == layout.cue_b), 36);
            assert_eq!(count(&|l| layout.is_ambiguous(l)), 400);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn impossible_geometry_names_keys() {
        let cfg = SynthConfig {
            region_size: 30,
            cue_size: 6,
            ..small()
        };
        match generate(&cfg) {
            Err(Error::Config { field, .. }) => assert!(field.contains("cue_size") && field.contains("region_size")),
            other => panic!("{other:?}"),
        }
        assert!(generate(&SynthConfig { classes: 6, ..small() }).is_err());
    }

    #[test]
    fn frequencies() {
        let one = Sample {
            image: FeatureMap::zeros(2, 2, 3),
            labels: LabelMap::filled(2, 2, 0),
        };
        assert_eq!(class_frequencies(&[one.clone()], 3).unwrap(), vec![1.0, 0.0, 0.0]);

        // 3 samples, 2×2 each: labels {0,0,1,255}, {1,1,2,2}, {0,2,2,2}
        // counts: class 0 → 3, class 1 → 3, class 2 → 5; 11 labelled pixels.
        let mk = |v: [u8; 4]| Sample {
            image: FeatureMap::zeros(2, 2, 3),
            labels: LabelMap::from_vec(2, 2, v.to_vec()).unwrap(),
        };
        let f = class_frequencies(&[mk([0, 0, 1, 255]), mk([1, 1, 2, 2]), mk([0, 2, 2, 2])], 3).unwrap();
        assert_eq!(f, vec![3.0 / 11.0, 3.0 / 11.0, 5.0 / 11.0]);

        let d = generate(&small()).unwrap();
        let f = d.class_frequencies().unwrap();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(class_frequencies(&[mk([255; 4])], 3).is_err());
    }
}
