//! Dataset directories.
//!
//! ```text
//! <dir>/manifest.txt        split \t image-path \t label-path, one line per sample
//! <dir>/train/00000.ppm     P6 image
//! <dir>/train/00000.pgm     P5 labels
//! <dir>/test/...
//! ```
//!
//! Paths in the manifest are relative to `<dir>`.

use std::fs;
use std::path::Path;

use super::pnm::{decode_labels, decode_ppm, encode_labels, encode_ppm};
use super::{Dataset, Sample};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut manifest = String::new();
    for (split, samples) in [("train", &ds.train), ("test", &ds.test)] {
        let sub = dir.join(split);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (k, s) in samples.iter().enumerate() {
            let image = format!("{split}/{k:05}.ppm");
            let label = format!("{split}/{k:05}.pgm");
            write(&dir.join(&image), &encode_ppm(&s.image)?)?;
            write(&dir.join(&label), &encode_labels(&s.labels))?;
            manifest.push_str(&format!("{split}\t{image}\t{label}\n"));
        }
    }
    write(&dir.join(MANIFEST_NAME), manifest.as_bytes())
}

fn read_existing(dir: &Path, rel: &str, line: usize) -> Result<Vec<u8>> {
    let path = dir.join(rel);
    if !path.is_file() {
        return Err(Error::data(format!(
            "{MANIFEST_NAME} line {line} references missing file {}",
            path.display()
        )));
    }
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

fn with_path(rel: &str, e: Error) -> Error {
    match e {
        Error::Format { offset, message } => Error::format(offset, format!("{rel}: {message}")),
        Error::Data(m) => Error::data(format!("{rel}: {m}")),
        other => other,
    }
}

/// Reads a directory written by [`save_dataset`]. Labels must lie below
/// `classes` or equal the ignore value.
pub fn load_dataset(dir: impl AsRef<Path>, classes: usize) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut ds = Dataset {
        classes,
        train: Vec::new(),
        test: Vec::new(),
    };
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [split, image, label] = fields[..] else {
            return Err(Error::data(format!(
                "{MANIFEST_NAME} line {line_no}: expected 3 tab-separated fields, got {}",
                fields.len()
            )));
        };
        let target = match split {
            "train" => &mut ds.train,
            "test" => &mut ds.test,
            other => {
                return Err(Error::data(format!(
                    "{MANIFEST_NAME} line {line_no}: unknown split {other:?}"
                )))
            }
        };
        let img = decode_ppm(&read_existing(dir, image, line_no)?).map_err(|e| with_path(image, e))?;
        let labels = decode_labels(&read_existing(dir, label, line_no)?).map_err(|e| with_path(label, e))?;
        if (img.height(), img.width()) != (labels.height(), labels.width()) {
            return Err(Error::data(format!(
                "{image} is {}x{} but {label} is {}x{}",
                img.height(),
                img.width(),
                labels.height(),
                labels.width()
            )));
        }
        if let Some(&bad) = labels
            .data()
            .iter()
            .find(|&&y| y != crate::IGNORE_LABEL && usize::from(y) >= classes)
        {
            return Err(Error::data(format!("{label}: label {bad} out of range for {classes} classes")));
        }
        target.push(Sample { image: img, labels });
    }
    Ok(ds)
}
