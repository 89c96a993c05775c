//! `SCA1` checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic    b"SCA1"
//! version  u32
//! count    u32                               number of tensors
//! count ×  { name_len u32, name [u8; name_len] (UTF-8), rank u32, dims [u32; rank] }
//! payload  f64 × Σ prod(dims), tensors in manifest order, each row-major
//! ```
//!
//! The first tensor, `meta.config`, stores the network configuration as a
//! vector of small integers so a checkpoint is self-describing.

use std::fs;
use std::path::Path;

use crate::cdp::CdpConfig;
use crate::error::{Error, Result};
use crate::segnet::{Mode, NetParams, Network, NetworkConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCA1";
pub const CHECKPOINT_VERSION: u32 = 1;
const META: &str = "meta.config";

fn config_vector(c: &NetworkConfig) -> Vec<f64> {
    let mut v = vec![
        c.input_height,
        c.input_width,
        c.downsample,
        c.sca_in,
        c.sca_out,
        c.cdp.layers,
        c.cdp.features,
        c.classes,
        c.mode.code() as usize,
        c.encoder_widths.len(),
    ];
    v.extend(&c.encoder_widths);
    v.into_iter().map(|x| x as f64).collect()
}

fn config_from_vector(v: &[f64]) -> Result<NetworkConfig> {
    let bad = || Error::data(format!("{META} is malformed: {v:?}"));
    let ints: Vec<usize> = v
        .iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x < 1e12 {
                Ok(x as usize)
            } else {
                Err(bad())
            }
        })
        .collect::<Result<_>>()?;
    if ints.len() < 10 || ints.len() != 10 + ints[9] {
        return Err(bad());
    }
    let mode = Mode::from_code(ints[8] as u32).ok_or_else(bad)?;
    Ok(NetworkConfig {
        input_height: ints[0],
        input_width: ints[1],
        downsample: ints[2],
        sca_in: ints[3],
        sca_out: ints[4],
        cdp: CdpConfig {
            layers: ints[5],
            features: ints[6],
        },
        classes: ints[7],
        mode,
        encoder_widths: ints[10..].to_vec(),
    })
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let meta = config_vector(net.config());
    let tensors = net.params.tensors();
    let mut entries: Vec<(&str, Vec<usize>, &[f64])> = vec![(META, vec![meta.len()], &meta)];
    entries.extend(tensors.iter().map(|t| (t.name.as_str(), t.dims.clone(), t.data)));

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, dims, _) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, _, data) in &entries {
        for v in data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos, format!("truncated checkpoint while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("four bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.pos, format!("{what} is too large")))?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "not an SCA1 checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut manifest = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::format(at + 4, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        manifest.push((name, dims));
    }
    let mut payloads = Vec::with_capacity(manifest.len());
    for (name, dims) in &manifest {
        let len = dims.iter().product::<usize>();
        payloads.push(r.f64s(len, name)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, "trailing bytes after the last tensor"));
    }

    match manifest.first() {
        Some((name, _)) if name == META => {}
        _ => return Err(Error::data(format!("checkpoint does not start with {META}"))),
    }
    let config = config_from_vector(&payloads[0])?;
    config.validate()?;
    let mut params = NetParams::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.dims)).collect();
    if expected.len() != manifest.len() - 1 {
        return Err(Error::data(format!(
            "checkpoint has {} parameter tensors, its config needs {}",
            manifest.len() - 1,
            expected.len()
        )));
    }
    for ((want_name, want_dims), (name, dims)) in expected.iter().zip(&manifest[1..]) {
        if want_name != name || want_dims != dims {
            return Err(Error::data(format!(
                "tensor {name} {dims:?} does not match expected {want_name} {want_dims:?}"
            )));
        }
    }
    for ((_, slot), data) in params.tensors_mut().into_iter().zip(&payloads[1..]) {
        slot.copy_from_slice(data);
    }
    Network::from_parts(config, params)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
