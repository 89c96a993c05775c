//! Binary 8-bit PPM (`P6`) and PGM (`P5`).
//!
//! Header fields are separated by whitespace and may contain `#` comments;
//! exactly one whitespace byte separates the maxval from the raster. Only
//! maxval 255 is accepted.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, LabelMap};

struct Header {
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            0,
            format!("expected magic {:?}", std::str::from_utf8(magic).unwrap_or("?")),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each field
        let mut saw_space = false;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => {
                    saw_space = true;
                    pos += 1;
                }
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                    saw_space = true;
                }
                _ => break,
            }
        }
        if !saw_space {
            return Err(Error::format(pos, "expected whitespace in header"));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let name = ["width", "height", "maxval"][k];
            return Err(Error::format(start, format!("expected decimal {name}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::format(start, "header value out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos, "expected a single whitespace byte after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format(2, format!("image dims must be positive, got {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::format(pos - 1, format!("only maxval 255 is supported, got {maxval}")));
    }
    Ok(Header {
        width,
        height,
        data_offset: pos,
    })
}

fn raster<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = header.width * header.height * channels;
    let have = bytes.len() - header.data_offset;
    if have < need {
        return Err(Error::format(
            bytes.len(),
            format!("raster truncated: need {need} bytes, have {have}"),
        ));
    }
    if have > need {
        return Err(Error::format(header.data_offset + need, "trailing bytes after raster"));
    }
    Ok(&bytes[header.data_offset..])
}

/// Quantises `[0, 1]` values to 8 bits by rounding.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(image: &FeatureMap) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::shape(format!("PPM needs 3 channels, got {}", image.shape_string())));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<FeatureMap> {
    let header = parse_header(bytes, b"P6")?;
    let data = raster(bytes, &header, 3)?;
    FeatureMap::from_vec(
        header.height,
        header.width,
        3,
        data.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::shape(format!(
            "PGM {width}x{height} needs {} bytes, got {}",
            width * height,
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_labels(labels: &LabelMap) -> Vec<u8> {
    encode_pgm(labels.width(), labels.height(), labels.data()).expect("label map has consistent dims")
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let header = parse_header(bytes, b"P5")?;
    let data = raster(bytes, &header, 1)?;
    Ok((header.width, header.height, data.to_vec()))
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let (w, h, data) = decode_pgm(bytes)?;
    LabelMap::from_vec(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_written_pgm_fixture() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 3, 255, 1]);
        let labels = decode_labels(&bytes).unwrap();
        assert_eq!((labels.height(), labels.width()), (2, 2));
        assert_eq!(labels.get(0, 1), 3);
        assert_eq!(labels.get(1, 0), 255);
        assert_eq!(encode_labels(&labels), bytes);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # made by hand\n3 # width\n1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 8, 9]);
        let (w, h, data) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h, data), (3, 1, vec![7, 8, 9]));
    }

    #[test]
    fn malformed_headers_report_offsets() {
        let err = decode_pgm(b"P6\n1 1\n255\n\0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        match decode_pgm(b"P5\n2 x\n255\n").unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 5),
            e => panic!("{e:?}"),
        }
        match decode_pgm(b"P5\n1 1\n65535\n\0\0").unwrap_err() {
            Error::Format { message, .. } => assert!(message.contains("maxval")),
            e => panic!("{e:?}"),
        }
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\0"), Err(Error::Format { offset: 12, .. })));
        assert!(matches!(decode_ppm(b"P6\n1 1\n255\n\0\0\0\0"), Err(Error::Format { offset: 14, .. })));
    }

    #[test]
    fn ppm_quantisation_bound() {
        let mut rng = crate::rng::seeded(1);
        let img = FeatureMap::random(3, 4, 3, 0.0, 1.0, &mut rng);
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-12);
    }
}
