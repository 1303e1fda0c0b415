//! Binary PPM (P6) with maxval 255.

use super::Image;
use crate::error::{Error, Result};

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Decode {
        offset,
        message: message.into(),
    }
}

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn skip_whitespace_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' && bytes[pos] != b'\r' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_whitespace_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(err(start, format!("expected {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| err(start, format!("{what} out of range")))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(err(0, "missing P6 magic"));
    }
    let mut pos = 2;
    let width = read_number(bytes, &mut pos, "width")?;
    let height = read_number(bytes, &mut pos, "height")?;
    let maxval_at = skip_whitespace_and_comments(bytes, pos);
    let maxval = read_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(err(pos, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(err(maxval_at, format!("maxval {maxval} unsupported, need 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err(pos, "expected whitespace after maxval"));
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    debug_assert_eq!(h.maxval, 255);
    let n = h
        .width
        .checked_mul(h.height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| err(0, "image dimensions overflow"))?;
    let available = bytes.len() - h.data_start;
    if available < n {
        return Err(err(
            bytes.len(),
            format!("pixel payload has {available} bytes, need {n}"),
        ));
    }
    let pixels = bytes[h.data_start..h.data_start + n]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok(Image::new(h.height, h.width, pixels).expect("bytes map into [0,1]"))
}

/// Quantizes each channel to `round(p * 255)`.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(img.pixels().iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}
