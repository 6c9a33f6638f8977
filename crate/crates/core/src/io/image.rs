//! Binary PGM (P5), PPM (P6) and single-channel PFM (Pf) images.
//!
//! PFM rows are stored bottom-to-top as the format requires; in memory every
//! image is row-major from the top row.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

fn fmt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

/// Splits a Netpbm header into `count` tokens (skipping `#` comments) and
/// returns them with the offset of the byte after the single whitespace that
/// ends the header.
fn netpbm_header(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return None;
    }
    Some((tokens, i + 1))
}

fn read_netpbm(path: &Path, magic: &str, samples_per_pixel: usize) -> Result<(Image<u8>, u16)> {
    let bytes = fs::read(path)?;
    let (tok, body) = netpbm_header(&bytes, 4).ok_or_else(|| fmt_err(path, "truncated header"))?;
    if tok[0] != magic {
        return Err(fmt_err(path, format!("expected magic {magic}, found {}", tok[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| fmt_err(path, format!("bad number `{s}`")));
    let (width, height, maxval) = (num(&tok[1])?, num(&tok[2])?, num(&tok[3])?);
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(fmt_err(path, "unsupported size or maxval"));
    }
    let data = bytes[body..].to_vec();
    let expected = width * height * samples_per_pixel;
    if data.len() != expected {
        return Err(fmt_err(path, format!("expected {expected} data bytes, found {}", data.len())));
    }
    if data.iter().any(|&v| v as usize > maxval) {
        return Err(fmt_err(path, format!("sample exceeds maxval {maxval}")));
    }
    Ok((
        Image {
            width,
            height,
            data,
        },
        maxval as u16,
    ))
}

fn check_len(len: usize, width: usize, height: usize, per_pixel: usize) -> Result<()> {
    if len != width * height * per_pixel {
        return Err(Error::LengthMismatch {
            expected: width * height * per_pixel,
            actual: len,
        });
    }
    Ok(())
}

pub fn write_pgm(path: &Path, img: &Image<u8>, maxval: u8) -> Result<()> {
    check_len(img.data.len(), img.width, img.height, 1)?;
    if maxval == 0 || img.data.iter().any(|&v| v > maxval) {
        return Err(Error::Domain(format!("PGM samples must lie in 0..={maxval}")));
    }
    let mut out = format!("P5\n{} {}\n{maxval}\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    Ok(fs::write(path, out)?)
}

/// Returns the image and its maxval.
pub fn read_pgm(path: &Path) -> Result<(Image<u8>, u16)> {
    read_netpbm(path, "P5", 1)
}

pub fn write_ppm(path: &Path, img: &Image<[u8; 3]>) -> Result<()> {
    check_len(img.data.len(), img.width, img.height, 1)?;
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().flatten());
    Ok(fs::write(path, out)?)
}

pub fn read_ppm(path: &Path) -> Result<Image<[u8; 3]>> {
    let (img, maxval) = read_netpbm(path, "P6", 3)?;
    if maxval != 255 {
        return Err(fmt_err(path, "only maxval 255 is supported for PPM"));
    }
    Ok(Image {
        width: img.width,
        height: img.height,
        data: img.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

pub fn color_to_bytes(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

pub fn color_from_bytes(b: [u8; 3]) -> [f64; 3] {
    b.map(|v| f64::from(v) / 255.0)
}

pub fn write_pfm(path: &Path, img: &Image<f32>) -> Result<()> {
    check_len(img.data.len(), img.width, img.height, 1)?;
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    for row in img.data.chunks_exact(img.width).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(fs::write(path, out)?)
}

/// Accepts either byte order, as signalled by the sign of the scale line.
pub fn read_pfm(path: &Path) -> Result<Image<f32>> {
    let bytes = fs::read(path)?;
    let (tok, body) = netpbm_header(&bytes, 4).ok_or_else(|| fmt_err(path, "truncated header"))?;
    if tok[0] != "Pf" {
        return Err(fmt_err(path, format!("expected single-channel PFM, found {}", tok[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| fmt_err(path, format!("bad number `{s}`")));
    let (width, height) = (num(&tok[1])?, num(&tok[2])?);
    let scale: f64 = tok[3]
        .parse()
        .map_err(|_| fmt_err(path, format!("bad scale `{}`", tok[3])))?;
    if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
        return Err(fmt_err(path, "bad size or scale"));
    }
    let data = &bytes[body..];
    if data.len() != 4 * width * height {
        return Err(fmt_err(
            path,
            format!("expected {} data bytes, found {}", 4 * width * height, data.len()),
        ));
    }
    let little = scale < 0.0;
    let floats: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let data = floats.chunks_exact(width).rev().flatten().copied().collect();
    Ok(Image {
        width,
        height,
        data,
    })
}
