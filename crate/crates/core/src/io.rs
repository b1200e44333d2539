//! Image file formats: binary PGM (P5) and a raw little-endian float32 layout.
//!
//! Raw float32 layout: 8-byte magic `BSRAWF32`, `u32` height, `u32` width
//! (both little-endian), then `height * width` `f32` pixels in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const RAW_MAGIC: &[u8; 8] = b"BSRAWF32";
pub const RAW_HEADER_LEN: usize = 16;

pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .pixels()
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PGM", "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    if fields[0] != "P5" {
        return Err(Error::format("PGM", format!("unsupported magic {:?}", fields[0])));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::format("PGM", format!("bad {what} {s:?}")))
    };
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("PGM", format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let need = width * height * sample_bytes;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::format("PGM", format!("raster needs {need} bytes")))?;
    let scale = maxval as f64;
    let pixels = if sample_bytes == 1 {
        raster.iter().map(|&v| v as f64 / scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Image::new(height, width, pixels)
}

pub fn encode_raw_f32(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 4 * image.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(image.height() as u32).to_le_bytes());
    out.extend_from_slice(&(image.width() as u32).to_le_bytes());
    for &p in image.pixels() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

pub fn decode_raw_f32(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < RAW_HEADER_LEN || &bytes[..8] != RAW_MAGIC {
        return Err(Error::format("raw float32", "missing magic"));
    }
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() != 4 * height * width {
        return Err(Error::format(
            "raw float32",
            format!("expected {} payload bytes, found {}", 4 * height * width, body.len()),
        ));
    }
    let pixels = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Image::new(height, width, pixels)
}

fn is_raw(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("f32") | Some("raw")
    )
}

/// Reads a PGM or raw float32 image, chosen by file extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if is_raw(path) {
        decode_raw_f32(&bytes)
    } else {
        decode_pgm(&bytes)
    }
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_raw(path) {
        encode_raw_f32(image)
    } else {
        encode_pgm(image)
    };
    fs::write(path, bytes)?;
    Ok(())
}

/// Masks are stored as 0/255 PGM; any nonzero sample reads back as set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let image = read_image(path)?;
    let bits = image.pixels().iter().map(|&p| p > 0.0).collect();
    Mask::new(image.height(), image.width(), bits)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    fs::write(path, encode_pgm(&mask.to_image()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_with_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.dims(), (1, 2));
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn pgm_quantizes_to_eight_bits() {
        let img = Image::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        assert_eq!(back.pixels()[1], 128.0 / 255.0);
    }

    #[test]
    fn raw_header_is_sixteen_bytes() {
        let img = Image::new(2, 3, vec![0.25; 6]).unwrap();
        let bytes = encode_raw_f32(&img);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(decode_raw_f32(&bytes).unwrap(), img);
    }

    #[test]
    fn truncated_inputs_are_rejected() {
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_raw_f32(b"BSRAWF32\x01\x00\x00\x00").is_err());
    }
}
