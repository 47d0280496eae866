//! Binary 8-bit portable graymap (P5) images.

use std::path::Path;

use crate::error::{Error, Result};

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel buffer does not match image size");
    let mut out = format!("P5\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    std::fs::write(path, encode_pgm(width, height, pixels))?;
    Ok(())
}

/// Returns `(width, height, pixels)`. Comments in the header are not supported.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated P5 header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Format("not an 8-bit P5 image".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad P5 size `{}`", s)));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != w * h {
        return Err(Error::Format(format!("P5 body has {} bytes, expected {}", body.len(), w * h)));
    }
    Ok((w, h, body.to_vec()))
}

/// Maps decibel values to gray levels over `range_db` below `peak_db`.
pub fn db_to_gray(db: f64, peak_db: f64, range_db: f64) -> u8 {
    if !db.is_finite() {
        return 0;
    }
    let level = (db - (peak_db - range_db)) / range_db;
    (level.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let px: Vec<u8> = (0..12).collect();
        let bytes = encode_pgm(4, 3, &px);
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), (4, 3, px));
        assert!(decode_pgm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn gray_mapping() {
        assert_eq!(db_to_gray(0.0, 0.0, 60.0), 255);
        assert_eq!(db_to_gray(-60.0, 0.0, 60.0), 0);
        assert_eq!(db_to_gray(-90.0, 0.0, 60.0), 0);
        assert_eq!(db_to_gray(-30.0, 0.0, 60.0), 128);
        assert_eq!(db_to_gray(f64::NEG_INFINITY, 0.0, 60.0), 0);
    }
}
