//! 8-bit RGB images and the binary netpbm formats used for all artifacts.
//!
//! Input images are binary PPM (`P6`, maxval 255). The reader tolerates
//! `#` comments anywhere whitespace may appear and reports malformed input
//! with the byte offset where parsing failed; the writers emit a fixed
//! canonical header (`P6\n{w} {h}\n255\n`, and `P5` for grayscale) with no
//! comments, so identical pixels always produce identical bytes.

use std::path::Path;

use crate::error::{Error, Result};

/// An RGB image with interleaved 8-bit samples, row-major from the top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Image> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be >= 1, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| Error::InvalidArgument("image dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} RGB image needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: (u8, u8, u8)) -> Result<Image> {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&[rgb.0, rgb.1, rgb.2]);
        }
        Image::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = (y * self.width + x) * 3;
        (self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set_rgb(&mut self, x: usize, y: usize, rgb: (u8, u8, u8)) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb.0;
        self.data[i + 1] = rgb.1;
        self.data[i + 2] = rgb.2;
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::ImageFormat {
            offset,
            message: message.into(),
        }
    }

    /// Skips whitespace and `#` comments; errors if none was present.
    fn skip_separator(&mut self) -> Result<()> {
        let start = self.pos;
        loop {
            match self.bytes.get(self.pos) {
                Some(b' ' | b'\t' | b'\r' | b'\n') => self.pos += 1,
                Some(b'#') => {
                    while !matches!(self.bytes.get(self.pos), None | Some(b'\n')) {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        if self.pos == start {
            return Err(self.fail(start, "expected whitespace"));
        }
        Ok(())
    }

    fn read_usize(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        let mut value: usize = 0;
        let mut digits = 0;
        while let Some(b @ b'0'..=b'9') = self.bytes.get(self.pos) {
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as usize))
                .ok_or_else(|| self.fail(start, format!("{what} is out of range")))?;
            digits += 1;
            self.pos += 1;
        }
        if digits == 0 {
            return Err(self.fail(start, format!("expected {what}")));
        }
        Ok(value)
    }
}

/// Parses a binary PPM (`P6`) image with maxval 255.
pub fn read_ppm(bytes: &[u8]) -> Result<Image> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(cur.fail(0, "not a binary PPM (P6) file"));
    }
    cur.pos = 2;
    cur.skip_separator()?;
    let width_at = cur.pos;
    let width = cur.read_usize("width")?;
    cur.skip_separator()?;
    let height_at = cur.pos;
    let height = cur.read_usize("height")?;
    cur.skip_separator()?;
    let maxval_at = cur.pos;
    let maxval = cur.read_usize("maxval")?;
    if maxval != 255 {
        return Err(cur.fail(maxval_at, format!("unsupported maxval {maxval}; only 255")));
    }
    // Exactly one whitespace byte separates the header from the samples.
    match bytes.get(cur.pos) {
        Some(b' ' | b'\t' | b'\r' | b'\n') => cur.pos += 1,
        _ => return Err(cur.fail(cur.pos, "expected single whitespace before pixel data")),
    }
    if width == 0 {
        return Err(cur.fail(width_at, "width must be >= 1"));
    }
    if height == 0 {
        return Err(cur.fail(height_at, "height must be >= 1"));
    }
    let need = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| cur.fail(width_at, "image dimensions overflow"))?;
    let have = bytes.len() - cur.pos;
    if have < need {
        return Err(cur.fail(
            bytes.len(),
            format!("pixel data truncated: need {need} bytes, found {have}"),
        ));
    }
    if have > need {
        return Err(cur.fail(
            cur.pos + need,
            format!("{} trailing bytes after pixel data", have - need),
        ));
    }
    Image::new(width, height, bytes[cur.pos..].to_vec())
}

/// Serializes an image as binary PPM with the canonical header.
pub fn write_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

/// Serializes one grayscale channel as binary PGM (`P5`).
pub fn write_pgm(width: usize, height: usize, gray: &[u8]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || gray.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "{width}x{height} grayscale image needs {} bytes, got {}",
            width * height,
            gray.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    Ok(out)
}

/// Reads and parses a PPM file.
pub fn load_ppm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_ppm(&bytes).map_err(|e| match e {
        Error::ImageFormat { offset, message } => Error::ImageFormat {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bytes() {
        let img = Image::new(2, 3, (0..18).collect()).unwrap();
        let bytes = write_ppm(&img);
        assert!(bytes.starts_with(b"P6\n2 3\n255\n"));
        assert_eq!(read_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn header_is_byte_exact() {
        let img = Image::filled(2, 1, (1, 2, 3)).unwrap();
        assert_eq!(write_ppm(&img), b"P6\n2 1\n255\n\x01\x02\x03\x01\x02\x03");
    }

    #[test]
    fn comments_are_tolerated_anywhere_in_the_header() {
        let bytes = b"P6 # made by hand\n# full comment line\n 2\t1 # size\n255\nABCDEF";
        let img = read_ppm(bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.data(), b"ABCDEF");
    }

    #[test]
    fn wrong_magic_is_rejected_at_offset_zero() {
        let err = read_ppm(b"P5\n2 1\n255\nAB").unwrap_err();
        let Error::ImageFormat { offset, .. } = err else {
            panic!("{err}")
        };
        assert_eq!(offset, 0);
    }

    #[test]
    fn non_255_maxval_is_rejected_at_its_offset() {
        let err = read_ppm(b"P6\n2 1\n65535\nAAAAAA").unwrap_err();
        let Error::ImageFormat { offset, message } = err else {
            panic!()
        };
        assert_eq!(offset, 7);
        assert!(message.contains("65535"));
    }

    #[test]
    fn truncated_pixels_report_the_shortfall() {
        let err = read_ppm(b"P6\n2 1\n255\nABC").unwrap_err();
        let Error::ImageFormat { offset, message } = err else {
            panic!()
        };
        assert_eq!(offset, 14);
        assert!(message.contains("need 6 bytes, found 3"));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let err = read_ppm(b"P6\n2 1\n255\nABCDEF\n").unwrap_err();
        assert!(err.to_string().contains("trailing"));
    }

    #[test]
    fn zero_dimensions_are_rejected() {
        assert!(read_ppm(b"P6\n0 1\n255\n").is_err());
        assert!(Image::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn pgm_writer_emits_canonical_header() {
        let bytes = write_pgm(3, 1, &[10, 20, 30]).unwrap();
        assert_eq!(bytes, b"P5\n3 1\n255\n\x0a\x14\x1e");
        assert!(write_pgm(2, 2, &[0; 3]).is_err());
    }

    #[test]
    fn pixel_accessors_are_row_major() {
        let mut img = Image::filled(2, 2, (0, 0, 0)).unwrap();
        img.set_rgb(1, 0, (9, 8, 7));
        assert_eq!(img.rgb(1, 0), (9, 8, 7));
        assert_eq!(&img.data()[3..6], &[9, 8, 7]);
    }
}
