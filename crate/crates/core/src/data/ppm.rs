//! Binary PPM (P6, maxval 255).

use std::path::Path;

use super::ImageRGB;
use crate::error::{Error, Result};

fn fmt_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(fmt_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err(start, format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ImageRGB> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(fmt_err(0, "expected magic P6"));
    }
    let mut hdr = Header { bytes, pos: 2 };
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    hdr.skip_space();
    let maxval_at = hdr.pos;
    let maxval = hdr.number("maxval")?;
    if maxval != 255 {
        return Err(fmt_err(maxval_at, format!("maxval {maxval} unsupported, need 255")));
    }
    if width == 0 || height == 0 {
        return Err(fmt_err(2, format!("degenerate size {width}x{height}")));
    }
    match bytes.get(hdr.pos) {
        Some(b) if b.is_ascii_whitespace() => hdr.pos += 1,
        _ => return Err(fmt_err(hdr.pos, "expected single whitespace before payload")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| fmt_err(2, "image size overflows"))?;
    let payload = &bytes[hdr.pos..];
    if payload.len() < need {
        return Err(fmt_err(bytes.len(), format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    let pixels = payload[..need].iter().map(|&b| b as f64 / 255.0).collect();
    ImageRGB::new(width, height, pixels)
}

pub fn encode(img: &ImageRGB) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<ImageRGB> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_ppm(img: &ImageRGB, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_payload() {
        let img = ImageRGB::new(1, 1, vec![1.0, 0.0, 128.0 / 255.0]).unwrap();
        let bytes = encode(&img);
        assert_eq!(&bytes[bytes.len() - 3..], &[0xFF, 0x00, 0x80]);
        assert_eq!(decode(&bytes).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode(b"P6 # c\n2 1\n# x\n255\n\x00\x01\x02\x03\x04\x05").unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixels[5], 5.0 / 255.0);
    }

    #[test]
    fn format_errors_carry_offsets() {
        assert!(matches!(decode(b"P5\n1 1\n255\n\0"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode(b"P6\n1 1\n65535\n\0"), Err(Error::Format { offset: 7, .. })));
        assert!(matches!(decode(b"P6\n2 2\n255\n\0\0"), Err(Error::Format { offset: 13, .. })));
        assert!(matches!(decode(b"P6\nx 2\n255\n"), Err(Error::Format { offset: 3, .. })));
    }

    #[test]
    fn save_clamps_out_of_range() {
        let img = ImageRGB::new(1, 1, vec![-0.2, 1.7, 0.5]).unwrap();
        let bytes = encode(&img);
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 255, 128]);
    }
}
