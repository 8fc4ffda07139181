//! Binary PPM (P6, maxval 255).

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::Image;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("byte {offset}: expected magic \"P6\"")]
    BadMagic { offset: usize },
    #[error("byte {offset}: {reason}")]
    BadHeader { offset: usize, reason: String },
    #[error("byte {offset}: unsupported maxval {maxval} (only 255)")]
    UnsupportedMaxval { offset: usize, maxval: usize },
    #[error("byte {offset}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// `round_half_up(v * 255)`, clamped to the byte range.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + 3 * img.width * img.height);
    out.extend_from_slice(header.as_bytes());
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                out.push(quantize(img.get(c, x, y)));
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
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

    /// Next decimal field and its starting offset.
    fn number(&mut self, what: &str) -> Result<(usize, usize), PpmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PpmError::BadHeader {
                offset: start,
                reason: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start))
            .ok_or_else(|| PpmError::BadHeader {
                offset: start,
                reason: format!("{what} out of range"),
            })
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(PpmError::BadMagic { offset: 0 });
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let (width, _) = cur.number("width")?;
    let (height, _) = cur.number("height")?;
    let (maxval, maxval_at) = cur.number("maxval")?;
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval {
            offset: maxval_at,
            maxval,
        });
    }
    if width == 0 || height == 0 {
        return Err(PpmError::BadHeader {
            offset: maxval_at,
            reason: format!("zero-sized image {width}x{height}"),
        });
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(PpmError::BadHeader {
                offset: cur.pos,
                reason: "expected a single whitespace byte after maxval".into(),
            })
        }
    }
    let expected = 3 * width * height;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(PpmError::Truncated {
            offset: cur.pos + payload.len(),
            expected,
            found: payload.len(),
        });
    }
    let mut img = Image::new(width, height);
    for (i, px) in payload[..expected].chunks_exact(3).enumerate() {
        let (x, y) = (i % width, i / width);
        for c in 0..3 {
            img.set(c, x, y, px[c] as f64 / 255.0);
        }
    }
    Ok(img)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image, PpmError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PpmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_ppm(&bytes)
}

pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<(), PpmError> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(|source| PpmError::Io {
        path: path.display().to_string(),
        source,
    })
}
