//! Netpbm graymap I/O: P2 and P5 in, P5 out.

use std::fs;
use std::path::Path;

use crate::error::{domain, Error, Result};
use crate::tensorgrid::{Mask, ScalarField};

/// A decoded graymap with its raw sample values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Graymap {
    /// Samples scaled to `[0, 1]` on a unit-spaced grid.
    pub fn to_field(&self) -> Result<ScalarField> {
        let scale = 1.0 / self.maxval as f64;
        ScalarField::new(
            self.width,
            self.height,
            1.0,
            self.samples.iter().map(|&s| s as f64 * scale).collect(),
        )
    }

    /// Observed where the sample exceeds half of `maxval`.
    pub fn to_mask(&self) -> Result<Mask> {
        let obs = self
            .samples
            .iter()
            .map(|&s| 2 * s as u32 > self.maxval as u32)
            .collect();
        Mask::new(self.width, self.height, obs)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Pgm {
            offset: self.pos,
            msg: msg.into(),
        })
    }

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

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return self.err(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse().or_else(|_| {
            self.pos = start;
            self.err(format!("{what} out of range"))
        })
    }
}

/// Decode a P2 or P5 graymap.
pub fn parse_pgm(bytes: &[u8]) -> Result<Graymap> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 {
        return c.err("missing magic number");
    }
    let binary = match &bytes[..2] {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(Error::UnsupportedMagic(
                String::from_utf8_lossy(other).into(),
            ))
        }
    };
    c.pos = 2;
    let width = c.number("width")? as usize;
    let height = c.number("height")? as usize;
    let maxval_pos = c.pos;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return c.err("zero image extent");
    }
    if maxval == 0 || maxval > 65535 {
        c.pos = maxval_pos;
        return c.err(format!("maxval must be in 1..=65535, got {maxval}"));
    }
    let n = width * height;
    let mut samples = Vec::with_capacity(n);
    if binary {
        if c.pos >= bytes.len() || !bytes[c.pos].is_ascii_whitespace() {
            return c.err("expected a single whitespace before raster");
        }
        c.pos += 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        if bytes.len() - c.pos < need {
            c.pos = bytes.len();
            return c.err(format!("raster truncated: need {need} bytes"));
        }
        for k in 0..n {
            let s = if wide {
                u16::from_be_bytes([bytes[c.pos + 2 * k], bytes[c.pos + 2 * k + 1]])
            } else {
                bytes[c.pos + k] as u16
            };
            if s as u32 > maxval {
                c.pos += if wide { 2 * k } else { k };
                return c.err(format!("sample {s} exceeds maxval {maxval}"));
            }
            samples.push(s);
        }
    } else {
        for _ in 0..n {
            let start = c.pos;
            let s = c.number("sample")?;
            if s > maxval {
                c.pos = start;
                c.skip_space_and_comments();
                return c.err(format!("sample {s} exceeds maxval {maxval}"));
            }
            samples.push(s as u16);
        }
    }
    Ok(Graymap {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

/// P5 bytes of `field` clamped to `[0, 1]` and quantized to `maxval`.
pub fn encode_pgm(field: &ScalarField, maxval: u16) -> Result<Vec<u8>> {
    if maxval == 0 {
        return domain("maxval must be at least 1");
    }
    let mut out = format!("P5\n{} {}\n{}\n", field.width(), field.height(), maxval).into_bytes();
    for &v in field.data() {
        let clamped = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        let s = (clamped * maxval as f64).round() as u16;
        if maxval > 255 {
            out.extend_from_slice(&s.to_be_bytes());
        } else {
            out.push(s as u8);
        }
    }
    Ok(out)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<ScalarField> {
    parse_pgm(&fs::read(path)?)?.to_field()
}

pub fn write_pgm(field: &ScalarField, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    fs::write(path, encode_pgm(field, maxval)?)?;
    Ok(())
}

/// Mask image: white observed, black hole. `extents` must match if given.
pub fn read_mask(path: impl AsRef<Path>, extents: Option<(usize, usize)>) -> Result<Mask> {
    let img = parse_pgm(&fs::read(path)?)?;
    if let Some(expected) = extents {
        if (img.width, img.height) != expected {
            return Err(Error::ExtentMismatch {
                expected,
                got: (img.width, img.height),
            });
        }
    }
    img.to_mask()
}
