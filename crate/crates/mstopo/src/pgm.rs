//! Binary PGM (P5) codec for density rasters and masks.
//!
//! Densities in `[0, 1]` are exported at maxval 255 with round-to-nearest
//! quantization; boolean masks use the two extreme sample values. A header
//! comment line carries the provenance string (config hash and epoch).
//!
//! Raster convention: in memory row 0 is the bottom of the structure (the
//! finite element y axis points up), while PGM stores the top row first, so
//! the codec flips rows on both paths. The decoder accepts any whitespace
//! and comment placement the format allows and any single-byte maxval, but
//! rejects malformed headers, short data, and trailing bytes.

use crate::error::{Error, Result};

/// A decoded grayscale image with samples mapped back to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    /// Row-major densities, row 0 at the bottom.
    pub densities: Vec<f64>,
    /// Header comment lines in order, `#` and surrounding whitespace stripped.
    pub comments: Vec<String>,
}

/// Largest width or height the decoder will accept.
const MAX_DIM: usize = 1 << 20;

/// Encodes densities as P5 at maxval 255. `comment` becomes a header
/// comment line and must not contain newlines.
pub fn encode(width: usize, height: usize, densities: &[f64], comment: &str) -> Result<Vec<u8>> {
    let samples = quantize(width, height, densities)?;
    assemble(width, height, &samples, comment)
}

/// Encodes a boolean mask as P5 with samples {0, 255}.
pub fn encode_mask(width: usize, height: usize, mask: &[bool], comment: &str) -> Result<Vec<u8>> {
    check_dims(width, height, mask.len())?;
    let samples: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    assemble(width, height, &samples, comment)
}

/// Parses a P5 image, scaling samples by the file's maxval.
pub fn decode(bytes: &[u8]) -> Result<PgmImage> {
    let mut p = Parser {
        bytes,
        pos: 0,
        comments: Vec::new(),
    };
    if p.take(2)? != b"P5" {
        return Err(Error::Pgm("not a binary PGM (missing P5 magic)".into()));
    }
    let width = p.number("width")?;
    let height = p.number("height")?;
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(Error::Pgm(format!("bad dimensions {width}x{height}")));
    }
    let maxval = p.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Pgm(format!(
            "maxval {maxval} unsupported (need 1..=255)"
        )));
    }
    // Exactly one whitespace byte separates the header from the samples.
    match p.take(1)? {
        [b' ' | b'\t' | b'\n' | b'\r'] => {}
        other => {
            return Err(Error::Pgm(format!(
                "expected whitespace before samples, found {:?}",
                other[0] as char
            )));
        }
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Pgm("dimension overflow".into()))?;
    let data = p.take(n)?;
    if p.pos != bytes.len() {
        return Err(Error::Pgm(format!("{} trailing bytes", bytes.len() - p.pos)));
    }
    // File rows run top to bottom; store bottom row first.
    let scale = 1.0 / maxval as f64;
    let mut densities = vec![0.0; n];
    for row in 0..height {
        let src = &data[row * width..(row + 1) * width];
        let dst = &mut densities[(height - 1 - row) * width..(height - row) * width];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s as f64 * scale;
        }
    }
    Ok(PgmImage {
        width,
        height,
        densities,
        comments: p.comments,
    })
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 || width.checked_mul(height) != Some(len) {
        return Err(Error::Input(format!(
            "raster of {len} samples does not match {width}x{height}"
        )));
    }
    Ok(())
}

fn quantize(width: usize, height: usize, densities: &[f64]) -> Result<Vec<u8>> {
    check_dims(width, height, densities.len())?;
    densities
        .iter()
        .map(|&d| {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Input(format!("density {d} outside [0, 1]")));
            }
            Ok((d * 255.0).round() as u8)
        })
        .collect()
}

/// Writes the header and the rows flipped into file order.
fn assemble(width: usize, height: usize, samples: &[u8], comment: &str) -> Result<Vec<u8>> {
    if comment.contains('\n') || comment.contains('\r') {
        return Err(Error::Input("comment must be a single line".into()));
    }
    let mut out = Vec::with_capacity(samples.len() + 64 + comment.len());
    out.extend_from_slice(b"P5\n");
    if !comment.is_empty() {
        out.extend_from_slice(format!("# {comment}\n").as_bytes());
    }
    out.extend_from_slice(format!("{width} {height}\n255\n").as_bytes());
    for row in (0..height).rev() {
        out.extend_from_slice(&samples[row * width..(row + 1) * width]);
    }
    Ok(out)
}

/// Header scanner: whitespace-separated decimal tokens with `#` comments
/// running to end of line, permitted anywhere between tokens.
struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    comments: Vec<String>,
}

impl<'a> Parser<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Pgm("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            match b {
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                b'#' => {
                    let start = self.pos + 1;
                    let mut end = start;
                    while end < self.bytes.len() && self.bytes[end] != b'\n' {
                        end += 1;
                    }
                    let text = String::from_utf8_lossy(&self.bytes[start..end]);
                    self.comments.push(text.trim().to_string());
                    self.pos = end;
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit())
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::Pgm(format!("expected {what}")));
        }
        if self.pos - start > 9 {
            return Err(Error::Pgm(format!("{what} has too many digits")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        Ok(text.parse().unwrap())
    }
}
