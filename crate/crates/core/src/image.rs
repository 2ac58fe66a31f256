//! Plaintext images and the `SPIM` binary container shared by images and
//! speckle ciphertexts.
//!
//! `SPIM` layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `SPIM` |
//! | 2 | version (u16, currently 1) |
//! | 4 | height (u32) |
//! | 4 | width (u32) |
//! | 8 | raw_scale (f64) |
//! | 8 | key_fingerprint (u64, 0 for plaintexts) |
//! | 4·h·w | pixel values, f32, row-major |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::IMAGE_FORMAT_VERSION;

const SPIM_MAGIC: &[u8; 4] = b"SPIM";

/// Row-major grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PlainImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::invalid(format!(
                "image must be at least 2x2, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "image data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &PlainImage) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Raw contents of a `SPIM` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SpimRecord {
    pub height: usize,
    pub width: usize,
    pub raw_scale: f64,
    pub key_fingerprint: u64,
    pub data: Vec<f32>,
}

impl SpimRecord {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        if self.data.len() != self.height * self.width {
            return Err(Error::invalid("SPIM data length does not match shape"));
        }
        let mut buf = Vec::with_capacity(34 + 4 * self.data.len());
        buf.extend_from_slice(SPIM_MAGIC);
        buf.extend_from_slice(&IMAGE_FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&dim_u32(self.height)?.to_le_bytes());
        buf.extend_from_slice(&dim_u32(self.width)?.to_le_bytes());
        buf.extend_from_slice(&self.raw_scale.to_le_bytes());
        buf.extend_from_slice(&self.key_fingerprint.to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor::new(&bytes, "SPIM");
        if cur.take(4)? != SPIM_MAGIC {
            return Err(Error::format("bad SPIM magic"));
        }
        let version = cur.u16()?;
        if version != IMAGE_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                kind: "SPIM",
                found: version,
                expected: IMAGE_FORMAT_VERSION,
            });
        }
        let height = cur.u32()? as usize;
        let width = cur.u32()? as usize;
        let raw_scale = cur.f64()?;
        let key_fingerprint = cur.u64()?;
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::format("SPIM dimensions overflow"))?;
        let mut data = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            data.push(cur.f32()?);
        }
        cur.finish()?;
        Ok(Self {
            height,
            width,
            raw_scale,
            key_fingerprint,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

impl From<&PlainImage> for SpimRecord {
    fn from(img: &PlainImage) -> Self {
        SpimRecord {
            height: img.height,
            width: img.width,
            raw_scale: 1.0,
            key_fingerprint: 0,
            data: img.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

impl TryFrom<SpimRecord> for PlainImage {
    type Error = Error;

    fn try_from(rec: SpimRecord) -> Result<Self> {
        PlainImage::new(
            rec.height,
            rec.width,
            rec.data.into_iter().map(f64::from).collect(),
        )
    }
}

/// Area-weighted resampling of a row-major `height × width` grid onto
/// `oh × ow`: each output cell is the
/// mean of the input over the cell's footprint, with fractional overlaps.
pub fn area_resample(data: &[f64], height: usize, width: usize, oh: usize, ow: usize) -> Vec<f64> {
    let rows = overlap_weights(height, oh);
    let cols = overlap_weights(width, ow);
    let mut out = Vec::with_capacity(oh * ow);
    for rw in &rows {
        for cw in &cols {
            let mut acc = 0.0;
            let mut total = 0.0;
            for &(r, wr) in rw {
                for &(c, wc) in cw {
                    acc += wr * wc * data[r * width + c];
                    total += wr * wc;
                }
            }
            out.push(acc / total);
        }
    }
    out
}

/// For each output cell, the input indices it covers and the overlap length.
fn overlap_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (w > 1e-12).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

pub(crate) fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("dimension {v} exceeds u32")))
}

/// Bounds-checked little-endian reader used by all binary formats.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], kind: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            kind,
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(format!(
                "{} file truncated at byte {} (needed {n} more)",
                self.kind, self.pos
            ))),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(format!(
                "{} file has {} trailing bytes",
                self.kind,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
