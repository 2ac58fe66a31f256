//! `SPMD` model files.
//!
//! Little-endian layout: magic `SPMD`, `u16` version, `u16` layer count,
//! `u8` input mode, `u32` input height/width, `u32` output height/width, then
//! per layer a `u8` tag, tag-specific `u32` dimensions, a `u32` parameter
//! count and the parameters as `f64`.

use std::io::{Read, Write};
use std::path::Path;

use super::layers::{ComplexDense, ConvBlock, Layer};
use super::{DecoderModel, InputMode};
use crate::error::{Error, Result};
use crate::image::{dim_u32, ByteCursor};
use crate::optics::SpeckleShape;
use crate::MODEL_FORMAT_VERSION;

const MAGIC: &[u8; 4] = b"SPMD";

const TAG_DENSE: u8 = 1;
const TAG_MODULUS: u8 = 2;
const TAG_CONV: u8 = 3;
const TAG_DOWN: u8 = 4;
const TAG_UP: u8 = 5;
const TAG_SQUASH: u8 = 6;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    buf.extend_from_slice(&dim_u32(v)?.to_le_bytes());
    Ok(())
}

pub fn write_model(model: &DecoderModel, mut w: impl Write) -> Result<()> {
    let layers = model.layers();
    let count = u16::try_from(layers.len()).map_err(|_| Error::invalid("too many layers"))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.push(match model.input_mode() {
        InputMode::Intensity => 0,
        InputMode::Amplitude => 1,
    });
    let input = model.input_shape();
    let (oh, ow) = model.output_shape();
    for v in [input.height, input.width, oh, ow] {
        put_u32(&mut buf, v)?;
    }
    for layer in layers {
        match layer {
            Layer::ComplexDense(d) => {
                buf.push(TAG_DENSE);
                put_u32(&mut buf, d.in_len)?;
                put_u32(&mut buf, d.out_height)?;
                put_u32(&mut buf, d.out_width)?;
            }
            Layer::Modulus => buf.push(TAG_MODULUS),
            Layer::ConvBlock(c) => {
                buf.push(TAG_CONV);
                put_u32(&mut buf, c.in_channels)?;
                put_u32(&mut buf, c.out_channels)?;
            }
            Layer::Downsample => buf.push(TAG_DOWN),
            Layer::Upsample => buf.push(TAG_UP),
            Layer::OutputSquash => buf.push(TAG_SQUASH),
        }
        let params = layer.params();
        put_u32(&mut buf, params.len())?;
        for p in params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_model(mut r: impl Read) -> Result<DecoderModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = ByteCursor::new(&bytes, "SPMD");
    if cur.take(4)? != MAGIC {
        return Err(Error::format("bad SPMD magic"));
    }
    let version = cur.u16()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: "SPMD",
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let count = cur.u16()? as usize;
    let input_mode = match cur.u8()? {
        0 => InputMode::Intensity,
        1 => InputMode::Amplitude,
        m => return Err(Error::format(format!("unknown input mode {m}"))),
    };
    let ih = cur.u32()? as usize;
    let iw = cur.u32()? as usize;
    let oh = cur.u32()? as usize;
    let ow = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let tag = cur.u8()?;
        let mut layer = match tag {
            TAG_DENSE => {
                let in_len = cur.u32()? as usize;
                let out_h = cur.u32()? as usize;
                let out_w = cur.u32()? as usize;
                check_size(&cur, in_len, out_h, out_w)?;
                Layer::ComplexDense(ComplexDense::zeros(in_len, out_h, out_w))
            }
            TAG_MODULUS => Layer::Modulus,
            TAG_CONV => {
                let ic = cur.u32()? as usize;
                let oc = cur.u32()? as usize;
                check_size(&cur, ic, oc, 9)?;
                Layer::ConvBlock(ConvBlock::zeros(ic, oc))
            }
            TAG_DOWN => Layer::Downsample,
            TAG_UP => Layer::Upsample,
            TAG_SQUASH => Layer::OutputSquash,
            t => return Err(Error::format(format!("layer {i}: unknown tag {t}"))),
        };
        let n = cur.u32()? as usize;
        if n != layer.params().len() {
            return Err(Error::format(format!(
                "layer {i}: {n} parameters stored, {} expected",
                layer.params().len()
            )));
        }
        for p in layer.params_mut() {
            *p = cur.f64()?;
        }
        layers.push(layer);
    }
    cur.finish()?;
    DecoderModel::from_layers(input_mode, SpeckleShape::new(ih, iw), oh, ow, layers)
        .map_err(|e| Error::format(format!("inconsistent SPMD model: {e}")))
}

/// Rejects dimension products that could not possibly fit in the file, so a
/// corrupt header cannot trigger a huge allocation.
fn check_size(cur: &ByteCursor<'_>, a: usize, b: usize, c: usize) -> Result<()> {
    let n = a
        .checked_mul(b)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::format("layer dimensions overflow"))?;
    if n > cur.remaining() / 8 + 1 {
        return Err(Error::format("SPMD file truncated"));
    }
    Ok(())
}

pub fn save_model(model: &DecoderModel, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DecoderModel> {
    let f = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(f))
}
