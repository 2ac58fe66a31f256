//! Synthetic identity-labelled face corpus, splits and PGM I/O.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::PlainImage;
use crate::rng::{self, derive_seed, streams};

/// Rendered values are scaled into `[0, PALETTE_MAX]`. Keeping the brightest
/// pixel below a full phase turn stops white and black from aliasing onto
/// the same phasor.
pub const PALETTE_MAX: f64 = 0.8;

const SUPERSAMPLE: usize = 4;
const EYE_VALUE: f64 = 0.1;
const MOUTH_VALUE: f64 = 0.15;

/// Geometry and shading of one synthetic person. Positions and lengths are
/// fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub id: usize,
    pub center_x: f64,
    pub center_y: f64,
    pub axis_x: f64,
    pub axis_y: f64,
    /// Horizontal eye offset from the centre, in units of `axis_x`.
    pub eye_dx: f64,
    /// Eye height above the centre, in units of `axis_y`.
    pub eye_dy: f64,
    /// Eye radius, in units of `axis_x`.
    pub eye_radius: f64,
    /// Mouth half-width, in units of `axis_x`.
    pub mouth_width: f64,
    pub mouth_curvature: f64,
    pub skin: f64,
    pub background_low: f64,
    pub background_high: f64,
    pub background_angle: f64,
}

impl Identity {
    /// Draws an identity with parameters uniform in the generator bounds.
    pub fn random(id: usize, rng: &mut impl Rng) -> Self {
        Self {
            id,
            center_x: rng.random_range(0.35..0.65),
            center_y: rng.random_range(0.35..0.65),
            axis_x: rng.random_range(0.2..0.36),
            axis_y: rng.random_range(0.26..0.42),
            eye_dx: rng.random_range(0.3..0.5),
            eye_dy: rng.random_range(0.15..0.35),
            eye_radius: rng.random_range(0.12..0.22),
            mouth_width: rng.random_range(0.3..0.6),
            mouth_curvature: rng.random_range(-0.6..0.6),
            skin: rng.random_range(0.1..0.9),
            background_low: rng.random_range(0.05..0.9),
            background_high: rng.random_range(0.05..0.9),
            background_angle: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    /// Noise-free shading at normalized coordinates `(x, y)` for a head
    /// centred at `(cx, cy)`.
    fn shade(&self, x: f64, y: f64, cx: f64, cy: f64) -> f64 {
        let (ax, ay) = (self.axis_x, self.axis_y);
        let mx = (x - cx) / (self.mouth_width * ax);
        let mouth_y = cy + 0.45 * ay + self.mouth_curvature * ay * (mx * mx - 0.5);
        if mx.abs() <= 1.0 && (y - mouth_y).abs() <= 0.06 * ay {
            return MOUTH_VALUE;
        }
        let er2 = (self.eye_radius * ax).powi(2);
        let ey = cy - self.eye_dy * ay;
        for sign in [-1.0, 1.0] {
            let ex = cx + sign * self.eye_dx * ax;
            if (x - ex).powi(2) + (y - ey).powi(2) <= er2 {
                return EYE_VALUE;
            }
        }
        if ((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2) <= 1.0 {
            return self.skin;
        }
        let u = self.background_angle.cos() * (x - 0.5) + self.background_angle.sin() * (y - 0.5);
        self.background_low + (self.background_high - self.background_low) * (u + 0.5)
    }

    /// Renders one sample. The variation stream of `variation_seed` drives
    /// a ±1 pixel head shift, a brightness offset in ±0.05 and additive
    /// Gaussian texture noise of SD 0.02.
    pub fn render(&self, size: usize, variation_seed: u64) -> Result<PlainImage> {
        if size < 8 {
            return Err(Error::invalid(format!("image size {size} is below 8")));
        }
        let mut rng = rng::stream(variation_seed, streams::VARIATION);
        let shift_x = rng.random_range(-1i32..=1) as f64;
        let shift_y = rng.random_range(-1i32..=1) as f64;
        let brightness: f64 = rng.random_range(-0.05..0.05);
        let noise = Normal::new(0.0, 0.02).expect("valid noise SD");
        let s = size as f64;
        let cx = self.center_x + shift_x / s;
        let cy = self.center_y + shift_y / s;
        let ss = SUPERSAMPLE as f64;
        let mut data = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                let mut acc = 0.0;
                for i in 0..SUPERSAMPLE {
                    for j in 0..SUPERSAMPLE {
                        let y = ((r * SUPERSAMPLE + i) as f64 + 0.5) / ss / s;
                        let x = ((c * SUPERSAMPLE + j) as f64 + 0.5) / ss / s;
                        acc += self.shade(x, y, cx, cy);
                    }
                }
                let v = acc / (ss * ss) + brightness + noise.sample(&mut rng);
                data.push(PALETTE_MAX * v.clamp(0.0, 1.0));
            }
        }
        PlainImage::new(size, size, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceSample {
    pub identity_id: usize,
    pub variation_seed: u64,
    pub image: PlainImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub identities: Vec<Identity>,
    /// Identity-major: all samples of identity 0, then identity 1, ...
    pub samples: Vec<FaceSample>,
    pub image_size: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn images(&self) -> Vec<PlainImage> {
        self.samples.iter().map(|s| s.image.clone()).collect()
    }
}

pub fn build_corpus(
    n_identities: usize,
    samples_per_identity: usize,
    image_size: usize,
    seed: u64,
) -> Result<Corpus> {
    build_corpus_with(
        n_identities,
        samples_per_identity,
        image_size,
        seed,
        Exec::default(),
    )
}

/// [`build_corpus`] with an explicit executor; output does not depend on it.
pub fn build_corpus_with(
    n_identities: usize,
    samples_per_identity: usize,
    image_size: usize,
    seed: u64,
    exec: Exec,
) -> Result<Corpus> {
    if n_identities < 2 {
        return Err(Error::invalid("corpus needs at least 2 identities"));
    }
    if samples_per_identity == 0 {
        return Err(Error::invalid("samples_per_identity must be at least 1"));
    }
    if image_size < 8 {
        return Err(Error::invalid(format!(
            "image size {image_size} is below 8"
        )));
    }
    let mut id_rng = rng::stream(seed, streams::IDENTITY);
    let identities: Vec<Identity> = (0..n_identities)
        .map(|i| Identity::random(i, &mut id_rng))
        .collect();
    let total = n_identities * samples_per_identity;
    let variation_base = derive_seed(seed, streams::VARIATION);
    let samples = exec.try_map(total, |k| {
        let identity = &identities[k / samples_per_identity];
        let variation_seed = derive_seed(variation_base, k as u64);
        Ok::<_, Error>(FaceSample {
            identity_id: identity.id,
            variation_seed,
            image: identity.render(image_size, variation_seed)?,
        })
    })?;
    Ok(Corpus {
        identities,
        samples,
        image_size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_eval: usize,
    pub n_test: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_eval: 100,
            n_test: 100,
        }
    }
}

/// Sample indices of each partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, then consecutive train/eval/test slices.
pub fn split(n: usize, spec: SplitSpec, seed: u64) -> Result<Splits> {
    if spec.n_train == 0 || spec.n_eval == 0 || spec.n_test == 0 {
        return Err(Error::invalid("every split needs at least one sample"));
    }
    let need = spec.n_train + spec.n_eval + spec.n_test;
    if need > n {
        return Err(Error::invalid(format!(
            "split needs {need} samples but the corpus has {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, streams::SPLIT));
    let train = order[..spec.n_train].to_vec();
    let eval = order[spec.n_train..spec.n_train + spec.n_eval].to_vec();
    let test = order[spec.n_train + spec.n_eval..need].to_vec();
    Ok(Splits { train, eval, test })
}

/// Binary 8-bit PGM (`P5`, maxval 255); values are stored as `round(v·255)`.
pub fn write_pgm(image: &PlainImage, mut w: impl Write) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    buf.extend(image.data().iter().map(|&v| (v * 255.0).round() as u8));
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_pgm(mut r: impl Read) -> Result<PlainImage> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = header_token(&bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::format(format!(
            "unsupported PGM variant {:?} (only binary P5 is read)",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = header_number(&bytes, &mut pos)?;
    let height = header_number(&bytes, &mut pos)?;
    let maxval = header_number(&bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::format(format!(
            "PGM maxval {maxval} unsupported (8-bit maxval 255 required)"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format("PGM header not terminated by whitespace")),
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("PGM dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() != n {
        return Err(Error::format(format!(
            "PGM raster has {} bytes, expected {n}",
            raster.len()
        )));
    }
    PlainImage::new(
        height,
        width,
        raster.iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .map_err(|e| Error::format(format!("PGM image rejected: {e}")))
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format("PGM header truncated")),
        }
    }
    let start = *pos;
    while let Some(b) = bytes.get(*pos) {
        if b.is_ascii_whitespace() || *b == b'#' {
            break;
        }
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::format(format!(
                "bad PGM header field {:?}",
                String::from_utf8_lossy(tok)
            ))
        })
}

pub fn save_image_pgm(image: &PlainImage, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_pgm(image, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_image_pgm(path: impl AsRef<Path>) -> Result<PlainImage> {
    read_pgm(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub identity_id: usize,
    pub variation_seed: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `corpus/<identity>/<sample>.pgm` under `root` plus
/// `root/manifest.json`.
pub fn write_corpus(corpus: &Corpus, root: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let root = root.as_ref();
    let mut entries = Vec::with_capacity(corpus.len());
    let mut counters = vec![0usize; corpus.identities.len()];
    for s in &corpus.samples {
        let k = counters[s.identity_id];
        counters[s.identity_id] += 1;
        let rel = format!("corpus/{:04}/{:04}.pgm", s.identity_id, k);
        let path = root.join(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        save_image_pgm(&s.image, &path)?;
        entries.push(ManifestEntry {
            path: rel,
            identity_id: s.identity_id,
            variation_seed: s.variation_seed,
        });
    }
    let f = std::fs::File::create(root.join(MANIFEST_FILE))?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &entries)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(entries)
}

/// Loads every image listed in a manifest, e.g. an external PGM corpus.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<FaceSample>> {
    let path = path.as_ref();
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let entries: Vec<ManifestEntry> = serde_json::from_reader(std::fs::File::open(path)?)?;
    entries
        .into_iter()
        .map(|e| {
            Ok(FaceSample {
                image: load_image_pgm(base.join(&e.path))?,
                identity_id: e.identity_id,
                variation_seed: e.variation_seed,
            })
        })
        .collect()
}
