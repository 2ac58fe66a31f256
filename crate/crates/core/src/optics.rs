//! The simulated encryption channel.
//!
//! A plaintext pixel value `p` in `[0, 1]` becomes the unit phasor
//! `exp(i·2π·p)`, the phasor field is multiplied by the key's complex
//! transmission matrix, and the detector records `|y|²` normalized by its
//! maximum. Intensity detection discards the output phase, which is what
//! makes decryption a learning problem rather than a linear solve.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::{area_resample, dim_u32, ByteCursor, PlainImage, SpimRecord};
use crate::rng::{self, streams};
use crate::KEY_FORMAT_VERSION;

const SPKY_MAGIC: &[u8; 4] = b"SPKY";

/// Seeded complex transmission matrix standing in for the scattering medium.
///
/// `matrix` is row-major with `n_out` rows (detector pixels) and `n_in`
/// columns (modulator pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalKey {
    n_in: usize,
    n_out: usize,
    seed: u64,
    matrix: Vec<Complex64>,
    fingerprint: u64,
}

/// Draws a key with i.i.d. circular complex Gaussian entries of variance
/// `1/n_in` (real and imaginary parts each `N(0, 1/(2·n_in))`), real part
/// first, row-major, from the `KEY` stream of `seed`.
pub fn generate_key(seed: u64, n_in: usize, n_out: usize) -> Result<PhysicalKey> {
    if n_in == 0 || n_out == 0 {
        return Err(Error::invalid(format!(
            "key dimensions must be positive, got n_in={n_in}, n_out={n_out}"
        )));
    }
    let len = n_in
        .checked_mul(n_out)
        .ok_or_else(|| Error::invalid("key dimensions overflow"))?;
    let sd = (0.5 / n_in as f64).sqrt();
    let mut rng = rng::stream(seed, streams::KEY);
    let mut matrix = Vec::with_capacity(len);
    for _ in 0..len {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        matrix.push(Complex64::new(sd * re, sd * im));
    }
    let fingerprint = matrix_fingerprint(&matrix);
    Ok(PhysicalKey {
        n_in,
        n_out,
        seed,
        matrix,
        fingerprint,
    })
}

/// First 8 bytes (little-endian u64) of SHA-256 over the matrix entries
/// serialized as consecutive `(re, im)` f64 LE pairs.
pub fn matrix_fingerprint(matrix: &[Complex64]) -> u64 {
    let mut h = Sha256::new();
    for z in matrix {
        h.update(z.re.to_le_bytes());
        h.update(z.im.to_le_bytes());
    }
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

impl PhysicalKey {
    /// Wraps an explicit row-major `n_out × n_in` matrix, e.g. a measured
    /// transmission matrix.
    pub fn from_matrix(
        seed: u64,
        n_in: usize,
        n_out: usize,
        matrix: Vec<Complex64>,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 || n_in.checked_mul(n_out) != Some(matrix.len()) {
            return Err(Error::invalid(format!(
                "matrix has {} entries, expected n_out x n_in = {n_out} x {n_in}",
                matrix.len()
            )));
        }
        if matrix
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        let fingerprint = matrix_fingerprint(&matrix);
        Ok(Self {
            n_in,
            n_out,
            seed,
            matrix,
            fingerprint,
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn matrix(&self) -> &[Complex64] {
        &self.matrix
    }

    pub fn row(&self, j: usize) -> &[Complex64] {
        &self.matrix[j * self.n_in..(j + 1) * self.n_in]
    }

    pub fn key_length_bits(&self) -> u128 {
        key_length_bits(self.n_in, self.n_out)
    }

    /// Serializes to the `SPKY` layout:
    /// magic, version u16, seed u64, n_in u32, n_out u32,
    /// `n_out·n_in` entries as `(f64 re, f64 im)`, fingerprint u64.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(30 + 16 * self.matrix.len());
        buf.extend_from_slice(SPKY_MAGIC);
        buf.extend_from_slice(&KEY_FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&dim_u32(self.n_in)?.to_le_bytes());
        buf.extend_from_slice(&dim_u32(self.n_out)?.to_le_bytes());
        for z in &self.matrix {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        buf.extend_from_slice(&self.fingerprint.to_le_bytes());
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor::new(&bytes, "SPKY");
        if cur.take(4)? != SPKY_MAGIC {
            return Err(Error::format("bad SPKY magic"));
        }
        let version = cur.u16()?;
        if version != KEY_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                kind: "SPKY",
                found: version,
                expected: KEY_FORMAT_VERSION,
            });
        }
        let seed = cur.u64()?;
        let n_in = cur.u32()? as usize;
        let n_out = cur.u32()? as usize;
        if n_in == 0 || n_out == 0 {
            return Err(Error::format("SPKY key has a zero dimension"));
        }
        let len = n_in * n_out;
        if bytes.len() != 4 + 2 + 8 + 4 + 4 + 16 * len + 8 {
            return Err(Error::format(format!(
                "SPKY file size {} does not match a {n_out}x{n_in} key",
                bytes.len()
            )));
        }
        let mut matrix = Vec::with_capacity(len);
        for _ in 0..len {
            let re = cur.f64()?;
            let im = cur.f64()?;
            if !re.is_finite() || !im.is_finite() {
                return Err(Error::format("SPKY key contains non-finite entries"));
            }
            matrix.push(Complex64::new(re, im));
        }
        let fingerprint = cur.u64()?;
        cur.finish()?;
        if matrix_fingerprint(&matrix) != fingerprint {
            return Err(Error::format(
                "SPKY fingerprint does not match matrix contents",
            ));
        }
        Ok(Self {
            n_in,
            n_out,
            seed,
            matrix,
            fingerprint,
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

/// Key length in bits: 64 bits per complex entry times the matrix size.
pub fn key_length_bits(n_in: usize, n_out: usize) -> u128 {
    64 * n_out as u128 * n_in as u128
}

/// Detector geometry. `height·width` must equal the key's `n_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeckleShape {
    pub height: usize,
    pub width: usize,
}

impl SpeckleShape {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    /// Square detector for `n_out` pixels.
    pub fn square_for(n_out: usize) -> Result<Self> {
        let side = (n_out as f64).sqrt().round() as usize;
        if side * side != n_out {
            return Err(Error::invalid(format!(
                "n_out = {n_out} is not a perfect square; configure the speckle height and width"
            )));
        }
        Ok(Self::new(side, side))
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalized speckle intensity ciphertext.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecklePattern {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    /// Maximum raw intensity before normalization.
    pub raw_scale: f64,
    pub key_fingerprint: u64,
}

impl SpecklePattern {
    pub fn shape(&self) -> SpeckleShape {
        SpeckleShape::new(self.height, self.width)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn to_record(&self) -> SpimRecord {
        SpimRecord {
            height: self.height,
            width: self.width,
            raw_scale: self.raw_scale,
            key_fingerprint: self.key_fingerprint,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_record(rec: SpimRecord) -> Result<Self> {
        if rec.height == 0 || rec.width == 0 {
            return Err(Error::format("speckle with zero dimension"));
        }
        if rec.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format("speckle values outside [0, 1]"));
        }
        Ok(Self {
            height: rec.height,
            width: rec.width,
            data: rec.data.into_iter().map(f64::from).collect(),
            raw_scale: rec.raw_scale,
            key_fingerprint: rec.key_fingerprint,
        })
    }
}

fn check_image_dims(key: &PhysicalKey, image: &PlainImage) -> Result<()> {
    if image.len() != key.n_in {
        return Err(Error::invalid(format!(
            "image is {}x{} ({} pixels) but the key expects n_in = {} input pixels (key is {}x{})",
            image.height(),
            image.width(),
            image.len(),
            key.n_in,
            key.n_out,
            key.n_in
        )));
    }
    Ok(())
}

/// Phase-encodes pixel values as unit phasors `exp(i·2π·p)`.
pub fn phase_encode(values: &[f64]) -> Vec<Complex64> {
    values
        .iter()
        .map(|&p| Complex64::from_polar(1.0, 2.0 * PI * p))
        .collect()
}

/// `T·x` for an arbitrary input field `x` of length `n_in`.
pub fn propagate(key: &PhysicalKey, field: &[Complex64]) -> Result<Vec<Complex64>> {
    if field.len() != key.n_in {
        return Err(Error::invalid(format!(
            "input field has {} modes, key expects {}",
            field.len(),
            key.n_in
        )));
    }
    Ok((0..key.n_out)
        .map(|j| {
            key.row(j)
                .iter()
                .zip(field)
                .fold(Complex64::new(0.0, 0.0), |acc, (t, x)| acc + t * x)
        })
        .collect())
}

/// Complex output field before intensity detection (holographic detection).
pub fn detect_field(key: &PhysicalKey, image: &PlainImage) -> Result<Vec<Complex64>> {
    check_image_dims(key, image)?;
    propagate(key, &phase_encode(image.data()))
}

/// Encrypts one plaintext into a max-normalized speckle intensity pattern.
pub fn encrypt(
    key: &PhysicalKey,
    image: &PlainImage,
    shape: SpeckleShape,
) -> Result<SpecklePattern> {
    if shape.len() != key.n_out {
        return Err(Error::invalid(format!(
            "speckle shape {}x{} has {} pixels but the key has n_out = {}",
            shape.height,
            shape.width,
            shape.len(),
            key.n_out
        )));
    }
    let field = detect_field(key, image)?;
    let intensity: Vec<f64> = field.iter().map(|y| y.norm_sqr()).collect();
    let raw_scale = intensity.iter().copied().fold(0.0, f64::max);
    if !(raw_scale > 0.0) || !raw_scale.is_finite() {
        return Err(Error::Internal(format!(
            "speckle intensity has non-positive or non-finite maximum {raw_scale}"
        )));
    }
    Ok(SpecklePattern {
        height: shape.height,
        width: shape.width,
        data: intensity.into_iter().map(|v| v / raw_scale).collect(),
        raw_scale,
        key_fingerprint: key.fingerprint,
    })
}

/// Encrypts a batch; output order matches input order.
pub fn encrypt_batch(
    key: &PhysicalKey,
    images: &[PlainImage],
    shape: SpeckleShape,
    exec: Exec,
) -> Result<Vec<SpecklePattern>> {
    exec.try_map(images.len(), |i| encrypt(key, &images[i], shape))
}

/// PCC between a plaintext and its ciphertext, with the speckle
/// area-resampled onto the plaintext grid.
pub fn ciphertext_correlation(plain: &PlainImage, speckle: &SpecklePattern) -> Result<f64> {
    let resampled = area_resample(
        &speckle.data,
        speckle.height,
        speckle.width,
        plain.height(),
        plain.width(),
    );
    crate::metrics::pcc(plain.data(), &resampled)
}

/// Additive Gaussian detector noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Noise standard deviation as a fraction of the pattern's mean value.
    pub sd_fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sd_fraction: f64, seed: u64) -> Result<Self> {
        if !(sd_fraction >= 0.0) || !sd_fraction.is_finite() {
            return Err(Error::invalid(format!(
                "noise sd_fraction must be finite and >= 0, got {sd_fraction}"
            )));
        }
        Ok(Self { sd_fraction, seed })
    }
}

/// Adds `N(0, σ²)` noise with `σ = sd_fraction · mean(speckle)` and clamps to
/// `[0, 1]`. Zero noise returns the input unchanged.
pub fn add_noise(speckle: &SpecklePattern, spec: NoiseSpec) -> Result<SpecklePattern> {
    if spec.sd_fraction == 0.0 {
        return Ok(speckle.clone());
    }
    let sigma = spec.sd_fraction * speckle.mean();
    let normal =
        Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let mut rng = rng::stream(spec.seed, streams::NOISE);
    let data = speckle
        .data
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Ok(SpecklePattern {
        data,
        ..speckle.clone()
    })
}

/// Rectangular detector sub-window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FovSpec {
    pub origin_row: usize,
    pub origin_col: usize,
    pub crop_height: usize,
    pub crop_width: usize,
}

impl FovSpec {
    /// Top-left quadrant of a `height × width` pattern.
    pub fn top_left_quarter(shape: SpeckleShape) -> Self {
        Self {
            origin_row: 0,
            origin_col: 0,
            crop_height: shape.height / 2,
            crop_width: shape.width / 2,
        }
    }

    pub fn full(shape: SpeckleShape) -> Self {
        Self {
            origin_row: 0,
            origin_col: 0,
            crop_height: shape.height,
            crop_width: shape.width,
        }
    }

    pub fn output_shape(&self) -> SpeckleShape {
        SpeckleShape::new(self.crop_height, self.crop_width)
    }
}

/// Extracts a sub-window without renormalizing the surviving pixels.
pub fn crop_fov(speckle: &SpecklePattern, spec: FovSpec) -> Result<SpecklePattern> {
    let fits = spec.crop_height > 0
        && spec.crop_width > 0
        && spec
            .origin_row
            .checked_add(spec.crop_height)
            .is_some_and(|e| e <= speckle.height)
        && spec
            .origin_col
            .checked_add(spec.crop_width)
            .is_some_and(|e| e <= speckle.width);
    if !fits {
        return Err(Error::invalid(format!(
            "crop window {}x{} at ({}, {}) does not fit inside the {}x{} speckle",
            spec.crop_height,
            spec.crop_width,
            spec.origin_row,
            spec.origin_col,
            speckle.height,
            speckle.width
        )));
    }
    let mut data = Vec::with_capacity(spec.crop_height * spec.crop_width);
    for r in spec.origin_row..spec.origin_row + spec.crop_height {
        let start = r * speckle.width + spec.origin_col;
        data.extend_from_slice(&speckle.data[start..start + spec.crop_width]);
    }
    Ok(SpecklePattern {
        height: spec.crop_height,
        width: spec.crop_width,
        data,
        raw_scale: speckle.raw_scale,
        key_fingerprint: speckle.key_fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> PlainImage {
        let mut r = rng::stream(seed, 99);
        PlainImage::from_fn(h, w, |_, _| r.random::<f64>()).unwrap()
    }

    #[test]
    fn key_generation_is_deterministic() {
        let a = generate_key(7, 256, 1024).unwrap();
        let b = generate_key(7, 256, 1024).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = generate_key(8, 256, 1024).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert!(a
            .matrix()
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn key_rejects_zero_dimensions() {
        assert!(matches!(
            generate_key(1, 0, 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            generate_key(1, 4, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn key_entry_statistics() {
        let key = generate_key(3, 64, 4096).unwrap();
        let n = key.matrix().len() as f64;
        let var_re = key.matrix().iter().map(|z| z.re * z.re).sum::<f64>() / n;
        let var_im = key.matrix().iter().map(|z| z.im * z.im).sum::<f64>() / n;
        let expected = 1.0 / (2.0 * 64.0);
        assert!((var_re / expected - 1.0).abs() < 0.03, "{var_re}");
        assert!((var_im / expected - 1.0).abs() < 0.03, "{var_im}");
    }

    #[test]
    fn key_length_values() {
        assert_eq!(key_length_bits(4096, 65536), 17_179_869_184);
        assert_eq!(key_length_bits(1, 1), 64);
        assert_eq!(key_length_bits(256, 1024), 16_777_216);
        assert_eq!(
            generate_key(0, 256, 1024).unwrap().key_length_bits(),
            16_777_216
        );
    }

    #[test]
    fn zero_image_gives_row_sum_speckle() {
        let key = generate_key(11, 16, 64).unwrap();
        let img = PlainImage::filled(4, 4, 0.0).unwrap();
        let field = detect_field(&key, &img).unwrap();
        for j in 0..64 {
            let sum: Complex64 = key.row(j).iter().sum();
            assert!((field[j] - sum).norm() < 1e-12);
        }
        let sp = encrypt(&key, &img, SpeckleShape::new(8, 8)).unwrap();
        let raw: Vec<f64> = field.iter().map(|z| z.norm_sqr()).collect();
        let max = raw.iter().copied().fold(0.0, f64::max);
        for (a, b) in sp.data.iter().zip(&raw) {
            assert!((a - b / max).abs() < 1e-12);
        }
        assert_eq!(sp.raw_scale, max);
        assert_eq!(sp.data.iter().copied().fold(0.0, f64::max), 1.0);
        assert_eq!(sp.key_fingerprint, key.fingerprint());

        let half = PlainImage::filled(4, 4, 0.5).unwrap();
        let sp_half = encrypt(&key, &half, SpeckleShape::new(8, 8)).unwrap();
        for (a, b) in sp.data.iter().zip(&sp_half.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn field_matches_naive_matrix_product() {
        let key = generate_key(5, 36, 100).unwrap();
        let img = random_image(1, 6, 6);
        let field = detect_field(&key, &img).unwrap();
        // naive oracle with explicit cos/sin phasors
        for j in 0..100 {
            let (mut re, mut im) = (0.0, 0.0);
            for k in 0..36 {
                let t = key.matrix()[j * 36 + k];
                let ph = 2.0 * PI * img.data()[k];
                re += t.re * ph.cos() - t.im * ph.sin();
                im += t.re * ph.sin() + t.im * ph.cos();
            }
            assert!((field[j].re - re).abs() < 1e-12);
            assert!((field[j].im - im).abs() < 1e-12);
        }
        let sp = encrypt(&key, &img, SpeckleShape::new(10, 10)).unwrap();
        let max = field.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        for (a, z) in sp.data.iter().zip(&field) {
            assert!((a - z.norm_sqr() / max).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_names_both_sides() {
        let key = generate_key(5, 36, 100).unwrap();
        let img = random_image(1, 4, 4);
        let err = encrypt(&key, &img, SpeckleShape::new(10, 10)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("16") && msg.contains("36"), "{msg}");
        let img = random_image(1, 6, 6);
        assert!(encrypt(&key, &img, SpeckleShape::new(10, 9)).is_err());
    }

    #[test]
    fn plaintext_and_ciphertext_are_decorrelated() {
        let key = generate_key(21, 256, 1024).unwrap();
        let mut total = 0.0;
        for i in 0..100 {
            let img = random_image(100 + i, 16, 16);
            let sp = encrypt(&key, &img, SpeckleShape::new(32, 32)).unwrap();
            total += ciphertext_correlation(&img, &sp).unwrap().abs();
        }
        assert!(total / 100.0 < 0.1, "{}", total / 100.0);
    }

    #[test]
    fn output_energy_matches_n_out() {
        let n_in = 64;
        let n_out = 256;
        let img = random_image(4, 8, 8);
        let mut mean = 0.0;
        for s in 0..100 {
            let key = generate_key(1000 + s, n_in, n_out).unwrap();
            let field = detect_field(&key, &img).unwrap();
            mean += field.iter().map(|z| z.norm_sqr()).sum::<f64>() / 100.0;
        }
        assert!((mean / n_out as f64 - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn noise_zero_is_identity_and_statistics_match() {
        let key = generate_key(2, 16, 64).unwrap();
        let sp = encrypt(&key, &random_image(3, 4, 4), SpeckleShape::new(8, 8)).unwrap();
        assert_eq!(add_noise(&sp, NoiseSpec::new(0.0, 9).unwrap()).unwrap(), sp);
        assert!(NoiseSpec::new(-0.1, 0).is_err());

        let flat = SpecklePattern {
            height: 1000,
            width: 1000,
            data: vec![0.5; 1_000_000],
            raw_scale: 1.0,
            key_fingerprint: 0,
        };
        let noisy = add_noise(&flat, NoiseSpec::new(0.1, 77).unwrap()).unwrap();
        let diffs: Vec<f64> = noisy.data.iter().map(|v| v - 0.5).collect();
        let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((sd / 0.05 - 1.0).abs() < 0.01, "{sd}");

        let again = add_noise(&flat, NoiseSpec::new(0.1, 77).unwrap()).unwrap();
        assert_eq!(noisy, again);
        let noisy_sp = add_noise(&sp, NoiseSpec::new(1.0, 1).unwrap()).unwrap();
        assert!(noisy_sp.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn crop_quarter_and_errors() {
        let data: Vec<f64> = (0..1024).map(|i| i as f64 / 1023.0).collect();
        let sp = SpecklePattern {
            height: 32,
            width: 32,
            data,
            raw_scale: 3.5,
            key_fingerprint: 42,
        };
        assert_eq!(crop_fov(&sp, FovSpec::full(sp.shape())).unwrap(), sp);
        let q = FovSpec::top_left_quarter(sp.shape());
        assert_eq!(
            (q.crop_height, q.crop_width, q.origin_row, q.origin_col),
            (16, 16, 0, 0)
        );
        let c = crop_fov(&sp, q).unwrap();
        for r in 0..16 {
            for col in 0..16 {
                assert_eq!(c.data[r * 16 + col], sp.data[r * 32 + col]);
            }
        }
        assert_eq!(c.raw_scale, 3.5);
        assert_eq!(c.key_fingerprint, 42);
        let bad = FovSpec {
            origin_row: 20,
            origin_col: 0,
            crop_height: 16,
            crop_width: 16,
        };
        assert!(matches!(crop_fov(&sp, bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn key_file_roundtrip_and_corruption() {
        let key = generate_key(9, 6, 10).unwrap();
        let mut buf = Vec::new();
        key.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 22 + 16 * 60 + 8);
        assert_eq!(PhysicalKey::read_from(&buf[..]).unwrap(), key);
        let mut flipped = buf.clone();
        flipped[30] ^= 1;
        assert!(matches!(
            PhysicalKey::read_from(&flipped[..]),
            Err(Error::Format(_))
        ));
        assert!(PhysicalKey::read_from(&buf[..100]).is_err());
        let mut v2 = buf;
        v2[4] = 9;
        assert!(matches!(
            PhysicalKey::read_from(&v2[..]),
            Err(Error::UnsupportedVersion { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn global_phase_shift_leaves_speckle_unchanged(seed in 0u64..1000, shift in 0.0f64..1.0) {
            let key = generate_key(seed, 16, 64).unwrap();
            let img = random_image(seed + 1, 4, 4);
            let shifted = PlainImage::new(4, 4, img.data().iter().map(|v| (v + shift) % 1.0).collect()).unwrap();
            let a = encrypt(&key, &img, SpeckleShape::new(8, 8)).unwrap();
            let b = encrypt(&key, &shifted, SpeckleShape::new(8, 8)).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn nested_crops_compose(r0 in 0usize..4, c0 in 0usize..4, h0 in 4usize..8, w0 in 4usize..8,
                                r1 in 0usize..3, c1 in 0usize..3, h1 in 1usize..2, w1 in 1usize..2) {
            let sp = SpecklePattern {
                height: 12, width: 12,
                data: (0..144).map(|i| i as f64 / 143.0).collect(),
                raw_scale: 1.0, key_fingerprint: 0,
            };
            let outer = FovSpec { origin_row: r0, origin_col: c0, crop_height: h0, crop_width: w0 };
            let inner = FovSpec { origin_row: r1, origin_col: c1, crop_height: h1, crop_width: w1 };
            let composed = FovSpec { origin_row: r0 + r1, origin_col: c0 + c1, crop_height: h1, crop_width: w1 };
            let twice = crop_fov(&crop_fov(&sp, outer).unwrap(), inner).unwrap();
            prop_assert_eq!(twice, crop_fov(&sp, composed).unwrap());
        }

        #[test]
        fn speckle_record_roundtrip(seed in 0u64..100) {
            let key = generate_key(seed, 4, 16).unwrap();
            let sp = encrypt(&key, &random_image(seed, 2, 2), SpeckleShape::new(4, 4)).unwrap();
            let back = SpecklePattern::from_record(sp.to_record()).unwrap();
            prop_assert_eq!(back.key_fingerprint, sp.key_fingerprint);
            for (a, b) in back.data.iter().zip(&sp.data) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }
}
