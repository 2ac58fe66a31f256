//! Face verification on decrypted images.
//!
//! Images are mapped to 128-d embeddings by a fixed seeded projection,
//! compared by Euclidean distance, and scored with recall, precision,
//! accuracy and F1 over all unordered image pairs. The pair label comes from
//! the original images and the prediction from the decrypted ones, both at
//! the same threshold.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::{area_resample, PlainImage};
use crate::rng::{self, streams};

pub const EMBEDDING_DIM: usize = 128;

pub const DEFAULT_SWEEP: [f64; 6] = [0.50, 0.52, 0.54, 0.56, 0.58, 0.60];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FaceEmbedding(Vec<f64>);

impl FaceEmbedding {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::invalid(format!(
                "embedding has {} components, expected {EMBEDDING_DIM}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding components must be finite"));
        }
        Ok(Self(vector))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FaceEmbedding {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FaceEmbedding> for Vec<f64> {
    fn from(e: FaceEmbedding) -> Self {
        e.0
    }
}

/// Deterministic stand-in for a learned face encoder.
///
/// Features are the image area-averaged to `target_size × target_size`
/// (optionally followed by horizontal and vertical neighbour differences),
/// standardized to zero mean and unit variance. They are projected by a
/// seeded Gaussian matrix with unit-norm rows and the result is scaled to
/// unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    seed: u64,
    target_size: usize,
    gradient_features: bool,
    projection: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingRecipe {
    pub seed: u64,
    pub target_size: usize,
    pub gradient_features: bool,
}

impl Default for EmbeddingRecipe {
    fn default() -> Self {
        Self {
            seed: 41,
            target_size: 8,
            gradient_features: false,
        }
    }
}

impl EmbeddingModel {
    pub fn new(recipe: EmbeddingRecipe) -> Result<Self> {
        let t = recipe.target_size;
        if t < 2 {
            return Err(Error::invalid("embedding target size must be at least 2"));
        }
        let d = feature_len(t, recipe.gradient_features);
        let mut rng = rng::stream(recipe.seed, streams::EMBEDDING);
        let mut projection = Vec::with_capacity(EMBEDDING_DIM * d);
        for _ in 0..EMBEDDING_DIM {
            let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            projection.extend(row.iter().map(|v| v / norm));
        }
        Ok(Self {
            seed: recipe.seed,
            target_size: t,
            gradient_features: recipe.gradient_features,
            projection,
        })
    }

    pub fn recipe(&self) -> EmbeddingRecipe {
        EmbeddingRecipe {
            seed: self.seed,
            target_size: self.target_size,
            gradient_features: self.gradient_features,
        }
    }

    pub fn feature_len(&self) -> usize {
        feature_len(self.target_size, self.gradient_features)
    }

    /// Row-major `128 × feature_len` projection.
    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn features(&self, image: &PlainImage) -> Result<Vec<f64>> {
        if image.height() < 8 || image.width() < 8 {
            return Err(Error::invalid(format!(
                "image {}x{} is smaller than the 8x8 minimum for embedding",
                image.height(),
                image.width()
            )));
        }
        let t = self.target_size;
        let small = area_downsample(image, t, t);
        let mut f = small.clone();
        if self.gradient_features {
            for r in 0..t {
                for c in 0..t - 1 {
                    f.push(small[r * t + c + 1] - small[r * t + c]);
                }
            }
            for r in 0..t - 1 {
                for c in 0..t {
                    f.push(small[(r + 1) * t + c] - small[r * t + c]);
                }
            }
        }
        let n = f.len() as f64;
        let mean = f.iter().sum::<f64>() / n;
        let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        // A flat image has no structure to describe; it maps to the origin.
        let scale = if sd > 1e-12 { 1.0 / sd } else { 0.0 };
        f.iter_mut().for_each(|v| *v = (*v - mean) * scale);
        Ok(f)
    }

    pub fn embed(&self, image: &PlainImage) -> Result<FaceEmbedding> {
        let f = self.features(image)?;
        let d = f.len();
        let mut out: Vec<f64> = self
            .projection
            .chunks_exact(d)
            .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum())
            .collect();
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        FaceEmbedding::new(out)
    }

    pub fn embed_all(&self, images: &[PlainImage], exec: Exec) -> Result<Vec<FaceEmbedding>> {
        exec.try_map(images.len(), |i| self.embed(&images[i]))
    }
}

fn feature_len(t: usize, gradient_features: bool) -> usize {
    if gradient_features {
        t * t + 2 * t * (t - 1)
    } else {
        t * t
    }
}

/// Area-weighted resampling of an image onto an `oh × ow` grid.
pub fn area_downsample(image: &PlainImage, oh: usize, ow: usize) -> Vec<f64> {
    area_resample(image.data(), image.height(), image.width(), oh, ow)
}

/// Euclidean distance.
pub fn distance(a: &FaceEmbedding, b: &FaceEmbedding) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { threshold: 0.6 }
    }
}

impl MatchConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) || !threshold.is_finite() {
            return Err(Error::invalid(format!(
                "threshold must be positive and finite, got {threshold}"
            )));
        }
        Ok(Self { threshold })
    }

    /// Distances at or below the threshold are matches.
    pub fn is_match(&self, d: f64) -> bool {
        d <= self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchOutcome {
    Match,
    Mismatch,
}

pub fn match_faces(a: &FaceEmbedding, b: &FaceEmbedding, cfg: MatchConfig) -> MatchOutcome {
    if cfg.is_match(distance(a, b)) {
        MatchOutcome::Match
    } else {
        MatchOutcome::Mismatch
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn tally(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Counts from aligned per-pair distances: ground truth from the originals,
/// prediction from the decrypted images.
pub fn counts_from_distances(
    original: &[f64],
    decrypted: &[f64],
    cfg: MatchConfig,
) -> Result<ConfusionCounts> {
    if original.len() != decrypted.len() {
        return Err(Error::invalid(format!(
            "{} original pairs but {} decrypted pairs",
            original.len(),
            decrypted.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&o, &d) in original.iter().zip(decrypted) {
        c.tally(cfg.is_match(o), cfg.is_match(d));
    }
    Ok(c)
}

pub fn confusion_counts(
    original_pairs: &[(FaceEmbedding, FaceEmbedding)],
    decrypted_pairs: &[(FaceEmbedding, FaceEmbedding)],
    cfg: MatchConfig,
) -> Result<ConfusionCounts> {
    let o: Vec<f64> = original_pairs.iter().map(|(a, b)| distance(a, b)).collect();
    let d: Vec<f64> = decrypted_pairs
        .iter()
        .map(|(a, b)| distance(a, b))
        .collect();
    counts_from_distances(&o, &d, cfg)
}

/// Metrics at one threshold; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub threshold: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub counts: ConfusionCounts,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn report(counts: ConfusionCounts, threshold: f64) -> RecognitionReport {
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let accuracy = ratio(counts.tp + counts.tn, counts.total());
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    RecognitionReport {
        threshold,
        recall,
        precision,
        accuracy,
        f1,
        counts,
    }
}

/// All unordered pairs `(i, j)` with `i < j`.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

/// Pairwise distances among originals and among their decryptions, over
/// all unordered pairs of test images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistances {
    pub pairs: Vec<(usize, usize)>,
    pub original: Vec<f64>,
    pub decrypted: Vec<f64>,
}

impl PairDistances {
    pub fn all_pairs(originals: &[FaceEmbedding], decrypted: &[FaceEmbedding]) -> Result<Self> {
        if originals.len() != decrypted.len() {
            return Err(Error::invalid(format!(
                "{} originals but {} decryptions",
                originals.len(),
                decrypted.len()
            )));
        }
        let pairs = all_pairs(originals.len());
        let original = pairs
            .iter()
            .map(|&(i, j)| distance(&originals[i], &originals[j]))
            .collect();
        let decrypted = pairs
            .iter()
            .map(|&(i, j)| distance(&decrypted[i], &decrypted[j]))
            .collect();
        Ok(Self {
            pairs,
            original,
            decrypted,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn counts(&self, cfg: MatchConfig) -> Result<ConfusionCounts> {
        counts_from_distances(&self.original, &self.decrypted, cfg)
    }
}

/// Distance of each decryption to its own original.
pub fn self_distances(
    originals: &[FaceEmbedding],
    decrypted: &[FaceEmbedding],
) -> Result<Vec<f64>> {
    if originals.len() != decrypted.len() {
        return Err(Error::invalid("originals and decryptions are not aligned"));
    }
    Ok(originals
        .iter()
        .zip(decrypted)
        .map(|(a, b)| distance(a, b))
        .collect())
}

/// One report per threshold; ground truth is re-derived at every threshold.
pub fn threshold_sweep(
    pairs: &PairDistances,
    thresholds: &[f64],
) -> Result<Vec<RecognitionReport>> {
    if thresholds.is_empty() {
        return Err(Error::invalid("threshold list is empty"));
    }
    thresholds
        .iter()
        .map(|&t| {
            let cfg = MatchConfig::new(t)?;
            Ok(report(pairs.counts(cfg)?, t))
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV with columns `threshold,recall,precision,accuracy,f1`; undefined
/// values are empty fields.
pub fn write_sweep_csv(reports: &[RecognitionReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "threshold,recall,precision,accuracy,f1")?;
    for r in reports {
        writeln!(
            w,
            "{:.6},{},{},{},{}",
            r.threshold,
            fmt_opt(r.recall),
            fmt_opt(r.precision),
            fmt_opt(r.accuracy),
            fmt_opt(r.f1)
        )?;
    }
    Ok(())
}

pub fn write_sweep_json(reports: &[RecognitionReport], w: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(w, reports)?;
    Ok(())
}
