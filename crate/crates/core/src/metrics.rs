//! Image similarity criteria: PCC, MSE, PSNR and global SSIM.
//!
//! All statistics are population statistics (divide by N). SSIM is computed
//! over the whole image as a single window. Functions take flat pixel slices;
//! [`evaluate`] works on [`PlainImage`]s and also checks the 2-D shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PlainImage;

/// Stabilizing constants of the SSIM luminance, contrast and structure terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self {
            c1: 1e-5,
            c2: 1e-5,
            c3: 1e-5,
        }
    }
}

impl SsimConstants {
    pub fn new(c1: f64, c2: f64, c3: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0 && c3 > 0.0) {
            return Err(Error::invalid("SSIM constants must be positive"));
        }
        Ok(Self { c1, c2, c3 })
    }
}

/// All four criteria for one reference/estimate pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pcc: f64,
    pub mse: f64,
    /// `None` (serialized as `null`) when MSE is zero.
    pub psnr: Option<f64>,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Moments {
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub cov: f64,
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "images differ in size ({} vs {} pixels)",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    Ok(())
}

pub(crate) fn moments(a: &[f64], b: &[f64]) -> Moments {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    Moments {
        mean_a,
        mean_b,
        var_a: var_a / n,
        var_b: var_b / n,
        cov: cov / n,
    }
}

/// True when the variance is indistinguishable from rounding noise in the
/// mean, i.e. the image is constant.
pub(crate) fn is_flat(a: &[f64], var: f64) -> bool {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    var <= (16.0 * f64::EPSILON * scale).powi(2)
}

/// Pearson correlation coefficient. Errors when either image is constant.
pub fn pcc(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len(y, yhat)?;
    let m = moments(y, yhat);
    let denom = (m.var_a * m.var_b).sqrt();
    if !(denom > 0.0) || is_flat(y, m.var_a) || is_flat(yhat, m.var_b) {
        return Err(Error::UndefinedMetric(
            "PCC of a constant image (zero standard deviation)".into(),
        ));
    }
    Ok((m.cov / denom).clamp(-1.0, 1.0))
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len(y, yhat)?;
    Ok(y.iter()
        .zip(yhat)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        / y.len() as f64)
}

/// Peak value used by PSNR: the largest pixel over both images.
pub fn psnr_peak(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter()
        .chain(yhat)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `20·log10(peak / sqrt(MSE))`. Errors when the images are identical.
pub fn psnr(y: &[f64], yhat: &[f64]) -> Result<f64> {
    let e = mse(y, yhat)?;
    if e == 0.0 {
        return Err(Error::UndefinedMetric(
            "PSNR of identical images (MSE = 0)".into(),
        ));
    }
    Ok(20.0 * (psnr_peak(y, yhat) / e.sqrt()).log10())
}

/// Global SSIM: product of luminance, contrast and structure similarity.
pub fn ssim(y: &[f64], yhat: &[f64], k: SsimConstants) -> Result<f64> {
    check_len(y, yhat)?;
    let m = moments(y, yhat);
    let (sd_y, sd_yhat) = (m.var_a.sqrt(), m.var_b.sqrt());
    let luminance =
        (2.0 * m.mean_a * m.mean_b + k.c1) / (m.mean_a * m.mean_a + m.mean_b * m.mean_b + k.c1);
    let contrast = (2.0 * sd_y * sd_yhat + k.c2) / (m.var_a + m.var_b + k.c2);
    let structure = (m.cov + k.c3) / (sd_y * sd_yhat + k.c3);
    Ok(luminance * contrast * structure)
}

/// Scores an estimate against its reference. PSNR is `None` for identical
/// images; a constant image on either side is an error (PCC undefined).
pub fn evaluate(reference: &PlainImage, estimate: &PlainImage) -> Result<MetricReport> {
    if !reference.same_shape(estimate) {
        return Err(Error::invalid(format!(
            "reference is {}x{}, estimate is {}x{}",
            reference.height(),
            reference.width(),
            estimate.height(),
            estimate.width()
        )));
    }
    let (y, yhat) = (reference.data(), estimate.data());
    let mse = mse(y, yhat)?;
    let psnr = match psnr(y, yhat) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        pcc: pcc(y, yhat)?,
        mse,
        psnr,
        ssim: ssim(y, yhat, SsimConstants::default())?,
    })
}
