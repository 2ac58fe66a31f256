//! Training objective `MSE(ŷ, y) − PCC(ŷ, y)` and its analytic gradient.

use crate::error::{Error, Result};
use crate::metrics::{self, moments};

/// Variance below which an image is treated as constant (PCC undefined).
const DEGENERATE_VARIANCE: f64 = 1e-24;

/// Loss value together with the PCC term when it was defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub mse: f64,
    pub pcc: Option<f64>,
}

fn check(yhat: &[f64], y: &[f64]) -> Result<()> {
    if yhat.len() != y.len() || y.is_empty() {
        return Err(Error::invalid(format!(
            "loss inputs differ in size ({} vs {})",
            yhat.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Evaluates the loss. A constant estimate or target makes PCC undefined;
/// the loss then falls back to MSE alone and a warning is logged.
pub fn loss_value(yhat: &[f64], y: &[f64]) -> Result<LossValue> {
    check(yhat, y)?;
    let mse = metrics::mse(yhat, y)?;
    let m = moments(yhat, y);
    if m.var_a < DEGENERATE_VARIANCE || m.var_b < DEGENERATE_VARIANCE {
        log::warn!("PCC undefined for a constant image; using MSE-only loss for this sample");
        return Ok(LossValue {
            loss: mse,
            mse,
            pcc: None,
        });
    }
    let pcc = m.cov / (m.var_a * m.var_b).sqrt();
    Ok(LossValue {
        loss: mse - pcc,
        mse,
        pcc: Some(pcc),
    })
}

pub fn loss(yhat: &[f64], y: &[f64]) -> Result<f64> {
    Ok(loss_value(yhat, y)?.loss)
}

/// `∂(MSE − PCC)/∂ŷ`, with population statistics:
///
/// `∂MSE/∂ŷ_k = 2(ŷ_k − y_k)/N`
///
/// `∂PCC/∂ŷ_k = [(y_k − ȳ)/(σ_ŷ σ_y) − PCC·(ŷ_k − mean(ŷ))/σ_ŷ²] / N`
pub fn loss_gradient(yhat: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(yhat, y)?.1)
}

pub(crate) fn loss_and_gradient(yhat: &[f64], y: &[f64]) -> Result<(LossValue, Vec<f64>)> {
    let value = loss_value(yhat, y)?;
    let n = y.len() as f64;
    let mut grad: Vec<f64> = yhat.iter().zip(y).map(|(p, t)| 2.0 * (p - t) / n).collect();
    if let Some(pcc) = value.pcc {
        let m = moments(yhat, y);
        let sd_hat = m.var_a.sqrt();
        let sd_y = m.var_b.sqrt();
        for (k, g) in grad.iter_mut().enumerate() {
            let d_pcc =
                ((y[k] - m.mean_b) / (sd_hat * sd_y) - pcc * (yhat[k] - m.mean_a) / m.var_a) / n;
            *g -= d_pcc;
        }
    }
    Ok((value, grad))
}
