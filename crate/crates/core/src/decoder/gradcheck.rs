use serde::{Deserialize, Serialize};

use super::loss::{loss_and_gradient, loss_value};
use super::DecoderModel;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::PlainImage;
use crate::optics::SpecklePattern;
use crate::rng::{self, streams};

const STEP: f64 = 1e-5;
const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGradCheck {
    pub layer_index: usize,
    pub kind: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub per_layer: Vec<LayerGradCheck>,
    pub max_rel_err: f64,
}

/// Relative error between an analytic and a numerical derivative, falling
/// back to the absolute error when both are below `1e-8`.
pub(crate) fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < ABS_FLOOR {
        diff
    } else {
        diff / scale
    }
}

fn sample_loss(model: &DecoderModel, speckle: &SpecklePattern, target: &PlainImage) -> Result<f64> {
    let (out, _) = model.forward_batch(&[speckle], Exec::Sequential)?;
    Ok(loss_value(&out[0], target.data())?.loss)
}

/// Compares backprop parameter gradients of the single-sample loss against
/// central differences. Up to `per_layer` parameters are drawn per layer;
/// layers with fewer parameters are checked exhaustively.
pub fn grad_check(
    model: &DecoderModel,
    speckle: &SpecklePattern,
    target: &PlainImage,
    per_layer: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if per_layer == 0 {
        return Err(Error::invalid("per_layer must be at least 1"));
    }
    let (out, tape) = model.forward_batch(&[speckle], Exec::Sequential)?;
    let (_, g_out) = loss_and_gradient(&out[0], target.data())?;
    let analytic = model.backward_batch(tape, vec![g_out], Exec::Sequential)?;

    let mut rng = rng::stream(seed, streams::GRAD_CHECK);
    let mut probe = model.clone();
    let mut per = Vec::new();
    for (li, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        if n == 0 {
            continue;
        }
        let mut idx = rand::seq::index::sample(&mut rng, n, per_layer.min(n)).into_vec();
        idx.sort_unstable();
        let mut worst = 0.0f64;
        for &p in &idx {
            let orig = probe.layers()[li].params()[p];
            probe.layers_mut()[li].params_mut()[p] = orig + STEP;
            let up = sample_loss(&probe, speckle, target)?;
            probe.layers_mut()[li].params_mut()[p] = orig - STEP;
            let down = sample_loss(&probe, speckle, target)?;
            probe.layers_mut()[li].params_mut()[p] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(grads[p], numeric));
        }
        per.push(LayerGradCheck {
            layer_index: li,
            kind: model.layers()[li].kind().to_string(),
            checked: idx.len(),
            max_rel_err: worst,
        });
    }
    let max_rel_err = per.iter().map(|l| l.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_layer: per,
        max_rel_err,
    })
}
