//! Learned decryptor.
//!
//! A [`DecoderModel`] is an ordered list of [`Layer`]s mapping one speckle
//! pattern to a plaintext estimate. The default desk-scale model is
//! `ComplexDense → Modulus → OutputSquash`; optional convolutional refinement
//! (a single block or a small U-shaped encoder/decoder with skip connections)
//! runs before the dense layer.

mod gradcheck;
pub mod layers;
mod loss;
mod model_io;
mod pinv;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::PlainImage;
use crate::optics::{SpecklePattern, SpeckleShape};
use crate::rng::{self, streams};

pub use gradcheck::{grad_check, GradCheckReport, LayerGradCheck};
pub use layers::{ComplexDense, ConvBlock, Layer, Signal, SignalShape, Tensor};
pub use loss::{loss, loss_gradient, loss_value, LossValue};
pub use model_io::{load_model, read_model, save_model, write_model};
pub use pinv::{anchor_global_phase, pinv_decode, PinvSolver, PINV_RIDGE};
pub use train::{
    cosine_lr, evaluate_set, train, EpochRecord, TrainConfig, TrainHistory, TrainingSet,
};

use layers::Cache;

/// How speckle intensities are presented to the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Intensity,
    /// `sqrt(intensity)`, the field magnitude.
    #[default]
    Amplitude,
}

/// Optional convolutional stage in front of the complex dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Refinement {
    #[default]
    None,
    Conv {
        channels: usize,
    },
    UNet {
        levels: usize,
        base_channels: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderSpec {
    pub input_mode: InputMode,
    pub refinement: Refinement,
    pub init_seed: u64,
}

impl Default for DecoderSpec {
    fn default() -> Self {
        Self {
            input_mode: InputMode::Amplitude,
            refinement: Refinement::None,
            init_seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    input_mode: InputMode,
    input_shape: SpeckleShape,
    output_height: usize,
    output_width: usize,
    layers: Vec<Layer>,
}

pub(crate) struct Tape {
    caches: Vec<Cache>,
}

impl DecoderModel {
    /// Assembles a model from explicit layers and validates the shape chain.
    pub fn from_layers(
        input_mode: InputMode,
        input_shape: SpeckleShape,
        output_height: usize,
        output_width: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let model = Self {
            input_mode,
            input_shape,
            output_height,
            output_width,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    /// Builds and initializes a model from `spec`, seeded by `spec.init_seed`.
    pub fn build(
        spec: &DecoderSpec,
        input_shape: SpeckleShape,
        output_height: usize,
        output_width: usize,
    ) -> Result<Self> {
        if input_shape.is_empty() || output_height * output_width == 0 {
            return Err(Error::invalid("decoder shapes must be non-empty"));
        }
        let mut rng = rng::stream(spec.init_seed, streams::INIT);
        let (h, w) = (input_shape.height, input_shape.width);
        let mut layers = Vec::new();
        let dense_in = match spec.refinement {
            Refinement::None => h * w,
            Refinement::Conv { channels } => {
                if channels == 0 {
                    return Err(Error::invalid("conv refinement needs at least one channel"));
                }
                layers.push(Layer::ConvBlock(ConvBlock::init(1, channels, &mut rng)));
                channels * h * w
            }
            Refinement::UNet {
                levels,
                base_channels,
            } => {
                if levels == 0 || base_channels == 0 {
                    return Err(Error::invalid("U-Net refinement needs levels and channels"));
                }
                let div = 1usize << levels;
                if h % div != 0 || w % div != 0 {
                    return Err(Error::invalid(format!(
                        "speckle {h}x{w} is not divisible by 2^{levels} for a {levels}-level U-Net"
                    )));
                }
                let ch = |l: usize| base_channels << l;
                layers.push(Layer::ConvBlock(ConvBlock::init(1, ch(0), &mut rng)));
                for l in 0..levels {
                    layers.push(Layer::Downsample);
                    layers.push(Layer::ConvBlock(ConvBlock::init(
                        ch(l),
                        ch(l + 1),
                        &mut rng,
                    )));
                }
                for l in (0..levels).rev() {
                    layers.push(Layer::Upsample);
                    layers.push(Layer::ConvBlock(ConvBlock::init(
                        ch(l + 1) + ch(l),
                        ch(l),
                        &mut rng,
                    )));
                }
                base_channels * h * w
            }
        };
        layers.push(Layer::ComplexDense(ComplexDense::init(
            dense_in,
            output_height,
            output_width,
            &mut rng,
        )));
        layers.push(Layer::Modulus);
        layers.push(Layer::OutputSquash);
        Self::from_layers(
            spec.input_mode,
            input_shape,
            output_height,
            output_width,
            layers,
        )
    }

    fn validate(&self) -> Result<()> {
        if !matches!(self.layers.last(), Some(Layer::OutputSquash)) {
            return Err(Error::invalid(
                "decoder must end with an output squash layer",
            ));
        }
        let mut shape = SignalShape::Real {
            channels: 1,
            height: self.input_shape.height,
            width: self.input_shape.width,
        };
        let mut skips = Vec::new();
        for layer in &self.layers {
            shape = layer.output_shape(shape, &mut skips)?;
        }
        if !skips.is_empty() {
            return Err(Error::invalid("decoder has unmatched downsample layers"));
        }
        match shape {
            SignalShape::Real {
                channels,
                height,
                width,
            } if channels * height * width == self.output_height * self.output_width => Ok(()),
            other => Err(Error::invalid(format!(
                "decoder output {other:?} does not match plaintext {}x{}",
                self.output_height, self.output_width
            ))),
        }
    }

    pub fn input_mode(&self) -> InputMode {
        self.input_mode
    }

    pub fn input_shape(&self) -> SpeckleShape {
        self.input_shape
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.output_height, self.output_width)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.params().len()).sum()
    }

    fn prepare_input(&self, speckle: &SpecklePattern) -> Result<Tensor> {
        if speckle.height != self.input_shape.height || speckle.width != self.input_shape.width {
            return Err(Error::invalid(format!(
                "speckle is {}x{} but the decoder expects {}x{}",
                speckle.height, speckle.width, self.input_shape.height, self.input_shape.width
            )));
        }
        let data = match self.input_mode {
            InputMode::Intensity => speckle.data.clone(),
            InputMode::Amplitude => speckle.data.iter().map(|v| v.max(0.0).sqrt()).collect(),
        };
        Ok(Tensor {
            channels: 1,
            height: speckle.height,
            width: speckle.width,
            data,
        })
    }

    /// Batch forward pass returning the raw output vectors and the tape
    /// needed for backpropagation.
    pub(crate) fn forward_batch(
        &self,
        speckles: &[&SpecklePattern],
        exec: Exec,
    ) -> Result<(Vec<Vec<f64>>, Tape)> {
        let mut signals = speckles
            .iter()
            .map(|s| self.prepare_input(s).map(Signal::Real))
            .collect::<Result<Vec<_>>>()?;
        let mut skips = Vec::new();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(signals, &mut skips, exec)?;
            signals = out;
            caches.push(cache);
        }
        let outputs = signals
            .into_iter()
            .map(|s| match s {
                Signal::Real(t) => Ok(t.data),
                Signal::Complex { .. } => Err(Error::Internal("complex decoder output".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((outputs, Tape { caches }))
    }

    /// Backpropagates output gradients; returns one gradient buffer per layer.
    pub(crate) fn backward_batch(
        &self,
        tape: Tape,
        output_grads: Vec<Vec<f64>>,
        exec: Exec,
    ) -> Result<Vec<Vec<f64>>> {
        let mut grads: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| vec![0.0; l.params().len()])
            .collect();
        let mut signal: Vec<Signal> = output_grads
            .into_iter()
            .map(|g| {
                Signal::Real(Tensor {
                    channels: 1,
                    height: self.output_height,
                    width: self.output_width,
                    data: g,
                })
            })
            .collect();
        let mut skip_grads = Vec::new();
        for (idx, (layer, cache)) in self.layers.iter().zip(tape.caches).enumerate().rev() {
            signal = layer.backward(
                cache,
                signal,
                &mut grads[idx],
                &mut skip_grads,
                idx > 0,
                exec,
            )?;
        }
        Ok(grads)
    }

    fn to_image(&self, data: Vec<f64>) -> Result<PlainImage> {
        PlainImage::new(self.output_height, self.output_width, data)
    }

    /// Decrypts one speckle pattern.
    pub fn forward(&self, speckle: &SpecklePattern) -> Result<PlainImage> {
        let (mut out, _) = self.forward_batch(&[speckle], Exec::Sequential)?;
        self.to_image(out.pop().unwrap_or_default())
    }

    /// Decrypts many speckle patterns, in order.
    pub fn predict(&self, speckles: &[SpecklePattern], exec: Exec) -> Result<Vec<PlainImage>> {
        const CHUNK: usize = 64;
        let mut images = Vec::with_capacity(speckles.len());
        for chunk in speckles.chunks(CHUNK) {
            let refs: Vec<&SpecklePattern> = chunk.iter().collect();
            let (outs, _) = self.forward_batch(&refs, exec)?;
            for o in outs {
                images.push(self.to_image(o)?);
            }
        }
        Ok(images)
    }
}

/// Free-function form of [`DecoderModel::forward`].
pub fn forward(model: &DecoderModel, speckle: &SpecklePattern) -> Result<PlainImage> {
    model.forward(speckle)
}
