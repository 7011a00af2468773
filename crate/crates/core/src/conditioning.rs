//! Steering the diffusion with past motion: raw-input concatenation, an
//! end-to-end learned embedding, or an autoencoder embedding with an
//! auxiliary reconstruction loss.

use crate::diffusion::{DisplacementMap, NoisePredictor};
use crate::error::{Error, Result};
use crate::motion_data::Skeleton;
use crate::nn::{BroadcastDecoder, Denoiser, PoolingEncoder, UNetConfig};
use crate::rng::{derive_seed, Prng};
use crate::scalar::Real;
use ndarray::{Array1, Array3, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningKind {
    /// Prepend the clean past frames to the corrupted targets.
    InputConcat,
    /// Encode the past and inject it into every layer; the encoder learns
    /// from the displacement loss alone.
    E2eEmbedding,
    /// Like E2E plus a decoder reconstructing the past under an auxiliary
    /// loss.
    #[default]
    AeEmbedding,
}

impl ConditioningKind {
    pub fn uses_encoder(self) -> bool {
        !matches!(self, ConditioningKind::InputConcat)
    }

    pub fn uses_decoder(self) -> bool {
        matches!(self, ConditioningKind::AeEmbedding)
    }

    /// Temporal extent the denoiser processes for a window of n frames
    /// with k conditioning frames.
    pub fn denoiser_frames(self, n: usize, k: usize) -> usize {
        match self {
            ConditioningKind::InputConcat => n,
            _ => n - k,
        }
    }
}

/// Weights of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_smooth: f64,
    pub lambda_rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_smooth: 1.0,
            lambda_rec: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_rec", self.lambda_rec),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Everything trainable: the denoiser plus the optional conditioning
/// encoder/decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Model<T: Real> {
    pub strategy: ConditioningKind,
    pub denoiser: Denoiser<T>,
    pub encoder: Option<PoolingEncoder<T>>,
    pub decoder: Option<BroadcastDecoder<T>>,
}

impl<T: Real> Model<T> {
    /// Deterministic initialization. `past_frames` is the conditioning
    /// extent k; `encoder_hidden` the widths between the coordinate
    /// channels and the conditioning width.
    pub fn init(
        unet: &UNetConfig,
        strategy: ConditioningKind,
        encoder_hidden: &[usize],
        skeleton: &Skeleton,
        past_frames: usize,
        seed: u64,
    ) -> Result<Model<T>> {
        let denoiser = Denoiser::init(unet, skeleton, derive_seed(seed, 1))?;
        let coords = unet.channel_ladder[0];
        let mut enc_widths = vec![coords];
        enc_widths.extend_from_slice(encoder_hidden);
        enc_widths.push(unet.cond_width);
        let dec_widths: Vec<usize> = enc_widths.iter().rev().copied().collect();

        let encoder = strategy.uses_encoder().then(|| {
            let mut rng = Prng::new(derive_seed(seed, 2));
            PoolingEncoder::init(past_frames, skeleton, &enc_widths, unet.activation, &mut rng)
        });
        let decoder = strategy.uses_decoder().then(|| {
            let mut rng = Prng::new(derive_seed(seed, 3));
            BroadcastDecoder::init(past_frames, skeleton, &dec_widths, unet.activation, &mut rng)
        });
        Ok(Model {
            strategy,
            denoiser,
            encoder,
            decoder,
        })
    }

    pub fn layout(&self) -> Vec<(String, usize)> {
        let mut out = self.denoiser.layout();
        if let Some(e) = &self.encoder {
            out.extend(e.layout("encoder"));
        }
        if let Some(d) = &self.decoder {
            out.extend(d.layout("decoder"));
        }
        out
    }

    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.denoiser.write_flat(&mut out);
        if let Some(e) = &self.encoder {
            e.write_flat(&mut out);
        }
        if let Some(d) = &self.decoder {
            d.write_flat(&mut out);
        }
        out
    }

    pub fn set_flat(&mut self, data: &[T]) {
        let mut pos = 0;
        self.denoiser.read_flat(data, &mut pos);
        if let Some(e) = &mut self.encoder {
            e.read_flat(data, &mut pos);
        }
        if let Some(d) = &mut self.decoder {
            d.read_flat(data, &mut pos);
        }
        debug_assert_eq!(pos, data.len());
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, l)| l).sum()
    }
}

/// The conditioning signal handed to the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition<T: Real> {
    /// The raw clean past frames, prepended to the corrupted targets.
    RawPast(Array3<T>),
    /// The encoded past, injected into every layer.
    Embedding(Array1<T>),
}

/// Build the conditioning signal from the clean past frames.
pub fn make_condition<T: Real>(
    strategy: ConditioningKind,
    past: &Array3<T>,
    encoder: Option<&PoolingEncoder<T>>,
) -> Result<Condition<T>> {
    match strategy {
        ConditioningKind::InputConcat => Ok(Condition::RawPast(past.clone())),
        ConditioningKind::E2eEmbedding | ConditioningKind::AeEmbedding => {
            let encoder = encoder.ok_or_else(|| {
                Error::config("embedding conditioning requires encoder parameters")
            })?;
            let (h, _) = encoder.forward(past)?;
            Ok(Condition::Embedding(h))
        }
    }
}

/// Assemble the denoiser input for a conditioning signal; returns the
/// tensor and the row offset where the target frames start.
pub fn assemble_denoiser_input<T: Real>(
    cond: &Condition<T>,
    x_t_target: &Array3<T>,
) -> Result<(Array3<T>, usize)> {
    match cond {
        Condition::RawPast(past) => {
            if past.dim().1 != x_t_target.dim().1 || past.dim().2 != x_t_target.dim().2 {
                return Err(Error::shape(format!(
                    "past {:?} and targets {:?} disagree",
                    past.dim(),
                    x_t_target.dim()
                )));
            }
            let input = ndarray::concatenate(Axis(0), &[past.view(), x_t_target.view()])
                .map_err(|e| Error::shape(e.to_string()))?;
            Ok((input, past.dim().0))
        }
        Condition::Embedding(_) => Ok((x_t_target.clone(), 0)),
    }
}

/// Predict the displacement map for corrupted target frames.
pub fn denoise_forward<T: Real>(
    model: &Model<T>,
    x_t_target: &Array3<T>,
    t: usize,
    cond: &Condition<T>,
) -> Result<Array3<T>> {
    match (model.strategy, cond) {
        (ConditioningKind::InputConcat, Condition::RawPast(_)) => {}
        (ConditioningKind::E2eEmbedding | ConditioningKind::AeEmbedding, Condition::Embedding(_)) => {}
        _ => {
            return Err(Error::config(
                "conditioning signal does not match the model strategy",
            ))
        }
    }
    let (input, offset) = assemble_denoiser_input(cond, x_t_target)?;
    let h = match cond {
        Condition::Embedding(h) => Some(h),
        Condition::RawPast(_) => None,
    };
    let out = model.denoiser.forward(&input, t, h)?;
    if offset == 0 {
        Ok(out)
    } else {
        // Discard the prediction at the past positions.
        Ok(out.slice(ndarray::s![offset.., .., ..]).to_owned())
    }
}

/// A model plus a fixed conditioning signal, usable by the reverse
/// sampler. The signal is computed once per window and reused across all
/// reverse steps.
pub struct ConditionedDenoiser<'a, T: Real> {
    pub model: &'a Model<T>,
    pub condition: &'a Condition<T>,
}

impl<T: Real> NoisePredictor<T> for ConditionedDenoiser<'_, T> {
    fn predict(&self, x_t: &DisplacementMap<T>, t: usize) -> Result<DisplacementMap<T>> {
        denoise_forward(self.model, x_t, t, self.condition)
    }
}

/// Mean squared reconstruction error of the decoded past.
pub fn rec_loss<T: Real>(
    decoder: &BroadcastDecoder<T>,
    h: &Array1<T>,
    past: &Array3<T>,
) -> Result<T> {
    let (decoded, _) = decoder.forward(h)?;
    if decoded.dim() != past.dim() {
        return Err(Error::shape(format!(
            "decoded {:?} vs past {:?}",
            decoded.dim(),
            past.dim()
        )));
    }
    let n = T::from_usize(past.len()).unwrap();
    let sum = ndarray::Zip::from(&decoded)
        .and(past)
        .fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b));
    Ok(sum / n)
}

/// Weighted sum of the smoothed displacement loss and the optional
/// reconstruction loss.
pub fn total_loss<T: Real>(l_smooth: T, l_rec: Option<T>, w: &LossWeights) -> T {
    T::c(w.lambda_smooth) * l_smooth + T::c(w.lambda_rec) * l_rec.unwrap_or_else(T::zero)
}
