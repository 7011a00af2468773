//! Training loop: sample a timestep and a displacement map per window,
//! corrupt the targets, predict the displacement and take one
//! adaptive-moment step on the total loss. Training data must be purely
//! normal (one-class protocol).

use crate::conditioning::{
    assemble_denoiser_input, Condition, ConditioningKind, LossWeights, Model,
};
use crate::diffusion::{
    disp_loss_with_grad, draw_displacement, forward_diffuse, DiffusionConfig, VarianceSchedule,
};
use crate::error::{Error, Result};
use crate::motion_data::{
    normalize_window, slide_windows, MotionWindow, NormalizationMode, PoseDataset, SplitStrategy,
};
use crate::nn::UNetConfig;
use crate::rng::{derive_seed, Prng};
use crate::scalar::Real;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative per-epoch decay of the learning rate.
    pub lr_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Stop when the epoch loss has not improved for this many epochs;
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
    /// Relative improvement below which an epoch does not count.
    pub early_stop_min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 36,
            batch_size: 256,
            learning_rate: 1e-4,
            lr_decay: 0.98,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_patience: 0,
            early_stop_min_delta: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if self.learning_rate <= 0.0 || self.lr_decay <= 0.0 || self.lr_decay > 1.0 {
            return Err(Error::config(
                "learning_rate must be > 0 and lr_decay in (0, 1]",
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::config("adam_eps must be positive"));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Adam<T: Real> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Real> Adam<T> {
    pub fn new(param_len: usize, cfg: &TrainConfig) -> Adam<T> {
        Adam {
            m: vec![T::zero(); param_len],
            v: vec![T::zero(); param_len],
            step: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let b1 = T::c(self.beta1);
        let b2 = T::c(self.beta2);
        let one = T::one();
        let bc1 = one - T::c(self.beta1.powi(self.step as i32));
        let bc2 = one - T::c(self.beta2.powi(self.step as i32));
        let lr = T::c(lr);
        let eps = T::c(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Per-step metrics streamed as newline-delimited records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub loss_smooth: f64,
    pub loss_rec: f64,
    pub loss_total: f64,
    pub lr: f64,
}

/// Resumable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrainState<T: Real> {
    pub model: Model<T>,
    pub opt: Adam<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub rng: Prng,
    pub loss_history: Vec<StepMetrics>,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: Model<T>, cfg: &TrainConfig, seed: u64) -> TrainState<T> {
        let n = model.flat().len();
        TrainState {
            model,
            opt: Adam::new(n, cfg),
            epoch: 0,
            step: 0,
            rng: Prng::new(derive_seed(seed, 0x7241)),
            loss_history: Vec::new(),
        }
    }
}

/// Total loss for one normalized window at a fixed timestep and noise
/// draw; forward passes only.
pub fn window_total_loss<T: Real>(
    model: &Model<T>,
    window: &MotionWindow<T>,
    sched: &VarianceSchedule<T>,
    weights: &LossWeights,
    t: usize,
    eps: &Array3<T>,
) -> Result<T> {
    let (l_smooth, l_rec, _) = window_pass(model, window, sched, weights, t, eps, false)?;
    Ok(crate::conditioning::total_loss(l_smooth, l_rec, weights))
}

/// Loss components and parameter gradients for one window.
pub fn window_loss_grads<T: Real>(
    model: &Model<T>,
    window: &MotionWindow<T>,
    sched: &VarianceSchedule<T>,
    weights: &LossWeights,
    t: usize,
    eps: &Array3<T>,
) -> Result<(T, Option<T>, Model<T>)> {
    let (l_smooth, l_rec, grads) = window_pass(model, window, sched, weights, t, eps, true)?;
    Ok((l_smooth, l_rec, grads.expect("grads requested")))
}

/// Shared forward (and optional backward) pass for one window.
#[allow(clippy::type_complexity)]
fn window_pass<T: Real>(
    model: &Model<T>,
    window: &MotionWindow<T>,
    sched: &VarianceSchedule<T>,
    weights: &LossWeights,
    t: usize,
    eps: &Array3<T>,
    want_grads: bool,
) -> Result<(T, Option<T>, Option<Model<T>>)> {
    let past = window.past();
    let x0 = window.targets();
    let x_t = forward_diffuse(&x0, t, eps, sched)?;

    // Conditioning signal, keeping the encoder cache for backward.
    let (cond, enc_cache) = match model.strategy {
        ConditioningKind::InputConcat => (Condition::RawPast(past.clone()), None),
        _ => {
            let encoder = model
                .encoder
                .as_ref()
                .ok_or_else(|| Error::config("strategy needs encoder parameters"))?;
            let (h, cache) = encoder.forward(&past)?;
            (Condition::Embedding(h), Some(cache))
        }
    };

    let (input, offset) = assemble_denoiser_input(&cond, &x_t)?;
    let h_ref = match &cond {
        Condition::Embedding(h) => Some(h),
        Condition::RawPast(_) => None,
    };
    let (full_pred, den_cache) = model.denoiser.forward_cached(&input, t, h_ref)?;
    let eps_hat = if offset == 0 {
        full_pred.clone()
    } else {
        full_pred.slice(ndarray::s![offset.., .., ..]).to_owned()
    };
    let (l_smooth, d_pred) = disp_loss_with_grad(eps, &eps_hat)?;

    // Reconstruction branch (forward only here).
    let (l_rec, dec_fwd) = match (&model.decoder, h_ref) {
        (Some(decoder), Some(h)) => {
            let (decoded, cache) = decoder.forward(h)?;
            let n = T::from_usize(past.len()).unwrap();
            let l = ndarray::Zip::from(&decoded)
                .and(&past)
                .fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b))
                / n;
            (Some(l), Some((decoded, cache)))
        }
        _ => (None, None),
    };

    if !want_grads {
        return Ok((l_smooth, l_rec, None));
    }

    // Backward: displacement branch.
    let lambda1 = T::c(weights.lambda_smooth);
    let mut d_full = Array3::zeros(full_pred.dim());
    {
        let mut target_rows = d_full.slice_mut(ndarray::s![offset.., .., ..]);
        target_rows.assign(&d_pred.mapv(|v| v * lambda1));
    }
    let (_, den_grads, d_cond) = model.denoiser.backward(&den_cache, &d_full);

    // Reconstruction branch.
    let mut d_h = match &cond {
        Condition::Embedding(_) => Some(d_cond),
        Condition::RawPast(_) => None,
    };
    let dec_grads = match (&model.decoder, &dec_fwd) {
        (Some(decoder), Some((decoded, cache))) => {
            let lambda2 = T::c(weights.lambda_rec);
            let n = T::from_usize(past.len()).unwrap();
            let scale = lambda2 * T::c(2.0) / n;
            let d_decoded = ndarray::Zip::from(decoded)
                .and(&past)
                .map_collect(|&a, &b| (a - b) * scale);
            let (grads, d_h_dec) = decoder.backward(cache, &d_decoded);
            if let Some(dh) = &mut d_h {
                *dh += &d_h_dec;
            }
            Some(grads)
        }
        _ => None,
    };
    let enc_grads = match (model.encoder.as_ref(), enc_cache, d_h) {
        (Some(encoder), Some(cache), Some(dh)) => Some(encoder.backward(&cache, &dh)),
        _ => None,
    };

    let grads = Model {
        strategy: model.strategy,
        denoiser: den_grads,
        encoder: enc_grads,
        decoder: dec_grads,
    };
    Ok((l_smooth, l_rec, Some(grads)))
}

/// One optimizer update on a batch of normalized windows.
pub fn train_step<T: Real>(
    state: &mut TrainState<T>,
    batch: &[MotionWindow<T>],
    sched: &VarianceSchedule<T>,
    weights: &LossWeights,
    lr: f64,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let steps = sched.steps();
    let mut grad_acc: Vec<T> = vec![T::zero(); state.model.flat().len()];
    let mut smooth_acc = 0.0f64;
    let mut rec_acc = 0.0f64;
    for w in batch {
        let t = 1 + state.rng.uniform_usize(steps);
        let eps = draw_displacement::<T>(w.targets().dim(), &mut state.rng);
        let (l_smooth, l_rec, grads) =
            window_loss_grads(&state.model, w, sched, weights, t, &eps).map_err(|e| {
                Error::numeric(format!(
                    "window {}/{}@{} (t = {t}): {e}",
                    w.scene_id, w.actor_id, w.frame_indices[0]
                ))
            })?;
        let l_total = crate::conditioning::total_loss(l_smooth, l_rec, weights);
        if !l_total.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss on window {}/{}@{} at t = {t}",
                w.scene_id, w.actor_id, w.frame_indices[0]
            )));
        }
        smooth_acc += l_smooth.to_f64_lossy();
        rec_acc += l_rec.map(|v| v.to_f64_lossy()).unwrap_or(0.0);
        let gflat = grads.flat();
        for (a, g) in grad_acc.iter_mut().zip(gflat) {
            *a += g;
        }
    }
    let inv = T::from_usize(batch.len()).unwrap().recip();
    for g in grad_acc.iter_mut() {
        *g *= inv;
    }
    let mut params = state.model.flat();
    state.opt.apply(&mut params, &grad_acc, lr);
    state.model.set_flat(&params);
    state.step += 1;
    let n = batch.len() as f64;
    let metrics = StepMetrics {
        step: state.step,
        epoch: state.epoch,
        loss_smooth: smooth_acc / n,
        loss_rec: rec_acc / n,
        loss_total: (smooth_acc * weights.lambda_smooth + rec_acc * weights.lambda_rec) / n,
        lr,
    };
    state.loss_history.push(metrics);
    Ok(metrics)
}

/// Everything fit needs besides the dataset.
#[derive(Debug, Clone)]
pub struct FitSpec {
    pub window_size: usize,
    pub stride: usize,
    pub condition_frames: usize,
    pub strategy: SplitStrategy,
    pub normalization: NormalizationMode,
    pub conditioning: ConditioningKind,
    pub encoder_hidden: Vec<usize>,
    pub unet: UNetConfig,
    pub diffusion: DiffusionConfig,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub seed: u64,
}

/// Extract and normalize the training windows, enforcing the one-class
/// protocol: any anomalous label in the dataset is a hard failure.
pub fn training_windows<T: Real>(
    dataset: &PoseDataset<T>,
    spec: &FitSpec,
) -> Result<Vec<MotionWindow<T>>> {
    if let Some(labels) = &dataset.labels {
        if labels.iter().any(|l| l.label) {
            return Err(Error::protocol(
                "training data contains anomalous-labeled frames; the one-class protocol \
                 requires training on normal data only",
            ));
        }
    }
    let mut windows = Vec::new();
    for track in &dataset.tracks {
        for w in slide_windows(
            track,
            spec.window_size,
            spec.stride,
            spec.strategy,
            spec.condition_frames,
            Some(T::c(dataset.conf_floor)),
        )? {
            let (norm, _) = normalize_window(&w, spec.normalization, &dataset.skeleton)?;
            windows.push(norm);
        }
    }
    if windows.is_empty() {
        return Err(Error::config("no training windows (tracks too short?)"));
    }
    Ok(windows)
}

/// Full training run. Returns the final state; `on_epoch_end` receives
/// the state after every completed epoch (checkpoint hook).
pub fn fit<T: Real>(
    dataset: &PoseDataset<T>,
    spec: &FitSpec,
    resume_from: Option<TrainState<T>>,
    mut on_metrics: impl FnMut(&StepMetrics),
    mut on_epoch_end: impl FnMut(&TrainState<T>) -> Result<()>,
) -> Result<TrainState<T>> {
    spec.train.validate()?;
    spec.weights.validate()?;
    let sched: VarianceSchedule<T> = spec.diffusion.build()?;
    let windows = training_windows(dataset, spec)?;

    let mut state = match resume_from {
        Some(s) => s,
        None => {
            let model = Model::init(
                &spec.unet,
                spec.conditioning,
                &spec.encoder_hidden,
                &dataset.skeleton,
                spec.condition_frames,
                spec.seed,
            )?;
            TrainState::new(model, &spec.train, spec.seed)
        }
    };

    let mut best_epoch_loss = f64::INFINITY;
    let mut stale_epochs = 0usize;
    while state.epoch < spec.train.epochs {
        let epoch = state.epoch;
        let lr = spec.train.lr_at_epoch(epoch);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut shuffle_rng = Prng::new(derive_seed(spec.seed, 0xE000 + epoch as u64));
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(spec.train.batch_size) {
            let batch: Vec<MotionWindow<T>> =
                chunk.iter().map(|&i| windows[i].clone()).collect();
            let metrics = train_step(&mut state, &batch, &sched, &spec.weights, lr)?;
            epoch_loss += metrics.loss_total;
            batches += 1;
            on_metrics(&metrics);
        }
        state.epoch += 1;
        on_epoch_end(&state)?;

        if spec.train.early_stop_patience > 0 {
            let mean = epoch_loss / batches.max(1) as f64;
            if mean < best_epoch_loss * (1.0 - spec.train.early_stop_min_delta) {
                best_epoch_loss = mean;
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= spec.train.early_stop_patience {
                    break;
                }
            }
        }
    }
    Ok(state)
}

/// Self-describing checkpoint: configuration header plus the resumable
/// state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Checkpoint<T: Real> {
    pub version: u32,
    pub precision: String,
    pub saved_at_unix: u64,
    pub skeleton: crate::motion_data::Skeleton,
    pub window_size: usize,
    pub condition_frames: usize,
    pub strategy: SplitStrategy,
    pub normalization: NormalizationMode,
    pub conditioning: ConditioningKind,
    pub encoder_hidden: Vec<usize>,
    pub unet: UNetConfig,
    pub diffusion: DiffusionConfig,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub state: TrainState<T>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl<T: Real> Checkpoint<T> {
    pub fn from_state(dataset_skeleton: &crate::motion_data::Skeleton, spec: &FitSpec, state: TrainState<T>) -> Checkpoint<T> {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            precision: precision_name::<T>().to_string(),
            saved_at_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            skeleton: dataset_skeleton.clone(),
            window_size: spec.window_size,
            condition_frames: spec.condition_frames,
            strategy: spec.strategy,
            normalization: spec.normalization,
            conditioning: spec.conditioning,
            encoder_hidden: spec.encoder_hidden.clone(),
            unet: spec.unet.clone(),
            diffusion: spec.diffusion.clone(),
            weights: spec.weights,
            train: spec.train.clone(),
            state,
        }
    }

    pub fn epochs_completed(&self) -> usize {
        self.state.epoch
    }
}

pub fn precision_name<T: Real>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

pub fn save_checkpoint<T: Real>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, ckpt)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::schema("checkpoint missing version"))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::schema(format!(
            "checkpoint version {version} incompatible with supported {CHECKPOINT_VERSION}"
        )));
    }
    let precision = value
        .get("precision")
        .and_then(|v| v.as_str())
        .unwrap_or("f64");
    if precision != precision_name::<T>() {
        return Err(Error::schema(format!(
            "checkpoint precision {precision} does not match requested {}",
            precision_name::<T>()
        )));
    }
    let ckpt: Checkpoint<T> = serde_json::from_value(value)?;
    Ok(ckpt)
}
