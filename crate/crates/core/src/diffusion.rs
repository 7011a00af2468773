//! Variance schedules, forward corruption, reverse sampling and the
//! displacement losses.
//!
//! Joint coordinates are corrupted by adding Gaussian displacement maps
//! whose magnitude follows a variance schedule; the reverse process
//! removes the displacement one step at a time using a predictor for the
//! injected noise.

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::scalar::Real;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

/// Gaussian displacement tensor shaped (frames, joints, coords).
pub type DisplacementMap<T> = Array3<T>;

/// Knee of the smoothed displacement loss.
pub const SMOOTH_KNEE: f64 = 1.0;

/// Upper clip for cosine-schedule betas.
pub const BETA_CLIP: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Per-step noise magnitudes: beta_t, alpha_t = 1 - beta_t and the
/// cumulative product alpha_bar_t, all indexed t = 1..=T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct VarianceSchedule<T: Real> {
    pub kind: ScheduleKind,
    betas: Vec<T>,
    alphas: Vec<T>,
    alpha_bars: Vec<T>,
}

impl<T: Real> VarianceSchedule<T> {
    fn from_betas(kind: ScheduleKind, betas: Vec<T>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule needs at least one step"));
        }
        let mut alphas = Vec::with_capacity(betas.len());
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = T::one();
        for (i, &b) in betas.iter().enumerate() {
            if !(b > T::zero() && b < T::one()) {
                return Err(Error::config(format!(
                    "beta_{} = {b} outside (0, 1)",
                    i + 1
                )));
            }
            let a = T::one() - b;
            prod = prod * a;
            alphas.push(a);
            alpha_bars.push(prod);
        }
        Ok(VarianceSchedule {
            kind,
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::domain(format!(
                "timestep {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> T {
        self.betas[t - 1]
    }

    /// alpha_t = 1 - beta_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> T {
        self.alphas[t - 1]
    }

    /// alpha_bar_t for t in 1..=T.
    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bars[t - 1]
    }

    /// alpha_bar_t with the t = 0 convention alpha_bar_0 = 1.
    pub fn alpha_bar0(&self, t: usize) -> T {
        if t == 0 {
            T::one()
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }
}

/// Linear beta schedule, endpoints inclusive. T = 1 collapses to beta_start.
pub fn linear_schedule<T: Real>(
    steps: usize,
    beta_start: T,
    beta_end: T,
) -> Result<VarianceSchedule<T>> {
    if steps < 1 {
        return Err(Error::config("steps must be >= 1"));
    }
    if !(beta_start > T::zero() && beta_start <= beta_end && beta_end < T::one()) {
        return Err(Error::config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        let denom = T::from_usize(steps - 1).unwrap();
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * T::from_usize(i).unwrap() / denom)
            .collect()
    };
    VarianceSchedule::from_betas(ScheduleKind::Linear, betas)
}

/// Cosine schedule: alpha_bar_t = f(t)/f(0) with
/// f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), betas derived as
/// 1 - alpha_bar_t / alpha_bar_{t-1} and clipped to (0, 0.999].
pub fn cosine_schedule<T: Real>(steps: usize, offset: T) -> Result<VarianceSchedule<T>> {
    if steps < 1 {
        return Err(Error::config("steps must be >= 1"));
    }
    if offset <= T::zero() {
        return Err(Error::config(format!("cosine offset {offset} must be > 0")));
    }
    let half_pi = T::c(std::f64::consts::FRAC_PI_2);
    let sm = T::from_usize(steps).unwrap();
    let f = |t: usize| -> T {
        let arg = (T::from_usize(t).unwrap() / sm + offset) / (T::one() + offset) * half_pi;
        arg.cos().powi(2)
    };
    let f0 = f(0);
    let clip = T::c(BETA_CLIP);
    let mut betas = Vec::with_capacity(steps);
    let mut prev = T::one();
    for t in 1..=steps {
        let ab = f(t) / f0;
        let beta = (T::one() - ab / prev).min(clip);
        prev = prev * (T::one() - beta);
        betas.push(beta);
    }
    VarianceSchedule::from_betas(ScheduleKind::Cosine, betas)
}

/// Diffusion hyperparameters, serialized with every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
    pub cosine_offset: f64,
    /// Knee of the smoothed loss; the loss definition fixes it at 1.
    pub smooth_threshold: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 10,
            schedule: ScheduleKind::Cosine,
            beta_start: 1e-4,
            beta_end: 2e-2,
            cosine_offset: 0.008,
            smooth_threshold: SMOOTH_KNEE,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::config("diffusion.steps must be >= 1"));
        }
        if self.smooth_threshold != SMOOTH_KNEE {
            return Err(Error::config("smooth_threshold is fixed at 1"));
        }
        Ok(())
    }

    pub fn build<T: Real>(&self) -> Result<VarianceSchedule<T>> {
        self.validate()?;
        match self.schedule {
            ScheduleKind::Linear => {
                linear_schedule(self.steps, T::c(self.beta_start), T::c(self.beta_end))
            }
            ScheduleKind::Cosine => cosine_schedule(self.steps, T::c(self.cosine_offset)),
        }
    }
}

/// Fill a displacement map with i.i.d. standard normal draws, row-major.
pub fn draw_displacement<T: Real>(
    dim: (usize, usize, usize),
    rng: &mut Prng,
) -> DisplacementMap<T> {
    let len = dim.0 * dim.1 * dim.2;
    let data: Vec<T> = (0..len).map(|_| T::c(rng.normal())).collect();
    Array3::from_shape_vec(dim, data).expect("shape matches data length")
}

/// Closed-form corruption at step t:
/// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.
pub fn forward_diffuse<T: Real>(
    x0_target: &DisplacementMap<T>,
    t: usize,
    eps: &DisplacementMap<T>,
    sched: &VarianceSchedule<T>,
) -> Result<DisplacementMap<T>> {
    sched.check_t(t)?;
    if x0_target.dim() != eps.dim() {
        return Err(Error::shape(format!(
            "x0 {:?} vs eps {:?}",
            x0_target.dim(),
            eps.dim()
        )));
    }
    let ab = sched.alpha_bar(t);
    let sa = ab.sqrt();
    let sb = (T::one() - ab).sqrt();
    Ok(x0_target.mapv(|v| v * sa) + &eps.mapv(|v| v * sb))
}

/// One reverse step:
/// x_{t-1} = (x_t - (1 - alpha_t)/sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
///           + sqrt(beta_t) * z.
///
/// The final step (t = 1) is deterministic: pass `z = None`.
pub fn reverse_step<T: Real>(
    x_t: &DisplacementMap<T>,
    t: usize,
    eps_hat: &DisplacementMap<T>,
    z: Option<&DisplacementMap<T>>,
    sched: &VarianceSchedule<T>,
) -> Result<DisplacementMap<T>> {
    sched.check_t(t)?;
    if x_t.dim() != eps_hat.dim() {
        return Err(Error::shape(format!(
            "x_t {:?} vs eps_hat {:?}",
            x_t.dim(),
            eps_hat.dim()
        )));
    }
    if t == 1 && z.is_some() {
        return Err(Error::domain("the t = 1 reverse step takes no noise"));
    }
    let alpha = sched.alpha(t);
    let coef = (T::one() - alpha) / (T::one() - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = T::one() / alpha.sqrt();
    let mut out = (x_t - &eps_hat.mapv(|v| v * coef)).mapv(|v| v * inv_sqrt_alpha);
    if let Some(z) = z {
        if z.dim() != x_t.dim() {
            return Err(Error::shape(format!(
                "z {:?} vs x_t {:?}",
                z.dim(),
                x_t.dim()
            )));
        }
        let sb = sched.beta(t).sqrt();
        out = out + &z.mapv(|v| v * sb);
    }
    Ok(out)
}

/// Smoothed displacement loss: 0.5 d^2 below the knee at 1, d - 0.5 above.
pub fn smooth_loss<T: Real>(d: T) -> Result<T> {
    if d < T::zero() {
        return Err(Error::domain(format!(
            "smooth_loss takes a nonnegative distance, got {d}"
        )));
    }
    let knee = T::c(SMOOTH_KNEE);
    Ok(if d < knee {
        T::c(0.5) * d * d
    } else {
        d - T::c(0.5)
    })
}

/// d/dd of [`smooth_loss`].
pub fn smooth_loss_grad<T: Real>(d: T) -> T {
    let knee = T::c(SMOOTH_KNEE);
    if d < knee {
        d
    } else {
        T::one()
    }
}

/// Displacement loss: smoothed mean absolute error between the true and
/// the predicted displacement map.
pub fn disp_loss<T: Real>(
    eps_true: &DisplacementMap<T>,
    eps_pred: &DisplacementMap<T>,
) -> Result<T> {
    let d = mean_abs_residual(eps_true, eps_pred)?;
    smooth_loss(d)
}

/// [`disp_loss`] together with its gradient w.r.t. the prediction.
pub fn disp_loss_with_grad<T: Real>(
    eps_true: &DisplacementMap<T>,
    eps_pred: &DisplacementMap<T>,
) -> Result<(T, DisplacementMap<T>)> {
    let d = mean_abs_residual(eps_true, eps_pred)?;
    let loss = smooth_loss(d)?;
    let scale = smooth_loss_grad(d) / T::from_usize(eps_true.len()).unwrap();
    let grad = ndarray::Zip::from(eps_pred)
        .and(eps_true)
        .map_collect(|&p, &t| {
            let r = p - t;
            if r > T::zero() {
                scale
            } else if r < T::zero() {
                -scale
            } else {
                T::zero()
            }
        });
    Ok((loss, grad))
}

/// Mean absolute error over all elements of the residual.
pub fn mean_abs_residual<T: Real>(
    eps_true: &DisplacementMap<T>,
    eps_pred: &DisplacementMap<T>,
) -> Result<T> {
    if eps_true.dim() != eps_pred.dim() {
        return Err(Error::shape(format!(
            "eps_true {:?} vs eps_pred {:?}",
            eps_true.dim(),
            eps_pred.dim()
        )));
    }
    let n = T::from_usize(eps_true.len()).unwrap();
    let sum = ndarray::Zip::from(eps_true)
        .and(eps_pred)
        .fold(T::zero(), |acc, &a, &b| acc + (a - b).abs());
    Ok(sum / n)
}

/// Anything that predicts the displacement map injected at step t.
pub trait NoisePredictor<T: Real> {
    fn predict(&self, x_t: &DisplacementMap<T>, t: usize) -> Result<DisplacementMap<T>>;
}

/// Generate one future by iterating the reverse process from pure noise.
///
/// Draw order (fixed contract so runs can be replayed): the initial x_T
/// consumes frames*joints*coords normals in row-major order from
/// `Prng::new(seed)`, then each step t = T..2 consumes the same amount for
/// its fresh z. The t = 1 step draws nothing.
pub fn sample_future<T: Real, P: NoisePredictor<T>>(
    predictor: &P,
    target_dim: (usize, usize, usize),
    sched: &VarianceSchedule<T>,
    seed: u64,
) -> Result<DisplacementMap<T>> {
    let mut rng = Prng::new(seed);
    let mut x = draw_displacement::<T>(target_dim, &mut rng);
    for t in (1..=sched.steps()).rev() {
        let eps_hat = predictor.predict(&x, t)?;
        if eps_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite denoiser output at timestep {t}"
            )));
        }
        let z = if t > 1 {
            Some(draw_displacement::<T>(target_dim, &mut rng))
        } else {
            None
        };
        x = reverse_step(&x, t, &eps_hat, z.as_ref(), sched)?;
    }
    Ok(x)
}

/// Deviation of empirically sampled moments from the closed form, with the
/// standard errors of the estimators (pooled over draws and elements).
#[derive(Debug, Clone, Serialize)]
pub struct MomentCheck {
    pub t: usize,
    pub n_draws: usize,
    pub mean_dev: f64,
    pub mean_se: f64,
    pub var_dev: f64,
    pub var_se: f64,
}

impl MomentCheck {
    /// True when both moment deviations are within k standard errors.
    pub fn within(&self, k: f64) -> bool {
        self.mean_dev.abs() <= k * self.mean_se && self.var_dev.abs() <= k * self.var_se
    }
}

/// Compose the single-step corruption t times over n_draws chains and
/// compare the empirical mean/variance against the one-shot closed form.
pub fn iterated_forward_equivalence_check<T: Real>(
    x0: &DisplacementMap<T>,
    t: usize,
    sched: &VarianceSchedule<T>,
    n_draws: usize,
    seed: u64,
) -> Result<MomentCheck> {
    sched.check_t(t)?;
    if n_draws == 0 {
        return Err(Error::config("n_draws must be >= 1"));
    }
    let mut rng = Prng::new(seed);
    let dim = x0.dim();
    let ab = sched.alpha_bar(t).to_f64_lossy();
    let sqrt_ab = ab.sqrt();
    let sigma2 = 1.0 - ab;

    let n_elem = x0.len();
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for _ in 0..n_draws {
        let mut x = x0.clone();
        for s in 1..=t {
            let a = sched.alpha(s);
            let sa = a.sqrt();
            let sb = sched.beta(s).sqrt();
            let eps = draw_displacement::<T>(dim, &mut rng);
            x = x.mapv(|v| v * sa) + &eps.mapv(|v| v * sb);
        }
        for (xv, x0v) in x.iter().zip(x0.iter()) {
            let dev = xv.to_f64_lossy() - sqrt_ab * x0v.to_f64_lossy();
            sum += dev;
            sumsq += dev * dev;
        }
    }
    let count = (n_draws * n_elem) as f64;
    let mean_dev = sum / count;
    let var_hat = sumsq / count;
    Ok(MomentCheck {
        t,
        n_draws,
        mean_dev,
        mean_se: (sigma2 / count).sqrt(),
        var_dev: var_hat - sigma2,
        var_se: sigma2 * (2.0 / count).sqrt(),
    })
}
