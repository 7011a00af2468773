//! The noise-prediction U-Net over skeletal sequences.
//!
//! Channels contract along the first half of the ladder and expand back
//! symmetrically; residual skips connect each encoder level's output to
//! the input of the decoder level with matching width. The conditioning
//! signal (timestep embedding plus optional motion embedding) is
//! projected per layer and added to every layer's input.

use super::{Activation, CondProj, StsLayer, TimestepEmbed};
use crate::error::{Error, Result};
use crate::motion_data::Skeleton;
use crate::rng::Prng;
use crate::scalar::Real;
use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    /// Full channel ladder, a palindrome such as [2, 32, 64, 32, 2].
    pub channel_ladder: Vec<usize>,
    pub layers_per_level: usize,
    /// Temporal extent the network processes (window frames or target
    /// frames, depending on the conditioning strategy).
    pub frames: usize,
    pub joints: usize,
    pub cond_width: usize,
    pub activation: Activation,
    /// Restrict spatial mixing to the skeleton adjacency.
    pub hard_adjacency_mask: bool,
    /// Keep self-loops in the hard mask.
    pub mask_self_loops: bool,
    /// Use a trainable per-timestep table instead of the sinusoidal code.
    pub learned_timestep_table: bool,
    /// Residual connection across the whole network (the outermost
    /// specular pair): the output becomes input + correction, which keeps
    /// the near-identity noise prediction at high timesteps well posed.
    pub outer_residual: bool,
    pub diffusion_steps: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            channel_ladder: vec![2, 32, 64, 32, 2],
            layers_per_level: 1,
            frames: 3,
            joints: 17,
            cond_width: 16,
            activation: Activation::Silu,
            hard_adjacency_mask: false,
            mask_self_loops: true,
            learned_timestep_table: false,
            outer_residual: true,
            diffusion_steps: 10,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let l = &self.channel_ladder;
        if l.len() < 3 {
            return Err(Error::config(format!(
                "channel ladder {l:?} needs at least one hidden width"
            )));
        }
        if l.len() % 2 == 0 {
            return Err(Error::config(format!(
                "channel ladder {l:?} has no single bottleneck; length must be odd"
            )));
        }
        for i in 0..l.len() {
            if l[i] == 0 {
                return Err(Error::config("channel widths must be positive"));
            }
            if l[i] != l[l.len() - 1 - i] {
                return Err(Error::config(format!(
                    "channel ladder {l:?} is not symmetric"
                )));
            }
        }
        if self.layers_per_level == 0 {
            return Err(Error::config("layers_per_level must be >= 1"));
        }
        if self.frames == 0 || self.joints == 0 {
            return Err(Error::config("frames and joints must be positive"));
        }
        if self.cond_width == 0 || self.cond_width % 2 != 0 {
            return Err(Error::config(
                "cond_width must be positive and even for the sinusoidal code",
            ));
        }
        if self.diffusion_steps == 0 {
            return Err(Error::config("diffusion_steps must be >= 1"));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        (self.channel_ladder.len() - 1) / 2
    }

    /// (c_in, c_out) of every layer, encoder then decoder.
    pub fn layer_widths(&self) -> Vec<(usize, usize)> {
        let n = self.levels();
        let l = &self.channel_ladder;
        let mut widths = Vec::new();
        for lvl in 0..n {
            widths.push((l[lvl], l[lvl + 1]));
            for _ in 1..self.layers_per_level {
                widths.push((l[lvl + 1], l[lvl + 1]));
            }
        }
        for lvl in 0..n {
            widths.push((l[n - lvl], l[n - lvl - 1]));
            for _ in 1..self.layers_per_level {
                widths.push((l[n - lvl - 1], l[n - lvl - 1]));
            }
        }
        widths
    }
}

/// What happens around one layer in the forward walk.
#[derive(Debug, Clone, Copy)]
struct PlanStep {
    layer: usize,
    /// Add this saved encoder level's output to the running activation.
    add_skip: Option<usize>,
    /// Save the running activation as this encoder level's output.
    record_level: Option<usize>,
}

fn build_plan(cfg: &UNetConfig) -> Vec<PlanStep> {
    let n = cfg.levels();
    let p = cfg.layers_per_level;
    let mut plan = Vec::new();
    for lvl in 0..n {
        for li in 0..p {
            plan.push(PlanStep {
                layer: lvl * p + li,
                add_skip: None,
                // Levels 0..n-1 feed skips; the bottleneck output flows on
                // directly.
                record_level: (li == p - 1 && lvl < n - 1).then_some(lvl),
            });
        }
    }
    for lvl in 0..n {
        for li in 0..p {
            plan.push(PlanStep {
                layer: (n + lvl) * p + li,
                add_skip: (li == 0 && lvl >= 1).then(|| n - 1 - lvl),
                record_level: None,
            });
        }
    }
    plan
}

/// The noise-prediction network: layers, per-layer conditioning
/// projections and the timestep embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Denoiser<T: Real> {
    pub cfg: UNetConfig,
    pub layers: Vec<StsLayer<T>>,
    pub cond_projs: Vec<CondProj<T>>,
    pub temb: TimestepEmbed<T>,
}

/// Everything the backward pass needs from one forward call.
pub struct DenoiserCache<T: Real> {
    layer_caches: Vec<super::StsCache<T>>,
    cond_signal: Array1<T>,
    t: usize,
}

impl<T: Real> Denoiser<T> {
    /// Deterministic initialization from a seed; spatial weights start at
    /// the normalized skeleton adjacency.
    pub fn init(cfg: &UNetConfig, skeleton: &Skeleton, seed: u64) -> Result<Denoiser<T>> {
        cfg.validate()?;
        if skeleton.joint_count != cfg.joints {
            return Err(Error::config(format!(
                "config expects {} joints, skeleton has {}",
                cfg.joints, skeleton.joint_count
            )));
        }
        let spatial_base = skeleton.normalized_adjacency::<T>();
        let mask = cfg.hard_adjacency_mask.then(|| {
            if cfg.mask_self_loops {
                skeleton.adjacency_mask::<T>()
            } else {
                skeleton.adjacency::<T>()
            }
        });
        let mut rng = Prng::new(seed);
        let widths = cfg.layer_widths();
        let last = widths.len() - 1;
        let mut layers = Vec::with_capacity(widths.len());
        let mut cond_projs = Vec::with_capacity(widths.len());
        for (i, &(c_in, c_out)) in widths.iter().enumerate() {
            let act = if i == last {
                Activation::Identity
            } else {
                cfg.activation
            };
            layers.push(StsLayer::init(
                cfg.frames,
                cfg.joints,
                c_in,
                c_out,
                act,
                &spatial_base,
                mask.clone(),
                &mut rng,
            ));
            cond_projs.push(CondProj::init(c_in, cfg.cond_width, &mut rng));
        }
        let temb = if cfg.learned_timestep_table {
            TimestepEmbed::Learned {
                table: super::uniform_init((cfg.diffusion_steps, cfg.cond_width), 0.5, &mut rng),
            }
        } else {
            TimestepEmbed::Sinusoidal {
                width: cfg.cond_width,
            }
        };
        Ok(Denoiser {
            cfg: cfg.clone(),
            layers,
            cond_projs,
            temb,
        })
    }

    /// Total number of trainable scalars; a pure function of the config.
    pub fn param_count(cfg: &UNetConfig) -> Result<usize> {
        cfg.validate()?;
        let mut count = 0usize;
        for (c_in, c_out) in cfg.layer_widths() {
            count += cfg.joints * cfg.joints; // spatial
            count += cfg.frames * cfg.frames; // temporal
            count += c_in * c_out + c_out; // channel + bias
            count += c_in * cfg.cond_width + c_in; // conditioning projection
        }
        if cfg.learned_timestep_table {
            count += cfg.diffusion_steps * cfg.cond_width;
        }
        Ok(count)
    }

    /// The motion-temporal signal: timestep embedding plus the optional
    /// encoded past motion.
    fn cond_signal(&self, t: usize, h: Option<&Array1<T>>) -> Result<Array1<T>> {
        let mut e = self.temb.embed(t);
        if let Some(h) = h {
            if h.len() != self.cfg.cond_width {
                return Err(Error::shape(format!(
                    "conditioning width {} != configured {}",
                    h.len(),
                    self.cfg.cond_width
                )));
            }
            e = e + h;
        }
        Ok(e)
    }

    pub fn forward(&self, x: &Array3<T>, t: usize, h: Option<&Array1<T>>) -> Result<Array3<T>> {
        Ok(self.forward_cached(x, t, h)?.0)
    }

    pub fn forward_cached(
        &self,
        x: &Array3<T>,
        t: usize,
        h: Option<&Array1<T>>,
    ) -> Result<(Array3<T>, DenoiserCache<T>)> {
        if t == 0 || t > self.cfg.diffusion_steps {
            return Err(Error::domain(format!(
                "timestep {t} outside [1, {}]",
                self.cfg.diffusion_steps
            )));
        }
        let (f, j, c) = x.dim();
        if f != self.cfg.frames || j != self.cfg.joints || c != self.cfg.channel_ladder[0] {
            return Err(Error::shape(format!(
                "input {:?}, config expects ({}, {}, {})",
                x.dim(),
                self.cfg.frames,
                self.cfg.joints,
                self.cfg.channel_ladder[0]
            )));
        }
        let cond = self.cond_signal(t, h)?;
        let plan = build_plan(&self.cfg);
        let mut saved: Vec<Option<Array3<T>>> = vec![None; self.cfg.levels()];
        let mut layer_caches = Vec::with_capacity(plan.len());
        let mut cur = x.clone();
        for step in &plan {
            if let Some(lvl) = step.add_skip {
                cur = cur + saved[lvl].as_ref().expect("skip recorded before use");
            }
            let inj = self.cond_projs[step.layer].forward(&cond);
            let mut x_in = cur;
            for mut lane in x_in.lanes_mut(ndarray::Axis(2)) {
                lane += &inj;
            }
            let (out, cache) = self.layers[step.layer].forward(&x_in)?;
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite activation after layer {} at timestep {t}",
                    step.layer
                )));
            }
            layer_caches.push(cache);
            if let Some(lvl) = step.record_level {
                saved[lvl] = Some(out.clone());
            }
            cur = out;
        }
        if self.cfg.outer_residual {
            cur = cur + x;
        }
        Ok((
            cur,
            DenoiserCache {
                layer_caches,
                cond_signal: cond,
                t,
            },
        ))
    }

    /// Backward pass. Returns (gradient w.r.t. the input, parameter
    /// gradients mirroring `self`, gradient w.r.t. the external
    /// conditioning signal h).
    pub fn backward(
        &self,
        cache: &DenoiserCache<T>,
        d_out: &Array3<T>,
    ) -> (Array3<T>, Denoiser<T>, Array1<T>) {
        let plan = build_plan(&self.cfg);
        let mut layer_grads: Vec<StsLayer<T>> =
            self.layers.iter().map(|l| l.zeros_like()).collect();
        let mut proj_grads: Vec<CondProj<T>> =
            self.cond_projs.iter().map(|p| p.zeros_like()).collect();
        let mut d_cond = Array1::zeros(self.cfg.cond_width);
        let mut d_saved: Vec<Option<Array3<T>>> = vec![None; self.cfg.levels()];
        let mut d_cur = d_out.clone();

        for (i, step) in plan.iter().enumerate().rev() {
            if let Some(lvl) = step.record_level {
                if let Some(extra) = d_saved[lvl].take() {
                    d_cur = d_cur + extra;
                }
            }
            let (dx_in, grads) = self.layers[step.layer].backward(&cache.layer_caches[i], &d_cur);
            layer_grads[step.layer] = grads;

            // The injection was broadcast over frames and joints, so its
            // gradient is the channel-wise sum of the input gradient.
            let c_in = self.layers[step.layer].c_in();
            let mut acc = Array1::<T>::zeros(c_in);
            for lane in dx_in.lanes(ndarray::Axis(2)) {
                acc += &lane;
            }
            let (pg, d_inj) = self.cond_projs[step.layer].backward(&cache.cond_signal, &acc);
            proj_grads[step.layer] = pg;
            d_cond = d_cond + &d_inj;

            d_cur = dx_in;
            if let Some(lvl) = step.add_skip {
                d_saved[lvl] = Some(match d_saved[lvl].take() {
                    Some(acc) => acc + &d_cur,
                    None => d_cur.clone(),
                });
            }
        }

        let temb_grads = match (&self.temb, &cache.t) {
            (TimestepEmbed::Learned { table }, t) => {
                let mut g = ndarray::Array2::zeros(table.dim());
                g.row_mut(*t - 1).assign(&d_cond);
                TimestepEmbed::Learned { table: g }
            }
            (TimestepEmbed::Sinusoidal { width }, _) => {
                TimestepEmbed::Sinusoidal { width: *width }
            }
        };

        if self.cfg.outer_residual {
            d_cur = d_cur + d_out;
        }
        let grads = Denoiser {
            cfg: self.cfg.clone(),
            layers: layer_grads,
            cond_projs: proj_grads,
            temb: temb_grads,
        };
        (d_cur, grads, d_cond)
    }

    pub fn layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, (layer, proj)) in self.layers.iter().zip(&self.cond_projs).enumerate() {
            layer.layout(&format!("unet.layer{i}"), &mut out);
            proj.layout(&format!("unet.layer{i}"), &mut out);
        }
        if let TimestepEmbed::Learned { table } = &self.temb {
            out.push(("unet.timestep_table".into(), table.len()));
        }
        out
    }

    pub fn write_flat(&self, out: &mut Vec<T>) {
        for (layer, proj) in self.layers.iter().zip(&self.cond_projs) {
            layer.write_flat(out);
            proj.write_flat(out);
        }
        if let TimestepEmbed::Learned { table } = &self.temb {
            out.extend(table.iter().copied());
        }
    }

    pub fn read_flat(&mut self, data: &[T], pos: &mut usize) {
        for (layer, proj) in self.layers.iter_mut().zip(&mut self.cond_projs) {
            layer.read_flat(data, pos);
            proj.read_flat(data, pos);
        }
        if let TimestepEmbed::Learned { table } = &mut self.temb {
            for v in table.iter_mut() {
                *v = data[*pos];
                *pos += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn toy_cfg() -> UNetConfig {
        UNetConfig {
            channel_ladder: vec![2, 8, 2],
            layers_per_level: 1,
            frames: 3,
            joints: 4,
            cond_width: 4,
            ..UNetConfig::default()
        }
    }

    fn rand_input(seed: u64, dim: (usize, usize, usize)) -> Array3<f64> {
        let mut rng = Prng::new(seed);
        Array3::from_shape_vec(
            dim,
            (0..dim.0 * dim.1 * dim.2).map(|_| rng.normal()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = toy_cfg();
        let skel = Skeleton::star(4);
        let a = Denoiser::<f64>::init(&cfg, &skel, 5).unwrap();
        let b = Denoiser::<f64>::init(&cfg, &skel, 5).unwrap();
        assert_eq!(a, b);
        let c = Denoiser::<f64>::init(&cfg, &skel, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn toy_param_count_matches_shape_arithmetic() {
        // Ladder 2 -> 8 -> 2, |J| = 4, F = 3, cond width 4:
        //   layer 1 (2->8):  16 + 9 + 16 + 8  = 49, proj 2*4 + 2  = 10
        //   layer 2 (8->2):  16 + 9 + 16 + 2  = 43, proj 8*4 + 8  = 40
        let cfg = toy_cfg();
        assert_eq!(Denoiser::<f64>::param_count(&cfg).unwrap(), 142);
        // The materialized parameters agree with the closed form.
        let skel = Skeleton::star(4);
        let d = Denoiser::<f64>::init(&cfg, &skel, 0).unwrap();
        let mut flat = Vec::new();
        d.write_flat(&mut flat);
        assert_eq!(flat.len(), 142);
        assert_eq!(
            d.layout().iter().map(|(_, l)| l).sum::<usize>(),
            142
        );
    }

    #[test]
    fn param_count_monotone_in_width_and_seed_free() {
        let cfg = toy_cfg();
        let mut wider = cfg.clone();
        wider.channel_ladder = vec![2, 16, 2];
        assert!(
            Denoiser::<f64>::param_count(&wider).unwrap()
                > Denoiser::<f64>::param_count(&cfg).unwrap()
        );
        // Count never looks at a seed: recompute equals itself trivially
        // and equals the materialized count for several seeds.
        let skel = Skeleton::star(4);
        for seed in [0u64, 1, 99] {
            let d = Denoiser::<f64>::init(&cfg, &skel, seed).unwrap();
            let mut flat = Vec::new();
            d.write_flat(&mut flat);
            assert_eq!(flat.len(), Denoiser::<f64>::param_count(&cfg).unwrap());
        }
    }

    #[test]
    fn invalid_ladders_rejected() {
        let mut cfg = toy_cfg();
        cfg.channel_ladder = vec![2];
        assert!(cfg.validate().is_err());
        cfg.channel_ladder = vec![2, 8, 4]; // asymmetric
        assert!(cfg.validate().is_err());
        cfg.channel_ladder = vec![2, 8, 8, 2]; // even length
        assert!(cfg.validate().is_err());
        cfg.channel_ladder = vec![2, 0, 2];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn forward_preserves_shape_across_random_configs() {
        let mut rng = Prng::new(31);
        for trial in 0..20 {
            let levels = 1 + rng.uniform_usize(2);
            let c = 1 + rng.uniform_usize(3);
            let mut ladder = vec![c];
            for _ in 0..levels {
                ladder.push(1 + rng.uniform_usize(12));
            }
            let full: Vec<usize> = ladder
                .iter()
                .copied()
                .chain(ladder.iter().rev().skip(1).copied())
                .collect();
            let cfg = UNetConfig {
                channel_ladder: full,
                layers_per_level: 1 + rng.uniform_usize(2),
                frames: 1 + rng.uniform_usize(4),
                joints: 2 + rng.uniform_usize(6),
                cond_width: 2 * (1 + rng.uniform_usize(4)),
                hard_adjacency_mask: trial % 3 == 0,
                ..UNetConfig::default()
            };
            let skel = Skeleton::star(cfg.joints);
            let den = Denoiser::<f64>::init(&cfg, &skel, trial as u64).unwrap();
            let x = rand_input(trial as u64 + 100, (cfg.frames, cfg.joints, c));
            let y = den.forward(&x, 1 + (trial % 10), None).unwrap();
            assert_eq!(y.dim(), x.dim(), "trial {trial} cfg {cfg:?}");
        }
    }

    #[test]
    fn changing_t_changes_output() {
        let cfg = toy_cfg();
        let skel = Skeleton::star(4);
        let den = Denoiser::<f64>::init(&cfg, &skel, 17).unwrap();
        let x = rand_input(3, (3, 4, 2));
        let y1 = den.forward(&x, 1, None).unwrap();
        let y2 = den.forward(&x, 2, None).unwrap();
        assert_ne!(y1, y2);
    }

    #[test]
    fn conditioning_perturbation_changes_output() {
        let cfg = toy_cfg();
        let skel = Skeleton::star(4);
        let den = Denoiser::<f64>::init(&cfg, &skel, 23).unwrap();
        let x = rand_input(5, (3, 4, 2));
        let h = Array1::from_vec(vec![0.1, -0.2, 0.3, 0.05]);
        let mut h2 = h.clone();
        h2[1] += 0.5;
        let y1 = den.forward(&x, 3, Some(&h)).unwrap();
        let y2 = den.forward(&x, 3, Some(&h2)).unwrap();
        assert_ne!(y1, y2);
    }

    #[test]
    fn rejects_bad_timestep_and_shape() {
        let cfg = toy_cfg();
        let skel = Skeleton::star(4);
        let den = Denoiser::<f64>::init(&cfg, &skel, 1).unwrap();
        let x = rand_input(1, (3, 4, 2));
        assert!(den.forward(&x, 0, None).is_err());
        assert!(den.forward(&x, 11, None).is_err());
        assert!(den.forward(&rand_input(1, (4, 4, 2)), 1, None).is_err());
        let bad_h = Array1::zeros(5);
        assert!(den.forward(&x, 1, Some(&bad_h)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences_with_skips() {
        // Two levels so the skip path is exercised; learned timestep table
        // so its gradient is covered too.
        let cfg = UNetConfig {
            channel_ladder: vec![2, 5, 7, 5, 2],
            layers_per_level: 2,
            frames: 3,
            joints: 4,
            cond_width: 4,
            learned_timestep_table: true,
            ..UNetConfig::default()
        };
        let skel = Skeleton::star(4);
        let mut den = Denoiser::<f64>::init(&cfg, &skel, 77).unwrap();
        let x = rand_input(8, (3, 4, 2));
        let h = Array1::from_vec(vec![0.2, -0.3, 0.15, 0.4]);
        let target = rand_input(9, (3, 4, 2));
        let t = 4usize;

        let loss = |d: &Denoiser<f64>| -> f64 {
            let y = d.forward(&x, t, Some(&h)).unwrap();
            y.iter()
                .zip(target.iter())
                .map(|(a, b)| 0.5 * (a - b) * (a - b))
                .sum()
        };

        let (y, cache) = den.forward_cached(&x, t, Some(&h)).unwrap();
        let d_out = &y - &target;
        let (_, grads, d_h) = den.backward(&cache, &d_out);

        let mut flat = Vec::new();
        den.write_flat(&mut flat);
        let mut gflat = Vec::new();
        grads.write_flat(&mut gflat);
        assert_eq!(flat.len(), gflat.len());

        let h_step = 1e-5;
        let layout = den.layout();
        let mut offset = 0usize;
        for (name, len) in &layout {
            // Per-tensor relative error in the Euclidean norm.
            let mut diff_sq = 0.0f64;
            let mut fd_sq = 0.0f64;
            let mut an_sq = 0.0f64;
            for i in offset..offset + len {
                let mut plus = flat.clone();
                plus[i] += h_step;
                let mut pos = 0;
                den.read_flat(&plus, &mut pos);
                let lp = loss(&den);
                let mut minus = flat.clone();
                minus[i] -= h_step;
                pos = 0;
                den.read_flat(&minus, &mut pos);
                let lm = loss(&den);
                pos = 0;
                den.read_flat(&flat, &mut pos);
                let fd = (lp - lm) / (2.0 * h_step);
                diff_sq += (gflat[i] - fd) * (gflat[i] - fd);
                fd_sq += fd * fd;
                an_sq += gflat[i] * gflat[i];
            }
            let rel = diff_sq.sqrt() / fd_sq.sqrt().max(an_sq.sqrt()).max(1e-8);
            assert!(rel < 1e-4, "{name}: relative error {rel}");
            offset += len;
        }

        // Gradient w.r.t. the external conditioning signal.
        for i in 0..4 {
            let mut hp = h.clone();
            hp[i] += h_step;
            let mut hm = h.clone();
            hm[i] -= h_step;
            let yp = den.forward(&x, t, Some(&hp)).unwrap();
            let ym = den.forward(&x, t, Some(&hm)).unwrap();
            let lp: f64 = yp
                .iter()
                .zip(target.iter())
                .map(|(a, b)| 0.5 * (a - b) * (a - b))
                .sum();
            let lm: f64 = ym
                .iter()
                .zip(target.iter())
                .map(|(a, b)| 0.5 * (a - b) * (a - b))
                .sum();
            let fd = (lp - lm) / (2.0 * h_step);
            assert!(
                (d_h[i] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "d_h[{i}] analytic {} fd {}",
                d_h[i],
                fd
            );
        }
    }
}
