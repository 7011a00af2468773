//! Building blocks of the denoising network: space-time separable graph
//! convolution layers with hand-written backward passes, conditioning
//! projections and timestep embeddings.
//!
//! Parameters and their gradients share the same container types; every
//! trainable struct exposes a deterministic flat layout used by the
//! optimizer and the finite-difference checks.

mod denoiser;
mod stack;

pub use denoiser::{Denoiser, DenoiserCache, UNetConfig};
pub use stack::{BroadcastDecoder, DecoderCache, EncoderCache, PoolingEncoder};

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::scalar::Real;
use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Sigmoid-weighted linear unit x * sigmoid(x).
    #[default]
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => x / (T::one() + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation value.
    #[inline]
    fn grad<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = T::one() / (T::one() + (-x).exp());
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Identity => T::one(),
        }
    }
}

/// One space-time separable graph convolution: joint mixing masked or
/// guided by the skeleton, frame mixing, channel projection, activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StsLayer<T: Real> {
    /// (joints, joints) trainable spatial mixing.
    pub spatial: Array2<T>,
    /// (frames, frames) trainable temporal mixing.
    pub temporal: Array2<T>,
    /// (c_in, c_out) channel projection.
    pub channel: Array2<T>,
    /// (c_out) bias.
    pub bias: Array1<T>,
    pub activation: Activation,
    /// Hard adjacency mask applied multiplicatively to `spatial`.
    pub mask: Option<Array2<T>>,
}

/// Intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct StsCache<T: Real> {
    x_in: Array3<T>,
    y1: Array3<T>,
    y2: Array3<T>,
    y3: Array3<T>,
}

impl<T: Real> StsLayer<T> {
    pub fn frames(&self) -> usize {
        self.temporal.nrows()
    }

    pub fn joints(&self) -> usize {
        self.spatial.nrows()
    }

    pub fn c_in(&self) -> usize {
        self.channel.nrows()
    }

    pub fn c_out(&self) -> usize {
        self.channel.ncols()
    }

    fn effective_spatial(&self) -> Array2<T> {
        match &self.mask {
            Some(m) => &self.spatial * m,
            None => self.spatial.clone(),
        }
    }

    pub fn forward(&self, x: &Array3<T>) -> Result<(Array3<T>, StsCache<T>)> {
        let (f, j, c) = x.dim();
        if f != self.frames() || j != self.joints() || c != self.c_in() {
            return Err(Error::shape(format!(
                "layer expects ({}, {}, {}), got {:?}",
                self.frames(),
                self.joints(),
                self.c_in(),
                x.dim()
            )));
        }
        let s = self.effective_spatial();

        // Spatial: y1[f] = S x[f].
        let mut y1 = Array3::zeros((f, j, c));
        for fi in 0..f {
            let xf = x.index_axis(Axis(0), fi);
            y1.index_axis_mut(Axis(0), fi).assign(&s.dot(&xf));
        }

        // Temporal: y2 = M y1 over the frame axis.
        let y1_flat = y1
            .view()
            .into_shape_with_order((f, j * c))
            .expect("contiguous");
        let y2_flat = self.temporal.dot(&y1_flat);
        let y2 = y2_flat
            .into_shape_with_order((f, j, c))
            .expect("contiguous");

        // Channel projection plus bias.
        let y2_rows = y2
            .view()
            .into_shape_with_order((f * j, c))
            .expect("contiguous");
        let mut y3_rows = y2_rows.dot(&self.channel);
        for mut row in y3_rows.rows_mut() {
            row += &self.bias;
        }
        let y3 = y3_rows
            .into_shape_with_order((f, j, self.c_out()))
            .expect("contiguous");

        let out = y3.mapv(|v| self.activation.apply(v));
        Ok((
            out,
            StsCache {
                x_in: x.clone(),
                y1,
                y2,
                y3,
            },
        ))
    }

    /// Gradients for this layer plus the gradient w.r.t. its input.
    pub fn backward(&self, cache: &StsCache<T>, d_out: &Array3<T>) -> (Array3<T>, StsLayer<T>) {
        let (f, j, c_in) = cache.x_in.dim();
        let c_out = self.c_out();

        let d3 = ndarray::Zip::from(d_out)
            .and(&cache.y3)
            .map_collect(|&g, &pre| g * self.activation.grad(pre));

        // Channel projection.
        let d3_rows = d3
            .view()
            .into_shape_with_order((f * j, c_out))
            .expect("contiguous");
        let y2_rows = cache
            .y2
            .view()
            .into_shape_with_order((f * j, c_in))
            .expect("contiguous");
        let d_channel = y2_rows.t().dot(&d3_rows);
        let d_bias = d3_rows.sum_axis(Axis(0));
        let d2_rows = d3_rows.dot(&self.channel.t());
        let d2 = d2_rows
            .into_shape_with_order((f, j, c_in))
            .expect("contiguous");

        // Temporal mixing.
        let d2_flat = d2
            .view()
            .into_shape_with_order((f, j * c_in))
            .expect("contiguous");
        let y1_flat = cache
            .y1
            .view()
            .into_shape_with_order((f, j * c_in))
            .expect("contiguous");
        let d_temporal = d2_flat.dot(&y1_flat.t());
        let d1_flat = self.temporal.t().dot(&d2_flat);
        let d1 = d1_flat
            .into_shape_with_order((f, j, c_in))
            .expect("contiguous");

        // Spatial mixing.
        let s = self.effective_spatial();
        let mut d_spatial = Array2::zeros((j, j));
        let mut dx = Array3::zeros((f, j, c_in));
        for fi in 0..f {
            let d1f = d1.index_axis(Axis(0), fi);
            let xf = cache.x_in.index_axis(Axis(0), fi);
            d_spatial = d_spatial + d1f.dot(&xf.t());
            dx.index_axis_mut(Axis(0), fi).assign(&s.t().dot(&d1f));
        }
        if let Some(m) = &self.mask {
            d_spatial = d_spatial * m;
        }

        let grads = StsLayer {
            spatial: d_spatial,
            temporal: d_temporal,
            channel: d_channel,
            bias: d_bias,
            activation: self.activation,
            mask: None,
        };
        (dx, grads)
    }

    pub fn zeros_like(&self) -> StsLayer<T> {
        StsLayer {
            spatial: Array2::zeros(self.spatial.dim()),
            temporal: Array2::zeros(self.temporal.dim()),
            channel: Array2::zeros(self.channel.dim()),
            bias: Array1::zeros(self.bias.dim()),
            activation: self.activation,
            mask: None,
        }
    }

    fn layout(&self, prefix: &str, out: &mut Vec<(String, usize)>) {
        out.push((format!("{prefix}.spatial"), self.spatial.len()));
        out.push((format!("{prefix}.temporal"), self.temporal.len()));
        out.push((format!("{prefix}.channel"), self.channel.len()));
        out.push((format!("{prefix}.bias"), self.bias.len()));
    }

    fn write_flat(&self, out: &mut Vec<T>) {
        out.extend(self.spatial.iter().copied());
        out.extend(self.temporal.iter().copied());
        out.extend(self.channel.iter().copied());
        out.extend(self.bias.iter().copied());
    }

    fn read_flat(&mut self, data: &[T], pos: &mut usize) {
        for v in self
            .spatial
            .iter_mut()
            .chain(self.temporal.iter_mut())
            .chain(self.channel.iter_mut())
            .chain(self.bias.iter_mut())
        {
            *v = data[*pos];
            *pos += 1;
        }
    }

    /// Fan-in-scaled random initialization; spatial mixing starts from the
    /// normalized skeleton adjacency, temporal mixing near identity.
    fn init(
        frames: usize,
        joints: usize,
        c_in: usize,
        c_out: usize,
        activation: Activation,
        spatial_base: &Array2<T>,
        mask: Option<Array2<T>>,
        rng: &mut Prng,
    ) -> StsLayer<T> {
        let noise = |rng: &mut Prng, scale: f64| T::c((rng.uniform() * 2.0 - 1.0) * scale);
        let mut spatial = spatial_base.clone();
        for v in spatial.iter_mut() {
            *v += noise(rng, 0.01);
        }
        if let Some(m) = &mask {
            spatial = spatial * m;
        }
        let mut temporal = Array2::eye(frames);
        for v in temporal.iter_mut() {
            *v += noise(rng, 0.01);
        }
        let bound = (1.0 / c_in as f64).sqrt();
        let channel = Array2::from_shape_fn((c_in, c_out), |_| noise(rng, bound));
        let bias = Array1::zeros(c_out);
        let _ = joints;
        StsLayer {
            spatial,
            temporal,
            channel,
            bias,
            activation,
            mask,
        }
    }
}

/// Per-layer linear projection of the motion-temporal conditioning signal
/// onto the layer's input channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CondProj<T: Real> {
    /// (c_in, cond_width).
    pub weight: Array2<T>,
    /// (c_in).
    pub bias: Array1<T>,
}

impl<T: Real> CondProj<T> {
    fn init(c_in: usize, cond_width: usize, rng: &mut Prng) -> CondProj<T> {
        let bound = (1.0 / cond_width as f64).sqrt();
        CondProj {
            weight: Array2::from_shape_fn((c_in, cond_width), |_| {
                T::c((rng.uniform() * 2.0 - 1.0) * bound)
            }),
            bias: Array1::zeros(c_in),
        }
    }

    pub fn forward(&self, cond: &Array1<T>) -> Array1<T> {
        self.weight.dot(cond) + &self.bias
    }

    /// Returns (own grads, gradient w.r.t. the conditioning signal).
    pub fn backward(&self, cond: &Array1<T>, d_inj: &Array1<T>) -> (CondProj<T>, Array1<T>) {
        let d_weight =
            Array2::from_shape_fn(self.weight.dim(), |(i, w)| d_inj[i] * cond[w]);
        let d_cond = self.weight.t().dot(d_inj);
        (
            CondProj {
                weight: d_weight,
                bias: d_inj.clone(),
            },
            d_cond,
        )
    }

    fn zeros_like(&self) -> CondProj<T> {
        CondProj {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.dim()),
        }
    }

    fn layout(&self, prefix: &str, out: &mut Vec<(String, usize)>) {
        out.push((format!("{prefix}.cond_weight"), self.weight.len()));
        out.push((format!("{prefix}.cond_bias"), self.bias.len()));
    }

    fn write_flat(&self, out: &mut Vec<T>) {
        out.extend(self.weight.iter().copied());
        out.extend(self.bias.iter().copied());
    }

    fn read_flat(&mut self, data: &[T], pos: &mut usize) {
        for v in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            *v = data[*pos];
            *pos += 1;
        }
    }
}

/// Embedding of the diffusion timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub enum TimestepEmbed<T: Real> {
    /// Fixed sinusoidal code; no trainable parameters.
    Sinusoidal { width: usize },
    /// One trainable row per timestep.
    Learned { table: Array2<T> },
}

impl<T: Real> TimestepEmbed<T> {
    pub fn width(&self) -> usize {
        match self {
            TimestepEmbed::Sinusoidal { width } => *width,
            TimestepEmbed::Learned { table } => table.ncols(),
        }
    }

    pub fn embed(&self, t: usize) -> Array1<T> {
        match self {
            TimestepEmbed::Sinusoidal { width } => {
                let half = width / 2;
                let mut e = Array1::zeros(*width);
                for i in 0..half {
                    let freq = (10_000.0f64).powf(-(i as f64) / half as f64);
                    let arg = t as f64 * freq;
                    e[2 * i] = T::c(arg.sin());
                    e[2 * i + 1] = T::c(arg.cos());
                }
                e
            }
            TimestepEmbed::Learned { table } => table.row(t - 1).to_owned(),
        }
    }
}

pub(crate) fn uniform_init<T: Real>(dim: (usize, usize), bound: f64, rng: &mut Prng) -> Array2<T> {
    Array2::from_shape_fn(dim, |_| T::c((rng.uniform() * 2.0 - 1.0) * bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion_data::Skeleton;

    fn toy_layer(seed: u64, activation: Activation) -> StsLayer<f64> {
        let skel = Skeleton::star(4);
        let mut rng = Prng::new(seed);
        StsLayer::init(
            3,
            4,
            2,
            5,
            activation,
            &skel.normalized_adjacency(),
            None,
            &mut rng,
        )
    }

    fn toy_input(seed: u64, dim: (usize, usize, usize)) -> Array3<f64> {
        let mut rng = Prng::new(seed);
        Array3::from_shape_vec(
            dim,
            (0..dim.0 * dim.1 * dim.2).map(|_| rng.normal()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn forward_shape_and_determinism() {
        let layer = toy_layer(1, Activation::Silu);
        let x = toy_input(2, (3, 4, 2));
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.dim(), (3, 4, 5));
        let (y2, _) = layer.forward(&x).unwrap();
        assert_eq!(y, y2);
        assert!(layer.forward(&toy_input(2, (3, 4, 3))).is_err());
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        for act in [Activation::Silu, Activation::Tanh, Activation::Identity] {
            let mut layer = toy_layer(3, act);
            let x = toy_input(4, (3, 4, 2));
            let target = toy_input(5, (3, 4, 5));
            // Loss: 0.5 * sum((y - target)^2).
            let loss = |l: &StsLayer<f64>, x: &Array3<f64>| -> f64 {
                let (y, _) = l.forward(x).unwrap();
                y.iter()
                    .zip(target.iter())
                    .map(|(a, b)| 0.5 * (a - b) * (a - b))
                    .sum()
            };
            let (y, cache) = layer.forward(&x).unwrap();
            let d_out = &y - &target;
            let (dx, grads) = layer.backward(&cache, &d_out);

            // Parameter gradients.
            let mut flat = Vec::new();
            layer.write_flat(&mut flat);
            let mut gflat = Vec::new();
            grads.write_flat(&mut gflat);
            let h = 1e-6;
            for i in 0..flat.len() {
                let mut plus = flat.clone();
                plus[i] += h;
                let mut minus = flat.clone();
                minus[i] -= h;
                let mut pos = 0;
                layer.read_flat(&plus, &mut pos);
                let lp = loss(&layer, &x);
                pos = 0;
                layer.read_flat(&minus, &mut pos);
                let lm = loss(&layer, &x);
                pos = 0;
                layer.read_flat(&flat, &mut pos);
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (gflat[i] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                    "{act:?} param {i}: analytic {} fd {}",
                    gflat[i],
                    fd
                );
            }

            // Input gradient.
            let h = 1e-6;
            for idx in [(0, 0, 0), (1, 2, 1), (2, 3, 0)] {
                let mut xp = x.clone();
                xp[idx] += h;
                let mut xm = x.clone();
                xm[idx] -= h;
                let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
                assert!(
                    (dx[idx] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                    "{act:?} input {idx:?}: analytic {} fd {}",
                    dx[idx],
                    fd
                );
            }
        }
    }

    #[test]
    fn hard_mask_zeroes_non_adjacent_contributions() {
        let skel = Skeleton::star(4);
        let mut rng = Prng::new(8);
        let layer = StsLayer::<f64>::init(
            3,
            4,
            2,
            2,
            Activation::Silu,
            &skel.normalized_adjacency(),
            Some(skel.adjacency::<f64>()), // self-loops disabled
            &mut rng,
        );
        let x = toy_input(9, (3, 4, 2));
        let (y, _) = layer.forward(&x).unwrap();
        // Joints 1 and 2 are not adjacent in a star; perturbing that
        // spatial weight must not change the output.
        let mut perturbed = layer.clone();
        perturbed.spatial[(1, 2)] += 123.0;
        perturbed.spatial[(1, 1)] += 123.0; // self loop also masked out
        let (y2, _) = perturbed.forward(&x).unwrap();
        assert_eq!(y, y2);
        // An adjacent weight does change it.
        let mut adj = layer.clone();
        adj.spatial[(0, 1)] += 0.5;
        let (y3, _) = adj.forward(&x).unwrap();
        assert_ne!(y, y3);
    }

    #[test]
    fn cond_proj_gradients_match_fd() {
        let mut rng = Prng::new(11);
        let proj = CondProj::<f64>::init(3, 4, &mut rng);
        let cond =
            Array1::from_vec((0..4).map(|i| 0.3 * (i as f64) - 0.5).collect::<Vec<f64>>());
        let target = Array1::from_vec(vec![0.2, -0.4, 0.9]);
        let loss = |p: &CondProj<f64>, c: &Array1<f64>| -> f64 {
            let y = p.forward(c);
            y.iter()
                .zip(target.iter())
                .map(|(a, b)| 0.5 * (a - b) * (a - b))
                .sum()
        };
        let y = proj.forward(&cond);
        let d_inj = &y - &target;
        let (grads, d_cond) = proj.backward(&cond, &d_inj);
        let h = 1e-6;
        for (r, c) in [(0, 0), (1, 3), (2, 1)] {
            let mut p = proj.clone();
            p.weight[(r, c)] += h;
            let lp = loss(&p, &cond);
            p.weight[(r, c)] -= 2.0 * h;
            let lm = loss(&p, &cond);
            let fd = (lp - lm) / (2.0 * h);
            assert!((grads.weight[(r, c)] - fd).abs() < 1e-6);
        }
        for i in 0..4 {
            let mut cp = cond.clone();
            cp[i] += h;
            let mut cm = cond.clone();
            cm[i] -= h;
            let fd = (loss(&proj, &cp) - loss(&proj, &cm)) / (2.0 * h);
            assert!((d_cond[i] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn sinusoidal_embeddings_distinct_per_timestep() {
        let emb = TimestepEmbed::<f64>::Sinusoidal { width: 8 };
        let codes: Vec<Array1<f64>> = (1..=10).map(|t| emb.embed(t)).collect();
        for i in 0..codes.len() {
            for j in (i + 1)..codes.len() {
                let dist: f64 = codes[i]
                    .iter()
                    .zip(codes[j].iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                assert!(dist > 1e-6, "t={} and t={} collide", i + 1, j + 1);
            }
        }
    }
}
