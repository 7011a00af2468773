//! Past-motion encoder and its symmetric decoder.
//!
//! The encoder runs the clean past frames through graph-convolution
//! layers and mean-pools over frames and joints into the embedding h;
//! the decoder broadcasts h back over the past extent and reconstructs
//! the coordinates.

use super::{Activation, StsCache, StsLayer};
use crate::error::Result;
use crate::motion_data::Skeleton;
use crate::rng::Prng;
use crate::scalar::Real;
use ndarray::{Array1, Array3, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PoolingEncoder<T: Real> {
    pub layers: Vec<StsLayer<T>>,
}

pub struct EncoderCache<T: Real> {
    layer_caches: Vec<StsCache<T>>,
    pooled_dim: (usize, usize, usize),
}

impl<T: Real> PoolingEncoder<T> {
    /// Ladder [c, widths.., cond_width]; every layer keeps the past
    /// extent, the final mean pool collapses it.
    pub fn init(
        frames: usize,
        skeleton: &Skeleton,
        widths: &[usize],
        activation: Activation,
        rng: &mut Prng,
    ) -> PoolingEncoder<T> {
        let base = skeleton.normalized_adjacency::<T>();
        let layers = widths
            .windows(2)
            .map(|w| {
                StsLayer::init(
                    frames,
                    skeleton.joint_count,
                    w[0],
                    w[1],
                    activation,
                    &base,
                    None,
                    rng,
                )
            })
            .collect();
        PoolingEncoder { layers }
    }

    pub fn embedding_width(&self) -> usize {
        self.layers.last().map(|l| l.c_out()).unwrap_or(0)
    }

    pub fn forward(&self, past: &Array3<T>) -> Result<(Array1<T>, EncoderCache<T>)> {
        let mut cur = past.clone();
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(&cur)?;
            layer_caches.push(cache);
            cur = out;
        }
        let dim = cur.dim();
        let scale = T::one() / T::from_usize(dim.0 * dim.1).unwrap();
        let mut h = Array1::zeros(dim.2);
        for lane in cur.lanes(Axis(2)) {
            h += &lane;
        }
        h.mapv_inplace(|v| v * scale);
        Ok((
            h,
            EncoderCache {
                layer_caches,
                pooled_dim: dim,
            },
        ))
    }

    /// Parameter gradients given the gradient w.r.t. the embedding.
    pub fn backward(&self, cache: &EncoderCache<T>, d_h: &Array1<T>) -> PoolingEncoder<T> {
        let (f, j, c) = cache.pooled_dim;
        let scale = T::one() / T::from_usize(f * j).unwrap();
        let mut d_cur = Array3::zeros((f, j, c));
        for mut lane in d_cur.lanes_mut(Axis(2)) {
            for (dst, &g) in lane.iter_mut().zip(d_h.iter()) {
                *dst = g * scale;
            }
        }
        let mut grads: Vec<StsLayer<T>> = self.layers.iter().map(|l| l.zeros_like()).collect();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, g) = layer.backward(&cache.layer_caches[i], &d_cur);
            grads[i] = g;
            d_cur = dx;
        }
        PoolingEncoder { layers: grads }
    }

    pub fn layout(&self, prefix: &str) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.layout(&format!("{prefix}.layer{i}"), &mut out);
        }
        out
    }

    pub fn write_flat(&self, out: &mut Vec<T>) {
        for layer in &self.layers {
            layer.write_flat(out);
        }
    }

    pub fn read_flat(&mut self, data: &[T], pos: &mut usize) {
        for layer in &mut self.layers {
            layer.read_flat(data, pos);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BroadcastDecoder<T: Real> {
    pub layers: Vec<StsLayer<T>>,
    pub frames: usize,
    pub joints: usize,
}

pub struct DecoderCache<T: Real> {
    layer_caches: Vec<StsCache<T>>,
}

impl<T: Real> BroadcastDecoder<T> {
    /// Mirror of the encoder: ladder [cond_width, widths.., c]; the last
    /// layer is linear so coordinates are unbounded.
    pub fn init(
        frames: usize,
        skeleton: &Skeleton,
        widths: &[usize],
        activation: Activation,
        rng: &mut Prng,
    ) -> BroadcastDecoder<T> {
        let base = skeleton.normalized_adjacency::<T>();
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { activation };
                StsLayer::init(
                    frames,
                    skeleton.joint_count,
                    w[0],
                    w[1],
                    act,
                    &base,
                    None,
                    rng,
                )
            })
            .collect();
        BroadcastDecoder {
            layers,
            frames,
            joints: skeleton.joint_count,
        }
    }

    pub fn forward(&self, h: &Array1<T>) -> Result<(Array3<T>, DecoderCache<T>)> {
        let mut cur = Array3::zeros((self.frames, self.joints, h.len()));
        for mut lane in cur.lanes_mut(Axis(2)) {
            lane.assign(h);
        }
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(&cur)?;
            layer_caches.push(cache);
            cur = out;
        }
        Ok((cur, DecoderCache { layer_caches }))
    }

    /// Returns (parameter gradients, gradient w.r.t. h).
    pub fn backward(
        &self,
        cache: &DecoderCache<T>,
        d_out: &Array3<T>,
    ) -> (BroadcastDecoder<T>, Array1<T>) {
        let mut d_cur = d_out.clone();
        let mut grads: Vec<StsLayer<T>> = self.layers.iter().map(|l| l.zeros_like()).collect();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, g) = layer.backward(&cache.layer_caches[i], &d_cur);
            grads[i] = g;
            d_cur = dx;
        }
        let width = d_cur.dim().2;
        let mut d_h = Array1::zeros(width);
        for lane in d_cur.lanes(Axis(2)) {
            d_h += &lane;
        }
        (
            BroadcastDecoder {
                layers: grads,
                frames: self.frames,
                joints: self.joints,
            },
            d_h,
        )
    }

    pub fn layout(&self, prefix: &str) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.layout(&format!("{prefix}.layer{i}"), &mut out);
        }
        out
    }

    pub fn write_flat(&self, out: &mut Vec<T>) {
        for layer in &self.layers {
            layer.write_flat(out);
        }
    }

    pub fn read_flat(&mut self, data: &[T], pos: &mut usize) {
        for layer in &mut self.layers {
            layer.read_flat(data, pos);
        }
    }
}
