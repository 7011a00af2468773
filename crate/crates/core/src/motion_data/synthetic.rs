//! Synthetic gait generator with labeled anomaly injection, for
//! desk-scale training and benchmarking without external datasets.

use super::{FrameLabel, PoseGraph, PoseTrack, Skeleton, TrackFrame};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Prng};
use crate::scalar::Real;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Repeat the previous pose for `magnitude` frames.
    Freeze,
    /// Displace the whole pose by a random offset of length `magnitude`.
    Teleport,
    /// Play the motion backwards for `magnitude` frames.
    Reverse,
    /// Multiply the inter-frame displacement by `magnitude` for one frame.
    SpeedBurst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyInjector {
    pub kind: AnomalyKind,
    /// Expected fraction of frames the injector perturbs.
    pub rate: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitParams {
    /// Limb swing amplitude.
    pub amplitude: f64,
    /// Swing cycles per frame.
    pub frequency: f64,
    /// Standard deviation of the per-actor phase offset.
    pub phase_jitter: f64,
    /// Standard deviation of the per-frame coordinate noise.
    pub step_noise: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        GaitParams {
            amplitude: 0.6,
            frequency: 0.06,
            phase_jitter: 0.5,
            step_noise: 0.015,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_actors: usize,
    pub n_frames: usize,
    pub joint_count: usize,
    pub gait: GaitParams,
    pub anomalies: Vec<AnomalyInjector>,
    pub scene_id: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            n_actors: 3,
            n_frames: 600,
            joint_count: 5,
            gait: GaitParams::default(),
            anomalies: Vec::new(),
            scene_id: "synth-0".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_actors == 0 || self.n_frames == 0 {
            return Err(Error::config("need at least one actor and one frame"));
        }
        if self.joint_count < 2 {
            return Err(Error::config("synthetic skeleton needs >= 2 joints"));
        }
        for inj in &self.anomalies {
            if !(0.0..=1.0).contains(&inj.rate) {
                return Err(Error::config(format!(
                    "anomaly rate {} outside [0, 1]",
                    inj.rate
                )));
            }
            if !inj.magnitude.is_finite() || inj.magnitude < 0.0 {
                return Err(Error::config(format!(
                    "anomaly magnitude {} invalid",
                    inj.magnitude
                )));
            }
        }
        Ok(())
    }

    pub fn skeleton(&self) -> Skeleton {
        Skeleton::star(self.joint_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset<T: Real> {
    pub skeleton: Skeleton,
    pub tracks: Vec<PoseTrack<T>>,
    pub labels: Vec<FrameLabel>,
}

/// Deterministic gait synthesis: smooth harmonic limb motion around a
/// drifting root, with optional labeled anomaly perturbations.
pub fn generate_synthetic<T: Real>(spec: &SyntheticSpec) -> Result<SyntheticDataset<T>> {
    spec.validate()?;
    let skeleton = spec.skeleton();
    let mut tracks = Vec::with_capacity(spec.n_actors);
    let mut anomalous_frames: BTreeSet<u64> = BTreeSet::new();

    for actor in 0..spec.n_actors {
        let mut rng = Prng::new(derive_seed(spec.seed, actor as u64));
        let clean = clean_trajectory(spec, &mut rng);
        let mut posed = clean.clone();

        for (which, inj) in spec.anomalies.iter().enumerate() {
            let mut inj_rng =
                Prng::new(derive_seed(spec.seed, 0x1000 + (actor as u64) * 64 + which as u64));
            apply_injector(inj, &clean, &mut posed, &mut inj_rng, &mut anomalous_frames);
        }

        let frames = posed
            .into_iter()
            .enumerate()
            .map(|(f, joints)| TrackFrame {
                frame_index: f as u64,
                pose: PoseGraph {
                    joints: joints.mapv(T::c),
                },
                confidence: None,
            })
            .collect();
        tracks.push(PoseTrack {
            scene_id: spec.scene_id.clone(),
            actor_id: format!("actor-{actor}"),
            frames,
        });
    }

    let labels = (0..spec.n_frames as u64)
        .map(|f| FrameLabel {
            scene_id: spec.scene_id.clone(),
            frame_index: f,
            label: anomalous_frames.contains(&f),
        })
        .collect();

    Ok(SyntheticDataset {
        skeleton,
        tracks,
        labels,
    })
}

/// Paired train/test datasets for the desk benchmark: the training half
/// is the same gait population with anomaly injectors removed and a
/// derived seed; the test half is the spec as given.
pub fn synthetic_benchmark<T: Real>(
    spec: &SyntheticSpec,
) -> Result<(
    super::PoseDataset<T>,
    super::PoseDataset<T>,
)> {
    let mut train_spec = spec.clone();
    train_spec.anomalies.clear();
    train_spec.seed = derive_seed(spec.seed, 0x7261);
    train_spec.scene_id = format!("{}-train", spec.scene_id);
    let train = generate_synthetic::<T>(&train_spec)?;
    let test = generate_synthetic::<T>(spec)?;
    let wrap = |ds: SyntheticDataset<T>| super::PoseDataset {
        skeleton: ds.skeleton,
        tracks: ds.tracks,
        labels: Some(ds.labels),
        conf_floor: 0.1,
    };
    Ok((wrap(train), wrap(test)))
}

fn clean_trajectory(spec: &SyntheticSpec, rng: &mut Prng) -> Vec<Array2<f64>> {
    let g = &spec.gait;
    let j = spec.joint_count;

    // Per-actor layout and dynamics.
    let start_x = rng.uniform() * 4.0 - 2.0;
    let start_y = rng.uniform() * 4.0 - 2.0;
    let heading = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
    let speed = 0.02 + 0.01 * rng.uniform();
    let actor_phase = rng.normal() * g.phase_jitter;

    // Fixed radial offsets for the non-root joints.
    let offsets: Vec<(f64, f64)> = (1..j)
        .map(|i| {
            let ang = TAU * (i as f64) / ((j - 1) as f64);
            (ang.cos(), ang.sin())
        })
        .collect();

    (0..spec.n_frames)
        .map(|f| {
            let t = f as f64;
            let root_x = start_x + heading * speed * t;
            let root_y = start_y + 0.05 * (TAU * 2.0 * g.frequency * t).sin();
            let mut joints = Array2::zeros((j, 2));
            joints[(0, 0)] = root_x + rng.normal() * g.step_noise;
            joints[(0, 1)] = root_y + rng.normal() * g.step_noise;
            for (i, &(ox, oy)) in offsets.iter().enumerate() {
                // Limbs swing in anti-phase pairs.
                let phase = actor_phase + std::f64::consts::PI * (i as f64);
                let swing = g.amplitude * (TAU * g.frequency * t + phase).sin();
                joints[(i + 1, 0)] = root_x + ox + swing * oy + rng.normal() * g.step_noise;
                joints[(i + 1, 1)] = root_y + oy - swing * ox + rng.normal() * g.step_noise;
            }
            joints
        })
        .collect()
}

fn apply_injector(
    inj: &AnomalyInjector,
    clean: &[Array2<f64>],
    posed: &mut [Array2<f64>],
    rng: &mut Prng,
    labels: &mut BTreeSet<u64>,
) {
    let n = posed.len();
    let duration = match inj.kind {
        AnomalyKind::Freeze | AnomalyKind::Reverse => (inj.magnitude.round() as usize).max(1),
        AnomalyKind::Teleport | AnomalyKind::SpeedBurst => 1,
    };
    let start_prob = inj.rate / duration as f64;
    let mut f = 1usize;
    while f < n {
        if rng.uniform() >= start_prob {
            f += 1;
            continue;
        }
        let span = duration.min(n - f);
        match inj.kind {
            AnomalyKind::Freeze => {
                for i in 0..span {
                    posed[f + i] = posed[f - 1].clone();
                    labels.insert((f + i) as u64);
                }
            }
            AnomalyKind::Teleport => {
                let ang = TAU * rng.uniform();
                let (dx, dy) = (inj.magnitude * ang.cos(), inj.magnitude * ang.sin());
                for v in posed[f].column_mut(0).iter_mut() {
                    *v += dx;
                }
                for v in posed[f].column_mut(1).iter_mut() {
                    *v += dy;
                }
                labels.insert(f as u64);
            }
            AnomalyKind::Reverse => {
                for i in 0..span {
                    let src = f.saturating_sub(1 + i);
                    posed[f + i] = clean[src].clone();
                    labels.insert((f + i) as u64);
                }
            }
            AnomalyKind::SpeedBurst => {
                let prev = posed[f - 1].clone();
                let delta = &clean[f] - &clean[f - 1];
                posed[f] = &prev + &delta.mapv(|v| v * inj.magnitude);
                labels.insert(f as u64);
            }
        }
        f += span;
    }
}
