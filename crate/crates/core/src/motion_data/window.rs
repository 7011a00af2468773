//! Sliding-window extraction and the corruption-mask strategies.

use super::{MotionWindow, PoseTrack, SplitKind, SplitStrategy};
use crate::error::{Error, Result};
use crate::rng::{hash_str, Prng};
use crate::scalar::Real;
use ndarray::Array3;

/// Corruption mask of length n with exactly n - k true (target) entries.
pub fn build_mask(
    strategy: SplitStrategy,
    n: usize,
    k: usize,
    scene_id: &str,
    actor_id: &str,
    start_frame: u64,
) -> Vec<bool> {
    let mut mask = vec![false; n];
    match strategy.kind {
        SplitKind::Forecasting => {
            for m in mask.iter_mut().skip(k) {
                *m = true;
            }
        }
        SplitKind::InBetween => {
            // Conditioning frames bracket a central corrupted block; the
            // first and last frames always stay clean.
            let lead = k.div_ceil(2);
            for m in mask.iter_mut().take(n - (k - lead)).skip(lead) {
                *m = true;
            }
        }
        SplitKind::RandomImputation => {
            // Deterministic per window: the draw depends only on the
            // strategy seed and the window identity, not on enumeration
            // order.
            let tag = hash_str(scene_id) ^ hash_str(actor_id).rotate_left(17) ^ start_frame;
            let mut rng = Prng::new(strategy.seed).derive(tag);
            for i in rng.sample_indices(n, n - k) {
                mask[i] = true;
            }
        }
    }
    mask
}

/// Extract every N-frame window of a track.
///
/// Windows never span a frame-index gap; a track shorter than N yields an
/// empty list. When `min_conf` is given, a window is dropped if any joint
/// falls below that confidence in at least half of the window's frames.
pub fn slide_windows<T: Real>(
    track: &PoseTrack<T>,
    n: usize,
    stride: usize,
    strategy: SplitStrategy,
    k: usize,
    min_conf: Option<T>,
) -> Result<Vec<MotionWindow<T>>> {
    if n < 2 {
        return Err(Error::config(format!("window size {n} must be >= 2")));
    }
    if k == 0 || k >= n {
        return Err(Error::config(format!(
            "conditioning count k = {k} must satisfy 1 <= k < N = {n}"
        )));
    }
    if stride < 1 {
        return Err(Error::config("stride must be >= 1"));
    }
    let joints = match track.joint_count() {
        Some(j) => j,
        None => return Ok(Vec::new()),
    };

    let mut out = Vec::new();
    for run in track.contiguous_runs() {
        let len = run.len();
        if len < n {
            continue;
        }
        let mut start = run.start;
        while start + n <= run.end {
            let frames = &track.frames[start..start + n];
            if let Some(floor) = min_conf {
                if joint_missing_half(frames, joints, floor) {
                    start += stride;
                    continue;
                }
            }
            let mut poses = Array3::zeros((n, joints, 2));
            for (row, f) in frames.iter().enumerate() {
                poses
                    .index_axis_mut(ndarray::Axis(0), row)
                    .assign(&f.pose.joints);
            }
            let start_frame = frames[0].frame_index;
            let mask = build_mask(strategy, n, k, &track.scene_id, &track.actor_id, start_frame);
            out.push(MotionWindow {
                scene_id: track.scene_id.clone(),
                actor_id: track.actor_id.clone(),
                frame_indices: frames.iter().map(|f| f.frame_index).collect(),
                poses,
                mask,
                split_k: k,
            });
            start += stride;
        }
    }
    Ok(out)
}

fn joint_missing_half<T: Real>(
    frames: &[super::TrackFrame<T>],
    joints: usize,
    floor: T,
) -> bool {
    let n = frames.len();
    for j in 0..joints {
        let missing = frames
            .iter()
            .filter(|f| match &f.confidence {
                Some(c) => c[j] < floor,
                None => false,
            })
            .count();
        if 2 * missing >= n {
            return true;
        }
    }
    false
}
