//! Inference-time scoring: generate m futures per window, reduce their
//! smoothed reconstruction errors with an aggregation statistic, and
//! assemble per-frame anomaly scores (mean over covering windows per
//! actor, maximum across actors).

use crate::conditioning::{make_condition, ConditionedDenoiser};
use crate::diffusion::{mean_abs_residual, sample_future, smooth_loss, VarianceSchedule};
use crate::error::{Error, Result};
use crate::motion_data::{normalize_window, FrameLabel, MotionWindow, NormalizationRecord};
use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::training::Checkpoint;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

/// Reduction of the m per-generation errors into one window score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "q")]
pub enum AggregationStatistic {
    Min,
    Max,
    Mean,
    Median,
    /// Linear-interpolation (type-7) quantile, q in (0, 1).
    Quantile(f64),
}

impl AggregationStatistic {
    pub fn validate(&self) -> Result<()> {
        if let AggregationStatistic::Quantile(q) = self {
            if !(*q > 0.0 && *q < 1.0) {
                return Err(Error::config(format!("quantile q = {q} outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            AggregationStatistic::Min => "min".into(),
            AggregationStatistic::Max => "max".into(),
            AggregationStatistic::Mean => "mean".into(),
            AggregationStatistic::Median => "median".into(),
            AggregationStatistic::Quantile(q) => format!("q{q}"),
        }
    }
}

/// One window's generated futures and their scores.
#[derive(Debug, Clone)]
pub struct GenerationSet<T: Real> {
    pub scene_id: String,
    pub actor_id: String,
    /// All frame indices of the window.
    pub window_frames: Vec<u64>,
    /// Frame indices of the corrupted (scored) target frames.
    pub target_frames: Vec<u64>,
    /// Generated futures in normalized coordinates, one per generation.
    pub futures: Vec<Array3<T>>,
    /// Smoothed reconstruction error of each future against the true one.
    pub scores: Vec<T>,
    /// Transform that carried the window into the scoring frame.
    pub record: NormalizationRecord<T>,
}

/// Per-generation seed of generation `index` under a base window seed.
/// Scoring with m generations uses indices 0..m, so smaller-m runs are
/// prefixes of larger-m runs.
pub fn generation_seed(window_seed: u64, index: usize) -> u64 {
    derive_seed(window_seed, index as u64)
}

/// Generate m futures for one raw window and score each against the true
/// future, in the normalized coordinates used at training time.
pub fn score_window<T: Real>(
    ckpt: &Checkpoint<T>,
    window: &MotionWindow<T>,
    m: usize,
    seed: u64,
    allow_untrained: bool,
) -> Result<GenerationSet<T>> {
    if m < 1 {
        return Err(Error::config("need at least one generation (m >= 1)"));
    }
    if window.joint_count() != ckpt.skeleton.joint_count {
        return Err(Error::schema(format!(
            "window has {} joints, checkpoint expects {}",
            window.joint_count(),
            ckpt.skeleton.joint_count
        )));
    }
    if window.len() != ckpt.window_size || window.split_k != ckpt.condition_frames {
        return Err(Error::schema(format!(
            "window N = {}, k = {} vs checkpoint N = {}, k = {}",
            window.len(),
            window.split_k,
            ckpt.window_size,
            ckpt.condition_frames
        )));
    }
    if ckpt.state.step == 0 && !allow_untrained {
        return Err(Error::config(
            "checkpoint has no training steps; pass allow_untrained to score anyway",
        ));
    }

    let (norm, record) = normalize_window(window, ckpt.normalization, &ckpt.skeleton)?;
    let model = &ckpt.state.model;
    let past = norm.past();
    let cond = make_condition(model.strategy, &past, model.encoder.as_ref())?;
    let truth = norm.targets();
    let sched: VarianceSchedule<T> = ckpt.diffusion.build()?;
    let predictor = ConditionedDenoiser {
        model,
        condition: &cond,
    };

    let mut futures = Vec::with_capacity(m);
    let mut scores = Vec::with_capacity(m);
    for i in 0..m {
        let z = sample_future(&predictor, truth.dim(), &sched, generation_seed(seed, i))?;
        let s = smooth_loss(mean_abs_residual(&truth, &z)?)?;
        futures.push(z);
        scores.push(s);
    }
    Ok(GenerationSet {
        scene_id: window.scene_id.clone(),
        actor_id: window.actor_id.clone(),
        window_frames: window.frame_indices.clone(),
        target_frames: window.target_frame_indices(),
        futures,
        scores,
        record,
    })
}

/// The named statistic of a nonempty score set.
pub fn aggregate<T: Real>(scores: &[T], stat: AggregationStatistic) -> Result<T> {
    stat.validate()?;
    if scores.is_empty() {
        return Err(Error::domain("cannot aggregate an empty score set"));
    }
    let reduce_q = |q: f64| -> T {
        let mut sorted: Vec<T> = scores.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores are ordered"));
        let h = q * (sorted.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        let w = T::c(h - lo as f64);
        sorted[lo] + (sorted[hi] - sorted[lo]) * w
    };
    Ok(match stat {
        AggregationStatistic::Min => scores
            .iter()
            .copied()
            .fold(T::infinity(), |a, b| if b < a { b } else { a }),
        AggregationStatistic::Max => scores
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a }),
        AggregationStatistic::Mean => {
            scores.iter().copied().fold(T::zero(), |a, b| a + b)
                / T::from_usize(scores.len()).unwrap()
        }
        AggregationStatistic::Median => reduce_q(0.5),
        AggregationStatistic::Quantile(q) => reduce_q(q),
    })
}

/// Diversity ratio mean/min of the per-generation errors; `None` when the
/// minimum is zero (the ratio is undefined, not infinite).
pub fn diversity_rf<T: Real>(scores: &[T]) -> Result<Option<T>> {
    if scores.is_empty() {
        return Err(Error::domain("diversity of an empty score set"));
    }
    let min = aggregate(scores, AggregationStatistic::Min)?;
    if min <= T::zero() {
        return Ok(None);
    }
    let mean = aggregate(scores, AggregationStatistic::Mean)?;
    Ok(Some(mean / min))
}

/// Score of one evaluated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FrameScore<T: Real> {
    pub scene_id: String,
    pub frame_index: u64,
    pub score: T,
    /// Number of actors contributing windows to this frame; 0 marks a
    /// frame with no pose evidence (scored at the dataset minimum).
    pub n_actors: usize,
}

/// Per-frame anomaly scores with contribution counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AnomalyScoreSeries<T: Real> {
    pub frames: Vec<FrameScore<T>>,
}

impl<T: Real> AnomalyScoreSeries<T> {
    pub fn get(&self, scene_id: &str, frame_index: u64) -> Option<&FrameScore<T>> {
        self.frames
            .iter()
            .find(|f| f.scene_id == scene_id && f.frame_index == frame_index)
    }
}

/// Reduce window-level generation sets to per-frame scores.
///
/// Per actor, a frame's score is the mean of the aggregated scores of all
/// windows whose target span covers it; the frame score is the maximum
/// across actors. When `universe` is given (the labeled evaluation
/// frames), every universe frame appears in the output; frames with no
/// covering actor get the dataset-minimum score and `n_actors = 0`.
pub fn frame_scores<T: Real>(
    sets: &[GenerationSet<T>],
    stat: AggregationStatistic,
    universe: Option<&[(String, u64)]>,
) -> Result<AnomalyScoreSeries<T>> {
    // (scene, actor, frame) -> (sum of window aggregates, count).
    let mut per_actor: BTreeMap<(String, String, u64), (T, usize)> = BTreeMap::new();
    for set in sets {
        let agg = aggregate(&set.scores, stat)?;
        for &f in &set.target_frames {
            let entry = per_actor
                .entry((set.scene_id.clone(), set.actor_id.clone(), f))
                .or_insert((T::zero(), 0));
            entry.0 += agg;
            entry.1 += 1;
        }
    }

    // (scene, frame) -> max over actor means.
    let mut per_frame: BTreeMap<(String, u64), (T, usize)> = BTreeMap::new();
    for ((scene, _actor, frame), (sum, count)) in per_actor {
        let mean = sum / T::from_usize(count).unwrap();
        let entry = per_frame
            .entry((scene, frame))
            .or_insert((T::neg_infinity(), 0));
        if mean > entry.0 {
            entry.0 = mean;
        }
        entry.1 += 1;
    }

    let global_min = per_frame
        .values()
        .map(|(s, _)| *s)
        .fold(T::infinity(), |a, b| if b < a { b } else { a });
    let fallback = if global_min.is_finite() {
        global_min
    } else {
        T::zero()
    };

    let keys: BTreeSet<(String, u64)> = match universe {
        Some(u) => u.iter().cloned().collect(),
        None => per_frame.keys().cloned().collect(),
    };
    let frames = keys
        .into_iter()
        .map(|(scene_id, frame_index)| {
            match per_frame.get(&(scene_id.clone(), frame_index)) {
                Some(&(score, n_actors)) => FrameScore {
                    scene_id,
                    frame_index,
                    score,
                    n_actors,
                },
                None => FrameScore {
                    scene_id,
                    frame_index,
                    score: fallback,
                    n_actors: 0,
                },
            }
        })
        .collect();
    Ok(AnomalyScoreSeries { frames })
}

/// Write the per-frame scores as delimited records
/// (scene_id, frame_index, score, n_actors).
pub fn write_scores_csv<T: Real>(series: &AnomalyScoreSeries<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scene_id", "frame_index", "score", "n_actors"])?;
    for f in &series.frames {
        w.write_record([
            f.scene_id.as_str(),
            &f.frame_index.to_string(),
            &format!("{}", f.score),
            &f.n_actors.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Histogram of per-generation reconstruction errors split by the
/// ground-truth label of the window (anomalous when any window frame is
/// labeled anomalous).
pub fn write_error_histogram<T: Real>(
    sets: &[GenerationSet<T>],
    labels: &[FrameLabel],
    bins: usize,
    path: &Path,
) -> Result<()> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let anomalous: BTreeSet<(String, u64)> = labels
        .iter()
        .filter(|l| l.label)
        .map(|l| (l.scene_id.clone(), l.frame_index))
        .collect();
    let mut normal_scores = Vec::new();
    let mut anomalous_scores = Vec::new();
    for set in sets {
        let is_anomalous = set
            .window_frames
            .iter()
            .any(|f| anomalous.contains(&(set.scene_id.clone(), *f)));
        let bucket = if is_anomalous {
            &mut anomalous_scores
        } else {
            &mut normal_scores
        };
        bucket.extend(set.scores.iter().map(|s| s.to_f64_lossy()));
    }
    let hi = normal_scores
        .iter()
        .chain(anomalous_scores.iter())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-12);
    let width = hi / bins as f64;
    let mut counts = vec![[0usize; 2]; bins];
    for (col, scores) in [(0, &normal_scores), (1, &anomalous_scores)] {
        for &s in scores.iter() {
            let b = ((s / width) as usize).min(bins - 1);
            counts[b][col] += 1;
        }
    }
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "bin_lo,bin_hi,normal,anomalous")?;
    for (b, c) in counts.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{}",
            b as f64 * width,
            (b + 1) as f64 * width,
            c[0],
            c[1]
        )?;
    }
    Ok(())
}
