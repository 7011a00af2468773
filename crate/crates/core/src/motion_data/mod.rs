//! Pose tracks, sliding windows and the split strategies that decide
//! which frames are corrupted and which condition the diffusion.

mod io;
mod normalize;
mod synthetic;
mod window;

pub use io::{
    load_dataset, load_labels, load_tracks, save_labels, save_tracks, write_manifest,
    DatasetManifest, PoseDataset, TrackFormat,
};
pub use normalize::{denormalize, normalize_window, NormalizationMode, NormalizationRecord};
pub use synthetic::{
    generate_synthetic, synthetic_benchmark, AnomalyInjector, AnomalyKind, GaitParams,
    SyntheticDataset, SyntheticSpec,
};
pub use window::slide_windows;

use crate::error::{Error, Result};
use crate::scalar::Real;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Joint topology shared by every pose of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_count: usize,
    /// Undirected limb edges as joint-index pairs.
    pub edges: Vec<(usize, usize)>,
    /// Joints whose mean defines the root position for normalization.
    pub root_joints: Vec<usize>,
}

impl Skeleton {
    pub fn new(joint_count: usize, edges: Vec<(usize, usize)>, root_joints: Vec<usize>) -> Result<Self> {
        let s = Skeleton {
            joint_count,
            edges,
            root_joints,
        };
        s.validate()?;
        Ok(s)
    }

    /// The COCO 17-keypoint layout with its standard limb connectivity.
    pub fn coco17() -> Skeleton {
        let edges = vec![
            (15, 13),
            (13, 11),
            (16, 14),
            (14, 12),
            (11, 12),
            (5, 11),
            (6, 12),
            (5, 6),
            (5, 7),
            (6, 8),
            (7, 9),
            (8, 10),
            (1, 2),
            (0, 1),
            (0, 2),
            (1, 3),
            (2, 4),
            (3, 5),
            (4, 6),
        ];
        Skeleton {
            joint_count: 17,
            edges,
            root_joints: vec![11, 12],
        }
    }

    /// Star topology rooted at joint 0, used by the synthetic generator.
    pub fn star(joint_count: usize) -> Skeleton {
        Skeleton {
            joint_count,
            edges: (1..joint_count).map(|j| (0, j)).collect(),
            root_joints: vec![0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joint_count == 0 {
            return Err(Error::schema("skeleton needs at least one joint"));
        }
        for &(a, b) in &self.edges {
            if a == b {
                return Err(Error::schema(format!("self-loop edge ({a}, {b})")));
            }
            if a >= self.joint_count || b >= self.joint_count {
                return Err(Error::schema(format!(
                    "edge ({a}, {b}) outside joint range 0..{}",
                    self.joint_count
                )));
            }
        }
        for &r in &self.root_joints {
            if r >= self.joint_count {
                return Err(Error::schema(format!("root joint {r} out of range")));
            }
        }
        Ok(())
    }

    /// Symmetric binary adjacency with zero diagonal.
    pub fn adjacency<T: Real>(&self) -> Array2<T> {
        let j = self.joint_count;
        let mut a = Array2::zeros((j, j));
        for &(u, v) in &self.edges {
            a[(u, v)] = T::one();
            a[(v, u)] = T::one();
        }
        a
    }

    /// D^{-1/2} (A + I) D^{-1/2}, the usual graph-convolution operator.
    pub fn normalized_adjacency<T: Real>(&self) -> Array2<T> {
        let j = self.joint_count;
        let mut a = self.adjacency::<T>();
        for i in 0..j {
            a[(i, i)] = T::one();
        }
        let deg: Vec<T> = (0..j)
            .map(|i| (0..j).map(|k| a[(i, k)]).fold(T::zero(), |s, v| s + v))
            .collect();
        for r in 0..j {
            for c in 0..j {
                a[(r, c)] = a[(r, c)] / (deg[r] * deg[c]).sqrt();
            }
        }
        a
    }

    /// Binary mask (A + I) used by the hard-masked spatial mixing variant.
    pub fn adjacency_mask<T: Real>(&self) -> Array2<T> {
        let mut a = self.adjacency::<T>();
        for i in 0..self.joint_count {
            a[(i, i)] = T::one();
        }
        a
    }

    pub fn effective_root_joints(&self) -> Vec<usize> {
        if self.root_joints.is_empty() {
            (0..self.joint_count).collect()
        } else {
            self.root_joints.clone()
        }
    }
}

/// One observed pose: |J| image-plane joint coordinates.
///
/// The adjacency lives on the dataset [`Skeleton`]; every pose of a
/// dataset shares it.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph<T: Real> {
    /// (joints, 2) coordinates.
    pub joints: Array2<T>,
}

impl<T: Real> PoseGraph<T> {
    pub fn joint_count(&self) -> usize {
        self.joints.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.ncols() != 2 {
            return Err(Error::schema(format!(
                "pose coordinates must be 2-d, got {}",
                self.joints.ncols()
            )));
        }
        if self.joints.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema("non-finite joint coordinate"));
        }
        Ok(())
    }
}

/// A frame of one actor's track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame<T: Real> {
    pub frame_index: u64,
    pub pose: PoseGraph<T>,
    /// Per-joint detector confidence in [0, 1], when the source provides it.
    pub confidence: Option<Vec<T>>,
}

/// Time-ordered poses of a single actor in a single scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack<T: Real> {
    pub scene_id: String,
    pub actor_id: String,
    pub frames: Vec<TrackFrame<T>>,
}

impl<T: Real> PoseTrack<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> Option<usize> {
        self.frames.first().map(|f| f.pose.joint_count())
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.frames.windows(2) {
            if w[1].frame_index <= w[0].frame_index {
                return Err(Error::schema(format!(
                    "track {}/{}: frame indices not strictly increasing at {}",
                    self.scene_id, self.actor_id, w[1].frame_index
                )));
            }
        }
        let j = self.joint_count().unwrap_or(0);
        for f in &self.frames {
            f.pose.validate()?;
            if f.pose.joint_count() != j {
                return Err(Error::schema(format!(
                    "track {}/{}: joint count {} != {} at frame {}",
                    self.scene_id,
                    self.actor_id,
                    f.pose.joint_count(),
                    j,
                    f.frame_index
                )));
            }
            if let Some(c) = &f.confidence {
                if c.len() != j {
                    return Err(Error::schema(format!(
                        "track {}/{}: confidence length {} != {}",
                        self.scene_id,
                        self.actor_id,
                        c.len(),
                        j
                    )));
                }
            }
        }
        Ok(())
    }

    /// Maximal runs of consecutive frame indices, as ranges into `frames`.
    pub fn contiguous_runs(&self) -> Vec<std::ops::Range<usize>> {
        let mut runs = Vec::new();
        let mut start = 0usize;
        for i in 1..self.frames.len() {
            if self.frames[i].frame_index != self.frames[i - 1].frame_index + 1 {
                runs.push(start..i);
                start = i;
            }
        }
        if !self.frames.is_empty() {
            runs.push(start..self.frames.len());
        }
        runs
    }

    /// Frame-index gaps: pairs (last index before, first index after).
    pub fn gaps(&self) -> Vec<(u64, u64)> {
        self.frames
            .windows(2)
            .filter(|w| w[1].frame_index != w[0].frame_index + 1)
            .map(|w| (w[0].frame_index, w[1].frame_index))
            .collect()
    }
}

/// Which frames a window corrupts (proxy task) and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Forecasting,
    InBetween,
    RandomImputation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStrategy {
    pub kind: SplitKind,
    /// Seed for the random-imputation mask draw; ignored by the other kinds.
    pub seed: u64,
}

impl SplitStrategy {
    pub fn forecasting() -> Self {
        SplitStrategy {
            kind: SplitKind::Forecasting,
            seed: 0,
        }
    }

    pub fn in_between() -> Self {
        SplitStrategy {
            kind: SplitKind::InBetween,
            seed: 0,
        }
    }

    pub fn random_imputation(seed: u64) -> Self {
        SplitStrategy {
            kind: SplitKind::RandomImputation,
            seed,
        }
    }
}

/// N contiguous frames of one actor with a corruption mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionWindow<T: Real> {
    pub scene_id: String,
    pub actor_id: String,
    pub frame_indices: Vec<u64>,
    /// (N, joints, 2) coordinates.
    pub poses: Array3<T>,
    /// true = target (corrupted) frame, false = conditioning frame.
    pub mask: Vec<bool>,
    /// Number of conditioning frames.
    pub split_k: usize,
}

impl<T: Real> MotionWindow<T> {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.poses.dim().1
    }

    pub fn target_count(&self) -> usize {
        self.len() - self.split_k
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.frame_indices.len() != n || self.poses.dim().0 != n {
            return Err(Error::shape("window fields disagree on N".to_string()));
        }
        for w in self.frame_indices.windows(2) {
            if w[1] != w[0] + 1 {
                return Err(Error::schema(format!(
                    "window frames not contiguous: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let targets = self.mask.iter().filter(|&&m| m).count();
        if targets != n - self.split_k {
            return Err(Error::schema(format!(
                "mask has {targets} targets, expected {}",
                n - self.split_k
            )));
        }
        Ok(())
    }

    fn gather(&self, want_target: bool) -> Array3<T> {
        let (_, j, c) = self.poses.dim();
        let idx: Vec<usize> = self
            .mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == want_target)
            .map(|(i, _)| i)
            .collect();
        let mut out = Array3::zeros((idx.len(), j, c));
        for (row, &i) in idx.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.poses.index_axis(ndarray::Axis(0), i));
        }
        out
    }

    /// The clean conditioning frames, in temporal order.
    pub fn past(&self) -> Array3<T> {
        self.gather(false)
    }

    /// The target frames, in temporal order.
    pub fn targets(&self) -> Array3<T> {
        self.gather(true)
    }

    /// Frame indices of the target frames.
    pub fn target_frame_indices(&self) -> Vec<u64> {
        self.mask
            .iter()
            .zip(&self.frame_indices)
            .filter(|(&m, _)| m)
            .map(|(_, &f)| f)
            .collect()
    }

    /// Copy of the window with the target frames replaced; conditioning
    /// frames are carried over untouched.
    pub fn with_targets(&self, new_targets: &Array3<T>) -> Result<MotionWindow<T>> {
        let (_, j, c) = self.poses.dim();
        if new_targets.dim() != (self.target_count(), j, c) {
            return Err(Error::shape(format!(
                "targets {:?}, window expects {:?}",
                new_targets.dim(),
                (self.target_count(), j, c)
            )));
        }
        let mut out = self.clone();
        let mut row = 0usize;
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                out.poses
                    .index_axis_mut(ndarray::Axis(0), i)
                    .assign(&new_targets.index_axis(ndarray::Axis(0), row));
                row += 1;
            }
        }
        Ok(out)
    }
}

/// Ground-truth anomaly label of one scene frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub scene_id: String,
    pub frame_index: u64,
    pub label: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_adjacency_is_symmetric_zero_diagonal() {
        let s = Skeleton::coco17();
        let a: Array2<f64> = s.adjacency();
        for i in 0..17 {
            assert_eq!(a[(i, i)], 0.0);
            for j in 0..17 {
                assert_eq!(a[(i, j)], a[(j, i)]);
            }
        }
    }

    #[test]
    fn skeleton_rejects_bad_edges() {
        assert!(Skeleton::new(3, vec![(0, 0)], vec![]).is_err());
        assert!(Skeleton::new(3, vec![(0, 5)], vec![]).is_err());
        assert!(Skeleton::new(3, vec![(0, 1)], vec![7]).is_err());
    }

    #[test]
    fn normalized_adjacency_rows_are_finite() {
        let s = Skeleton::star(5);
        let a: Array2<f64> = s.normalized_adjacency();
        assert!(a.iter().all(|v| v.is_finite()));
        // Symmetric normalization keeps symmetry.
        for i in 0..5 {
            for j in 0..5 {
                assert!((a[(i, j)] - a[(j, i)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn track_detects_gaps_and_runs() {
        let pose = |v: f64| PoseGraph::<f64> {
            joints: Array2::from_elem((3, 2), v),
        };
        let t = PoseTrack {
            scene_id: "s".into(),
            actor_id: "a".into(),
            frames: vec![
                TrackFrame { frame_index: 0, pose: pose(0.0), confidence: None },
                TrackFrame { frame_index: 1, pose: pose(1.0), confidence: None },
                TrackFrame { frame_index: 5, pose: pose(2.0), confidence: None },
                TrackFrame { frame_index: 6, pose: pose(3.0), confidence: None },
            ],
        };
        t.validate().unwrap();
        assert_eq!(t.gaps(), vec![(1, 5)]);
        assert_eq!(t.contiguous_runs(), vec![0..2, 2..4]);
    }

    #[test]
    fn window_splice_replaces_only_targets() {
        let poses = Array3::from_shape_fn((4, 2, 2), |(f, j, c)| (f * 4 + j * 2 + c) as f64);
        let w = MotionWindow {
            scene_id: "s".into(),
            actor_id: "a".into(),
            frame_indices: vec![10, 11, 12, 13],
            poses,
            mask: vec![false, false, true, true],
            split_k: 2,
        };
        w.validate().unwrap();
        let new_targets = Array3::from_elem((2, 2, 2), -1.0);
        let spliced = w.with_targets(&new_targets).unwrap();
        for f in 0..2 {
            assert_eq!(
                spliced.poses.index_axis(ndarray::Axis(0), f),
                w.poses.index_axis(ndarray::Axis(0), f)
            );
        }
        for f in 2..4 {
            assert!(spliced
                .poses
                .index_axis(ndarray::Axis(0), f)
                .iter()
                .all(|&v| v == -1.0));
        }
        assert_eq!(w.target_frame_indices(), vec![12, 13]);
    }
}
