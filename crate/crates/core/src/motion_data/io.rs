//! Dataset files: newline-delimited pose-track records, frame labels and
//! the manifest that ties them to a skeleton.

use super::{FrameLabel, PoseGraph, PoseTrack, Skeleton, TrackFrame};
use crate::error::{Error, Result};
use crate::scalar::Real;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// On-disk layouts [`load_tracks`] understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrackFormat {
    /// One JSON record per line:
    /// {scene_id, actor_id, frame_index, joints: [[x, y] * J], confidence?}.
    #[default]
    Jsonl,
    /// Directory of `<scene>_alphapose_tracked_person.json` files, the
    /// tracked-keypoint layout published with the skeleton VAD benchmarks:
    /// frame -> person -> {keypoints: [x, y, score] * J}.
    AlphaposeDir,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackRecord {
    scene_id: String,
    actor_id: String,
    frame_index: u64,
    joints: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    scene_id: String,
    frame_index: u64,
    label: u8,
}

/// Dataset manifest: skeleton description plus file locations, stored as
/// TOML next to the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub joint_count: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub root_joints: Vec<usize>,
    pub tracks: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub format: TrackFormat,
    /// Joints below this confidence are interpolated from temporal
    /// neighbors; windows reject joints missing in half their frames.
    #[serde(default = "default_conf_floor")]
    pub conf_floor: f64,
}

fn default_conf_floor() -> f64 {
    0.1
}

impl DatasetManifest {
    pub fn skeleton(&self) -> Result<Skeleton> {
        Skeleton::new(self.joint_count, self.edges.clone(), self.root_joints.clone())
    }
}

/// A loaded dataset: skeleton, grouped tracks and optional frame labels.
#[derive(Debug, Clone)]
pub struct PoseDataset<T: Real> {
    pub skeleton: Skeleton,
    pub tracks: Vec<PoseTrack<T>>,
    pub labels: Option<Vec<FrameLabel>>,
    pub conf_floor: f64,
}

impl<T: Real> PoseDataset<T> {
    pub fn has_anomalous_labels(&self) -> bool {
        self.labels
            .as_ref()
            .is_some_and(|ls| ls.iter().any(|l| l.label))
    }
}

/// Read pose tracks, group them by (scene, actor), sort frames and
/// interpolate joints whose confidence falls below `conf_floor`.
pub fn load_tracks<T: Real>(
    path: &Path,
    format: TrackFormat,
    expected_joints: Option<usize>,
    conf_floor: Option<f64>,
) -> Result<Vec<PoseTrack<T>>> {
    let records = match format {
        TrackFormat::Jsonl => read_jsonl_records(path)?,
        TrackFormat::AlphaposeDir => read_alphapose_dir(path)?,
    };

    let mut grouped: BTreeMap<(String, String), Vec<TrackRecord>> = BTreeMap::new();
    for r in records {
        grouped
            .entry((r.scene_id.clone(), r.actor_id.clone()))
            .or_default()
            .push(r);
    }

    let mut tracks = Vec::with_capacity(grouped.len());
    for ((scene_id, actor_id), mut recs) in grouped {
        recs.sort_by_key(|r| r.frame_index);
        let joint_count = expected_joints.unwrap_or_else(|| recs[0].joints.len());
        let mut frames = Vec::with_capacity(recs.len());
        for r in recs {
            if r.joints.len() != joint_count {
                return Err(Error::schema(format!(
                    "track {scene_id}/{actor_id} frame {}: {} joints, expected {joint_count}",
                    r.frame_index,
                    r.joints.len()
                )));
            }
            let mut joints = Array2::zeros((joint_count, 2));
            for (j, xy) in r.joints.iter().enumerate() {
                if !xy[0].is_finite() || !xy[1].is_finite() {
                    return Err(Error::schema(format!(
                        "track {scene_id}/{actor_id} frame {}: non-finite joint {j}",
                        r.frame_index
                    )));
                }
                joints[(j, 0)] = T::c(xy[0]);
                joints[(j, 1)] = T::c(xy[1]);
            }
            let confidence = match r.confidence {
                Some(c) => {
                    if c.len() != joint_count {
                        return Err(Error::schema(format!(
                            "track {scene_id}/{actor_id} frame {}: confidence length {}",
                            r.frame_index,
                            c.len()
                        )));
                    }
                    Some(c.into_iter().map(T::c).collect())
                }
                None => None,
            };
            frames.push(TrackFrame {
                frame_index: r.frame_index,
                pose: PoseGraph { joints },
                confidence,
            });
        }
        let mut track = PoseTrack {
            scene_id,
            actor_id,
            frames,
        };
        track.validate()?;
        if let Some(floor) = conf_floor {
            interpolate_low_confidence(&mut track, T::c(floor));
        }
        tracks.push(track);
    }
    Ok(tracks)
}

fn read_jsonl_records(path: &Path) -> Result<Vec<TrackRecord>> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrackRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

fn read_alphapose_dir(dir: &Path) -> Result<Vec<TrackRecord>> {
    const SUFFIX: &str = "_alphapose_tracked_person.json";
    let mut records = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(SUFFIX))
        })
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_name().unwrap().to_str().unwrap();
        let scene_id = name[..name.len() - SUFFIX.len()].to_string();
        let text = fs::read_to_string(&path)?;
        let doc: BTreeMap<String, BTreeMap<String, AlphaposeEntry>> =
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: 1,
                msg: format!("{}: {e}", path.display()),
            })?;
        for (frame, people) in doc {
            let frame_index: u64 = frame.parse().map_err(|_| {
                Error::schema(format!("{}: frame key '{frame}' not an index", path.display()))
            })?;
            for (person, entry) in people {
                if entry.keypoints.len() % 3 != 0 {
                    return Err(Error::schema(format!(
                        "{}: keypoints length {} not a multiple of 3",
                        path.display(),
                        entry.keypoints.len()
                    )));
                }
                let mut joints = Vec::new();
                let mut confidence = Vec::new();
                for kp in entry.keypoints.chunks(3) {
                    joints.push([kp[0], kp[1]]);
                    confidence.push(kp[2]);
                }
                records.push(TrackRecord {
                    scene_id: scene_id.clone(),
                    actor_id: person,
                    frame_index,
                    joints,
                    confidence: Some(confidence),
                });
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Deserialize)]
struct AlphaposeEntry {
    keypoints: Vec<f64>,
}

/// Replace joints below the confidence floor by linear interpolation from
/// the nearest confident frames of the same joint.
fn interpolate_low_confidence<T: Real>(track: &mut PoseTrack<T>, floor: T) {
    let n = track.frames.len();
    let j = match track.joint_count() {
        Some(j) => j,
        None => return,
    };
    let conf = |f: &TrackFrame<T>, joint: usize| -> T {
        f.confidence
            .as_ref()
            .map(|c| c[joint])
            .unwrap_or_else(T::one)
    };
    for joint in 0..j {
        let valid: Vec<usize> = (0..n)
            .filter(|&f| conf(&track.frames[f], joint) >= floor)
            .collect();
        if valid.is_empty() || valid.len() == n {
            continue;
        }
        for f in 0..n {
            if conf(&track.frames[f], joint) >= floor {
                continue;
            }
            let next = valid.iter().copied().find(|&v| v > f);
            let prev = valid.iter().copied().rev().find(|&v| v < f);
            let replacement = match (prev, next) {
                (Some(p), Some(q)) => {
                    let fp = track.frames[p].frame_index as f64;
                    let fq = track.frames[q].frame_index as f64;
                    let ff = track.frames[f].frame_index as f64;
                    let w = T::c((ff - fp) / (fq - fp));
                    let a = track.frames[p].pose.joints.row(joint).to_owned();
                    let b = track.frames[q].pose.joints.row(joint).to_owned();
                    [
                        a[0] + (b[0] - a[0]) * w,
                        a[1] + (b[1] - a[1]) * w,
                    ]
                }
                (Some(p), None) => {
                    let a = track.frames[p].pose.joints.row(joint);
                    [a[0], a[1]]
                }
                (None, Some(q)) => {
                    let b = track.frames[q].pose.joints.row(joint);
                    [b[0], b[1]]
                }
                (None, None) => continue,
            };
            track.frames[f].pose.joints[(joint, 0)] = replacement[0];
            track.frames[f].pose.joints[(joint, 1)] = replacement[1];
        }
    }
}

/// Write tracks in the newline-delimited record format.
pub fn save_tracks<T: Real>(path: &Path, tracks: &[PoseTrack<T>]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for t in tracks {
        for f in &t.frames {
            let rec = TrackRecord {
                scene_id: t.scene_id.clone(),
                actor_id: t.actor_id.clone(),
                frame_index: f.frame_index,
                joints: (0..f.pose.joint_count())
                    .map(|j| {
                        [
                            f.pose.joints[(j, 0)].to_f64_lossy(),
                            f.pose.joints[(j, 1)].to_f64_lossy(),
                        ]
                    })
                    .collect(),
                confidence: f
                    .confidence
                    .as_ref()
                    .map(|c| c.iter().map(|v| v.to_f64_lossy()).collect()),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<Vec<FrameLabel>> {
    let file = fs::File::open(path)?;
    let mut labels = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.label > 1 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("label {} not in {{0, 1}}", rec.label),
            });
        }
        labels.push(FrameLabel {
            scene_id: rec.scene_id,
            frame_index: rec.frame_index,
            label: rec.label == 1,
        });
    }
    Ok(labels)
}

pub fn save_labels(path: &Path, labels: &[FrameLabel]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for l in labels {
        let rec = LabelRecord {
            scene_id: l.scene_id.clone(),
            frame_index: l.frame_index,
            label: u8::from(l.label),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Write a manifest describing a dataset directory.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::schema(format!("manifest serialization: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

/// Load a full dataset through its manifest. Relative paths inside the
/// manifest resolve against the manifest's directory.
pub fn load_dataset<T: Real>(manifest_path: &Path) -> Result<PoseDataset<T>> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: DatasetManifest = toml::from_str(&text)?;
    let skeleton = manifest.skeleton()?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let tracks = load_tracks::<T>(
        &resolve(&manifest.tracks),
        manifest.format,
        Some(manifest.joint_count),
        Some(manifest.conf_floor),
    )?;
    let labels = match &manifest.labels {
        Some(p) => Some(load_labels(&resolve(p))?),
        None => None,
    };
    Ok(PoseDataset {
        skeleton,
        tracks,
        labels,
        conf_floor: manifest.conf_floor,
    })
}
