//! The experiment configuration file: one TOML document fully determines
//! a run (dataset or synthetic spec, windowing, diffusion, model,
//! conditioning, training, scoring and evaluation settings).

use crate::conditioning::{ConditioningKind, LossWeights};
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalOptions;
use crate::motion_data::{NormalizationMode, Skeleton, SplitKind, SplitStrategy, SyntheticSpec};
use crate::nn::{Activation, UNetConfig};
use crate::scoring::AggregationStatistic;
use crate::training::{FitSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Window size N.
    pub size: usize,
    pub stride: usize,
    /// Conditioning frames k.
    pub condition_frames: usize,
    /// Proxy task: which frames are corrupted.
    pub strategy: SplitKind,
    /// Seed for the random-imputation mask draw.
    pub imputation_seed: u64,
    pub normalization: NormalizationMode,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            size: 6,
            stride: 1,
            condition_frames: 3,
            strategy: SplitKind::Forecasting,
            imputation_seed: 0,
            normalization: NormalizationMode::CenterScale,
        }
    }
}

impl WindowConfig {
    pub fn split_strategy(&self) -> SplitStrategy {
        SplitStrategy {
            kind: self.strategy,
            seed: self.imputation_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::config("window.size must be >= 2"));
        }
        if self.condition_frames == 0 || self.condition_frames >= self.size {
            return Err(Error::config(
                "window.condition_frames must satisfy 1 <= k < size",
            ));
        }
        if self.stride == 0 {
            return Err(Error::config("window.stride must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channel_ladder: Vec<usize>,
    pub layers_per_level: usize,
    pub cond_width: usize,
    pub activation: Activation,
    pub hard_adjacency_mask: bool,
    pub mask_self_loops: bool,
    pub learned_timestep_table: bool,
    pub outer_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channel_ladder: vec![2, 32, 64, 32, 2],
            layers_per_level: 1,
            cond_width: 16,
            activation: Activation::Silu,
            hard_adjacency_mask: false,
            mask_self_loops: true,
            learned_timestep_table: false,
            outer_residual: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditioningConfig {
    pub strategy: ConditioningKind,
    /// Hidden widths of the past-motion encoder between the coordinate
    /// channels and the conditioning width.
    pub encoder_hidden: Vec<usize>,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        ConditioningConfig {
            strategy: ConditioningKind::AeEmbedding,
            encoder_hidden: vec![16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Number of generated futures per window (m).
    pub generations: usize,
    /// Aggregation statistic: min, max, mean, median or q<value>.
    pub statistic: String,
    pub allow_untrained: bool,
    pub histogram_bins: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            generations: 50,
            statistic: "min".into(),
            allow_untrained: false,
            histogram_bins: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Statistics of the sweep grid (same syntax as scoring.statistic).
    pub stats: Vec<String>,
    /// Generation counts of the sweep grid.
    pub generation_counts: Vec<usize>,
    pub histogram: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            stats: vec!["min".into()],
            generation_counts: vec![1, 50],
            histogram: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub strategies: Vec<ConditioningKind>,
    pub tasks: Vec<SplitKind>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            strategies: vec![
                ConditioningKind::InputConcat,
                ConditioningKind::E2eEmbedding,
                ConditioningKind::AeEmbedding,
            ],
            tasks: vec![
                SplitKind::Forecasting,
                SplitKind::InBetween,
                SplitKind::RandomImputation,
            ],
        }
    }
}

/// Parse an aggregation statistic name: min, max, mean, median, q<value>.
pub fn parse_stat(s: &str) -> Result<AggregationStatistic> {
    let stat = match s {
        "min" => AggregationStatistic::Min,
        "max" => AggregationStatistic::Max,
        "mean" => AggregationStatistic::Mean,
        "median" => AggregationStatistic::Median,
        _ => {
            let q = s
                .strip_prefix('q')
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::config(format!(
                        "unknown statistic '{s}' (expected min/max/mean/median/q<value>)"
                    ))
                })?;
            AggregationStatistic::Quantile(q)
        }
    };
    stat.validate()?;
    Ok(stat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub precision: Precision,
    /// Worker threads for scoring fan-out; 1 = sequential.
    pub workers: usize,
    /// Dataset manifest path; when absent, the synthetic spec is used.
    pub dataset: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub window: WindowConfig,
    pub diffusion: DiffusionConfig,
    pub model: ModelConfig,
    pub conditioning: ConditioningConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub scoring: ScoringConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            precision: Precision::F64,
            workers: 1,
            dataset: None,
            synthetic: SyntheticSpec::default(),
            window: WindowConfig::default(),
            diffusion: DiffusionConfig::default(),
            model: ModelConfig::default(),
            conditioning: ConditioningConfig::default(),
            train: TrainConfig::default(),
            loss: LossWeights::default(),
            scoring: ScoringConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.diffusion.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.synthetic.validate()?;
        if self.workers == 0 {
            return Err(Error::config("workers must be >= 1"));
        }
        if self.scoring.generations == 0 {
            return Err(Error::config("scoring.generations must be >= 1"));
        }
        parse_stat(&self.scoring.statistic)?;
        for s in &self.eval.stats {
            parse_stat(s)?;
        }
        Ok(())
    }

    /// Short hash of the canonical serialized config; a config plus the
    /// code version determines a run.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Complete network config for a dataset skeleton.
    pub fn unet_config(&self, skeleton: &Skeleton) -> UNetConfig {
        UNetConfig {
            channel_ladder: self.model.channel_ladder.clone(),
            layers_per_level: self.model.layers_per_level,
            frames: self
                .conditioning
                .strategy
                .denoiser_frames(self.window.size, self.window.condition_frames),
            joints: skeleton.joint_count,
            cond_width: self.model.cond_width,
            activation: self.model.activation,
            hard_adjacency_mask: self.model.hard_adjacency_mask,
            mask_self_loops: self.model.mask_self_loops,
            learned_timestep_table: self.model.learned_timestep_table,
            outer_residual: self.model.outer_residual,
            diffusion_steps: self.diffusion.steps,
        }
    }

    pub fn fit_spec(&self, skeleton: &Skeleton) -> FitSpec {
        FitSpec {
            window_size: self.window.size,
            stride: self.window.stride,
            condition_frames: self.window.condition_frames,
            strategy: self.window.split_strategy(),
            normalization: self.window.normalization,
            conditioning: self.conditioning.strategy,
            encoder_hidden: self.conditioning.encoder_hidden.clone(),
            unet: self.unet_config(skeleton),
            diffusion: self.diffusion.clone(),
            weights: self.loss,
            train: self.train.clone(),
            seed: self.seed,
        }
    }

    pub fn eval_options(&self) -> Result<EvalOptions> {
        let stats = self
            .eval
            .stats
            .iter()
            .map(|s| parse_stat(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalOptions {
            stats,
            generation_counts: self.eval.generation_counts.clone(),
            seed: self.seed,
            stride: self.window.stride,
            workers: self.workers,
            allow_untrained: self.scoring.allow_untrained,
            config_fingerprint: self.fingerprint(),
        })
    }
}
