//! Configuration-driven pipeline: dataset preparation, splitting,
//! augmentation, training, evaluation, and overlay rendering.
//!
//! A run is described by one TOML file (comments allowed) mirroring
//! [`RunConfig`]; see the repository README for the full key reference.

mod overlay;
mod train;

pub use overlay::render_overlay;
pub use train::{
    evaluate_checkpoint, evaluate_pairs, image_batch_tensor, predict_probmap, train, TrainReport,
};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{AnnotationError, SceneRecord};
use crate::composite::{ChannelRanges, CompositeError};
use crate::losses::{LossError, LossKind, LossParams};
use crate::metrics::MetricsError;
use crate::nn::adam::AdamError;
use crate::nn::checkpoint::CheckpointError;
use crate::nn::{NetConfig, NnError};
use crate::raster::{ImagePlane, Mask, RasterError};
use crate::synth::SynthParams;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 records to split, have {count}")]
    TooFewRecords { count: usize },
    #[error("rot90 augmentation requires square inputs, got {height}x{width}")]
    NonSquareAugment { height: usize, width: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("scene {scene_id}: missing band stack at {path}")]
    MissingBandStack { scene_id: String, path: PathBuf },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("scene {scene_id}: {source}")]
    Composite { scene_id: String, source: CompositeError },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Adam(#[from] AdamError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

/// One materialized training/evaluation sample.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub id: String,
    pub image: ImagePlane,
    pub mask: Mask,
}

/// Where samples come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    /// Built-in generator; `count` scenes from [`SynthParams`].
    Synthetic {
        count: usize,
        #[serde(flatten)]
        params: SynthParams,
    },
    /// Annotation JSON plus a directory of `{scene_id}.bstk` band stacks.
    Real {
        annotations: PathBuf,
        bandstacks: PathBuf,
        #[serde(default)]
        ranges: ChannelRanges,
    },
}

/// Loss selection plus its hyperparameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub name: LossKind,
    #[serde(flatten)]
    pub params: LossParams,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    #[default]
    None,
    /// Uniformly sampled element of the 8-element dihedral group
    /// (rotations by multiples of 90° with optional flip).
    Rot90Flip,
}

/// Training-loop knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Seed for batch sampling and augmentation draws.
    pub seed: u64,
    pub augment: AugmentMode,
    pub eval_threshold: f64,
    /// Evaluate train IoU (and log it) every this many steps.
    pub log_every: usize,
    /// Stop once the periodic train IoU reaches this value.
    pub early_stop_iou: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 4,
            seed: 1,
            augment: AugmentMode::None,
            eval_threshold: 0.5,
            log_every: 50,
            early_stop_iou: None,
        }
    }
}

/// Everything one run needs; deserialized from a TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    /// Square side for network inputs; defaults to 64 for synthetic data
    /// and 512 for real data.
    #[serde(default)]
    pub target_size: Option<usize>,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_true")]
    pub filter_empty: bool,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_split_ratio() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn resolved_target_size(&self) -> usize {
        self.target_size.unwrap_or(match &self.data {
            DataConfig::Synthetic { .. } => 64,
            DataConfig::Real { .. } => 512,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "split_ratio must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        self.net.validate()?;
        let size = self.resolved_target_size();
        let div = self.net.spatial_divisor();
        if size == 0 || size % div != 0 {
            return Err(HarnessError::InvalidConfig(format!(
                "target_size {size} must be a positive multiple of 2^depth = {div}"
            )));
        }
        if self.train.batch_size == 0 {
            return Err(HarnessError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.train.eval_threshold > 0.0 && self.train.eval_threshold < 1.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "eval_threshold must be in (0, 1), got {}",
                self.train.eval_threshold
            )));
        }
        if self.train.log_every == 0 {
            return Err(HarnessError::InvalidConfig("log_every must be positive".into()));
        }
        self.loss.params.validate()?;
        if !(self.optimizer.lr > 0.0) {
            return Err(HarnessError::InvalidConfig("optimizer lr must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic shuffled 80/20-style split of `0..n`:
/// first `⌊ratio·n⌋` shuffled indices train, the rest test.
pub(crate) fn shuffled_split_indices(n: usize, ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_train = (ratio * n as f64).floor() as usize;
    let test = indices.split_off(n_train);
    (indices, test)
}

/// Split scene records into train/test.
///
/// With `filter_empty`, records without polygons are dropped first (the
/// class-imbalance filter applied to training data). The shuffle is
/// deterministic in `seed`; the two sides are disjoint and exhaustive.
pub fn split_dataset(
    records: Vec<SceneRecord>,
    ratio: f64,
    seed: u64,
    filter_empty: bool,
) -> Result<(Vec<SceneRecord>, Vec<SceneRecord>), HarnessError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(HarnessError::InvalidConfig(format!("ratio must be in (0, 1), got {ratio}")));
    }
    let records: Vec<SceneRecord> = if filter_empty {
        records.into_iter().filter(|r| !r.polygons.is_empty()).collect()
    } else {
        records
    };
    if records.len() < 2 {
        return Err(HarnessError::TooFewRecords { count: records.len() });
    }
    let (train_idx, test_idx) = shuffled_split_indices(records.len(), ratio, seed);
    let mut slots: Vec<Option<SceneRecord>> = records.into_iter().map(Some).collect();
    let take = |slots: &mut Vec<Option<SceneRecord>>, idx: &[usize]| {
        idx.iter().map(|&i| slots[i].take().expect("index used once")).collect::<Vec<_>>()
    };
    let train = take(&mut slots, &train_idx);
    let test = take(&mut slots, &test_idx);
    Ok((train, test))
}

/// Source pixel for dihedral element `k` (0..8) on an `n`×`n` grid:
/// `k % 4` clockwise quarter-turns, then a horizontal flip when `k >= 4`.
fn dihedral_source(k: usize, n: usize, row: usize, col: usize) -> (usize, usize) {
    let (mut r, mut c) = (row, col);
    if k >= 4 {
        c = n - 1 - c;
    }
    for _ in 0..(k % 4) {
        // Inverse of one clockwise rotation.
        let (pr, pc) = (n - 1 - c, r);
        r = pr;
        c = pc;
    }
    (r, c)
}

fn dihedral_image(img: &ImagePlane, k: usize) -> ImagePlane {
    let n = img.height;
    let mut out = ImagePlane::zeros(n, n, img.channels);
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = dihedral_source(k, n, r, c);
            for ch in 0..img.channels {
                out.set(r, c, ch, img.get(sr, sc, ch));
            }
        }
    }
    out
}

fn dihedral_mask(mask: &Mask, k: usize) -> Mask {
    let n = mask.height;
    let mut out = Mask::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = dihedral_source(k, n, r, c);
            out.set(r, c, mask.get(sr, sc));
        }
    }
    out
}

/// Apply one augmentation draw to an image/mask pair.
///
/// `None` returns the pair untouched; `Rot90Flip` applies the same uniformly
/// sampled dihedral element (seeded by `seed`) to both. Square inputs only.
pub fn augment_pair(
    img: &ImagePlane,
    mask: &Mask,
    mode: AugmentMode,
    seed: u64,
) -> Result<(ImagePlane, Mask), HarnessError> {
    if img.height != mask.height || img.width != mask.width {
        return Err(HarnessError::ShapeMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.height, img.width, mask.height, mask.width
        )));
    }
    match mode {
        AugmentMode::None => Ok((img.clone(), mask.clone())),
        AugmentMode::Rot90Flip => {
            if img.height != img.width {
                return Err(HarnessError::NonSquareAugment {
                    height: img.height,
                    width: img.width,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(0..8);
            Ok((dihedral_image(img, k), dihedral_mask(mask, k)))
        }
    }
}

/// Materialize the configured dataset and split it into train/test pairs.
pub fn build_datasets(
    config: &RunConfig,
) -> Result<(Vec<TrainPair>, Vec<TrainPair>), HarnessError> {
    let target = config.resolved_target_size();
    match &config.data {
        DataConfig::Synthetic { count, params } => {
            let mut pairs: Vec<TrainPair> = crate::synth::generate_dataset(params, *count)
                .into_iter()
                .map(|(id, image, mask)| TrainPair { id, image, mask })
                .collect();
            if config.filter_empty {
                pairs.retain(|p| !p.mask.is_empty_mask());
            }
            if pairs.len() < 2 {
                return Err(HarnessError::TooFewRecords { count: pairs.len() });
            }
            let mut pairs: Vec<TrainPair> = pairs
                .into_iter()
                .map(|p| resize_pair(p, target))
                .collect();
            let (train_idx, test_idx) =
                shuffled_split_indices(pairs.len(), config.split_ratio, config.split_seed);
            let mut slots: Vec<Option<TrainPair>> = pairs.drain(..).map(Some).collect();
            let train =
                train_idx.iter().map(|&i| slots[i].take().expect("unique index")).collect();
            let test = test_idx.iter().map(|&i| slots[i].take().expect("unique index")).collect();
            Ok((train, test))
        }
        DataConfig::Real { annotations, bandstacks, ranges } => {
            let document = std::fs::read(annotations)?;
            let records = crate::annotations::parse_scene_records(&document)?;
            let (train_records, test_records) = split_dataset(
                records,
                config.split_ratio,
                config.split_seed,
                config.filter_empty,
            )?;
            let materialize = |records: Vec<SceneRecord>| -> Result<Vec<TrainPair>, HarnessError> {
                records
                    .into_iter()
                    .map(|r| materialize_record(&r, bandstacks, ranges, target))
                    .collect()
            };
            Ok((materialize(train_records)?, materialize(test_records)?))
        }
    }
}

fn resize_pair(pair: TrainPair, target: usize) -> TrainPair {
    if pair.image.height == target && pair.image.width == target {
        return pair;
    }
    TrainPair {
        id: pair.id,
        image: crate::raster::resize_image(&pair.image, target, target),
        mask: crate::raster::resize_mask(&pair.mask, target, target),
    }
}

/// Band stack → false color → resize; polygons → mask at native scene
/// resolution → resize. One scene becomes one training pair.
pub fn materialize_record(
    record: &SceneRecord,
    bandstack_dir: &Path,
    ranges: &ChannelRanges,
    target: usize,
) -> Result<TrainPair, HarnessError> {
    let path = bandstack_dir.join(format!("{}.bstk", record.scene_id));
    if !path.is_file() {
        return Err(HarnessError::MissingBandStack {
            scene_id: record.scene_id.clone(),
            path,
        });
    }
    let bands = crate::composite::read_bandstack_file(&path)
        .map_err(|source| HarnessError::Composite { scene_id: record.scene_id.clone(), source })?;
    let composite = crate::composite::false_color(&bands, ranges)
        .map_err(|source| HarnessError::Composite { scene_id: record.scene_id.clone(), source })?;
    let image = crate::raster::resize_image(&composite, target, target);
    let native = crate::raster::render_ground_truth(record, bands.height, bands.width)?;
    let mask = crate::raster::resize_mask(&native, target, target);
    Ok(TrainPair { id: record.scene_id.clone(), image, mask })
}
