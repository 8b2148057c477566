//! Frame binning, per-frame resampling and training augmentation.

mod augment;
mod frames;
mod resample;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::data::{load_sample, write_sample, DatasetManifest, MotionPointCloud, MultiAngleSample, SampleEntry};
use crate::error::{Error, Result};
use crate::rng::{mix_seed, stream};

pub use augment::{augment, AugmentConfig, ClipMode};
pub use frames::bin_frames;
pub use resample::{
    ahc_upsample, kmeans, resample_frame, KMeansResult, KMEANS_EXACT_MAX, KMEANS_MAX_ITER, KMEANS_RESTARTS,
    KMEANS_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_frames: usize,
    pub target_points_per_frame: usize,
    pub augment: AugmentConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_frames: 32,
            target_points_per_frame: 32,
            augment: AugmentConfig::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_frames == 0 || self.target_points_per_frame == 0 {
            return Err(Error::Config(
                "target frames and points per frame must be at least 1".into(),
            ));
        }
        self.augment.validate()
    }
}

/// Bins a cloud into the target frame count and resamples every frame to
/// the target point count. The result has exactly `T * m` points.
pub fn preprocess_cloud(
    cloud: &MotionPointCloud,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<MotionPointCloud> {
    let binned = bin_frames(cloud, cfg.target_frames)?;
    let mut rng = stream(&[seed, cloud.angle_id as u64]);
    let mut points = Vec::with_capacity(cfg.target_frames * cfg.target_points_per_frame);
    for frame in binned.frames() {
        points.extend(resample_frame(&frame, cfg.target_points_per_frame, &mut rng)?);
    }
    MotionPointCloud::new(points, cloud.angle_id, binned.frame_count)
}

pub fn preprocess_sample(
    sample: &MultiAngleSample,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<MultiAngleSample> {
    let clouds = sample
        .clouds
        .iter()
        .map(|(a, c)| preprocess_cloud(c, cfg, seed).map(|c| (*a, c)))
        .collect::<Result<_>>()?;
    Ok(MultiAngleSample {
        clouds,
        label: sample.label,
        subject_id: sample.subject_id,
    })
}

/// Preprocesses a list of samples in parallel; sample `i` uses the seed
/// `mix_seed([seed, i])`.
pub fn preprocess_all(
    samples: &[MultiAngleSample],
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<Vec<MultiAngleSample>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| preprocess_sample(s, cfg, mix_seed(&[seed, i as u64])))
        .collect()
}

/// Preprocesses every sample of the dataset at `input` and writes the
/// result, with a manifest of the same shape, to `output`. Sample `i` of
/// the manifest uses the seed `mix_seed([seed, i])`.
pub fn preprocess_dataset(
    input: &Path,
    output: &Path,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(input)?;
    let processed = manifest
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let sample = load_sample(&input.join(&entry.dir))?;
            preprocess_sample(&sample, cfg, mix_seed(&[seed, i as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::with_capacity(processed.len());
    for (entry, sample) in manifest.samples.iter().zip(&processed) {
        let files = write_sample(output, sample, entry.rep)?;
        entries.push(SampleEntry {
            files,
            ..entry.clone()
        });
    }
    let out = DatasetManifest::new(
        manifest.class_names.clone(),
        manifest.subject_ids.clone(),
        manifest.angle_ids.clone(),
        entries,
        manifest.split.clone(),
    );
    out.save(output)?;
    Ok(out)
}
