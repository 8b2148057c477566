use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::MultiAngleSample;
use crate::error::{Error, Result};

/// How the 3 cm clipping augmentation is realised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Clip each jitter displacement to `±jitter_clip` per coordinate.
    #[default]
    Displacement,
    /// Unclipped Gaussian jitter.
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Per-axis translation bound, meters.
    pub translation: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub clip_mode: ClipMode,
    pub shuffle: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            translation: 0.10,
            scale_min: 0.8,
            scale_max: 1.25,
            jitter_sigma: 0.01,
            jitter_clip: 0.03,
            clip_mode: ClipMode::Displacement,
            shuffle: true,
        }
    }
}

impl AugmentConfig {
    /// All magnitudes zero and shuffling off.
    pub fn identity() -> Self {
        Self {
            translation: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            clip_mode: ClipMode::Displacement,
            shuffle: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.translation < 0.0 || self.jitter_sigma < 0.0 || self.jitter_clip < 0.0 {
            return Err(Error::Config(
                "augmentation magnitudes must be non-negative".into(),
            ));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::Config(
                "scale range must be positive and ordered".into(),
            ));
        }
        Ok(())
    }
}

/// Training-time augmentation, applied in order: global translation,
/// global scale, per-point jitter, per-frame shuffle. Translation and scale
/// are drawn once and shared by every angle of the sample.
pub fn augment<R: Rng + ?Sized>(
    sample: &MultiAngleSample,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> MultiAngleSample {
    let shift = if cfg.translation > 0.0 {
        [
            rng.gen_range(-cfg.translation..=cfg.translation),
            rng.gen_range(-cfg.translation..=cfg.translation),
            rng.gen_range(-cfg.translation..=cfg.translation),
        ]
    } else {
        [0.0; 3]
    };
    let scale = if cfg.scale_max > cfg.scale_min {
        rng.gen_range(cfg.scale_min..=cfg.scale_max)
    } else {
        cfg.scale_min
    };
    let jitter = (cfg.jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, cfg.jitter_sigma).expect("positive sigma"));

    let mut out = sample.clone();
    for cloud in out.clouds.values_mut() {
        for p in &mut cloud.points {
            p.x = (p.x + shift[0]) * scale;
            p.y = (p.y + shift[1]) * scale;
            p.z = (p.z + shift[2]) * scale;
            if let Some(noise) = &jitter {
                for c in [&mut p.x, &mut p.y, &mut p.z] {
                    let mut d = noise.sample(rng);
                    if cfg.clip_mode == ClipMode::Displacement {
                        d = d.clamp(-cfg.jitter_clip, cfg.jitter_clip);
                    }
                    *c += d;
                }
            }
        }
        if cfg.shuffle {
            // Shuffle within each contiguous run of equal frame numbers.
            let mut start = 0;
            let pts = &mut cloud.points;
            while start < pts.len() {
                let frame = pts[start].frame;
                let mut end = start + 1;
                while end < pts.len() && pts[end].frame == frame {
                    end += 1;
                }
                pts[start..end].shuffle(rng);
                start = end;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MotionPointCloud, Point};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn sample() -> MultiAngleSample {
        let mut clouds = BTreeMap::new();
        for a in [0u16, 90] {
            let points = (0..40)
                .map(|i| Point::new(i as f64 * 0.01, 0.5 - i as f64 * 0.02, 1.0, i / 10))
                .collect();
            clouds.insert(a, MotionPointCloud::new(points, a, 4).unwrap());
        }
        MultiAngleSample {
            clouds,
            label: 0,
            subject_id: 0,
        }
    }

    #[test]
    fn identity_config_is_noop() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(augment(&s, &mut rng, &AugmentConfig::identity()), s);
    }

    #[test]
    fn jitter_is_clipped() {
        let s = sample();
        let cfg = AugmentConfig {
            jitter_sigma: 0.01,
            jitter_clip: 0.03,
            ..AugmentConfig::identity()
        };
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment(&s, &mut rng, &cfg);
            for (a, b) in s.clouds.values().zip(out.clouds.values()) {
                for (p, q) in a.points.iter().zip(&b.points) {
                    assert!((p.x - q.x).abs() <= 0.03 + 1e-15);
                    assert!((p.y - q.y).abs() <= 0.03 + 1e-15);
                    assert!((p.z - q.z).abs() <= 0.03 + 1e-15);
                }
            }
        }
    }

    #[test]
    fn translation_and_scale_shared_across_angles() {
        let s = sample();
        let cfg = AugmentConfig {
            translation: 0.1,
            scale_min: 0.8,
            scale_max: 1.25,
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = augment(&s, &mut rng, &cfg);
        // Both angles started identical, so they must stay identical.
        assert_eq!(out.clouds[&0].points, out.clouds[&90].points);
        let (p0, p1) = (s.clouds[&0].points[0], s.clouds[&0].points[1]);
        let (q0, q1) = (out.clouds[&0].points[0], out.clouds[&0].points[1]);
        let scale = (q1.x - q0.x) / (p1.x - p0.x);
        assert!((0.8..=1.25).contains(&scale), "{scale}");
        let shift = q0.y / scale - p0.y;
        assert!(shift.abs() <= 0.1 + 1e-12, "{shift}");
    }

    #[test]
    fn shuffle_permutes_within_frames() {
        let s = sample();
        let cfg = AugmentConfig {
            shuffle: true,
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = augment(&s, &mut rng, &cfg);
        for (a, b) in s.clouds.values().zip(out.clouds.values()) {
            assert_ne!(a.points, b.points);
            for f in 0..4 {
                let mut x: Vec<f64> = a.points.iter().filter(|p| p.frame == f).map(|p| p.x).collect();
                let mut y: Vec<f64> = b.points.iter().filter(|p| p.frame == f).map(|p| p.x).collect();
                x.sort_by(f64::total_cmp);
                y.sort_by(f64::total_cmp);
                assert_eq!(x, y);
            }
        }
    }
}
