//! FMCW chirp parameters and the interference they cause on each other.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MotionPointCloud, Point};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChirpConfig {
    pub start_ghz: f64,
    pub bandwidth_ghz: f64,
    pub slope_mhz_per_us: f64,
    pub start_offset_us: f64,
    pub frame_period_ms: f64,
}

impl Default for ChirpConfig {
    fn default() -> Self {
        Self {
            start_ghz: 77.0,
            bandwidth_ghz: 4.0,
            slope_mhz_per_us: 70.0,
            start_offset_us: 0.0,
            frame_period_ms: 100.0,
        }
    }
}

impl ChirpConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.bandwidth_ghz) || !ok(self.slope_mhz_per_us) || !ok(self.frame_period_ms) {
            return Err(Error::Config(
                "chirp bandwidth, slope and frame period must be positive".into(),
            ));
        }
        if !self.start_ghz.is_finite() || !self.start_offset_us.is_finite() {
            return Err(Error::Config("chirp start values must be finite".into()));
        }
        Ok(())
    }

    pub fn bandwidth_mhz(&self) -> f64 {
        self.bandwidth_ghz * 1000.0
    }

    /// Time to sweep the full bandwidth, in microseconds.
    pub fn duration_us(&self) -> f64 {
        self.bandwidth_mhz() / self.slope_mhz_per_us
    }

    fn band(&self) -> (f64, f64) {
        (self.start_ghz, self.start_ghz + self.bandwidth_ghz)
    }
}

/// Length of the glitch when two chirps of different slopes cross, in
/// microseconds: `bandwidth / |slope_a - slope_v|`.
pub fn glitch_duration(bandwidth_mhz: f64, slope_aggressor: f64, slope_victim: f64) -> Result<f64> {
    let diff = (slope_aggressor - slope_victim).abs();
    if diff == 0.0 {
        return Err(Error::Invalid(
            "equal slopes do not cross; classify as parallel interference".into(),
        ));
    }
    Ok(bandwidth_mhz / diff)
}

/// Config-exposed proxies for how interference degrades a point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferenceModel {
    /// Multiplier on the crossing drop probability.
    pub drop_scale: f64,
    /// Ghost points injected by one parallel event.
    pub ghost_count: usize,
    /// Ghosts are drawn uniformly in `[-extent, extent]` on every axis, meters.
    pub ghost_extent_m: f64,
}

impl Default for InterferenceModel {
    fn default() -> Self {
        Self {
            drop_scale: 1.0,
            ghost_count: 5,
            ghost_extent_m: 1.5,
        }
    }
}

impl InterferenceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.drop_scale.is_finite() && self.drop_scale >= 0.0)
            || !(self.ghost_extent_m.is_finite() && self.ghost_extent_m >= 0.0)
        {
            return Err(Error::Config(
                "drop_scale and ghost_extent_m must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceKind {
    Crossing,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceEvent {
    pub kind: InterferenceKind,
    pub aggressor: usize,
    pub victim: usize,
    /// Crossing only.
    pub glitch_us: Option<f64>,
    /// Sweep time of the victim chirp, microseconds.
    pub victim_chirp_us: f64,
    /// Parallel only.
    pub ghost_count: usize,
}

/// Interference caused by chirp `a` (aggressor) on chirp `v` (victim), if
/// their bands overlap.
pub fn classify_interference(
    a: &ChirpConfig,
    v: &ChirpConfig,
    ids: (usize, usize),
    model: &InterferenceModel,
) -> Option<InterferenceEvent> {
    let (a0, a1) = a.band();
    let (v0, v1) = v.band();
    if a0.max(v0) >= a1.min(v1) {
        return None;
    }
    let base = InterferenceEvent {
        kind: InterferenceKind::Parallel,
        aggressor: ids.0,
        victim: ids.1,
        glitch_us: None,
        victim_chirp_us: v.duration_us(),
        ghost_count: 0,
    };
    if a.slope_mhz_per_us == v.slope_mhz_per_us {
        ((a.start_offset_us - v.start_offset_us).abs() < 1.0).then_some(InterferenceEvent {
            ghost_count: model.ghost_count,
            ..base
        })
    } else {
        Some(InterferenceEvent {
            kind: InterferenceKind::Crossing,
            glitch_us: glitch_duration(v.bandwidth_mhz(), a.slope_mhz_per_us, v.slope_mhz_per_us)
                .ok(),
            ..base
        })
    }
}

/// Degrades a victim cloud: crossing events blank points, parallel events
/// add ghost reflections at random frames.
pub fn apply_interference<R: Rng + ?Sized>(
    cloud: &MotionPointCloud,
    events: &[InterferenceEvent],
    model: &InterferenceModel,
    rng: &mut R,
) -> Result<MotionPointCloud> {
    let mut points = cloud.points.clone();
    let mut ghosts = false;
    for ev in events {
        match ev.kind {
            InterferenceKind::Crossing => {
                let glitch = ev.glitch_us.unwrap_or(0.0);
                let p = ((glitch / ev.victim_chirp_us).min(1.0) * model.drop_scale).clamp(0.0, 1.0);
                points.retain(|_| !rng.gen_bool(p));
            }
            InterferenceKind::Parallel => {
                if cloud.frame_count == 0 {
                    continue;
                }
                let e = model.ghost_extent_m;
                for _ in 0..ev.ghost_count {
                    let mut c = || if e > 0.0 { rng.gen_range(-e..=e) } else { 0.0 };
                    let (x, y, z) = (c(), c(), c());
                    let frame = rng.gen_range(0..cloud.frame_count);
                    points.push(Point::new(x, y, z, frame));
                    ghosts = true;
                }
            }
        }
    }
    if ghosts {
        points.sort_by_key(|p| p.frame);
    }
    MotionPointCloud::new(points, cloud.angle_id, cloud.frame_count)
}
