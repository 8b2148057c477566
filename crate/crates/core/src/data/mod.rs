//! Domain types for multi-angle motion point clouds, plus dataset
//! generation and on-disk I/O.

mod generate;
mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{
    generate_split, generate_synthetic_dataset, gesture_names, render_canonical, render_sample, render_view,
    GeneratorConfig, SampleSplit, SplitConfig,
};
pub use io::{
    format_sig9, load_sample, read_cloud_csv, write_cloud_csv, write_sample, DatasetManifest,
    LoadedDataset, SampleEntry, Split, MANIFEST_FILE,
};

/// The eight radar positions around the participant, in degrees.
pub const ANGLES: [u16; 8] = [0, 45, 90, 135, 180, 225, 270, 315];

/// Slot of an angle in [`ANGLES`], if it is one of them.
pub fn angle_slot(angle: u16) -> Option<usize> {
    ANGLES.iter().position(|&a| a == angle)
}

/// One reflection point: position in meters and the frame it was acquired in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub frame: u32,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, frame: u32) -> Self {
        Self { x, y, z, frame }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Full feature vector `(x, y, z, frame)` with the frame index scaled.
    pub fn features(&self, frame_scale: f64) -> [f64; 4] {
        [self.x, self.y, self.z, self.frame as f64 * frame_scale]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// A gesture recording seen from one radar angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPointCloud {
    pub points: Vec<Point>,
    pub angle_id: u16,
    pub frame_count: u32,
}

impl MotionPointCloud {
    /// Builds a cloud and checks its invariants.
    pub fn new(points: Vec<Point>, angle_id: u16, frame_count: u32) -> Result<Self> {
        let cloud = Self {
            points,
            angle_id,
            frame_count,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Data(format!(
                "cloud for angle {} has no points",
                self.angle_id
            )));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::Data(format!("point {i} has non-finite coordinates")));
            }
            if p.frame >= self.frame_count {
                return Err(Error::Data(format!(
                    "point {i} references frame {} but the cloud has {} frames",
                    p.frame, self.frame_count
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of points in each frame.
    pub fn frame_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.frame_count as usize];
        for p in &self.points {
            sizes[p.frame as usize] += 1;
        }
        sizes
    }

    /// Points grouped by frame, keeping their relative order.
    pub fn frames(&self) -> Vec<Vec<Point>> {
        let mut frames = vec![Vec::new(); self.frame_count as usize];
        for p in &self.points {
            frames[p.frame as usize].push(*p);
        }
        frames
    }
}

/// Rotates a cloud about the vertical axis by `degrees` (counter-clockwise
/// seen from above). Heights and frame numbers are untouched.
pub fn rotate_view(cloud: &MotionPointCloud, degrees: f64) -> MotionPointCloud {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let points = cloud
        .points
        .iter()
        .map(|p| Point {
            x: p.x * cos - p.y * sin,
            y: p.x * sin + p.y * cos,
            z: p.z,
            frame: p.frame,
        })
        .collect();
    MotionPointCloud {
        points,
        angle_id: cloud.angle_id,
        frame_count: cloud.frame_count,
    }
}

/// All angle views of one gesture repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiAngleSample {
    pub clouds: BTreeMap<u16, MotionPointCloud>,
    pub label: usize,
    pub subject_id: u32,
}

impl MultiAngleSample {
    pub fn angles(&self) -> Vec<u16> {
        self.clouds.keys().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.clouds.is_empty() {
            return Err(Error::Data("sample has no angle views".into()));
        }
        for (angle, cloud) in &self.clouds {
            if *angle != cloud.angle_id {
                return Err(Error::Data(format!(
                    "cloud keyed by angle {angle} reports angle {}",
                    cloud.angle_id
                )));
            }
            cloud.validate()?;
        }
        Ok(())
    }

    /// Keeps only the listed angles (those present).
    pub fn restrict(&self, angles: &[u16]) -> MultiAngleSample {
        MultiAngleSample {
            clouds: self
                .clouds
                .iter()
                .filter(|(a, _)| angles.contains(a))
                .map(|(a, c)| (*a, c.clone()))
                .collect(),
            label: self.label,
            subject_id: self.subject_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> MotionPointCloud {
        MotionPointCloud::new(
            vec![
                Point::new(1.0, 0.0, 0.0, 0),
                Point::new(0.3, -0.7, 0.2, 1),
                Point::new(-0.4, 0.9, 1.5, 1),
            ],
            0,
            2,
        )
        .unwrap()
    }

    #[test]
    fn rotate_by_zero_is_identity() {
        let c = cloud();
        assert_eq!(rotate_view(&c, 0.0), c);
    }

    #[test]
    fn rotate_unit_x_by_quarter_turn() {
        let c = rotate_view(&cloud(), 90.0);
        let p = c.points[0];
        assert!((p.x - 0.0).abs() < 1e-15);
        assert!((p.y - 1.0).abs() < 1e-15);
        assert_eq!(p.z, 0.0);
    }

    #[test]
    fn rotation_inverse() {
        let c = cloud();
        let back = rotate_view(&rotate_view(&c, 45.0), -45.0);
        for (a, b) in c.points.iter().zip(&back.points) {
            assert!((a.x - b.x).abs() < 1e-12);
            assert!((a.y - b.y).abs() < 1e-12);
            assert_eq!(a.z, b.z);
            assert_eq!(a.frame, b.frame);
        }
    }

    #[test]
    fn invalid_clouds_rejected() {
        assert!(MotionPointCloud::new(vec![], 0, 1).is_err());
        assert!(MotionPointCloud::new(vec![Point::new(0.0, 0.0, 0.0, 3)], 0, 3).is_err());
        assert!(MotionPointCloud::new(vec![Point::new(f64::NAN, 0.0, 0.0, 0)], 0, 1).is_err());
    }
}
