//! Shared fixtures for the benchmarks.

use std::collections::BTreeMap;

use rand::Rng;
use sidesense_core::data::{MotionPointCloud, MultiAngleSample, Point, ANGLES};
use sidesense_core::rng::stream;

/// `n` uniform points in the unit cube spread over `frames` frames, sorted
/// by frame.
pub fn random_cloud(n: usize, frames: u32, seed: u64) -> MotionPointCloud {
    let mut rng = stream(&[seed, 0xbe]);
    let mut pts: Vec<Point> = (0..n)
        .map(|_| {
            Point::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0..frames),
            )
        })
        .collect();
    pts.sort_by_key(|p| p.frame);
    MotionPointCloud::new(pts, 0, frames).expect("non-empty cloud")
}

/// A sample with one cloud of `n` points for each of the eight angles.
pub fn random_sample(n: usize, frames: u32, seed: u64) -> MultiAngleSample {
    let clouds: BTreeMap<u16, MotionPointCloud> = ANGLES
        .iter()
        .map(|&a| {
            let mut c = random_cloud(n, frames, seed ^ a as u64);
            c.angle_id = a;
            (a, c)
        })
        .collect();
    MultiAngleSample {
        clouds,
        label: 0,
        subject_id: 0,
    }
}
