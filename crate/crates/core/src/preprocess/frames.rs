use crate::data::{MotionPointCloud, Point};
use crate::error::{Error, Result};

/// Redistributes the points of a cloud into `frames` equally sized frames.
///
/// Points keep their acquisition order; the first `n mod frames` frames
/// receive one extra point. Coordinates are untouched.
pub fn bin_frames(cloud: &MotionPointCloud, frames: usize) -> Result<MotionPointCloud> {
    if frames == 0 {
        return Err(Error::Config("target frame count must be at least 1".into()));
    }
    let n = cloud.len();
    if n < frames {
        return Err(Error::Data(format!(
            "cloud at angle {} has {n} points, fewer than the {frames} target frames",
            cloud.angle_id
        )));
    }
    let mut ordered: Vec<Point> = cloud.points.clone();
    ordered.sort_by_key(|p| p.frame);

    let base = n / frames;
    let extra = n % frames;
    let mut points = Vec::with_capacity(n);
    let mut iter = ordered.into_iter();
    for f in 0..frames {
        let take = base + usize::from(f < extra);
        for mut p in iter.by_ref().take(take) {
            p.frame = f as u32;
            points.push(p);
        }
    }
    Ok(MotionPointCloud {
        points,
        angle_id: cloud.angle_id,
        frame_count: frames as u32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> MotionPointCloud {
        let points = (0..n)
            .map(|i| Point::new(i as f64, 0.0, 0.0, (i / 3) as u32))
            .collect();
        MotionPointCloud::new(points, 45, (n as u32).div_ceil(3)).unwrap()
    }

    #[test]
    fn even_split() {
        let out = bin_frames(&line(64), 32).unwrap();
        assert_eq!(out.frame_sizes(), vec![2; 32]);
        assert_eq!(out.frame_count, 32);
    }

    #[test]
    fn one_point_per_frame_keeps_order() {
        let out = bin_frames(&line(32), 32).unwrap();
        for (i, p) in out.points.iter().enumerate() {
            assert_eq!(p.frame, i as u32);
            assert_eq!(p.x, i as f64);
        }
    }

    #[test]
    fn remainder_goes_to_earliest_frames() {
        let out = bin_frames(&line(33), 32).unwrap();
        let sizes = out.frame_sizes();
        assert_eq!(sizes[0], 2);
        assert!(sizes[1..].iter().all(|&s| s == 1));
        let out = bin_frames(&line(70), 32).unwrap();
        let sizes = out.frame_sizes();
        assert_eq!(&sizes[..6], &[3; 6]);
        assert!(sizes[6..].iter().all(|&s| s == 2));
    }

    #[test]
    fn too_few_points_is_an_error() {
        assert!(bin_frames(&line(31), 32).is_err());
        assert!(bin_frames(&line(5), 0).is_err());
    }
}
