//! Density-based per-frame resampling: K-means centroids to shrink a
//! frame, iterative agglomerative merging to grow it.

use rand::Rng;

use crate::data::Point;
use crate::error::{Error, Result};

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 50;
pub const KMEANS_TOL: f64 = 1e-6;
/// Frames up to this size are also solved by exhaustive assignment.
pub const KMEANS_EXACT_MAX: usize = 8;

type Vec3 = [f64; 3];

fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec3>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances of points to their centroid.
    pub objective: f64,
}

/// Nearest centroid, lowest index on ties.
fn nearest(p: &Vec3, centroids: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centroids.iter().enumerate() {
        let d = dist2(p, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centroids<R: Rng + ?Sized>(points: &[Vec3], k: usize, rng: &mut R) -> Vec<Vec3> {
    let mut chosen = vec![rng.gen_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive weight exists")
        } else {
            (0..points.len())
                .find(|i| !chosen.contains(i))
                .unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i]).collect()
}

fn lloyd(points: &[Vec3], mut centroids: Vec<Vec3>) -> KMeansResult {
    let k = centroids.len();
    let mut assignment = vec![0; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        for (i, p) in points.iter().enumerate() {
            assignment[i] = nearest(p, &centroids).0;
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            for d in 0..3 {
                sums[c][d] += p[d];
            }
            counts[c] += 1;
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let next = if counts[c] > 0 {
                let n = counts[c] as f64;
                [sums[c][0] / n, sums[c][1] / n, sums[c][2] / n]
            } else {
                // Re-seed an empty cluster on the worst-served point.
                let mut far = (0, -1.0);
                for (i, p) in points.iter().enumerate() {
                    let d = dist2(p, &centroids[assignment[i]]);
                    if d > far.1 {
                        far = (i, d);
                    }
                }
                points[far.0]
            };
            shift = shift.max(dist2(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    // Final consistent assignment and means.
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest(p, &centroids).0;
    }
    let mut sums = vec![[0.0; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(&assignment) {
        for d in 0..3 {
            sums[c][d] += p[d];
        }
        counts[c] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            centroids[c] = [sums[c][0] / n, sums[c][1] / n, sums[c][2] / n];
        }
    }
    let objective = points
        .iter()
        .zip(&assignment)
        .map(|(p, &c)| dist2(p, &centroids[c]))
        .sum();
    KMeansResult {
        centroids,
        assignment,
        objective,
    }
}

/// K-means with D²-weighted seeding and [`KMEANS_RESTARTS`] restarts; the
/// lowest-objective run wins (earliest on ties). Lloyd iterations can stall
/// in a local minimum, so frames of at most [`KMEANS_EXACT_MAX`] points are
/// additionally solved exactly.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec3], k: usize, rng: &mut R) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::Data("k-means on an empty point set".into()));
    }
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(points, seed_centroids(points, k, rng));
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    if points.len() <= KMEANS_EXACT_MAX && k < points.len() {
        let exact = exhaustive(points, k);
        if exact.objective < best.objective {
            best = exact;
        }
    }
    Ok(best)
}

fn partition_result(points: &[Vec3], labels: &[usize], k: usize) -> KMeansResult {
    let centroids: Vec<Vec3> = (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..points.len()).filter(|&i| labels[i] == c).collect();
            centroid_of(&members, points)
        })
        .collect();
    let objective = points
        .iter()
        .zip(labels)
        .map(|(p, &c)| dist2(p, &centroids[c]))
        .sum();
    KMeansResult {
        centroids,
        assignment: labels.to_vec(),
        objective,
    }
}

/// Best partition into exactly `k` non-empty clusters over all canonical
/// labellings (first found on ties).
fn exhaustive(points: &[Vec3], k: usize) -> KMeansResult {
    fn walk(points: &[Vec3], k: usize, labels: &mut Vec<usize>, used: usize, best: &mut Option<KMeansResult>) {
        if labels.len() == points.len() {
            if used == k {
                let r = partition_result(points, labels, k);
                if best.as_ref().is_none_or(|b| r.objective < b.objective) {
                    *best = Some(r);
                }
            }
            return;
        }
        // not enough points left to open the remaining clusters
        if k - used > points.len() - labels.len() {
            return;
        }
        for c in 0..(used + 1).min(k) {
            labels.push(c);
            walk(points, k, labels, used.max(c + 1), best);
            labels.pop();
        }
    }
    let mut best = None;
    walk(points, k, &mut Vec::with_capacity(points.len()), 0, &mut best);
    best.expect("k <= number of points")
}

fn average_linkage(a: &[usize], b: &[usize], points: &[Vec3]) -> f64 {
    let mut total = 0.0;
    for &i in a {
        for &j in b {
            total += dist2(&points[i], &points[j]).sqrt();
        }
    }
    total / (a.len() * b.len()) as f64
}

fn centroid_of(members: &[usize], points: &[Vec3]) -> Vec3 {
    let n = members.len() as f64;
    let mut c = [0.0; 3];
    for &i in members {
        for d in 0..3 {
            c[d] += points[i][d];
        }
    }
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Grows a point set to `target` by agglomerative merging: the closest
/// pair of active clusters (average linkage) is merged and the centroid of
/// the merged cluster is appended as a new point. The merged cluster stays
/// active. When fewer than two clusters remain, the hierarchy restarts
/// from the current points as singletons.
pub fn ahc_upsample(points: &[Vec3], target: usize) -> Vec<Vec3> {
    let mut out = points.to_vec();
    if out.is_empty() {
        return out;
    }
    let mut clusters: Vec<Vec<usize>> = (0..out.len()).map(|i| vec![i]).collect();
    while out.len() < target {
        if clusters.len() < 2 {
            if out.len() < 2 {
                out.push(out[0]);
                continue;
            }
            clusters = (0..out.len()).map(|i| vec![i]).collect();
        }
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let d = average_linkage(&clusters[a], &clusters[b], &out);
                if d < best.2 {
                    best = (a, b, d);
                }
            }
        }
        let (a, b, _) = best;
        let merged_b = clusters.remove(b);
        clusters[a].extend(merged_b);
        let centre = centroid_of(&clusters[a], &out);
        out.push(centre);
    }
    out
}

/// Resamples one frame to exactly `m` points.
pub fn resample_frame<R: Rng + ?Sized>(
    frame_points: &[Point],
    m: usize,
    rng: &mut R,
) -> Result<Vec<Point>> {
    let Some(first) = frame_points.first() else {
        return Err(Error::Data("cannot resample an empty frame".into()));
    };
    if m == 0 {
        return Err(Error::Config("points per frame must be at least 1".into()));
    }
    let frame = first.frame;
    let xyz: Vec<Vec3> = frame_points.iter().map(Point::xyz).collect();
    let resampled = match xyz.len().cmp(&m) {
        std::cmp::Ordering::Equal => return Ok(frame_points.to_vec()),
        std::cmp::Ordering::Greater => kmeans(&xyz, m, rng)?.centroids,
        std::cmp::Ordering::Less => ahc_upsample(&xyz, m),
    };
    Ok(resampled
        .into_iter()
        .map(|p| Point::new(p[0], p[1], p[2], frame))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[Vec3]) -> Vec<Point> {
        v.iter().map(|p| Point::new(p[0], p[1], p[2], 4)).collect()
    }

    #[test]
    fn coincident_pair_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = resample_frame(&pts(&[[0.5, 1.0, 2.0], [0.5, 1.0, 2.0]]), 1, &mut rng).unwrap();
        assert_eq!(out, pts(&[[0.5, 1.0, 2.0]]));
    }

    #[test]
    fn exact_count_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let square = pts(&[[0., 0., 0.], [1., 0., 0.], [1., 1., 0.], [0., 1., 0.]]);
        assert_eq!(resample_frame(&square, 4, &mut rng).unwrap(), square);
    }

    #[test]
    fn two_points_to_three_adds_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = resample_frame(&pts(&[[0., 0., 0.], [2., 0., 0.]]), 3, &mut rng).unwrap();
        assert_eq!(out, pts(&[[0., 0., 0.], [2., 0., 0.], [1., 0., 0.]]));
        assert!(out.iter().all(|p| p.frame == 4));
    }

    #[test]
    fn single_point_grows_by_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = resample_frame(&pts(&[[0.3, 0.2, 0.1]]), 4, &mut rng).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|p| p.xyz() == [0.3, 0.2, 0.1]));
    }

    #[test]
    fn upsampling_many_steps() {
        let out = ahc_upsample(&[[0., 0., 0.], [1., 0., 0.], [5., 0., 0.]], 9);
        assert_eq!(out.len(), 9);
        // First merge joins the closest pair.
        assert_eq!(out[3], [0.5, 0.0, 0.0]);
    }

    #[test]
    fn empty_frame_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(resample_frame(&[], 3, &mut rng).is_err());
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points = [
            [0., 0., 0.],
            [0.1, 0., 0.],
            [0., 0.1, 0.],
            [5., 5., 5.],
            [5.1, 5., 5.],
        ];
        let r = kmeans(&points, 2, &mut rng).unwrap();
        assert_eq!(r.assignment[0], r.assignment[1]);
        assert_eq!(r.assignment[3], r.assignment[4]);
        assert_ne!(r.assignment[0], r.assignment[3]);
    }

    #[test]
    fn identical_points_more_than_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points = [[1., 1., 1.]; 5];
        let r = kmeans(&points, 3, &mut rng).unwrap();
        assert_eq!(r.centroids.len(), 3);
        assert!(r.centroids.iter().all(|c| *c == [1., 1., 1.]));
        assert_eq!(r.objective, 0.0);
    }
}
