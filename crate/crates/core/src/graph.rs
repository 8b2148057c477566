//! Frame-masked temporal K-nearest-neighbour graph.
//!
//! A point may only take neighbours from its own or earlier frames. The
//! distance runs over the full feature vector, frame index included.

use serde::{Deserialize, Serialize};

use crate::data::{MotionPointCloud, Point};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub k: usize,
    /// Multiplier applied to the frame index inside the distance.
    pub frame_scale: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 16,
            frame_scale: 1.0,
        }
    }
}

/// Distance from center `xi` to candidate `xj`; infinite when `xj` lies in
/// a strictly later frame.
pub fn masked_distance(xi: &Point, xj: &Point, frame_scale: f64) -> f64 {
    if xj.frame > xi.frame {
        return f64::INFINITY;
    }
    let a = xi.features(frame_scale);
    let b = xj.features(frame_scale);
    a.iter()
        .zip(&b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// Directed neighbour lists in compressed form: the neighbours of center
/// `i` are `neighbors[offsets[i]..offsets[i + 1]]`, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalGraph {
    pub offsets: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub k: usize,
}

impl TemporalGraph {
    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// `(center, neighbor)` pairs in storage order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |i| self.neighbors_of(i).iter().map(move |&j| (i, j)))
    }

    /// Builds a graph directly from neighbour lists.
    pub fn from_lists(lists: &[Vec<usize>], k: usize) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in lists {
            if list.is_empty() {
                return Err(Error::Data("every node needs at least one neighbour".into()));
            }
            if let Some(bad) = list.iter().find(|&&j| j >= n) {
                return Err(Error::Data(format!("neighbour index {bad} out of range")));
            }
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            offsets,
            neighbors,
            k,
        })
    }
}

/// For each point, the `k` nearest eligible points by [`masked_distance`]
/// (self excluded, lower index on ties). A point with no eligible
/// candidate gets a single self-edge.
pub fn build_temporal_graph(cloud: &MotionPointCloud, cfg: &GraphConfig) -> Result<TemporalGraph> {
    if cfg.k < 1 {
        return Err(Error::Config("graph K must be at least 1".into()));
    }
    let pts = &cloud.points;
    let mut offsets = Vec::with_capacity(pts.len() + 1);
    let mut neighbors = Vec::with_capacity(pts.len() * cfg.k);
    offsets.push(0);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(pts.len());
    for (i, xi) in pts.iter().enumerate() {
        cand.clear();
        for (j, xj) in pts.iter().enumerate() {
            if j == i {
                continue;
            }
            let d = masked_distance(xi, xj, cfg.frame_scale);
            if d.is_finite() {
                cand.push((d, j));
            }
        }
        if cand.is_empty() {
            neighbors.push(i);
        } else {
            let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if cand.len() > cfg.k {
                cand.select_nth_unstable_by(cfg.k - 1, by_dist);
                cand.truncate(cfg.k);
            }
            cand.sort_unstable_by(by_dist);
            neighbors.extend(cand.iter().map(|c| c.1));
        }
        offsets.push(neighbors.len());
    }
    Ok(TemporalGraph {
        offsets,
        neighbors,
        k: cfg.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: Vec<Point>) -> MotionPointCloud {
        let frames = points.iter().map(|p| p.frame).max().unwrap() + 1;
        MotionPointCloud::new(points, 0, frames).unwrap()
    }

    #[test]
    fn later_frames_are_masked() {
        let a = Point::new(0.0, 0.0, 0.0, 1);
        let b = Point::new(0.0, 0.0, 0.0, 2);
        assert_eq!(masked_distance(&a, &b, 1.0), f64::INFINITY);
        assert_eq!(masked_distance(&a, &a, 1.0), 0.0);
    }

    #[test]
    fn frame_gap_enters_distance() {
        let xi = Point::new(0.0, 0.0, 0.0, 2);
        let xj = Point::new(0.1, 0.0, 0.0, 1);
        let d = masked_distance(&xi, &xj, 1.0);
        assert!((d - 1.01f64.sqrt()).abs() < 1e-15);
        assert!((d - 1.00499).abs() < 1e-5);
    }

    #[test]
    fn three_point_example() {
        let g = build_temporal_graph(
            &cloud(vec![
                Point::new(0.0, 0.0, 0.0, 0),
                Point::new(1.0, 0.0, 0.0, 0),
                Point::new(0.1, 0.0, 0.0, 1),
            ]),
            &GraphConfig { k: 1, frame_scale: 1.0 },
        )
        .unwrap();
        assert_eq!(g.neighbors_of(0), &[1]);
        assert_eq!(g.neighbors_of(1), &[0]);
        assert_eq!(g.neighbors_of(2), &[0]);
    }

    #[test]
    fn single_point_gets_self_edge() {
        let g = build_temporal_graph(
            &cloud(vec![Point::new(0.3, 0.1, 0.0, 0)]),
            &GraphConfig::default(),
        )
        .unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 0)]);
    }

    #[test]
    fn saturation_connects_all_eligible() {
        let points: Vec<Point> = (0..6)
            .map(|i| Point::new(i as f64 * 0.3, (i % 2) as f64, 0.0, (i / 2) as u32))
            .collect();
        let c = cloud(points.clone());
        let g = build_temporal_graph(&c, &GraphConfig { k: 50, frame_scale: 1.0 }).unwrap();
        for (i, p) in points.iter().enumerate() {
            let mut got = g.neighbors_of(i).to_vec();
            got.sort_unstable();
            let mut want: Vec<usize> = (0..6)
                .filter(|&j| j != i && points[j].frame <= p.frame)
                .collect();
            if want.is_empty() {
                want.push(i);
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn zero_k_rejected() {
        let c = cloud(vec![Point::new(0.0, 0.0, 0.0, 0)]);
        assert!(build_temporal_graph(&c, &GraphConfig { k: 0, frame_scale: 1.0 }).is_err());
    }
}
