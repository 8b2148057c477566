//! Edge-convolution encoder producing one representation vector per angle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ModelParameters, Mlp};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::data::MotionPointCloud;
use crate::error::{Error, Result};
use crate::graph::{build_temporal_graph, GraphConfig, TemporalGraph};

/// Input dimension of the first layer: `x, y, z` (the frame index only
/// shapes the graph).
pub const POINT_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Message-MLP widths for each edge-convolution layer.
    pub layers: Vec<Vec<usize>>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: vec![vec![64, 64], vec![64, 128]],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.iter().any(|l| l.is_empty() || l.contains(&0)) {
            return Err(Error::Config(
                "encoder needs at least one layer and non-zero widths".into(),
            ));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .last()
            .and_then(|l| l.last())
            .copied()
            .unwrap_or(0)
    }
}

/// Message MLPs of every edge-convolution layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<Mlp>,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParameters,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut prev = POINT_DIM;
        let mut layers = Vec::with_capacity(cfg.layers.len());
        for (l, widths) in cfg.layers.iter().enumerate() {
            let mlp = Mlp::new(params, &format!("encoder.{l}"), 2 * prev, widths, true, rng);
            prev = mlp.output_dim();
            layers.push(mlp);
        }
        Ok(Self { layers })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Mlp::output_dim)
    }
}

/// A graph together with the per-point input features (`x, y, z`).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub graph: TemporalGraph,
    pub features: Tensor,
}

impl GraphInput {
    pub fn from_cloud(cloud: &MotionPointCloud, cfg: &GraphConfig) -> Result<Self> {
        let graph = build_temporal_graph(cloud, cfg)?;
        let data = cloud.points.iter().flat_map(|p| p.xyz()).collect();
        Ok(Self {
            graph,
            features: Tensor::from_vec(cloud.len(), POINT_DIM, data)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleRepresentation {
    pub angle_id: u16,
    pub vector: Vec<f64>,
}

/// One edge-convolution layer: every node takes the channel-wise max of
/// `M(h_i, h_j - h_i)` over its neighbours `j`.
pub fn edge_conv_layer(
    tape: &mut Tape,
    params: &ModelParameters,
    graph: &TemporalGraph,
    states: Var,
    mlp: &Mlp,
) -> Result<Var> {
    let dim = tape.value(states).cols();
    if mlp.input_dim() != 2 * dim {
        return Err(Error::Shape(format!(
            "edge MLP takes {} inputs but node states have {dim} channels",
            mlp.input_dim()
        )));
    }
    if tape.value(states).rows() != graph.num_nodes() {
        return Err(Error::Shape("node state count differs from graph size".into()));
    }
    let (centers, neighbors): (Vec<usize>, Vec<usize>) = graph.edges().unzip();
    let hc = tape.gather_rows(states, &centers)?;
    let hn = tape.gather_rows(states, &neighbors)?;
    let diff = tape.sub(hn, hc)?;
    let input = tape.concat_cols(&[hc, diff])?;
    let messages = mlp.forward(tape, params, input)?;
    let out = tape.segment_max(messages, &graph.offsets)?;
    tape.ensure_finite(out, "edge convolution")?;
    Ok(out)
}

/// Records the encoder on `tape` and returns the `1 x d_R` representation.
pub fn encode_angle_on(
    tape: &mut Tape,
    params: &ModelParameters,
    encoder: &EncoderParams,
    input: &GraphInput,
) -> Result<Var> {
    if input.graph.num_nodes() == 0 {
        return Err(Error::Data("cannot encode an empty graph".into()));
    }
    let mut h = tape.leaf(input.features.clone());
    for mlp in &encoder.layers {
        h = edge_conv_layer(tape, params, &input.graph, h, mlp)?;
    }
    tape.max_rows(h)
}

/// Channel-wise max over all final node states.
pub fn encode_angle(
    input: &GraphInput,
    angle_id: u16,
    params: &ModelParameters,
    encoder: &EncoderParams,
) -> Result<AngleRepresentation> {
    let mut tape = Tape::new();
    let r = encode_angle_on(&mut tape, params, encoder, input)?;
    Ok(AngleRepresentation {
        angle_id,
        vector: tape.value(r).data().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Point;
    use crate::neuro::params::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(widths: Vec<Vec<usize>>) -> (ModelParameters, EncoderParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut params = ModelParameters::default();
        let enc = EncoderParams::new(&mut params, &EncoderConfig { layers: widths }, &mut rng)
            .unwrap();
        (params, enc)
    }

    fn random_cloud(n: usize, seed: u64) -> MotionPointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|i| {
                Point::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    (i % 4) as u32,
                )
            })
            .collect();
        MotionPointCloud::new(points, 0, 4).unwrap()
    }

    #[test]
    fn identical_neighbours_give_zero_difference_message() {
        let (params, enc) = setup(vec![vec![5, 4]]);
        let graph = TemporalGraph::from_lists(&[vec![0], vec![0], vec![1]], 1).unwrap();
        let features = Tensor::from_rows(&vec![vec![0.2, -0.1, 0.4]; 3]).unwrap();
        let mut tape = Tape::new();
        let h = tape.leaf(features.clone());
        let out = edge_conv_layer(&mut tape, &params, &graph, h, &enc.layers[0]).unwrap();
        let mut t2 = Tape::new();
        let x = t2.leaf(
            Tensor::from_rows(&[vec![0.2, -0.1, 0.4, 0.0, 0.0, 0.0]]).unwrap(),
        );
        let m = enc.layers[0].forward(&mut t2, &params, x).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(out).row(r), t2.value(m).row(0));
        }
    }

    #[test]
    fn hand_computed_single_layer() {
        // One linear layer 6 -> 2 with ReLU, weights set by hand.
        let mut params = ModelParameters::default();
        let w = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, -1.0],
            vec![0.5, 0.5],
        ])
        .unwrap();
        let layer = Linear {
            weight: params.add("w", w),
            bias: params.add("b", Tensor::row_vector(vec![0.1, -0.2])),
            input: 6,
            output: 2,
        };
        let mlp = Mlp {
            layers: vec![layer],
            relu_last: true,
        };
        let feats = [[0.0, 0.0, 0.0], [1.0, 0.5, 0.0], [0.2, 0.1, 1.0]];
        // node 0 <- {1, 2}; node 1 <- {0}; node 2 <- {0, 1}
        let lists = vec![vec![1, 2], vec![0], vec![0, 1]];
        let graph = TemporalGraph::from_lists(&lists, 2).unwrap();
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::from_rows(&feats.map(|f| f.to_vec())).unwrap());
        let out = edge_conv_layer(&mut tape, &params, &graph, h, &mlp).unwrap();

        let message = |i: usize, j: usize| -> [f64; 2] {
            let hi = feats[i];
            let d = [feats[j][0] - hi[0], feats[j][1] - hi[1], feats[j][2] - hi[2]];
            let a = hi[0] + 2.0 * d[0] + 0.5 * d[2] + 0.1;
            let b = hi[1] - d[1] + 0.5 * d[2] - 0.2;
            [a.max(0.0), b.max(0.0)]
        };
        for (i, list) in lists.iter().enumerate() {
            let mut want = [f64::NEG_INFINITY; 2];
            for &j in list {
                let m = message(i, j);
                want[0] = want[0].max(m[0]);
                want[1] = want[1].max(m[1]);
            }
            for c in 0..2 {
                assert!((tape.value(out).get(i, c) - want[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_node_representation_is_its_state() {
        let (params, enc) = setup(vec![vec![4]]);
        let cloud = MotionPointCloud::new(vec![Point::new(0.1, 0.2, 0.3, 0)], 0, 1).unwrap();
        let input = GraphInput::from_cloud(&cloud, &GraphConfig::default()).unwrap();
        let r = encode_angle(&input, 0, &params, &enc).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.0, 0.0, 0.0]]).unwrap());
        let m = enc.layers[0].forward(&mut tape, &params, x).unwrap();
        assert_eq!(r.vector, tape.value(m).data());
    }

    #[test]
    fn representation_invariant_to_point_permutation() {
        let (params, enc) = setup(vec![vec![8, 8], vec![8, 6]]);
        let cloud = random_cloud(30, 3);
        let cfg = GraphConfig { k: 4, frame_scale: 1.0 };
        let base = encode_angle(&GraphInput::from_cloud(&cloud, &cfg).unwrap(), 0, &params, &enc)
            .unwrap();
        let mut perm = cloud.clone();
        perm.points.reverse();
        perm.points.swap(3, 17);
        let other = encode_angle(&GraphInput::from_cloud(&perm, &cfg).unwrap(), 0, &params, &enc)
            .unwrap();
        assert_eq!(base.vector, other.vector);
    }

    #[test]
    fn representation_invariant_to_duplication() {
        let (params, enc) = setup(vec![vec![8], vec![6]]);
        let cloud = random_cloud(20, 5);
        let input = GraphInput::from_cloud(&cloud, &GraphConfig { k: 3, frame_scale: 1.0 }).unwrap();
        let n = input.graph.num_nodes();
        let mut lists: Vec<Vec<usize>> = (0..n).map(|i| input.graph.neighbors_of(i).to_vec()).collect();
        for i in 0..n {
            lists.push(input.graph.neighbors_of(i).iter().map(|j| j + n).collect());
        }
        let mut rows: Vec<Vec<f64>> = (0..n).map(|i| input.features.row(i).to_vec()).collect();
        rows.extend(rows.clone());
        let doubled = GraphInput {
            graph: TemporalGraph::from_lists(&lists, 3).unwrap(),
            features: Tensor::from_rows(&rows).unwrap(),
        };
        let a = encode_angle(&input, 0, &params, &enc).unwrap();
        let b = encode_angle(&doubled, 0, &params, &enc).unwrap();
        assert_eq!(a.vector, b.vector);
    }

    #[test]
    fn width_change_is_local() {
        let (_, a) = setup(vec![vec![8, 8], vec![8, 6]]);
        let (_, b) = setup(vec![vec![8, 16], vec![8, 6]]);
        assert_eq!(a.output_dim(), b.output_dim());
        assert_eq!(a.layers[0].output_dim(), 8);
        assert_eq!(b.layers[0].output_dim(), 16);
        assert_eq!(b.layers[1].input_dim(), 32);
        assert_eq!(a.layers[1].output_dim(), b.layers[1].output_dim());
    }

    #[test]
    fn mismatched_states_rejected() {
        let (params, enc) = setup(vec![vec![4]]);
        let graph = TemporalGraph::from_lists(&[vec![0]], 1).unwrap();
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::zeros(1, 5));
        assert!(edge_conv_layer(&mut tape, &params, &graph, h, &enc.layers[0]).is_err());
    }
}
