//! Full gesture model: shared per-angle encoder followed by a fusion head.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MultiAngleSample;
use crate::error::{Error, Result};
use crate::fusion::{ClassDistribution, FusionConfig, FusionHead, HeadKind};
use crate::graph::GraphConfig;
use crate::neuro::{
    encode_angle_on, Checkpoint, EncoderConfig, EncoderParams, GraphInput, ModelParameters, Tape,
    Var,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub graph: GraphConfig,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.graph.k == 0 {
            return Err(Error::Config("graph.k must be at least 1".into()));
        }
        if !(self.graph.frame_scale.is_finite() && self.graph.frame_scale >= 0.0) {
            return Err(Error::Config("graph.frame_scale must be finite and >= 0".into()));
        }
        self.encoder.validate()?;
        self.fusion.validate()
    }
}

/// Graph inputs of one sample, keyed by the angle each cloud came from.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub label: usize,
    pub subject_id: u32,
    pub inputs: Vec<(u16, GraphInput)>,
}

impl PreparedSample {
    pub fn from_sample(sample: &MultiAngleSample, graph: &GraphConfig) -> Result<Self> {
        let inputs = sample
            .clouds
            .iter()
            .map(|(a, c)| Ok((*a, GraphInput::from_cloud(c, graph)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            label: sample.label,
            subject_id: sample.subject_id,
            inputs,
        })
    }

    pub fn angles(&self) -> Vec<u16> {
        self.inputs.iter().map(|(a, _)| *a).collect()
    }

    /// Routing where every angle feeds its own classifier.
    pub fn routing(&self) -> Vec<(u16, &GraphInput)> {
        self.inputs.iter().map(|(a, g)| (*a, g)).collect()
    }

    /// Routing restricted to `angles` (in the given order).
    pub fn subset(&self, angles: &[u16]) -> Result<Vec<(u16, &GraphInput)>> {
        angles
            .iter()
            .map(|a| {
                self.inputs
                    .iter()
                    .find(|(b, _)| b == a)
                    .map(|(_, g)| (*a, g))
                    .ok_or_else(|| Error::Data(format!("sample has no data for angle {a}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureModel {
    pub config: ModelConfig,
    pub classes: usize,
    pub encoder: EncoderParams,
    pub head: FusionHead,
    pub params: ModelParameters,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    classes: usize,
    config: ModelConfig,
    parameters: Checkpoint,
}

impl GestureModel {
    pub fn new(config: &ModelConfig, classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ModelParameters::default();
        let mut r = rng::stream(&[seed, 0x1417]);
        let encoder = EncoderParams::new(&mut params, &config.encoder, &mut r)?;
        let head = FusionHead::new(
            &mut params,
            &config.fusion,
            encoder.output_dim(),
            classes,
            &mut r,
        )?;
        Ok(Self {
            config: config.clone(),
            classes,
            encoder,
            head,
            params,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.head.kind()
    }

    fn encode_all(
        &self,
        tape: &mut Tape,
        params: &ModelParameters,
        routing: &[(u16, &GraphInput)],
    ) -> Result<Vec<(u16, Var)>> {
        routing
            .iter()
            .map(|(a, g)| Ok((*a, encode_angle_on(tape, params, &self.encoder, g)?)))
            .collect()
    }

    /// Records the full model with `params` and returns `1 x C`
    /// log-probabilities. Each routing entry names the classifier (angle)
    /// that consumes the graph.
    pub fn log_probs_on(
        &self,
        tape: &mut Tape,
        params: &ModelParameters,
        routing: &[(u16, &GraphInput)],
    ) -> Result<Var> {
        let reps = self.encode_all(tape, params, routing)?;
        let lp = self.head.log_probs_on(tape, params, &reps)?;
        tape.ensure_finite(lp, "model output")?;
        Ok(lp)
    }

    pub fn predict(&self, routing: &[(u16, &GraphInput)]) -> Result<ClassDistribution> {
        let mut tape = Tape::new();
        let reps = self.encode_all(&mut tape, &self.params, routing)?;
        self.head.predict_on(&mut tape, &self.params, &reps)
    }

    /// Per-angle softmax outputs of a tracking model.
    pub fn angle_probs(&self, routing: &[(u16, &GraphInput)]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let reps = self.encode_all(&mut tape, &self.params, routing)?;
        self.head.angle_probs_on(&mut tape, &self.params, &reps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            classes: self.classes,
            config: self.config.clone(),
            parameters: self.params.to_checkpoint(),
        };
        let text = serde_json::to_string(&file)
            .map_err(|e| Error::Data(format!("model serialization: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported model version {}",
                path.display(),
                file.format_version
            )));
        }
        let mut model = GestureModel::new(&file.config, file.classes, 0)?;
        let loaded = ModelParameters::from_checkpoint(&file.parameters)?;
        model.params.check_layout(&loaded)?;
        model.params = loaded;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MotionPointCloud, Point};
    use std::collections::BTreeMap;

    fn tiny_config(head: HeadKind) -> ModelConfig {
        ModelConfig {
            graph: GraphConfig { k: 2, frame_scale: 1.0 },
            encoder: EncoderConfig {
                layers: vec![vec![4], vec![6]],
            },
            fusion: FusionConfig {
                head,
                embed: vec![5],
                classifier: vec![4],
                attention_heads: 2,
                attention_head_dim: 2,
                hidden: vec![4],
                ..FusionConfig::default()
            },
        }
    }

    fn sample() -> MultiAngleSample {
        let mut clouds = BTreeMap::new();
        for (i, a) in [0u16, 90, 180].into_iter().enumerate() {
            let pts = (0..6)
                .map(|j| Point::new(j as f64 * 0.1 + i as f64, 0.2 * j as f64, 0.1, j / 2))
                .collect();
            clouds.insert(a, MotionPointCloud::new(pts, a, 3).unwrap());
        }
        MultiAngleSample {
            clouds,
            label: 1,
            subject_id: 0,
        }
    }

    #[test]
    fn every_head_predicts_distribution_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        for kind in [HeadKind::Max, HeadKind::Attention, HeadKind::Vote, HeadKind::Tracking] {
            let cfg = tiny_config(kind);
            let model = GestureModel::new(&cfg, 3, 9).unwrap();
            let prep = PreparedSample::from_sample(&s, &cfg.graph).unwrap();
            let p = model.predict(&prep.routing()).unwrap();
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

            let mut tape = Tape::new();
            let lp = model.log_probs_on(&mut tape, &model.params, &prep.routing()).unwrap();
            for (l, q) in tape.value(lp).data().iter().zip(&p.probs) {
                assert!((l.exp() - q).abs() < 1e-12);
            }

            let path = dir.path().join(format!("{}.json", kind.name()));
            model.save(&path).unwrap();
            let back = GestureModel::load(&path).unwrap();
            assert_eq!(back.params, model.params);
            assert_eq!(back.predict(&prep.routing()).unwrap(), p);
        }
    }

    #[test]
    fn subset_requires_present_angles() {
        let prep = PreparedSample::from_sample(&sample(), &GraphConfig::default()).unwrap();
        assert_eq!(prep.subset(&[180, 0]).unwrap().len(), 2);
        assert!(prep.subset(&[45]).is_err());
    }
}
