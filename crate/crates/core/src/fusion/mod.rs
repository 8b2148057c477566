//! Multi-angle prediction heads.
//!
//! Angle-invariant heads embed every angle representation with a shared
//! function and pool the set (max, attention or vote). The orientation
//! tracking head keeps one classifier per known angle and averages their
//! class probabilities.

mod attention;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use attention::{AttentionHeadParams, AttentionPool};

use crate::data::ANGLES;
use crate::error::{Error, Result};
use crate::neuro::{softmax, ModelParameters, Mlp, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Max,
    Attention,
    Vote,
    Tracking,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Max => "max",
            HeadKind::Attention => "attention",
            HeadKind::Vote => "vote",
            HeadKind::Tracking => "tracking",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(HeadKind::Max),
            "attention" => Ok(HeadKind::Attention),
            "vote" => Ok(HeadKind::Vote),
            "tracking" => Ok(HeadKind::Tracking),
            other => Err(Error::Config(format!("unknown fusion head {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub head: HeadKind,
    /// Widths of the shared embedding (kernel-size-1 convolutions).
    pub embed: Vec<usize>,
    /// Hidden widths of the classifier; a final layer of C outputs is added.
    pub classifier: Vec<usize>,
    pub attention_heads: usize,
    pub attention_head_dim: usize,
    /// Hidden widths of the vote-pool and per-angle MLPs.
    pub hidden: Vec<usize>,
    /// Angles that get a dedicated classifier in the tracking head.
    pub angles: Vec<u16>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            head: HeadKind::Attention,
            embed: vec![64],
            classifier: vec![64],
            attention_heads: 4,
            attention_head_dim: 16,
            hidden: vec![64],
            angles: ANGLES.to_vec(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let zero = |v: &[usize]| v.contains(&0);
        if zero(&self.embed) || zero(&self.classifier) || zero(&self.hidden) {
            return Err(Error::Config("fusion widths must be non-zero".into()));
        }
        if matches!(self.head, HeadKind::Max | HeadKind::Attention) && self.embed.is_empty() {
            return Err(Error::Config("embedding needs at least one layer".into()));
        }
        if self.head == HeadKind::Attention
            && (self.attention_heads == 0 || self.attention_head_dim == 0)
        {
            return Err(Error::Config("attention needs heads and head_dim > 0".into()));
        }
        if self.head == HeadKind::Tracking && self.angles.is_empty() {
            return Err(Error::Config("tracking head needs at least one angle".into()));
        }
        Ok(())
    }
}

/// Probability vector over the gesture classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NonFinite(format!(
                "class distribution (sum {sum}) is not a probability vector"
            )));
        }
        Ok(Self { probs })
    }

    /// Index of the most probable class (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Angle-invariant pooling choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Max,
    Attention,
    Vote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionHead {
    Max {
        embed: Mlp,
        classifier: Mlp,
    },
    Attention {
        embed: Mlp,
        pool: AttentionPool,
        classifier: Mlp,
    },
    Vote {
        phi: Mlp,
    },
    Tracking {
        heads: BTreeMap<u16, Mlp>,
    },
}

impl FusionHead {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParameters,
        cfg: &FusionConfig,
        input_dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        let with_classes = |hidden: &[usize]| {
            let mut w = hidden.to_vec();
            w.push(classes);
            w
        };
        Ok(match cfg.head {
            HeadKind::Max => {
                let embed = Mlp::new(params, "fusion.embed", input_dim, &cfg.embed, true, rng);
                let classifier = Mlp::new(
                    params,
                    "fusion.classifier",
                    embed.output_dim(),
                    &with_classes(&cfg.classifier),
                    false,
                    rng,
                );
                FusionHead::Max { embed, classifier }
            }
            HeadKind::Attention => {
                let embed = Mlp::new(params, "fusion.embed", input_dim, &cfg.embed, true, rng);
                let pool = AttentionPool::new(
                    params,
                    "fusion.attention",
                    embed.output_dim(),
                    cfg.attention_heads,
                    cfg.attention_head_dim,
                    rng,
                );
                let classifier = Mlp::new(
                    params,
                    "fusion.classifier",
                    embed.output_dim(),
                    &with_classes(&cfg.classifier),
                    false,
                    rng,
                );
                FusionHead::Attention {
                    embed,
                    pool,
                    classifier,
                }
            }
            HeadKind::Vote => FusionHead::Vote {
                phi: Mlp::new(
                    params,
                    "fusion.vote",
                    input_dim,
                    &with_classes(&cfg.hidden),
                    false,
                    rng,
                ),
            },
            HeadKind::Tracking => {
                let mut heads = BTreeMap::new();
                let mut angles = cfg.angles.clone();
                angles.sort_unstable();
                angles.dedup();
                for a in angles {
                    heads.insert(
                        a,
                        Mlp::new(
                            params,
                            &format!("fusion.angle_{a}"),
                            input_dim,
                            &with_classes(&cfg.hidden),
                            false,
                            rng,
                        ),
                    );
                }
                FusionHead::Tracking { heads }
            }
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            FusionHead::Max { .. } => HeadKind::Max,
            FusionHead::Attention { .. } => HeadKind::Attention,
            FusionHead::Vote { .. } => HeadKind::Vote,
            FusionHead::Tracking { .. } => HeadKind::Tracking,
        }
    }

    /// Angles with a dedicated classifier (tracking head only).
    pub fn tracked_angles(&self) -> Vec<u16> {
        match self {
            FusionHead::Tracking { heads } => heads.keys().copied().collect(),
            _ => Vec::new(),
        }
    }

    /// Records the head and returns `1 x C` log-probabilities.
    ///
    /// `reps` pairs each representation with the angle whose classifier
    /// should consume it; angle-invariant heads ignore the angle.
    pub fn log_probs_on(
        &self,
        tape: &mut Tape,
        params: &ModelParameters,
        reps: &[(u16, Var)],
    ) -> Result<Var> {
        match self {
            FusionHead::Tracking { .. } => {
                let logits = self.tracking_logits_on(tape, params, reps)?;
                let log_sm = tape.log_softmax_rows(logits);
                let classes = tape.value(log_sm).cols();
                let shift = -(reps.len() as f64).ln();
                let mut cols = Vec::with_capacity(classes);
                for c in 0..classes {
                    let col = tape.column(log_sm, c)?;
                    let lse = tape.log_sum_exp(col);
                    cols.push(tape.add_scalar(lse, shift));
                }
                tape.concat_cols(&cols)
            }
            _ => {
                let logits = self.logits_on(tape, params, reps)?;
                Ok(tape.log_softmax_rows(logits))
            }
        }
    }

    fn stack(tape: &mut Tape, reps: &[(u16, Var)]) -> Result<Var> {
        if reps.is_empty() {
            return Err(Error::Invalid("no angle representations supplied".into()));
        }
        let rows: Vec<Var> = reps.iter().map(|(_, v)| *v).collect();
        tape.concat_rows(&rows)
    }

    /// Pre-softmax class scores of an angle-invariant head.
    fn logits_on(&self, tape: &mut Tape, params: &ModelParameters, reps: &[(u16, Var)]) -> Result<Var> {
        let set = Self::stack(tape, reps)?;
        match self {
            FusionHead::Max { embed, classifier } => {
                let e = embed.forward(tape, params, set)?;
                let pooled = tape.max_rows(e)?;
                classifier.forward(tape, params, pooled)
            }
            FusionHead::Attention {
                embed,
                pool,
                classifier,
            } => {
                let e = embed.forward(tape, params, set)?;
                let pooled = pool.forward(tape, params, e)?;
                classifier.forward(tape, params, pooled)
            }
            FusionHead::Vote { phi } => {
                let votes = phi.forward(tape, params, set)?;
                Ok(tape.sum_rows(votes))
            }
            FusionHead::Tracking { .. } => unreachable!("tracking has per-angle logits"),
        }
    }

    /// `m x C` per-angle logits of the tracking head, in input order.
    fn tracking_logits_on(
        &self,
        tape: &mut Tape,
        params: &ModelParameters,
        reps: &[(u16, Var)],
    ) -> Result<Var> {
        let FusionHead::Tracking { heads } = self else {
            return Err(Error::Invalid("not a tracking head".into()));
        };
        if reps.is_empty() {
            return Err(Error::Invalid("no angle representations supplied".into()));
        }
        let mut rows = Vec::with_capacity(reps.len());
        for (angle, rep) in reps {
            let mlp = heads.get(angle).ok_or_else(|| {
                Error::Invalid(format!("no trained classifier for angle {angle}"))
            })?;
            rows.push(mlp.forward(tape, params, *rep)?);
        }
        tape.concat_rows(&rows)
    }

    /// Class distribution for a set of plain representation vectors.
    pub fn predict(&self, params: &ModelParameters, reps: &[(u16, Vec<f64>)]) -> Result<ClassDistribution> {
        let mut tape = Tape::new();
        let vars: Vec<(u16, Var)> = reps
            .iter()
            .map(|(a, r)| (*a, tape.leaf(Tensor::row_vector(r.clone()))))
            .collect();
        self.predict_on(&mut tape, params, &vars)
    }

    pub(crate) fn predict_on(
        &self,
        tape: &mut Tape,
        params: &ModelParameters,
        reps: &[(u16, Var)],
    ) -> Result<ClassDistribution> {
        match self {
            FusionHead::Tracking { .. } => {
                let per_angle = self.angle_probs_on(tape, params, reps)?;
                mean_distribution(&per_angle)
            }
            _ => {
                let logits = self.logits_on(tape, params, reps)?;
                tape.ensure_finite(logits, "fusion head")?;
                ClassDistribution::new(softmax(tape.value(logits)).into_data())
            }
        }
    }

    /// Softmax output of each per-angle classifier (tracking head only).
    pub(crate) fn angle_probs_on(
        &self,
        tape: &mut Tape,
        params: &ModelParameters,
        reps: &[(u16, Var)],
    ) -> Result<Vec<Vec<f64>>> {
        let logits = self.tracking_logits_on(tape, params, reps)?;
        tape.ensure_finite(logits, "tracking head")?;
        let probs = softmax(tape.value(logits));
        Ok((0..probs.rows()).map(|r| probs.row(r).to_vec()).collect())
    }

    pub fn angle_probs(
        &self,
        params: &ModelParameters,
        reps: &[(u16, Vec<f64>)],
    ) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars: Vec<(u16, Var)> = reps
            .iter()
            .map(|(a, r)| (*a, tape.leaf(Tensor::row_vector(r.clone()))))
            .collect();
        self.angle_probs_on(&mut tape, params, &vars)
    }
}

/// Element-wise sum of per-angle probability vectors, normalised by the
/// number of angles.
pub fn mean_distribution(per_angle: &[Vec<f64>]) -> Result<ClassDistribution> {
    let Some(first) = per_angle.first() else {
        return Err(Error::Invalid("no angle outputs to combine".into()));
    };
    let mut sum = vec![0.0; first.len()];
    for p in per_angle {
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let m = per_angle.len() as f64;
    ClassDistribution::new(sum.into_iter().map(|s| s / m).collect())
}

/// Angle-invariant prediction: `P = rho(pool(phi(R_1), ..., phi(R_m)))`.
pub fn predict_angle_invariant(
    head: &FusionHead,
    params: &ModelParameters,
    reps: &[Vec<f64>],
    pooling: Pooling,
) -> Result<ClassDistribution> {
    let matches = matches!(
        (pooling, head),
        (Pooling::Max, FusionHead::Max { .. })
            | (Pooling::Attention, FusionHead::Attention { .. })
            | (Pooling::Vote, FusionHead::Vote { .. })
    );
    if !matches {
        return Err(Error::Invalid(format!(
            "{:?} pooling requested from a {} head",
            pooling,
            head.kind().name()
        )));
    }
    let tagged: Vec<(u16, Vec<f64>)> = reps.iter().map(|r| (0, r.clone())).collect();
    head.predict(params, &tagged)
}

/// Orientation tracking prediction: mean of the per-angle softmax outputs.
pub fn predict_orientation_tracking(
    head: &FusionHead,
    params: &ModelParameters,
    reps: &[(u16, Vec<f64>)],
) -> Result<ClassDistribution> {
    if head.kind() != HeadKind::Tracking {
        return Err(Error::Invalid("orientation tracking needs a tracking head".into()));
    }
    head.predict(params, reps)
}

/// Attention pooling of plain vectors.
pub fn attention_pool(
    pool: &AttentionPool,
    params: &ModelParameters,
    vectors: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let set = tape.leaf(Tensor::from_rows(vectors)?);
    let out = pool.forward(&mut tape, params, set)?;
    Ok(tape.value(out).data().to_vec())
}

#[cfg(test)]
mod tests;
