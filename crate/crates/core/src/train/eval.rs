//! Evaluation protocols over cached angle representations.
//!
//! The encoder output of an angle does not depend on which head consumes
//! it, so every protocol encodes each cloud once and then only re-runs the
//! fusion head.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{auc_macro, confusion_matrix, per_class_recall};
use crate::data::MultiAngleSample;
use crate::error::{Error, Result};
use crate::fusion::HeadKind;
use crate::model::{GestureModel, PreparedSample};
use crate::neuro::encode_angle;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct CachedSample {
    pub label: usize,
    pub subject_id: u32,
    /// Representation per data angle, sorted by angle.
    pub reps: BTreeMap<u16, Vec<f64>>,
}

/// Angle representations of every evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationCache {
    pub samples: Vec<CachedSample>,
}

impl RepresentationCache {
    pub fn build(model: &GestureModel, samples: &[MultiAngleSample]) -> Result<Self> {
        let samples = samples
            .par_iter()
            .map(|s| {
                let prepared = PreparedSample::from_sample(s, &model.config.graph)?;
                let reps = prepared
                    .inputs
                    .iter()
                    .map(|(a, g)| {
                        encode_angle(g, *a, &model.params, &model.encoder).map(|r| (*a, r.vector))
                    })
                    .collect::<Result<_>>()?;
                Ok(CachedSample {
                    label: s.label,
                    subject_id: s.subject_id,
                    reps,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if samples.is_empty() {
            return Err(Error::Data("evaluation set is empty".into()));
        }
        Ok(Self { samples })
    }

    /// Angles present in every sample.
    pub fn common_angles(&self) -> Vec<u16> {
        let mut angles: Vec<u16> = self.samples[0].reps.keys().copied().collect();
        angles.retain(|a| self.samples.iter().all(|s| s.reps.contains_key(a)));
        angles
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub balanced_accuracy: f64,
    /// `None` when the labels contain a single class.
    pub auc_macro: Option<f64>,
    pub per_class_recall: Vec<Option<f64>>,
    /// Classes without samples; they are left out of the balanced accuracy.
    pub excluded_classes: Vec<usize>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    fn from_predictions(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Self> {
        let preds: Vec<usize> = probs.iter().map(|p| super::argmax(p)).collect();
        let confusion = confusion_matrix(&preds, labels, classes)?;
        let per_class_recall = per_class_recall(&confusion);
        let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
        let excluded_classes = per_class_recall
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(c, _)| c)
            .collect();
        Ok(Self {
            samples: labels.len(),
            balanced_accuracy: present.iter().sum::<f64>() / present.len() as f64,
            auc_macro: auc_macro(probs, labels).ok(),
            per_class_recall,
            excluded_classes,
            confusion,
        })
    }
}

/// Routing of one sample: `(head angle, data angle)` pairs.
type Routing = Vec<(u16, u16)>;

fn evaluate_routed(
    model: &GestureModel,
    cache: &RepresentationCache,
    routing: impl Fn(usize) -> Routing + Sync,
) -> Result<EvalReport> {
    let probs = cache
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let reps = routing(i)
                .into_iter()
                .map(|(head, data)| {
                    s.reps
                        .get(&data)
                        .map(|r| (head, r.clone()))
                        .ok_or_else(|| Error::Data(format!("sample has no data for angle {data}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(model.head.predict(&model.params, &reps)?.probs)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = cache.samples.iter().map(|s| s.label).collect();
    EvalReport::from_predictions(&probs, &labels, model.classes)
}

/// Evaluation with every available angle routed to its own head.
pub fn evaluate(model: &GestureModel, cache: &RepresentationCache) -> Result<EvalReport> {
    let routes: Vec<Routing> = cache
        .samples
        .iter()
        .map(|s| s.reps.keys().map(|a| (*a, *a)).collect())
        .collect();
    evaluate_routed(model, cache, |i| routes[i].clone())
}

/// Evaluation with only the angles in `subset` supplied to the head.
pub fn eval_angle_subset(
    model: &GestureModel,
    cache: &RepresentationCache,
    subset: &[u16],
) -> Result<EvalReport> {
    if subset.is_empty() {
        return Err(Error::Invalid("angle subset is empty".into()));
    }
    check_tracked(model, subset)?;
    let route: Routing = subset.iter().map(|a| (*a, *a)).collect();
    evaluate_routed(model, cache, |_| route.clone())
}

fn check_tracked(model: &GestureModel, angles: &[u16]) -> Result<()> {
    if model.kind() == HeadKind::Tracking {
        let tracked = model.head.tracked_angles();
        if let Some(a) = angles.iter().find(|a| !tracked.contains(a)) {
            return Err(Error::Invalid(format!("no trained classifier for angle {a}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub balanced_accuracy: f64,
    pub auc_macro: Option<f64>,
}

/// Results of a randomized protocol at one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub protocol: String,
    pub setting: String,
    pub trials: Vec<TrialResult>,
    pub mean_balanced_accuracy: f64,
    /// Population standard deviation over trials.
    pub std_balanced_accuracy: f64,
}

impl ProtocolSummary {
    fn new(protocol: &str, setting: String, trials: Vec<TrialResult>) -> Self {
        let xs: Vec<f64> = trials.iter().map(|t| t.balanced_accuracy).collect();
        let (mean, std) = if xs.iter().all(|x| *x == xs[0]) {
            (xs[0], 0.0)
        } else {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        Self {
            protocol: protocol.to_string(),
            setting,
            trials,
            mean_balanced_accuracy: mean,
            std_balanced_accuracy: std,
        }
    }
}

fn run_trials(
    model: &GestureModel,
    cache: &RepresentationCache,
    trials: usize,
    batch_size: usize,
    route_batch: impl Fn(usize, usize) -> Result<BTreeMap<u16, u16>>,
) -> Result<Vec<TrialResult>> {
    if trials == 0 || batch_size == 0 {
        return Err(Error::Invalid("trials and batch size must be at least 1".into()));
    }
    let batches = cache.samples.len().div_ceil(batch_size);
    (0..trials)
        .map(|t| {
            // head angle -> data angle for every batch of this trial
            let maps = (0..batches)
                .map(|b| route_batch(t, b))
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate_routed(model, cache, |i| {
                maps[i / batch_size].iter().map(|(h, d)| (*h, *d)).collect()
            })?;
            Ok(TrialResult {
                trial: t,
                balanced_accuracy: report.balanced_accuracy,
                auc_macro: report.auc_macro,
            })
        })
        .collect()
}

/// Removes `k` random angles per batch and reports accuracy statistics
/// over `trials` repetitions.
pub fn run_angle_dropout(
    model: &GestureModel,
    cache: &RepresentationCache,
    k: usize,
    trials: usize,
    batch_size: usize,
    seed: u64,
) -> Result<ProtocolSummary> {
    let angles = cache.common_angles();
    if k >= angles.len() {
        return Err(Error::Invalid(format!(
            "cannot drop {k} of {} angles",
            angles.len()
        )));
    }
    check_tracked(model, &angles)?;
    let results = run_trials(model, cache, trials, batch_size, |t, b| {
        let mut rng = stream(&[seed, 0xd7, t as u64, b as u64]);
        let dropped: Vec<u16> = angles.choose_multiple(&mut rng, k).copied().collect();
        Ok(angles
            .iter()
            .filter(|a| !dropped.contains(a))
            .map(|a| (*a, *a))
            .collect())
    })?;
    Ok(ProtocolSummary::new("dropout", k.to_string(), results))
}

/// A uniformly random permutation of `0..n` without fixed points.
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Invalid(format!("no derangement of {n} elements")));
    }
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, v)| i != *v) {
            return Ok(p);
        }
    }
}

/// Routes the data of `k` randomly chosen angles to the classifiers of
/// other chosen angles (a random derangement), per batch.
pub fn run_angle_permutation(
    model: &GestureModel,
    cache: &RepresentationCache,
    k: usize,
    trials: usize,
    batch_size: usize,
    seed: u64,
) -> Result<ProtocolSummary> {
    if model.kind() != HeadKind::Tracking {
        return Err(Error::Invalid("angle permutation needs a tracking head".into()));
    }
    let angles = cache.common_angles();
    check_tracked(model, &angles)?;
    if k == 1 || k > angles.len() {
        return Err(Error::Invalid(format!(
            "cannot permute {k} of {} angles",
            angles.len()
        )));
    }
    let results = run_trials(model, cache, trials, batch_size, |t, b| {
        let mut map: BTreeMap<u16, u16> = angles.iter().map(|a| (*a, *a)).collect();
        if k > 0 {
            let mut rng = stream(&[seed, 0x9e, t as u64, b as u64]);
            let chosen: Vec<u16> = angles.choose_multiple(&mut rng, k).copied().collect();
            let sigma = derangement(k, &mut rng)?;
            for (i, &data) in chosen.iter().enumerate() {
                map.insert(chosen[sigma[i]], data);
            }
        }
        Ok(map)
    })?;
    Ok(ProtocolSummary::new("permutation", k.to_string(), results))
}

/// Per-gesture, per-angle importance normalised over angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub angles: Vec<u16>,
    /// `scores[gesture][angle slot]`; each row sums to 1.
    pub scores: Vec<Vec<f64>>,
}

impl ImportanceTable {
    /// Long-format CSV: one row per gesture and angle.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("gesture,class,angle_deg,importance\n");
        for (g, row) in self.scores.iter().enumerate() {
            let name = class_names.get(g).map_or("", String::as_str);
            for (a, v) in self.angles.iter().zip(row) {
                let _ = writeln!(out, "{name},{g},{a},{v}");
            }
        }
        out
    }
}

/// Mean probability that each angle's own classifier assigns to the true
/// gesture, normalised to sum 1 over angles for every gesture.
pub fn angle_importance(model: &GestureModel, cache: &RepresentationCache) -> Result<ImportanceTable> {
    if model.kind() != HeadKind::Tracking {
        return Err(Error::Invalid("angle importance needs a tracking head".into()));
    }
    let angles = cache.common_angles();
    check_tracked(model, &angles)?;
    let per_sample = cache
        .samples
        .par_iter()
        .map(|s| {
            let reps: Vec<(u16, Vec<f64>)> =
                angles.iter().map(|a| (*a, s.reps[a].clone())).collect();
            let probs = model.head.angle_probs(&model.params, &reps)?;
            Ok(probs.iter().map(|p| p[s.label]).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sums = vec![vec![0.0; angles.len()]; model.classes];
    let mut counts = vec![0usize; model.classes];
    for (s, p) in cache.samples.iter().zip(&per_sample) {
        counts[s.label] += 1;
        for (acc, v) in sums[s.label].iter_mut().zip(p) {
            *acc += v;
        }
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("gesture {g} has no evaluation samples")));
    }
    let scores = sums
        .into_iter()
        .zip(&counts)
        .map(|(row, &n)| {
            let means: Vec<f64> = row.iter().map(|v| v / n as f64).collect();
            let total: f64 = means.iter().sum();
            means.iter().map(|v| v / total).collect()
        })
        .collect();
    Ok(ImportanceTable { angles, scores })
}

/// Writes protocol results as `protocol,setting,trial,balanced_accuracy,auc`.
pub fn write_protocol_csv(path: &Path, summaries: &[ProtocolSummary]) -> Result<()> {
    let mut out = String::from("protocol,setting,trial,balanced_accuracy,auc\n");
    for s in summaries {
        for t in &s.trials {
            let auc = t.auc_macro.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.protocol, s.setting, t.trial, t.balanced_accuracy, auc
            );
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
