//! Sidelink sensing sessions, resource grants and chirp interference.

mod chirp;
mod engine;
mod session;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use chirp::{
    apply_interference, classify_interference, glitch_duration, ChirpConfig, InterferenceEvent,
    InterferenceKind, InterferenceModel,
};
pub use engine::{
    random_scenario, simulate, Latencies, RandomScenarioConfig, ResourcePool, Scenario, SimReport,
    TraceRecord, UeSpec,
};
pub use session::{step_session, Message, SessionState, SidelinkSession};

use crate::data::{load_sample, write_sample, DatasetManifest, MultiAngleSample, SampleEntry};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSummary {
    pub samples_written: usize,
    pub clouds_touched: usize,
    /// Clouds that lost every point; their angle file is omitted.
    pub clouds_blanked: usize,
    /// Samples dropped because every angle was blanked.
    pub samples_dropped: usize,
}

/// Interference events grouped by the radar angle of the victim UE.
pub fn events_by_angle(scenario: &Scenario, report: &SimReport) -> BTreeMap<u16, Vec<InterferenceEvent>> {
    let mut out: BTreeMap<u16, Vec<InterferenceEvent>> = BTreeMap::new();
    for ev in &report.interference {
        if let Some(ue) = scenario.ues.get(ev.victim) {
            out.entry(ue.angle_deg).or_default().push(ev.clone());
        }
    }
    out
}

/// Copies the dataset at `input` to `output`, degrading every cloud whose
/// angle was a victim in the simulated scenario.
pub fn corrupt_dataset(
    input: &Path,
    output: &Path,
    scenario: &Scenario,
    report: &SimReport,
    seed: u64,
) -> Result<(DatasetManifest, CorruptionSummary)> {
    let manifest = DatasetManifest::load(input)?;
    let by_angle = events_by_angle(scenario, report);
    let mut summary = CorruptionSummary::default();
    let mut entries = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let sample = load_sample(&input.join(&entry.dir))?;
        let mut clouds = BTreeMap::new();
        for (angle, cloud) in &sample.clouds {
            let Some(events) = by_angle.get(angle) else {
                clouds.insert(*angle, cloud.clone());
                continue;
            };
            summary.clouds_touched += 1;
            let mut rng = stream(&[
                seed,
                entry.subject as u64,
                entry.class as u64,
                entry.rep as u64,
                *angle as u64,
            ]);
            match apply_interference(cloud, events, &scenario.interference, &mut rng) {
                Ok(c) => {
                    clouds.insert(*angle, c);
                }
                Err(Error::Data(_)) => summary.clouds_blanked += 1,
                Err(e) => return Err(e),
            }
        }
        if clouds.is_empty() {
            summary.samples_dropped += 1;
            continue;
        }
        let corrupted = MultiAngleSample {
            clouds,
            label: sample.label,
            subject_id: sample.subject_id,
        };
        let files = write_sample(output, &corrupted, entry.rep)?;
        entries.push(SampleEntry {
            files,
            ..entry.clone()
        });
        summary.samples_written += 1;
    }
    let out = DatasetManifest::new(
        manifest.class_names.clone(),
        manifest.subject_ids.clone(),
        manifest.angle_ids.clone(),
        entries,
        manifest.split.clone(),
    );
    out.save(output)?;
    Ok((out, summary))
}

#[cfg(test)]
mod tests;
