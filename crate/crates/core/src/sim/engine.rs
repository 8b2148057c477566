//! Event-driven simulation of sensing sessions sharing a gNB resource pool.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::chirp::{classify_interference, ChirpConfig, InterferenceEvent, InterferenceModel};
use super::session::{step_session, Message, SessionState, SidelinkSession};
use crate::data::{angle_slot, ANGLES};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Exclusive resource blocks of one gNB with a FIFO wait queue.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourcePool {
    total: usize,
    free: BTreeSet<usize>,
    waiting: VecDeque<usize>,
}

impl ResourcePool {
    pub fn new(total: usize) -> Self {
        Self {
            total,
            free: (0..total).collect(),
            waiting: VecDeque::new(),
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn is_free(&self, block: usize) -> bool {
        self.free.contains(&block)
    }

    /// Lowest free block, or `None` after queueing `session`.
    pub fn acquire(&mut self, session: usize) -> Option<usize> {
        match self.free.pop_first() {
            Some(b) => Some(b),
            None => {
                self.waiting.push_back(session);
                None
            }
        }
    }

    /// Returns `block` and hands it to the longest waiter, if any.
    pub fn release(&mut self, block: usize) -> Option<(usize, usize)> {
        match self.waiting.pop_front() {
            Some(s) => Some((s, block)),
            None => {
                self.free.insert(block);
                None
            }
        }
    }

    pub fn waiting(&self) -> usize {
        self.waiting.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSpec {
    pub id: u32,
    pub request_time_us: u64,
    #[serde(default)]
    pub peers: Vec<u32>,
    #[serde(default)]
    pub chirp: ChirpConfig,
    /// Misconfiguration mode: reuse the block held by this UE's session.
    #[serde(default)]
    pub overlap_with: Option<u32>,
    /// Radar position this UE senses from, degrees.
    #[serde(default)]
    pub angle_deg: u16,
}

/// Per-message delays, microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Latencies {
    pub grant_us: u64,
    pub peer_setup_us: u64,
    pub sensing_start_us: u64,
    pub sensing_us: u64,
    pub aggregate_us: u64,
    pub release_us: u64,
}

impl Default for Latencies {
    fn default() -> Self {
        Self {
            grant_us: 500,
            peer_setup_us: 1_000,
            sensing_start_us: 100,
            sensing_us: 3_000_000,
            aggregate_us: 2_000,
            release_us: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub resource_blocks: usize,
    pub latencies: Latencies,
    pub interference: InterferenceModel,
    pub ues: Vec<UeSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            resource_blocks: 8,
            latencies: Latencies::default(),
            interference: InterferenceModel::default(),
            ues: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.resource_blocks == 0 {
            return Err(Error::Config("resource_blocks must be at least 1".into()));
        }
        self.interference.validate()?;
        let ids: BTreeSet<u32> = self.ues.iter().map(|u| u.id).collect();
        if ids.len() != self.ues.len() {
            return Err(Error::Config("UE ids must be unique".into()));
        }
        for u in &self.ues {
            u.chirp.validate()?;
            if angle_slot(u.angle_deg).is_none() {
                return Err(Error::Config(format!(
                    "UE {} has unsupported angle {}",
                    u.id, u.angle_deg
                )));
            }
            if let Some(t) = u.overlap_with {
                if t == u.id || !ids.contains(&t) {
                    return Err(Error::Config(format!(
                        "UE {} overlaps with unknown UE {t}",
                        u.id
                    )));
                }
            }
            if u.peers.contains(&u.id) {
                return Err(Error::Config(format!("UE {} lists itself as a peer", u.id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }
}

/// Knobs of [`random_scenario`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomScenarioConfig {
    pub ues: usize,
    pub resource_blocks: usize,
    /// Requests arrive uniformly in `[0, horizon_us)`.
    pub horizon_us: u64,
    pub p_peers: f64,
    pub p_overlap: f64,
}

impl Default for RandomScenarioConfig {
    fn default() -> Self {
        Self {
            ues: 64,
            resource_blocks: 8,
            horizon_us: 20_000_000,
            p_peers: 0.3,
            p_overlap: 0.05,
        }
    }
}

const OVERLAP_WINDOW: usize = 8;

/// A scenario with random arrivals, peers, chirp slopes and occasional
/// deliberate block overlap. UE ids follow arrival order.
pub fn random_scenario(seed: u64, cfg: &RandomScenarioConfig) -> Scenario {
    let mut rng = stream(&[seed, 0x51]);
    let slopes = [10.0, 30.0, 70.0];
    let mut arrivals: Vec<u64> = (0..cfg.ues)
        .map(|_| rng.gen_range(0..cfg.horizon_us.max(1)))
        .collect();
    arrivals.sort_unstable();
    let mut ues: Vec<UeSpec> = Vec::with_capacity(cfg.ues);
    for (i, &request_time_us) in arrivals.iter().enumerate() {
        let id = i as u32;
        let mut peers = Vec::new();
        if cfg.ues > 1 && rng.gen_bool(cfg.p_peers) {
            let n = rng.gen_range(1..=3.min(cfg.ues - 1));
            while peers.len() < n {
                let p = rng.gen_range(0..cfg.ues as u32);
                if p != id && !peers.contains(&p) {
                    peers.push(p);
                }
            }
        }
        // misconfigured UEs reuse the block of a recent arrival
        let overlap_with = (i > 0 && rng.gen_bool(cfg.p_overlap))
            .then(|| (i - 1 - rng.gen_range(0..i.min(OVERLAP_WINDOW))) as u32);
        ues.push(UeSpec {
            id,
            request_time_us,
            peers,
            chirp: ChirpConfig {
                slope_mhz_per_us: *slopes.choose(&mut rng).expect("non-empty"),
                start_offset_us: rng.gen_range(0.0..2.0),
                ..ChirpConfig::default()
            },
            overlap_with,
            angle_deg: *ANGLES.choose(&mut rng).expect("non-empty"),
        });
    }
    Scenario {
        seed,
        resource_blocks: cfg.resource_blocks,
        ues,
        ..Scenario::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_us: u64,
    pub session: usize,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trace: Vec<TraceRecord>,
    pub interference: Vec<InterferenceEvent>,
    pub sessions: Vec<SidelinkSession>,
    pub events_processed: usize,
    pub conservation_violations: usize,
    pub illegal_transitions: usize,
    /// Representation vectors fused at each initiator (one per participant).
    pub features_aggregated: Vec<usize>,
    pub final_free_blocks: usize,
}

impl SimReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("time_us,session,event\n");
        for r in &self.trace {
            let _ = writeln!(out, "{},{},{}", r.time_us, r.session, r.event);
        }
        out
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        fs::write(path, self.trace_csv()).map_err(|e| Error::io(path, e))
    }
}

struct Engine<'a> {
    scenario: &'a Scenario,
    sessions: Vec<SidelinkSession>,
    pool: ResourcePool,
    /// session -> block, for every block currently reserved or held
    holdings: BTreeMap<usize, usize>,
    queue: BinaryHeap<Reverse<(u64, u64, usize, MessageKey)>>,
    seq: u64,
    report: SimReport,
}

/// Orderable encoding of [`Message`] for the event heap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum MessageKey {
    Request,
    Grant(usize),
    OpenPeerChannel,
    StartSensing,
    Aggregate,
    Release,
    Close,
}

impl MessageKey {
    fn message(self) -> Message {
        match self {
            MessageKey::Request => Message::Request,
            MessageKey::Grant(block) => Message::Grant { block },
            MessageKey::OpenPeerChannel => Message::OpenPeerChannel,
            MessageKey::StartSensing => Message::StartSensing,
            MessageKey::Aggregate => Message::Aggregate,
            MessageKey::Release => Message::Release,
            MessageKey::Close => Message::Close,
        }
    }
}

impl<'a> Engine<'a> {
    fn schedule(&mut self, time: u64, session: usize, msg: MessageKey) {
        self.seq += 1;
        self.queue.push(Reverse((time, self.seq, session, msg)));
    }

    fn log(&mut self, time: u64, session: usize, event: String) {
        self.report.trace.push(TraceRecord {
            time_us: time,
            session,
            event,
        });
    }

    fn conservation_holds(&self) -> bool {
        let held: BTreeSet<usize> = self.holdings.values().copied().collect();
        held.iter().all(|b| !self.pool.is_free(*b))
            && held.len() + self.pool.free_count() == self.pool.total()
    }

    fn session_index(&self, ue: u32) -> Option<usize> {
        self.scenario.ues.iter().position(|u| u.id == ue)
    }

    fn handle(&mut self, time: u64, s: usize, key: MessageKey) {
        let msg = key.message();
        let next = match step_session(&self.sessions[s], msg) {
            Ok(n) => n,
            Err(e) => {
                self.report.illegal_transitions += 1;
                self.log(time, s, format!("error: {e}"));
                return;
            }
        };
        self.sessions[s] = next;
        self.log(time, s, format!("{msg} -> {}", self.sessions[s].state));
        let lat = self.scenario.latencies;
        match key {
            MessageKey::Request => self.allocate(time, s),
            MessageKey::Grant(_) => {
                if self.sessions[s].peers.is_empty() {
                    self.schedule(time + lat.sensing_start_us, s, MessageKey::StartSensing);
                } else {
                    self.schedule(time + lat.peer_setup_us, s, MessageKey::OpenPeerChannel);
                }
            }
            MessageKey::OpenPeerChannel => {
                self.schedule(time + lat.sensing_start_us, s, MessageKey::StartSensing)
            }
            MessageKey::StartSensing => {
                self.detect_interference(time, s);
                self.schedule(time + lat.sensing_us, s, MessageKey::Aggregate);
            }
            MessageKey::Aggregate => {
                let n = 1 + self.sessions[s].peers.len();
                self.report.features_aggregated[s] = n;
                self.log(time, s, format!("fused {n} representations"));
                self.schedule(time + lat.aggregate_us, s, MessageKey::Release);
            }
            MessageKey::Release => self.schedule(time + lat.release_us, s, MessageKey::Close),
            MessageKey::Close => self.free_block(time, s),
        }
    }

    fn allocate(&mut self, time: u64, s: usize) {
        let lat = self.scenario.latencies.grant_us;
        let shared = self.scenario.ues[s]
            .overlap_with
            .and_then(|ue| self.session_index(ue))
            .and_then(|t| self.holdings.get(&t).copied());
        if let Some(block) = shared {
            self.holdings.insert(s, block);
            self.log(time, s, format!("overlap on block {block}"));
            self.schedule(time + lat, s, MessageKey::Grant(block));
            return;
        }
        match self.pool.acquire(s) {
            Some(block) => {
                self.holdings.insert(s, block);
                self.schedule(time + lat, s, MessageKey::Grant(block));
            }
            None => self.log(time, s, "waiting for a resource block".into()),
        }
    }

    fn free_block(&mut self, time: u64, s: usize) {
        let Some(block) = self.holdings.remove(&s) else {
            return;
        };
        if self.holdings.values().any(|b| *b == block) {
            return;
        }
        if let Some((waiter, block)) = self.pool.release(block) {
            self.holdings.insert(waiter, block);
            let lat = self.scenario.latencies.grant_us;
            self.schedule(time + lat, waiter, MessageKey::Grant(block));
        }
    }

    fn detect_interference(&mut self, time: u64, s: usize) {
        let Some(&block) = self.holdings.get(&s) else {
            return;
        };
        let others: Vec<usize> = (0..self.sessions.len())
            .filter(|&o| {
                o != s
                    && self.sessions[o].state == SessionState::Sensing
                    && self.holdings.get(&o) == Some(&block)
            })
            .collect();
        let model = self.scenario.interference;
        for o in others {
            let a = self.sessions[s].chirp;
            let b = self.sessions[o].chirp;
            for (agg, vic, ca, cv) in [(s, o, a, b), (o, s, b, a)] {
                if let Some(ev) = classify_interference(&ca, &cv, (agg, vic), &model) {
                    self.log(time, vic, format!("{:?} interference from {agg}", ev.kind).to_lowercase());
                    self.report.interference.push(ev);
                }
            }
        }
    }
}

/// Runs a scenario to completion.
pub fn simulate(scenario: &Scenario) -> Result<SimReport> {
    scenario.validate()?;
    let sessions: Vec<SidelinkSession> = scenario
        .ues
        .iter()
        .enumerate()
        .map(|(i, u)| SidelinkSession::new(i, u.id, u.peers.clone(), u.chirp))
        .collect();
    let n = sessions.len();
    let mut engine = Engine {
        scenario,
        sessions,
        pool: ResourcePool::new(scenario.resource_blocks),
        holdings: BTreeMap::new(),
        queue: BinaryHeap::new(),
        seq: 0,
        report: SimReport {
            trace: Vec::new(),
            interference: Vec::new(),
            sessions: Vec::new(),
            events_processed: 0,
            conservation_violations: 0,
            illegal_transitions: 0,
            features_aggregated: vec![0; n],
            final_free_blocks: 0,
        },
    };
    for (i, u) in scenario.ues.iter().enumerate() {
        engine.schedule(u.request_time_us, i, MessageKey::Request);
    }
    while let Some(Reverse((time, _, s, key))) = engine.queue.pop() {
        engine.handle(time, s, key);
        engine.report.events_processed += 1;
        if !engine.conservation_holds() {
            engine.report.conservation_violations += 1;
        }
    }
    engine.report.final_free_blocks = engine.pool.free_count();
    engine.report.sessions = engine.sessions;
    Ok(engine.report)
}
