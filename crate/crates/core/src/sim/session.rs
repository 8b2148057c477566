//! Lifecycle of one sidelink sensing session.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::chirp::ChirpConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    ResourceRequested,
    Granted,
    PeerChannelOpen,
    Sensing,
    Aggregating,
    Releasing,
    Closed,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SessionState::Idle => "idle",
            SessionState::ResourceRequested => "resource_requested",
            SessionState::Granted => "granted",
            SessionState::PeerChannelOpen => "peer_channel_open",
            SessionState::Sensing => "sensing",
            SessionState::Aggregating => "aggregating",
            SessionState::Releasing => "releasing",
            SessionState::Closed => "closed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Message {
    /// UE asks the gNB for a resource block.
    Request,
    /// gNB assigns a block.
    Grant { block: usize },
    /// Sidelink to the peers is up and the allocation is shared.
    OpenPeerChannel,
    StartSensing,
    /// Peer features are fused at the initiator.
    Aggregate,
    Release,
    Close,
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Request => f.write_str("request"),
            Message::Grant { block } => write!(f, "grant(block={block})"),
            Message::OpenPeerChannel => f.write_str("open_peer_channel"),
            Message::StartSensing => f.write_str("start_sensing"),
            Message::Aggregate => f.write_str("aggregate"),
            Message::Release => f.write_str("release"),
            Message::Close => f.write_str("close"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidelinkSession {
    pub id: usize,
    pub ue_id: u32,
    pub state: SessionState,
    pub block: Option<usize>,
    pub peers: Vec<u32>,
    pub chirp: ChirpConfig,
}

impl SidelinkSession {
    pub fn new(id: usize, ue_id: u32, peers: Vec<u32>, chirp: ChirpConfig) -> Self {
        Self {
            id,
            ue_id,
            state: SessionState::Idle,
            block: None,
            peers,
            chirp,
        }
    }

    pub fn holds_block(&self) -> bool {
        self.block.is_some()
    }
}

/// Applies `msg` to `session`, returning the next session value.
pub fn step_session(session: &SidelinkSession, msg: Message) -> Result<SidelinkSession> {
    use SessionState::*;
    let multi = !session.peers.is_empty();
    let mut next = session.clone();
    next.state = match (session.state, msg) {
        (Idle, Message::Request) => ResourceRequested,
        (ResourceRequested, Message::Grant { block }) => {
            next.block = Some(block);
            Granted
        }
        (Granted, Message::OpenPeerChannel) if multi => PeerChannelOpen,
        (Granted, Message::StartSensing) if !multi => Sensing,
        (PeerChannelOpen, Message::StartSensing) => Sensing,
        (Sensing, Message::Aggregate) => Aggregating,
        (Aggregating, Message::Release) => Releasing,
        (Releasing, Message::Close) => {
            next.block = None;
            Closed
        }
        (state, msg) => {
            return Err(Error::Protocol {
                state: state.to_string(),
                message: msg.to_string(),
            })
        }
    };
    Ok(next)
}
