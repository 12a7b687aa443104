use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, OnceLock};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::UnboundedSender;
use tracing::debug;

use super::{
    reconcile, HubError, HubId, HubState, Interaction, InteractionKind, TileAssignment, Viewport, WallConfig,
};
use crate::analysis::StatusEvent;
use crate::pointcloud::{self, PointCloudFrame, BINARY_HEADER_LEN, BINARY_MAGIC};

pub type SessionId = u64;

/// How a display client wants frames encoded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameCodec {
    #[default]
    Binary,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Role {
    /// A tile of a display wall; receives state and frames.
    Display { wall: String, config: WallConfig, tile: TileAssignment, viewport: Viewport },
    /// An AR overlay; receives state and status, never frames.
    Ar,
    /// Publishes frames and status; receives state.
    Producer { source: String },
}

/// A frame encoded once and shared by every recipient.
#[derive(Debug)]
pub struct RelayFrame {
    pub source: String,
    pub frame_id: u64,
    binary: Bytes,
    json: OnceLock<Bytes>,
}

impl RelayFrame {
    pub fn from_frame(source: impl Into<String>, frame: &PointCloudFrame) -> RelayFrame {
        RelayFrame {
            source: source.into(),
            frame_id: frame.frame_id,
            binary: Bytes::from(pointcloud::encode_binary(frame)),
            json: OnceLock::new(),
        }
    }

    /// Wraps an already-encoded `EPC1` payload after checking its header.
    pub fn from_binary(source: impl Into<String>, bytes: Bytes) -> Result<RelayFrame, HubError> {
        if bytes.len() < BINARY_HEADER_LEN || bytes[..4] != BINARY_MAGIC {
            return Err(HubError::InvalidPayload("frame is not an EPC1 payload".into()));
        }
        let frame_id = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
        Ok(RelayFrame { source: source.into(), frame_id, binary: bytes, json: OnceLock::new() })
    }

    pub fn binary(&self) -> &Bytes {
        &self.binary
    }

    /// The `{"values": [...]}` form, produced on first use.
    pub fn json(&self) -> &Bytes {
        self.json.get_or_init(|| {
            let frame = pointcloud::decode_binary(&self.binary).unwrap_or_default();
            Bytes::from(pointcloud::encode_json(&frame))
        })
    }
}

/// Messages queued for one session.
#[derive(Debug, Clone)]
pub enum Outbound {
    Snapshot { session: SessionId, state: HubState, viewport: Option<Viewport> },
    StateDelta { state: HubState },
    Status { version: u64, event: StatusEvent },
    Frame { frame: Arc<RelayFrame>, codec: FrameCodec },
    /// Hub-to-hub only.
    PeerInteraction(Interaction),
    /// Hub-to-hub only.
    PeerFrame(Arc<RelayFrame>),
    /// A request from this session was rejected.
    Error { code: String, message: String },
}

impl Outbound {
    /// State version carried by state-bearing messages.
    pub fn version(&self) -> Option<u64> {
        match self {
            Outbound::Snapshot { state, .. } | Outbound::StateDelta { state } => Some(state.state_version),
            Outbound::Status { version, .. } => Some(*version),
            _ => None,
        }
    }
}

struct Session {
    role: Role,
    codec: FrameCodec,
    tx: UnboundedSender<Outbound>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct HubStats {
    pub frames_received: u64,
    pub frames_relayed: u64,
    pub frames_stale: u64,
    pub frame_sends: u64,
    pub interactions_applied: u64,
    pub duplicate_interactions: u64,
    pub refolds: u64,
    pub sessions_closed: u64,
}

/// The hub's single logical event loop state.
///
/// All mutation goes through `&mut self`, so wrapping the hub in one mutex
/// makes every operation linearizable. Outgoing messages are queued on
/// per-session channels while the caller holds that lock, which keeps each
/// client's stream in state-version order.
pub struct Hub {
    id: HubId,
    base: HubState,
    state: HubState,
    /// Every applied interaction in canonical order.
    log: Vec<Interaction>,
    seen: HashSet<(HubId, u64)>,
    lamport: u64,
    next_session: SessionId,
    sessions: BTreeMap<SessionId, Session>,
    tiles: HashMap<(String, u32, u32), SessionId>,
    walls: HashMap<String, WallConfig>,
    last_frame: HashMap<String, u64>,
    peer: Option<UnboundedSender<Outbound>>,
    stats: HubStats,
}

impl Hub {
    pub fn new(id: impl Into<String>) -> Hub {
        Hub::with_state(id, HubState::default())
    }

    pub fn with_state(id: impl Into<String>, base: HubState) -> Hub {
        Hub {
            id: HubId(id.into()),
            state: base.clone(),
            base,
            log: Vec::new(),
            seen: HashSet::new(),
            lamport: 0,
            next_session: 1,
            sessions: BTreeMap::new(),
            tiles: HashMap::new(),
            walls: HashMap::new(),
            last_frame: HashMap::new(),
            peer: None,
            stats: HubStats::default(),
        }
    }

    pub fn id(&self) -> &HubId {
        &self.id
    }

    pub fn state(&self) -> &HubState {
        &self.state
    }

    pub fn stats(&self) -> HubStats {
        self.stats
    }

    pub fn log(&self) -> &[Interaction] {
        &self.log
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn display_count(&self) -> usize {
        self.sessions.values().filter(|s| matches!(s.role, Role::Display { .. })).count()
    }

    /// Registers a wall tile. The snapshot is queued before anything else
    /// reaches the session.
    pub fn register_display(
        &mut self,
        wall: &str,
        config: WallConfig,
        tile: TileAssignment,
        codec: FrameCodec,
        tx: UnboundedSender<Outbound>,
    ) -> Result<(SessionId, HubState, Viewport), HubError> {
        let viewport = config.viewport(tile.column, tile.row)?;
        if let Some(existing) = self.walls.get(wall) {
            if *existing != config {
                return Err(HubError::WallMismatch(wall.to_string()));
            }
        }
        let key = (wall.to_string(), tile.column, tile.row);
        if self.tiles.contains_key(&key) {
            return Err(HubError::TileOccupied { wall: wall.to_string(), column: tile.column, row: tile.row });
        }
        self.walls.insert(wall.to_string(), config);
        let role = Role::Display { wall: wall.to_string(), config, tile, viewport };
        let id = self.add_session(role, codec, tx, Some(viewport));
        self.tiles.insert(key, id);
        Ok((id, self.state.clone(), viewport))
    }

    pub fn register_ar(&mut self, tx: UnboundedSender<Outbound>) -> (SessionId, HubState) {
        let id = self.add_session(Role::Ar, FrameCodec::Binary, tx, None);
        (id, self.state.clone())
    }

    pub fn register_producer(&mut self, source: &str, tx: UnboundedSender<Outbound>) -> (SessionId, HubState) {
        let id = self.add_session(Role::Producer { source: source.to_string() }, FrameCodec::Binary, tx, None);
        (id, self.state.clone())
    }

    fn add_session(
        &mut self,
        role: Role,
        codec: FrameCodec,
        tx: UnboundedSender<Outbound>,
        viewport: Option<Viewport>,
    ) -> SessionId {
        let id = self.next_session;
        self.next_session += 1;
        let _ = tx.send(Outbound::Snapshot { session: id, state: self.state.clone(), viewport });
        self.sessions.insert(id, Session { role, codec, tx });
        id
    }

    pub fn remove_session(&mut self, id: SessionId) {
        if let Some(s) = self.sessions.remove(&id) {
            if let Role::Display { wall, tile, .. } = s.role {
                self.tiles.remove(&(wall.clone(), tile.column, tile.row));
                if !self.tiles.keys().any(|(w, _, _)| *w == wall) {
                    self.walls.remove(&wall);
                }
            }
        }
    }

    /// Queues an error reply for one session.
    pub fn reject(&mut self, id: SessionId, e: &HubError) {
        if let Some(s) = self.sessions.get(&id) {
            let _ = s.tx.send(Outbound::Error { code: e.code().to_string(), message: e.to_string() });
        }
    }

    pub fn role(&self, id: SessionId) -> Option<&Role> {
        self.sessions.get(&id).map(|s| &s.role)
    }

    /// Sends to matching sessions, dropping any whose channel has closed.
    fn fan_out(&mut self, mut pick: impl FnMut(&Session) -> Option<Outbound>) -> u64 {
        let mut dead = Vec::new();
        let mut sent = 0;
        for (id, s) in &self.sessions {
            if let Some(msg) = pick(s) {
                if s.tx.send(msg).is_ok() {
                    sent += 1;
                } else {
                    dead.push(*id);
                }
            }
        }
        for id in dead {
            debug!(session = id, "closing session after failed send");
            self.stats.sessions_closed += 1;
            self.remove_session(id);
        }
        sent
    }

    /// Relays a frame from a local source to every display and the peer.
    /// Frames older than the last one relayed from the same source are dropped.
    pub fn broadcast_frame(&mut self, source: &str, frame: &PointCloudFrame) -> bool {
        self.relay(Arc::new(RelayFrame::from_frame(source, frame)), true)
    }

    /// Like [`broadcast_frame`](Hub::broadcast_frame) for a pre-encoded frame.
    pub fn broadcast_encoded(&mut self, frame: RelayFrame) -> bool {
        self.relay(Arc::new(frame), true)
    }

    /// Relays a frame that arrived from the linked hub; it is not echoed back.
    pub fn relay_from_peer(&mut self, frame: RelayFrame) -> bool {
        self.relay(Arc::new(frame), false)
    }

    fn relay(&mut self, frame: Arc<RelayFrame>, forward: bool) -> bool {
        self.stats.frames_received += 1;
        match self.last_frame.get(&frame.source) {
            Some(&last) if frame.frame_id <= last => {
                self.stats.frames_stale += 1;
                return false;
            }
            _ => {}
        }
        self.last_frame.insert(frame.source.clone(), frame.frame_id);
        let sent = self.fan_out(|s| {
            matches!(s.role, Role::Display { .. }).then(|| Outbound::Frame { frame: frame.clone(), codec: s.codec })
        });
        self.stats.frame_sends += sent;
        self.stats.frames_relayed += 1;
        if forward {
            if let Some(peer) = &self.peer {
                if peer.send(Outbound::PeerFrame(frame)).is_err() {
                    self.peer = None;
                }
            }
        }
        true
    }

    /// Applies a change originating at this hub and forwards it to the peer.
    pub fn apply_local(&mut self, kind: InteractionKind) -> Result<HubState, HubError> {
        kind.validate()?;
        self.lamport += 1;
        let i = Interaction { origin: self.id.clone(), origin_seq: self.lamport, kind };
        if let Some(peer) = &self.peer {
            if peer.send(Outbound::PeerInteraction(i.clone())).is_err() {
                self.peer = None;
            }
        }
        self.integrate(i);
        Ok(self.state.clone())
    }

    /// Records an analysis event under its rule id and pushes it to clients.
    pub fn push_status(&mut self, event: StatusEvent) -> Result<HubState, HubError> {
        self.apply_local(InteractionKind::StatusUpdate { event })
    }

    /// Applies an interaction received from the linked hub. Returns false
    /// for a tag that was already applied.
    pub fn receive_remote(&mut self, i: Interaction) -> Result<bool, HubError> {
        i.kind.validate()?;
        if self.seen.contains(&i.tag()) {
            self.stats.duplicate_interactions += 1;
            return Ok(false);
        }
        self.lamport = self.lamport.max(i.origin_seq);
        self.integrate(i);
        Ok(true)
    }

    fn integrate(&mut self, i: Interaction) {
        self.seen.insert(i.tag());
        self.stats.interactions_applied += 1;
        let in_order = self.log.last().is_none_or(|last| last.order_key() < i.order_key());
        let msg = if in_order {
            i.kind.apply_to(&mut self.state);
            self.state.state_version += 1;
            self.log.push(i);
            match &self.log.last().expect("just pushed").kind {
                InteractionKind::StatusUpdate { event } => {
                    Outbound::Status { version: self.state.state_version, event: event.clone() }
                }
                _ => Outbound::StateDelta { state: self.state.clone() },
            }
        } else {
            let at = self.log.partition_point(|x| x.order_key() < i.order_key());
            self.log.insert(at, i);
            self.state = reconcile(&self.base, &self.log);
            self.stats.refolds += 1;
            Outbound::StateDelta { state: self.state.clone() }
        };
        self.fan_out(|_| Some(msg.clone()));
    }

    /// Links the peer hub's outbox. Every interaction this hub knows is
    /// queued first so the peer catches up.
    pub fn attach_peer(&mut self, tx: UnboundedSender<Outbound>) -> Result<(), HubError> {
        if self.peer.as_ref().is_some_and(|p| !p.is_closed()) {
            return Err(HubError::PeerExists);
        }
        for i in &self.log {
            let _ = tx.send(Outbound::PeerInteraction(i.clone()));
        }
        self.peer = Some(tx);
        Ok(())
    }

    pub fn detach_peer(&mut self) {
        self.peer = None;
    }

    pub fn has_peer(&self) -> bool {
        self.peer.as_ref().is_some_and(|p| !p.is_closed())
    }
}
