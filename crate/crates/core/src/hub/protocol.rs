//! Client protocol envelopes.
//!
//! Text messages are JSON objects `{"type", "version", "payload"}`:
//!
//! | type          | direction      | version        | payload                                   |
//! |---------------|----------------|----------------|-------------------------------------------|
//! | `register`    | client → hub   | 0              | [`Register`]                              |
//! | `snapshot`    | hub → client   | state version  | `{session, state, viewport}`              |
//! | `state_delta` | hub → client   | state version  | full [`HubState`]                         |
//! | `status`      | both           | state version  | [`StatusEvent`]                           |
//! | `frame`       | both           | frame id       | `{"values": ["x y z", ...]}`              |
//! | `interaction` | both           | 0              | [`InteractionKind`], plus origin tags between hubs |
//! | `error`       | hub → client   | 0              | `{code, message}`                         |
//!
//! Clients that negotiate the binary codec receive frames as binary
//! messages holding a bare `EPC1` payload, and may publish frames the same
//! way. Between hubs, a binary message is `u16 source length (LE) | source
//! (UTF-8) | EPC1 payload`, so the receiving hub can track staleness per
//! original source.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{FrameCodec, HubError, HubId, HubState, Interaction, InteractionKind, Viewport, WallConfig};
use crate::analysis::StatusEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Register,
    Snapshot,
    StateDelta,
    Status,
    Frame,
    Interaction,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: MessageType,
    #[serde(default)]
    pub version: u64,
    #[serde(default)]
    pub payload: Value,
}

impl Envelope {
    pub fn new(kind: MessageType, version: u64, payload: impl Serialize) -> Envelope {
        Envelope { kind, version, payload: serde_json::to_value(payload).expect("payload serializes") }
    }

    pub fn error(e: &HubError) -> Envelope {
        Envelope::new(MessageType::Error, 0, ErrorPayload { code: e.code().into(), message: e.to_string() })
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    pub fn parse(text: &str) -> Result<Envelope, HubError> {
        serde_json::from_str(text).map_err(|e| HubError::InvalidPayload(format!("envelope: {e}")))
    }

    pub fn payload_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, HubError> {
        serde_json::from_value(self.payload.clone())
            .map_err(|e| HubError::InvalidPayload(format!("{:?} payload: {e}", self.kind)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum Register {
    Display {
        wall: String,
        #[serde(flatten)]
        config: WallConfig,
        client: String,
        column: u32,
        row: u32,
        #[serde(default)]
        codec: FrameCodec,
    },
    Ar,
    Producer { source: String },
    Peer { hub: HubId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPayload {
    pub session: u64,
    pub state: HubState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewport: Option<Viewport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
}

/// An interaction as sent by a client (no tags) or a hub (tagged).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InteractionPayload {
    Tagged(Interaction),
    Local(InteractionKind),
}

pub fn status_envelope(version: u64, event: &StatusEvent) -> Envelope {
    Envelope::new(MessageType::Status, version, event)
}

/// Prefixes an `EPC1` payload with its source for hub-to-hub relay.
pub fn encode_peer_frame(source: &str, epc1: &[u8]) -> Vec<u8> {
    let src = source.as_bytes();
    let len = u16::try_from(src.len()).expect("source id shorter than 64 KiB");
    let mut out = Vec::with_capacity(2 + src.len() + epc1.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(src);
    out.extend_from_slice(epc1);
    out
}

/// Splits a hub-to-hub binary message into source and `EPC1` payload.
pub fn decode_peer_frame(bytes: &[u8]) -> Result<(&str, &[u8]), HubError> {
    let bad = || HubError::InvalidPayload("malformed peer frame".into());
    let len = u16::from_le_bytes(bytes.get(..2).ok_or_else(bad)?.try_into().expect("2 bytes")) as usize;
    let src = bytes.get(2..2 + len).ok_or_else(bad)?;
    let src = std::str::from_utf8(src).map_err(|_| bad())?;
    Ok((src, &bytes[2 + len..]))
}
