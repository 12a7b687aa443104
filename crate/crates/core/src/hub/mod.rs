//! Distribution hub: display registry, replicated view state, frame relay
//! and pairwise federation.
//!
//! The replicated [`HubState`] is never mutated in place by a client. Every
//! change is an [`Interaction`] tagged with `(origin hub, origin sequence)`;
//! the hub's state is the fold of all interactions it knows, in the
//! canonical order `(origin_seq, origin)`. Two linked hubs that have seen
//! the same set of interactions therefore hold field-identical state no
//! matter how the interactions arrived.

mod relay;
pub mod protocol;
pub mod server;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::StatusEvent;
use crate::spatial::{Box3, Point3};

pub use self::relay::{FrameCodec, Hub, HubStats, Outbound, RelayFrame, Role, SessionId};

/// Margin kept between the camera pitch and the poles, radians.
pub const PITCH_EPSILON: f64 = 1e-3;
pub const MAX_PITCH: f64 = FRAC_PI_2 - PITCH_EPSILON;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HubError {
    #[error("invalid tile ({column}, {row}) for a {columns}x{rows} wall")]
    InvalidTile { column: u32, row: u32, columns: u32, rows: u32 },
    #[error("invalid wall configuration: {0}")]
    InvalidWall(String),
    #[error("wall {0:?} is already registered with a different geometry")]
    WallMismatch(String),
    #[error("tile ({column}, {row}) of wall {wall:?} already has an active client")]
    TileOccupied { wall: String, column: u32, row: u32 },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("a peer hub is already linked")]
    PeerExists,
    #[error("peer unreachable: {0}")]
    PeerUnreachable(String),
}

impl HubError {
    pub fn code(&self) -> &'static str {
        match self {
            HubError::InvalidTile { .. } => "invalid-tile",
            HubError::InvalidWall(_) => "invalid-wall",
            HubError::WallMismatch(_) => "wall-mismatch",
            HubError::TileOccupied { .. } => "tile-occupied",
            HubError::InvalidPayload(_) => "invalid-payload",
            HubError::PeerExists => "peer-exists",
            HubError::PeerUnreachable(_) => "peer-unreachable",
        }
    }
}

/// A grid of equally sized display tiles forming one canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallConfig {
    pub columns: u32,
    pub rows: u32,
    pub tile_width_px: u32,
    pub tile_height_px: u32,
}

impl WallConfig {
    pub fn validate(&self) -> Result<(), HubError> {
        if self.columns == 0 || self.rows == 0 || self.tile_width_px == 0 || self.tile_height_px == 0 {
            return Err(HubError::InvalidWall(format!("{self:?} has a zero dimension")));
        }
        Ok(())
    }

    pub fn canvas_width(&self) -> u64 {
        self.columns as u64 * self.tile_width_px as u64
    }

    pub fn canvas_height(&self) -> u64 {
        self.rows as u64 * self.tile_height_px as u64
    }

    /// The region of the global canvas a tile shows.
    pub fn viewport(&self, column: u32, row: u32) -> Result<Viewport, HubError> {
        self.validate()?;
        if column >= self.columns || row >= self.rows {
            return Err(HubError::InvalidTile { column, row, columns: self.columns, rows: self.rows });
        }
        Ok(Viewport {
            x: column as u64 * self.tile_width_px as u64,
            y: row as u64 * self.tile_height_px as u64,
            width: self.tile_width_px as u64,
            height: self.tile_height_px as u64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileAssignment {
    pub client: String,
    pub column: u32,
    pub row: u32,
}

/// A pixel rectangle in the wall's global canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    pub x: u64,
    pub y: u64,
    pub width: u64,
    pub height: u64,
}

impl Viewport {
    pub fn area(&self) -> u64 {
        self.width * self.height
    }

    /// Area shared with `other`; zero for rectangles that only touch.
    pub fn overlap(&self, other: &Viewport) -> u64 {
        let w = (self.x + self.width).min(other.x + other.width).saturating_sub(self.x.max(other.x));
        let h = (self.y + self.height).min(other.y + other.height).saturating_sub(self.y.max(other.y));
        w * h
    }
}

/// Orbit camera around `target`. `yaw` is measured from +x about +z and
/// `pitch` is the elevation of the eye above the target's horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub target: Point3,
    pub yaw: f64,
    pub pitch: f64,
    pub distance: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera { target: Point3::ORIGIN, yaw: 0.0, pitch: 0.0, distance: 5.0 }
    }
}

impl Camera {
    pub fn eye(&self) -> Point3 {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        self.target.add(Point3::new(cp * cy, cp * sy, sp).scale(self.distance))
    }

    /// Unit view vector from eye to target.
    pub fn forward(&self) -> Point3 {
        self.target.sub(self.eye()).normalized()
    }

    pub fn right(&self) -> Point3 {
        let (sy, cy) = self.yaw.sin_cos();
        Point3::new(-sy, cy, 0.0)
    }

    pub fn up(&self) -> Point3 {
        self.right().cross(self.forward())
    }
}

/// Replicated application state shown by every client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubState {
    pub state_version: u64,
    pub camera: Camera,
    pub measuring_box: Box3,
    /// Latest event per rule id.
    pub status: BTreeMap<String, StatusEvent>,
}

impl Default for HubState {
    fn default() -> Self {
        HubState {
            state_version: 0,
            camera: Camera::default(),
            measuring_box: Box3 { min: Point3::ORIGIN, max: Point3::new(1.0, 1.0, 1.0) },
            status: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionKind {
    /// Radians added to yaw and pitch; pitch is clamped to ±[`MAX_PITCH`].
    Orbit { d_yaw: f64, d_pitch: f64 },
    /// Meters along the camera's right and up vectors.
    Pan { dx: f64, dy: f64 },
    /// Distance multiplier, > 0.
    Zoom { factor: f64 },
    SetBox {
        #[serde(rename = "box")]
        measuring_box: Box3,
    },
    StatusUpdate { event: StatusEvent },
}

impl InteractionKind {
    pub fn validate(&self) -> Result<(), HubError> {
        let bad = |m: &str| Err(HubError::InvalidPayload(m.to_string()));
        match self {
            InteractionKind::Orbit { d_yaw, d_pitch } if !(d_yaw.is_finite() && d_pitch.is_finite()) => {
                bad("orbit deltas must be finite")
            }
            InteractionKind::Pan { dx, dy } if !(dx.is_finite() && dy.is_finite()) => bad("pan offsets must be finite"),
            InteractionKind::Zoom { factor } if !(factor.is_finite() && *factor > 0.0) => {
                bad("zoom factor must be positive and finite")
            }
            InteractionKind::SetBox { measuring_box } => {
                measuring_box.validate().map_err(|e| HubError::InvalidPayload(format!("set_box: {e}")))
            }
            InteractionKind::StatusUpdate { event } if event.rule_id.is_empty() => bad("status without rule id"),
            _ => Ok(()),
        }
    }

    /// Applies the change to `state` without touching the version.
    /// Callers validate first.
    fn apply_to(&self, state: &mut HubState) {
        let cam = &mut state.camera;
        match self {
            InteractionKind::Orbit { d_yaw, d_pitch } => {
                cam.yaw += d_yaw;
                cam.pitch = (cam.pitch + d_pitch).clamp(-MAX_PITCH, MAX_PITCH);
            }
            InteractionKind::Pan { dx, dy } => {
                let shift = cam.right().scale(*dx).add(cam.up().scale(*dy));
                cam.target = cam.target.add(shift);
            }
            InteractionKind::Zoom { factor } => cam.distance *= factor,
            InteractionKind::SetBox { measuring_box } => state.measuring_box = *measuring_box,
            InteractionKind::StatusUpdate { event } => {
                state.status.insert(event.rule_id.clone(), event.clone());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HubId(pub String);

impl fmt::Display for HubId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One tagged state change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub origin: HubId,
    pub origin_seq: u64,
    #[serde(flatten)]
    pub kind: InteractionKind,
}

impl Interaction {
    /// Position in the canonical total order.
    pub fn order_key(&self) -> (u64, &HubId) {
        (self.origin_seq, &self.origin)
    }

    pub fn tag(&self) -> (HubId, u64) {
        (self.origin.clone(), self.origin_seq)
    }
}

/// Applies one validated interaction and bumps the version.
pub fn apply_interaction(state: &HubState, i: &InteractionKind) -> Result<HubState, HubError> {
    i.validate()?;
    let mut next = state.clone();
    i.apply_to(&mut next);
    next.state_version += 1;
    Ok(next)
}

/// State reached from `base` by applying every distinct interaction once,
/// in canonical order. Duplicate tags and invalid payloads are skipped.
pub fn reconcile<'a>(base: &HubState, interactions: impl IntoIterator<Item = &'a Interaction>) -> HubState {
    let mut all: Vec<&Interaction> = interactions.into_iter().collect();
    all.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    all.dedup_by(|a, b| a.order_key() == b.order_key());
    let mut state = base.clone();
    for i in all {
        if i.kind.validate().is_ok() {
            i.kind.apply_to(&mut state);
            state.state_version += 1;
        }
    }
    state
}
