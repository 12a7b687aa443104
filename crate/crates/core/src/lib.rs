//! Desk-scale factory monitoring: a cap-transfer digital twin publishes
//! telemetry through an at-least-once queue into a spatial rules engine,
//! while a distribution hub relays point clouds and status events to tiled
//! displays and AR overlays and keeps a linked hub in sync.

pub mod analysis;
pub mod bench;
pub mod config;
pub mod hub;
pub mod ingestion;
pub mod pipeline;
pub mod pointcloud;
pub mod sim;
pub mod spatial;

pub use spatial::{Box3, ComponentId, Point3, ProducerId, SensorId, SpatialModel};
