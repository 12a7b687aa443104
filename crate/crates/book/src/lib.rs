//! The guide's chapters, compiled so `cargo test` runs their listings.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/spatial-model.md")]
pub mod spatial_model {}
#[doc = include_str!("../../../book/src/point-clouds.md")]
pub mod point_clouds {}
#[doc = include_str!("../../../book/src/delivery.md")]
pub mod delivery {}
#[doc = include_str!("../../../book/src/rules.md")]
pub mod rules {}
#[doc = include_str!("../../../book/src/hub.md")]
pub mod hub {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/services.md")]
pub mod services {}
