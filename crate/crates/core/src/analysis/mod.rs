//! Spatially situated rule evaluation.
//!
//! Readings are bound to the component, zone and anchor of their sensor,
//! kept in a bounded per-sensor history, and run through two kinds of
//! stateful rules:
//!
//! * **threshold-sustained**: a predicate has held on every reading of a
//!   sensor for at least `sustain_ms` (e.g. the cap stack reads empty).
//! * **absence-after-trigger**: a trigger reading is not followed by an
//!   expected reading within `timeout_ms` (e.g. a pick that never puts a
//!   cap on the staging area).
//!
//! Each rule emits alternating `raised` / `cleared` [`StatusEvent`]s.

mod engine;
mod window;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::ReadingValue;
use crate::spatial::{ComponentId, Point3, SensorId, Violation};

pub use engine::{eval_absence_after_trigger, eval_threshold_sustained, fire_timeout, Engine, RuleState};
pub use window::{situate, HistoryWindow, SituatedReading, UnboundSensor, DEFAULT_HORIZON_MS, DEFAULT_RING_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Fault,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Fault => "fault",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Raised,
    Cleared,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Raised => "raised",
            Condition::Cleared => "cleared",
        })
    }
}

/// A test on one reading value. Numeric bounds accept booleans as 0 / 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    AtMost(f64),
    AtLeast(f64),
    Is(bool),
}

impl Predicate {
    pub fn matches(&self, v: &ReadingValue) -> bool {
        match *self {
            Predicate::AtMost(b) => v.as_f64() <= b,
            Predicate::AtLeast(b) => v.as_f64() >= b,
            Predicate::Is(b) => v.as_bool() == Some(b),
        }
    }
}

/// A predicate bound to a sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorTest {
    pub sensor: SensorId,
    #[serde(flatten)]
    pub predicate: Predicate,
}

impl SensorTest {
    pub fn new(sensor: &str, predicate: Predicate) -> Self {
        SensorTest { sensor: SensorId::new(sensor).expect("valid sensor id"), predicate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RuleKind {
    ThresholdSustained {
        when: SensorTest,
        sustain_ms: u64,
    },
    AbsenceAfterTrigger {
        trigger: SensorTest,
        expect: SensorTest,
        timeout_ms: u64,
    },
}

impl RuleKind {
    pub fn sensors(&self) -> Vec<&SensorId> {
        match self {
            RuleKind::ThresholdSustained { when, .. } => vec![&when.sensor],
            RuleKind::AbsenceAfterTrigger { trigger, expect, .. } => {
                vec![&trigger.sensor, &expect.sensor]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    #[serde(flatten)]
    pub kind: RuleKind,
    pub severity: Severity,
    pub component: ComponentId,
    /// `{rule}`, `{component}` and `{sensor}` are substituted.
    pub message: String,
}

impl Rule {
    pub fn render_message(&self, sensor: &SensorId) -> String {
        self.message
            .replace("{rule}", &self.id)
            .replace("{component}", self.component.as_str())
            .replace("{sensor}", sensor.as_str())
    }
}

/// A "control message": the compact result of analysis pushed to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusEvent {
    pub rule_id: String,
    pub component: ComponentId,
    pub condition: Condition,
    pub severity: Severity,
    pub anchor: Point3,
    /// Producer clock, ms.
    pub timestamp: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("spatial model: {0}")]
    Model(Violation),
    #[error("duplicate rule id {0:?}")]
    DuplicateRule(String),
    #[error("rule {rule:?}: component {component} has no zone")]
    UnknownComponent { rule: String, component: ComponentId },
    #[error("rule {rule:?}: sensor {sensor} is not bound in the spatial model")]
    UnboundSensor { rule: String, sensor: SensorId },
    #[error("rule {rule:?}: sustain_ms {sustain_ms} exceeds the history horizon {horizon_ms}")]
    SustainBeyondHorizon { rule: String, sustain_ms: u64, horizon_ms: u64 },
    #[error("rule id must not be empty")]
    EmptyRuleId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("clock regression: asked for {requested} ms but already at {current} ms")]
pub struct ClockRegression {
    pub current: u64,
    pub requested: u64,
}
