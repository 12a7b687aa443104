//! At-least-once transport of sensor readings.
//!
//! [`Broker`] is an in-process topic queue: publishes are appended to a
//! per-topic log with dense offsets, consumers receive every message at
//! least once and must [`Consumer::ack`] it before the ack deadline or it is
//! delivered again. [`DedupFilter`] on the consumer side turns that into an
//! exactly-once effect per `(producer, seq)`. The [`net`] module carries the
//! same contract over TCP.

mod broker;
mod dedup;
pub mod net;
pub mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::{ProducerId, SensorId};

pub use broker::{Broker, BrokerStats, Clock, Consumer, Delivery, ManualClock, Receipt, SystemClock};
pub use dedup::{DedupFilter, Tagged, DEDUP_WINDOW};

/// Ack deadline applied when a subscription does not set one.
pub const DEFAULT_ACK_DEADLINE_MS: u64 = 5_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("broker unavailable")]
    Unavailable,
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("invalid topic pattern {0:?}")]
    InvalidPattern(String),
    #[error("invalid reading: {0}")]
    InvalidReading(String),
    #[error("offset {offset} on {topic} was never delivered to this consumer")]
    UnknownOffset { topic: String, offset: u64 },
}

impl BrokerError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BrokerError::Unavailable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReadingValue {
    Bool(bool),
    Real(f64),
}

impl ReadingValue {
    pub fn as_f64(&self) -> f64 {
        match *self {
            ReadingValue::Real(v) => v,
            ReadingValue::Bool(b) => b as u8 as f64,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            ReadingValue::Bool(b) => Some(b),
            ReadingValue::Real(_) => None,
        }
    }
}

impl fmt::Display for ReadingValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReadingValue::Bool(b) => write!(f, "{b}"),
            ReadingValue::Real(v) => write!(f, "{v}"),
        }
    }
}

/// One controller sensor sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub producer: ProducerId,
    pub seq: u64,
    pub sensor: SensorId,
    pub value: ReadingValue,
    /// Producer clock, ms since the Unix epoch.
    pub timestamp: u64,
}

impl SensorReading {
    pub fn validate(&self) -> Result<(), BrokerError> {
        match self.value {
            ReadingValue::Real(v) if !v.is_finite() => Err(BrokerError::InvalidReading(format!(
                "{}#{}: value of {} is not finite",
                self.producer, self.seq, self.sensor
            ))),
            _ => Ok(()),
        }
    }
}

/// Dot-separated routing key such as `festo.captransfer.sensors`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Topic(String);

impl Topic {
    pub fn new(s: impl Into<String>) -> Result<Self, BrokerError> {
        let s = s.into();
        let ok = !s.is_empty()
            && s.split('.').all(|seg| !seg.is_empty() && seg != "*")
            && !s.chars().any(char::is_whitespace);
        if ok {
            Ok(Topic(s))
        } else {
            Err(BrokerError::InvalidTopic(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('.')
    }
}

impl TryFrom<String> for Topic {
    type Error = BrokerError;
    fn try_from(s: String) -> Result<Self, BrokerError> {
        Topic::new(s)
    }
}

impl From<Topic> for String {
    fn from(t: Topic) -> String {
        t.0
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An exact topic, or a prefix followed by one wildcard segment
/// (`festo.*` matches `festo.caps` but not `festo` or `festo.caps.x`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TopicPattern {
    Exact(Topic),
    Children(Vec<String>),
}

impl TopicPattern {
    pub fn parse(s: &str) -> Result<Self, BrokerError> {
        let invalid = || BrokerError::InvalidPattern(s.to_string());
        if s == "*" {
            return Ok(TopicPattern::Children(Vec::new()));
        }
        match s.strip_suffix(".*") {
            Some(prefix) => {
                let prefix = Topic::new(prefix).map_err(|_| invalid())?;
                Ok(TopicPattern::Children(prefix.segments().map(str::to_string).collect()))
            }
            None => Topic::new(s).map(TopicPattern::Exact).map_err(|_| invalid()),
        }
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        match self {
            TopicPattern::Exact(t) => t == topic,
            TopicPattern::Children(prefix) => {
                let segs: Vec<&str> = topic.segments().collect();
                segs.len() == prefix.len() + 1 && segs.iter().zip(prefix).all(|(a, b)| a == b)
            }
        }
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopicPattern::Exact(t) => write!(f, "{t}"),
            TopicPattern::Children(p) if p.is_empty() => f.write_str("*"),
            TopicPattern::Children(p) => write!(f, "{}.*", p.join(".")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub pattern: TopicPattern,
    pub consumer: String,
    pub ack_deadline_ms: u64,
}

impl Subscription {
    pub fn new(pattern: &str, consumer: impl Into<String>) -> Result<Self, BrokerError> {
        Ok(Self {
            pattern: TopicPattern::parse(pattern)?,
            consumer: consumer.into(),
            ack_deadline_ms: DEFAULT_ACK_DEADLINE_MS,
        })
    }

    pub fn with_ack_deadline(mut self, ms: u64) -> Self {
        self.ack_deadline_ms = ms;
        self
    }
}
