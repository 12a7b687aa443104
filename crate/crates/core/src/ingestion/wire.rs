//! Length-prefixed envelopes for the broker's TCP protocol.
//!
//! Every envelope is `u32 length (LE) | u8 kind | body`, where `length`
//! counts the kind byte plus the body. Bodies are `key=value` lines so a
//! packet capture stays readable:
//!
//! ```text
//! req=3
//! topic=festo.captransfer.sensors
//! producer=rpi-1
//! seq=17
//! sensor=stack_count
//! value=9
//! timestamp=4100
//! ```
//!
//! Boolean readings are written `value=true` / `value=false`; anything else
//! is a real number.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{BrokerError, ReadingValue, SensorReading};
use crate::spatial::{ProducerId, SensorId};

/// Largest accepted envelope, kind byte included.
pub const MAX_ENVELOPE_LEN: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Publish = 1,
    Deliver = 2,
    Ack = 3,
    Subscribe = 4,
    Receipt = 5,
    Error = 6,
}

impl TryFrom<u8> for Kind {
    type Error = WireError;
    fn try_from(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            1 => Kind::Publish,
            2 => Kind::Deliver,
            3 => Kind::Ack,
            4 => Kind::Subscribe,
            5 => Kind::Receipt,
            6 => Kind::Error,
            other => return Err(WireError::UnknownKind(other)),
        })
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("unknown envelope kind {0}")]
    UnknownKind(u8),
    #[error("envelope length {0} out of range")]
    BadLength(u32),
    #[error("malformed body: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    Publish { req: u64, topic: String, reading: SensorReading },
    Deliver { topic: String, offset: u64, attempt: u32, reading: SensorReading },
    Ack { req: u64, consumer: String, topic: String, offset: u64 },
    Subscribe { req: u64, consumer: String, pattern: String, ack_deadline_ms: u64 },
    /// Success reply. `offset` is set for publish receipts.
    Receipt { req: u64, topic: Option<String>, offset: Option<u64> },
    Error { req: u64, code: String, message: String },
}

impl Envelope {
    pub fn kind(&self) -> Kind {
        match self {
            Envelope::Publish { .. } => Kind::Publish,
            Envelope::Deliver { .. } => Kind::Deliver,
            Envelope::Ack { .. } => Kind::Ack,
            Envelope::Subscribe { .. } => Kind::Subscribe,
            Envelope::Receipt { .. } => Kind::Receipt,
            Envelope::Error { .. } => Kind::Error,
        }
    }

    pub fn error(req: u64, e: &BrokerError) -> Envelope {
        Envelope::Error { req, code: error_code(e).to_string(), message: e.to_string() }
    }

    /// Full wire bytes, length prefix included.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let v = v.to_string().replace(['\n', '\r'], " ");
            body.push_str(k);
            body.push('=');
            body.push_str(&v);
            body.push('\n');
        };
        match self {
            Envelope::Publish { req, topic, reading } => {
                put("req", req);
                put("topic", topic);
                put_reading(&mut put, reading);
            }
            Envelope::Deliver { topic, offset, attempt, reading } => {
                put("topic", topic);
                put("offset", offset);
                put("attempt", attempt);
                put_reading(&mut put, reading);
            }
            Envelope::Ack { req, consumer, topic, offset } => {
                put("req", req);
                put("consumer", consumer);
                put("topic", topic);
                put("offset", offset);
            }
            Envelope::Subscribe { req, consumer, pattern, ack_deadline_ms } => {
                put("req", req);
                put("consumer", consumer);
                put("pattern", pattern);
                put("ack_deadline_ms", ack_deadline_ms);
            }
            Envelope::Receipt { req, topic, offset } => {
                put("req", req);
                if let Some(t) = topic {
                    put("topic", t);
                }
                if let Some(o) = offset {
                    put("offset", o);
                }
            }
            Envelope::Error { req, code, message } => {
                put("req", req);
                put("code", code);
                put("message", message);
            }
        }
        let len = 1 + body.len() as u32;
        let mut out = Vec::with_capacity(4 + len as usize);
        out.extend_from_slice(&len.to_le_bytes());
        out.push(self.kind() as u8);
        out.extend_from_slice(body.as_bytes());
        out
    }

    pub fn decode(kind: Kind, body: &[u8]) -> Result<Envelope, WireError> {
        let text = std::str::from_utf8(body).map_err(|e| WireError::Malformed(e.to_string()))?;
        let rec = Record::parse(text)?;
        Ok(match kind {
            Kind::Publish => Envelope::Publish {
                req: rec.num("req")?,
                topic: rec.get("topic")?.to_string(),
                reading: rec.reading()?,
            },
            Kind::Deliver => Envelope::Deliver {
                topic: rec.get("topic")?.to_string(),
                offset: rec.num("offset")?,
                attempt: rec.num("attempt")?,
                reading: rec.reading()?,
            },
            Kind::Ack => Envelope::Ack {
                req: rec.num("req")?,
                consumer: rec.get("consumer")?.to_string(),
                topic: rec.get("topic")?.to_string(),
                offset: rec.num("offset")?,
            },
            Kind::Subscribe => Envelope::Subscribe {
                req: rec.num("req")?,
                consumer: rec.get("consumer")?.to_string(),
                pattern: rec.get("pattern")?.to_string(),
                ack_deadline_ms: rec.num("ack_deadline_ms")?,
            },
            Kind::Receipt => Envelope::Receipt {
                req: rec.num("req")?,
                topic: rec.opt("topic").map(str::to_string),
                offset: rec.opt("offset").map(|_| rec.num("offset")).transpose()?,
            },
            Kind::Error => Envelope::Error {
                req: rec.num("req")?,
                code: rec.get("code")?.to_string(),
                message: rec.opt("message").unwrap_or_default().to_string(),
            },
        })
    }
}

fn put_reading(put: &mut impl FnMut(&str, &dyn std::fmt::Display), r: &SensorReading) {
    put("producer", &r.producer);
    put("seq", &r.seq);
    put("sensor", &r.sensor);
    put("value", &r.value);
    put("timestamp", &r.timestamp);
}

pub fn error_code(e: &BrokerError) -> &'static str {
    match e {
        BrokerError::Unavailable => "unavailable",
        BrokerError::InvalidTopic(_) => "invalid-topic",
        BrokerError::InvalidPattern(_) => "invalid-pattern",
        BrokerError::InvalidReading(_) => "invalid-reading",
        BrokerError::UnknownOffset { .. } => "unknown-offset",
    }
}

/// Rebuilds a broker error from an error envelope.
pub fn error_from_code(code: &str, message: &str) -> BrokerError {
    match code {
        "invalid-topic" => BrokerError::InvalidTopic(message.to_string()),
        "invalid-pattern" => BrokerError::InvalidPattern(message.to_string()),
        "invalid-reading" => BrokerError::InvalidReading(message.to_string()),
        "unknown-offset" => BrokerError::UnknownOffset { topic: message.to_string(), offset: 0 },
        _ => BrokerError::Unavailable,
    }
}

struct Record<'a> {
    fields: Vec<(&'a str, &'a str)>,
}

impl<'a> Record<'a> {
    fn parse(text: &'a str) -> Result<Self, WireError> {
        let fields = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_once('=')
                    .ok_or_else(|| WireError::Malformed(format!("line {l:?} has no '='")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Record { fields })
    }

    fn opt(&self, key: &str) -> Option<&'a str> {
        self.fields.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn get(&self, key: &str) -> Result<&'a str, WireError> {
        self.opt(key).ok_or_else(|| WireError::Malformed(format!("missing field {key}")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T, WireError> {
        let v = self.get(key)?;
        v.parse().map_err(|_| WireError::Malformed(format!("field {key}={v:?} is not a number")))
    }

    fn reading(&self) -> Result<SensorReading, WireError> {
        let bad = |e: crate::spatial::InvalidId| WireError::Malformed(e.to_string());
        let raw = self.get("value")?;
        let value = match raw {
            "true" => ReadingValue::Bool(true),
            "false" => ReadingValue::Bool(false),
            other => ReadingValue::Real(other.parse().map_err(|_| {
                WireError::Malformed(format!("value {other:?} is neither boolean nor real"))
            })?),
        };
        Ok(SensorReading {
            producer: ProducerId::new(self.get("producer")?).map_err(bad)?,
            seq: self.num("seq")?,
            sensor: SensorId::new(self.get("sensor")?).map_err(bad)?,
            value,
            timestamp: self.num("timestamp")?,
        })
    }
}

pub fn write_envelope<W: Write>(w: &mut W, env: &Envelope) -> Result<(), WireError> {
    w.write_all(&env.encode())?;
    w.flush()?;
    Ok(())
}

/// Reads one envelope. `Ok(None)` on a clean end of stream.
pub fn read_envelope<R: Read>(r: &mut R) -> Result<Option<Envelope>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len);
    if len == 0 || len > MAX_ENVELOPE_LEN {
        return Err(WireError::BadLength(len));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    let kind = Kind::try_from(buf[0])?;
    Envelope::decode(kind, &buf[1..]).map(Some)
}
