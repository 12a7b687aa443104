//! The `{"values": ["x y z", ...]}` text format.
//!
//! Frames in this format carry neither ids nor timestamps, and colors are
//! not representable.

use std::borrow::Cow;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Deserialize;

use super::{CodecError, PointCloudFrame};
use crate::spatial::Point3;

#[derive(Deserialize)]
struct Wire<'a> {
    #[serde(borrow)]
    values: Vec<Cow<'a, str>>,
}

/// Shortest round-trip decimal, always with a fractional part and never in
/// exponent form.
fn push_coord<F: ryu::Float>(out: &mut String, v: F) {
    let mut buf = ryu::Buffer::new();
    let s = buf.format_finite(v);
    match s.split_once('e') {
        None => out.push_str(s),
        Some((mant, exp)) => push_expanded(out, mant, exp.parse().expect("ryu exponent")),
    }
}

/// Writes `mant * 10^exp` positionally.
fn push_expanded(out: &mut String, mant: &str, exp: i32) {
    let (neg, mant) = match mant.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mant),
    };
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    let digits = format!("{int}{frac}");
    let digits = digits.trim_end_matches('0');
    let point = int.len() as i32 + exp;
    if neg {
        out.push('-');
    }
    if point <= 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-point) as usize));
        out.push_str(digits);
    } else if point as usize >= digits.len() {
        out.push_str(digits);
        out.extend(std::iter::repeat_n('0', point as usize - digits.len()));
        out.push_str(".0");
    } else {
        let (a, b) = digits.split_at(point as usize);
        out.push_str(a);
        out.push('.');
        out.push_str(b);
    }
}

pub fn encode_json(frame: &PointCloudFrame) -> Vec<u8> {
    encode_with(frame, |out, v| push_coord(out, v))
}

/// Like [`encode_json`], but prints the shortest decimal that rounds to the
/// same `f32`. Frames decoded from the binary format print as they were
/// written before the narrowing.
pub fn encode_json_f32(frame: &PointCloudFrame) -> Vec<u8> {
    encode_with(frame, |out, v| push_coord(out, v as f32))
}

fn encode_with(frame: &PointCloudFrame, mut push_coord: impl FnMut(&mut String, f64)) -> Vec<u8> {
    let mut out = String::with_capacity(16 + frame.points.len() * 24);
    out.push_str("{\"values\":[");
    for (i, p) in frame.points.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('"');
        push_coord(&mut out, p.x);
        out.push(' ');
        push_coord(&mut out, p.y);
        out.push(' ');
        push_coord(&mut out, p.z);
        out.push('"');
    }
    out.push_str("]}");
    out.into_bytes()
}

/// Decodes with frame id 0 stamped with the current time.
pub fn decode_json(bytes: &[u8]) -> Result<PointCloudFrame, CodecError> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    decode_json_with(bytes, 0, now)
}

pub fn decode_json_with(
    bytes: &[u8],
    frame_id: u64,
    timestamp: u64,
) -> Result<PointCloudFrame, CodecError> {
    let wire: Wire<'_> = serde_json::from_slice(bytes).map_err(|e| {
        CodecError::Format(format!("line {} column {}: {e}", e.line(), e.column()))
    })?;
    let mut points = Vec::with_capacity(wire.values.len());
    for (i, entry) in wire.values.iter().enumerate() {
        let mut coords = [0.0f64; 3];
        let mut tokens = entry.split_ascii_whitespace();
        for c in coords.iter_mut() {
            let tok = tokens.next().ok_or_else(|| {
                CodecError::Format(format!("entry {i} ({entry:?}): expected 3 numbers"))
            })?;
            *c = tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    CodecError::Format(format!("entry {i}: {tok:?} is not a finite number"))
                })?;
        }
        if tokens.next().is_some() {
            return Err(CodecError::Format(format!(
                "entry {i} ({entry:?}): expected 3 numbers"
            )));
        }
        points.push(Point3::from(coords));
    }
    Ok(PointCloudFrame::new(frame_id, timestamp, points))
}
