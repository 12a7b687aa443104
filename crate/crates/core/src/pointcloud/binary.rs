//! The compact little-endian `EPC1` frame format.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "EPC1"
//! 4       8      frame_id (u64)
//! 12      8      timestamp, ms (u64)
//! 20      4      point count n (u32)
//! 24      1      color flag (0 or 1)
//! 25      12n    x, y, z per point (f32)
//! 25+12n  3n     r, g, b per point, present iff flag = 1
//! ```

use super::{CodecError, PointCloudFrame};
use crate::spatial::Point3;

pub const BINARY_MAGIC: [u8; 4] = *b"EPC1";
pub const BINARY_HEADER_LEN: usize = 25;

/// Panics if the frame has more than `u32::MAX` points.
pub fn encode_binary(frame: &PointCloudFrame) -> Vec<u8> {
    let n = frame.points.len();
    let count = u32::try_from(n).expect("frame too large for EPC1");
    let colors = frame.colors.as_deref();
    let len = BINARY_HEADER_LEN + 12 * n + colors.map_or(0, |_| 3 * n);
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&BINARY_MAGIC);
    out.extend_from_slice(&frame.frame_id.to_le_bytes());
    out.extend_from_slice(&frame.timestamp.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.push(colors.is_some() as u8);
    for p in &frame.points {
        out.extend_from_slice(&(p.x as f32).to_le_bytes());
        out.extend_from_slice(&(p.y as f32).to_le_bytes());
        out.extend_from_slice(&(p.z as f32).to_le_bytes());
    }
    if let Some(colors) = colors {
        for c in colors {
            out.extend_from_slice(c);
        }
    }
    out
}

fn f32_at(b: &[u8], at: usize) -> f64 {
    f32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]) as f64
}

pub fn decode_binary(bytes: &[u8]) -> Result<PointCloudFrame, CodecError> {
    if bytes.len() < 4 {
        return Err(CodecError::Truncated { offset: bytes.len(), needed: BINARY_HEADER_LEN });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != BINARY_MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(CodecError::Truncated { offset: bytes.len(), needed: BINARY_HEADER_LEN });
    }
    let frame_id = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let timestamp = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let n = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
    let has_colors = match bytes[24] {
        0 => false,
        1 => true,
        other => return Err(CodecError::Format(format!("byte 24: color flag {other} is not 0 or 1"))),
    };
    let expected = BINARY_HEADER_LEN + 12 * n + if has_colors { 3 * n } else { 0 };
    if bytes.len() < expected {
        return Err(CodecError::Truncated { offset: bytes.len(), needed: expected });
    }
    if bytes.len() > expected {
        return Err(CodecError::LengthMismatch { expected, actual: bytes.len() });
    }
    let body = &bytes[BINARY_HEADER_LEN..];
    let points = (0..n)
        .map(|i| {
            let at = 12 * i;
            Point3::new(f32_at(body, at), f32_at(body, at + 4), f32_at(body, at + 8))
        })
        .collect();
    let colors = has_colors.then(|| {
        body[12 * n..]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    });
    Ok(PointCloudFrame { frame_id, timestamp, points, colors })
}
