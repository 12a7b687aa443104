//! Point-cloud frames, depth conversion, depth coloring, measuring-box
//! queries and the two wire codecs.

mod binary;
mod json;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::{contains, Box3, Point3};

pub use binary::{decode_binary, encode_binary, BINARY_HEADER_LEN, BINARY_MAGIC};
pub use json::{decode_json, decode_json_with, encode_json, encode_json_f32};

/// An 8-bit RGB color.
pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("colors has {colors} entries but the frame has {points} points")]
    ColorCount { points: usize, colors: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DepthImageError {
    #[error("image dimensions must be positive")]
    EmptyDimensions,
    #[error("expected {expected} depth samples, got {actual}")]
    SampleCount { expected: usize, actual: usize },
    #[error("focal lengths must be positive and finite")]
    BadFocalLength,
    #[error("depth sample {0} is negative or not finite")]
    BadDepth(usize),
}

/// A codec failure. `offset` is a byte offset for binary input and an
/// entry index (or line/column in `message`) for JSON input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("format error: {0}")]
    Format(String),
    #[error("bad magic {0:?}, expected \"EPC1\"")]
    BadMagic([u8; 4]),
    #[error("payload truncated at byte {offset}: need {needed} bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("payload length {actual} does not match {expected} bytes implied by the header")]
    LengthMismatch { expected: usize, actual: usize },
}

/// One timestamped set of points, optionally colored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloudFrame {
    pub frame_id: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub points: Vec<Point3>,
    pub colors: Option<Vec<Rgb>>,
}

impl PointCloudFrame {
    pub fn new(frame_id: u64, timestamp: u64, points: Vec<Point3>) -> Self {
        Self { frame_id, timestamp, points, colors: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if let Some(colors) = &self.colors {
            if colors.len() != self.points.len() {
                return Err(FrameError::ColorCount {
                    points: self.points.len(),
                    colors: colors.len(),
                });
            }
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(FrameError::NonFinite(i));
        }
        Ok(())
    }

    pub fn bounding_box(&self) -> Option<Box3> {
        Box3::bounding(&self.points)
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Row-major grid of depths in meters; zero means no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    depths: Vec<f64>,
    intrinsics: Intrinsics,
}

impl DepthImage {
    pub fn new(
        width: usize,
        height: usize,
        depths: Vec<f64>,
        intrinsics: Intrinsics,
    ) -> Result<Self, DepthImageError> {
        if width == 0 || height == 0 {
            return Err(DepthImageError::EmptyDimensions);
        }
        if depths.len() != width * height {
            return Err(DepthImageError::SampleCount {
                expected: width * height,
                actual: depths.len(),
            });
        }
        let focal_ok = |f: f64| f.is_finite() && f > 0.0;
        if !focal_ok(intrinsics.fx) || !focal_ok(intrinsics.fy) {
            return Err(DepthImageError::BadFocalLength);
        }
        if let Some(i) = depths.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(DepthImageError::BadDepth(i));
        }
        Ok(Self { width, height, depths, intrinsics })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depths[v * self.width + u]
    }
}

/// Back-projects every pixel with a return through the pinhole model.
///
/// Points come out in the sensor frame (x right, y down, z along the optical
/// axis), in row-major pixel order.
pub fn depth_to_cloud(img: &DepthImage, frame_id: u64, timestamp: u64) -> PointCloudFrame {
    let Intrinsics { fx, fy, cx, cy } = img.intrinsics;
    let mut points = Vec::new();
    for v in 0..img.height {
        let row = &img.depths[v * img.width..(v + 1) * img.width];
        for (u, &d) in row.iter().enumerate() {
            if d > 0.0 {
                points.push(Point3::new(
                    (u as f64 - cx) * d / fx,
                    (v as f64 - cy) * d / fy,
                    d,
                ));
            }
        }
    }
    PointCloudFrame::new(frame_id, timestamp, points)
}

/// Colors points on a blue-to-red ramp by their z coordinate, min-max
/// normalized over the frame. A frame with a single depth is all blue.
pub fn color_by_depth(frame: &PointCloudFrame) -> PointCloudFrame {
    let (lo, hi) = frame
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    let span = hi - lo;
    let colors = frame
        .points
        .iter()
        .map(|p| {
            let t = if span > 0.0 { ((p.z - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
            let channel = |x: f64| (255.0 * x + 0.5).floor() as u8;
            [channel(t), 0, channel(1.0 - t)]
        })
        .collect();
    PointCloudFrame { colors: Some(colors), ..frame.clone() }
}

/// Number of points inside the (closed) measuring box.
pub fn count_in_box(frame: &PointCloudFrame, b: &Box3) -> usize {
    frame.points.iter().filter(|p| contains(b, p)).count()
}
