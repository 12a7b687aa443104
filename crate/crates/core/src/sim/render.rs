use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CapStageState;
use crate::pointcloud::{DepthImage, Intrinsics, PointCloudFrame};
use crate::spatial::{Box3, ComponentId, Point3, SpatialModel};

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("camera looks at itself or along its up vector")]
    DegenerateCamera,
    #[error("image dimensions must be positive")]
    EmptyImage,
    #[error("focal lengths must be positive")]
    BadIntrinsics,
    #[error("model has no zone for {0}")]
    MissingZone(&'static str),
    #[error("{0} caps do not fit inside the {1} zone")]
    CapsOverflow(u64, &'static str),
}

/// Sensor placement in the factory frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub eye: Point3,
    pub target: Point3,
    #[serde(default = "z_up")]
    pub up: Point3,
}

fn z_up() -> Point3 {
    Point3::new(0.0, 0.0, 1.0)
}

impl CameraPose {
    /// Right, down and forward unit vectors: the sensor's x, y and z axes.
    pub fn axes(&self) -> Result<[Point3; 3], TemplateError> {
        let f = self.target.sub(self.eye);
        let r = f.cross(self.up);
        if f.norm() == 0.0 || r.norm() == 0.0 || !r.is_finite() {
            return Err(TemplateError::DegenerateCamera);
        }
        let f = f.normalized();
        let r = r.normalized();
        Ok([r, f.cross(r), f])
    }

    /// Maps a point from the sensor frame into the factory frame.
    pub fn to_world(&self, p: Point3) -> Point3 {
        let [r, d, f] = self.axes().expect("validated pose");
        self.eye.add(r.scale(p.x)).add(d.scale(p.y)).add(f.scale(p.z))
    }
}

/// Static geometry plus the synthetic sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTemplate {
    pub stack: Option<Box3>,
    pub conveyor: Option<Box3>,
    pub staging: Option<Box3>,
    /// Extra static boxes rendered as-is.
    #[serde(default)]
    pub fixtures: Vec<Box3>,
    /// Zones render as a floor plate of this thickness; caps rest on it.
    pub bed: f64,
    /// Cap extent along x, y, z.
    pub cap: Point3,
    pub camera: CameraPose,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
}

impl SceneTemplate {
    /// An empty scene viewed by `camera`.
    pub fn empty(camera: CameraPose, width: usize, height: usize, intrinsics: Intrinsics) -> Self {
        SceneTemplate {
            stack: None,
            conveyor: None,
            staging: None,
            fixtures: Vec::new(),
            bed: 0.01,
            cap: Point3::new(0.04, 0.04, 0.008),
            camera,
            width,
            height,
            intrinsics,
        }
    }

    /// Zones from the `cap_stack`, `conveyor` and `staging` components.
    pub fn from_model(
        model: &SpatialModel,
        camera: CameraPose,
        width: usize,
        height: usize,
        intrinsics: Intrinsics,
    ) -> Result<Self, TemplateError> {
        let zone = |name: &'static str| {
            let id = ComponentId::new(name).expect("valid id");
            model.zones.get(&id).copied().ok_or(TemplateError::MissingZone(name))
        };
        Ok(SceneTemplate {
            stack: Some(zone("cap_stack")?),
            conveyor: Some(zone("conveyor")?),
            staging: Some(zone("staging")?),
            ..SceneTemplate::empty(camera, width, height, intrinsics)
        })
    }

    /// Checks the camera and that `capacity` stacked caps and `slots`
    /// conveyor caps stay inside their zones.
    pub fn validate(&self, capacity: u32, slots: usize) -> Result<(), TemplateError> {
        self.camera.axes()?;
        if self.width == 0 || self.height == 0 {
            return Err(TemplateError::EmptyImage);
        }
        let Intrinsics { fx, fy, .. } = self.intrinsics;
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(TemplateError::BadIntrinsics);
        }
        let state = CapStageState {
            stack_count: capacity,
            conveyor_slots: vec![true; slots.max(1)],
            staging_occupied: true,
            ..CapStageState::new(capacity, slots, 0, 0)
        };
        let checks = [
            (self.stack, "stack", self.stack_caps(&state)),
            (self.conveyor, "conveyor", self.conveyor_caps(&state)),
            (self.staging, "staging", self.staging_cap(&state).into_iter().collect()),
        ];
        for (zone, name, caps) in checks {
            if let Some(zone) = zone {
                if !caps.iter().all(|c| zone.encloses(c)) {
                    return Err(TemplateError::CapsOverflow(caps.len() as u64, name));
                }
            }
        }
        Ok(())
    }

    fn bed_of(&self, zone: &Box3) -> Box3 {
        let mut b = *zone;
        b.max.z = (zone.min.z + self.bed).min(zone.max.z);
        b
    }

    fn cap_on(&self, x: f64, y: f64, z: f64) -> Box3 {
        let h = self.cap.scale(0.5);
        Box3 {
            min: Point3::new(x - h.x, y - h.y, z),
            max: Point3::new(x + h.x, y + h.y, z + self.cap.z),
        }
    }

    fn stack_caps(&self, s: &CapStageState) -> Vec<Box3> {
        let Some(zone) = self.stack else { return Vec::new() };
        let c = zone.center();
        let floor = self.bed_of(&zone).max.z;
        (0..s.stack_count).map(|i| self.cap_on(c.x, c.y, floor + f64::from(i) * self.cap.z)).collect()
    }

    fn conveyor_caps(&self, s: &CapStageState) -> Vec<Box3> {
        let Some(zone) = self.conveyor else { return Vec::new() };
        let n = s.conveyor_slots.len() as f64;
        let pitch = (zone.max.x - zone.min.x) / n;
        let (c, floor) = (zone.center(), self.bed_of(&zone).max.z);
        s.conveyor_slots
            .iter()
            .enumerate()
            .filter(|(_, full)| **full)
            .map(|(j, _)| self.cap_on(zone.min.x + (j as f64 + 0.5) * pitch, c.y, floor))
            .collect()
    }

    fn staging_cap(&self, s: &CapStageState) -> Option<Box3> {
        let zone = self.staging?;
        let c = zone.center();
        s.staging_occupied.then(|| self.cap_on(c.x, c.y, self.bed_of(&zone).max.z))
    }

    /// Every box visible in `state`.
    pub fn boxes(&self, state: &CapStageState) -> Vec<Box3> {
        let mut out = self.fixtures.clone();
        out.extend([self.stack, self.conveyor, self.staging].iter().flatten().map(|z| self.bed_of(z)));
        out.extend(self.stack_caps(state));
        out.extend(self.conveyor_caps(state));
        out.extend(self.staging_cap(state));
        out
    }

    /// Depth image converted to a cloud in the factory frame.
    pub fn cloud(&self, state: &CapStageState, frame_id: u64, timestamp: u64) -> PointCloudFrame {
        let img = render_depth(state, self);
        let mut frame = crate::pointcloud::depth_to_cloud(&img, frame_id, timestamp);
        for p in &mut frame.points {
            *p = self.camera.to_world(*p);
        }
        frame
    }
}

/// Entry distance along `dir` from `origin`, if the ray enters `b` ahead of
/// the origin.
fn ray_entry(origin: Point3, dir: Point3, b: &Box3) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        let (o, d, lo, hi) = (origin.axis(i), dir.axis(i), b.min.axis(i), b.max.axis(i));
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let (a, c) = ((lo - o) / d, (hi - o) / d);
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// Pinhole ray cast of every pixel against the scene's boxes. A pixel's
/// depth is the sensor-frame z of the nearest hit, or 0 on a miss.
pub fn render_depth(state: &CapStageState, template: &SceneTemplate) -> DepthImage {
    let [r, d, f] = template.camera.axes().expect("validated template");
    let Intrinsics { fx, fy, cx, cy } = template.intrinsics;
    let boxes = template.boxes(state);
    let eye = template.camera.eye;
    let mut depths = Vec::with_capacity(template.width * template.height);
    for v in 0..template.height {
        for u in 0..template.width {
            let (x, y) = ((u as f64 - cx) / fx, (v as f64 - cy) / fy);
            // With a unit forward component, the ray parameter is the depth.
            let dir = r.scale(x).add(d.scale(y)).add(f);
            let hit = boxes.iter().filter_map(|b| ray_entry(eye, dir, b)).fold(f64::INFINITY, f64::min);
            depths.push(if hit.is_finite() { hit } else { 0.0 });
        }
    }
    DepthImage::new(template.width, template.height, depths, template.intrinsics).expect("template validated")
}
