//! Geometry and identifier types shared by every other module.
//!
//! Coordinates are meters in a right-handed factory frame with +z up.
//! Boxes are axis-aligned and closed on every face.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point in the factory frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(self, k: f64) -> Point3 {
        Point3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction; the zero vector maps to itself.
    pub fn normalized(self) -> Point3 {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self.scale(1.0 / n)
        }
    }

    pub(crate) fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl From<[f64; 3]> for Point3 {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Point3 { x, y, z }
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("coordinates must be finite")]
    NonFinite,
    #[error("box min exceeds max on the {0} axis")]
    Inverted(char),
}

/// Axis-aligned box. Zero-extent boxes are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: Point3,
    pub max: Point3,
}

impl Box3 {
    pub fn new(min: Point3, max: Point3) -> Result<Self, GeometryError> {
        let b = Box3 { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        for (i, axis) in ['x', 'y', 'z'].into_iter().enumerate() {
            if self.min.axis(i) > self.max.axis(i) {
                return Err(GeometryError::Inverted(axis));
            }
        }
        Ok(())
    }

    /// Smallest box containing every point, or `None` for an empty input.
    pub fn bounding<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Box3> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        Some(Box3 { min: lo, max: hi })
    }

    pub fn center(&self) -> Point3 {
        self.min.add(self.max).scale(0.5)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        contains(self, p)
    }

    /// True when `other` lies entirely within `self`.
    pub fn encloses(&self, other: &Box3) -> bool {
        contains(self, &other.min) && contains(self, &other.max)
    }
}

/// Closed containment test: `min <= p <= max` on every axis.
pub fn contains(b: &Box3, p: &Point3) -> bool {
    b.min.x <= p.x
        && p.x <= b.max.x
        && b.min.y <= p.y
        && p.y <= b.max.y
        && b.min.z <= p.z
        && p.z <= b.max.z
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid identifier {0:?}: must be non-empty with no whitespace")]
pub struct InvalidId(pub String);

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Result<Self, InvalidId> {
                let s = s.into();
                if s.is_empty() || s.chars().any(char::is_whitespace) {
                    return Err(InvalidId(s));
                }
                Ok(Self(s))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = InvalidId;
            fn try_from(s: String) -> Result<Self, InvalidId> {
                Self::new(s)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = InvalidId;
            fn try_from(s: &str) -> Result<Self, InvalidId> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// A factory component such as `cap_stack` or `staging`.
    ComponentId
);
string_id!(
    /// A controller sensor such as `stack_count`.
    SensorId
);
string_id!(
    /// A telemetry producer (one controller board).
    ProducerId
);

/// Maps components to zones and anchors, and sensors to components.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpatialModel {
    #[serde(default)]
    pub zones: BTreeMap<ComponentId, Box3>,
    #[serde(default)]
    pub anchors: BTreeMap<ComponentId, Point3>,
    #[serde(default)]
    pub sensor_bindings: BTreeMap<SensorId, ComponentId>,
}

/// One broken model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    InvalidZone { component: ComponentId, error: GeometryError },
    AnchorWithoutZone { component: ComponentId },
    AnchorOutsideZone { component: ComponentId, anchor: Point3 },
    NonFiniteAnchor { component: ComponentId },
    UnknownComponent { sensor: SensorId, component: ComponentId },
}

impl Violation {
    /// The component or sensor the violation is about.
    pub fn subject(&self) -> &str {
        match self {
            Violation::InvalidZone { component, .. }
            | Violation::AnchorWithoutZone { component }
            | Violation::AnchorOutsideZone { component, .. }
            | Violation::NonFiniteAnchor { component } => component.as_str(),
            Violation::UnknownComponent { sensor, .. } => sensor.as_str(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidZone { component, error } => {
                write!(f, "zone of component {component}: {error}")
            }
            Violation::AnchorWithoutZone { component } => {
                write!(f, "anchor of component {component} has no zone")
            }
            Violation::AnchorOutsideZone { component, anchor } => write!(
                f,
                "anchor of component {component} at ({}, {}, {}) lies outside its zone",
                anchor.x, anchor.y, anchor.z
            ),
            Violation::NonFiniteAnchor { component } => {
                write!(f, "anchor of component {component} is not finite")
            }
            Violation::UnknownComponent { sensor, component } => {
                write!(f, "sensor {sensor} is bound to undeclared component {component}")
            }
        }
    }
}

impl SpatialModel {
    pub fn validate(&self) -> Vec<Violation> {
        validate_model(self)
    }

    pub fn component_of(&self, sensor: &SensorId) -> Option<&ComponentId> {
        self.sensor_bindings.get(sensor)
    }

    /// Anchor for a component, falling back to its zone center.
    pub fn anchor_of(&self, component: &ComponentId) -> Option<Point3> {
        self.anchors
            .get(component)
            .copied()
            .or_else(|| self.zones.get(component).map(Box3::center))
    }
}

/// Lists every broken invariant of `m`. An empty result means the model is valid.
pub fn validate_model(m: &SpatialModel) -> Vec<Violation> {
    let mut out = Vec::new();
    for (component, zone) in &m.zones {
        if let Err(error) = zone.validate() {
            out.push(Violation::InvalidZone { component: component.clone(), error });
        }
    }
    for (component, anchor) in &m.anchors {
        if !anchor.is_finite() {
            out.push(Violation::NonFiniteAnchor { component: component.clone() });
            continue;
        }
        match m.zones.get(component) {
            None => out.push(Violation::AnchorWithoutZone { component: component.clone() }),
            Some(zone) if !contains(zone, anchor) => out.push(Violation::AnchorOutsideZone {
                component: component.clone(),
                anchor: *anchor,
            }),
            Some(_) => {}
        }
    }
    for (sensor, component) in &m.sensor_bindings {
        if !m.zones.contains_key(component) {
            out.push(Violation::UnknownComponent {
                sensor: sensor.clone(),
                component: component.clone(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> Box3 {
        Box3::new(Point3::ORIGIN, Point3::new(1.0, 1.0, 1.0)).unwrap()
    }

    fn cid(s: &str) -> ComponentId {
        ComponentId::new(s).unwrap()
    }

    #[test]
    fn contains_boundary_is_inclusive() {
        assert!(contains(&unit(), &Point3::new(0.5, 1.0, 1.0)));
    }

    #[test]
    fn contains_rejects_outside_point() {
        assert!(!contains(&unit(), &Point3::new(1.0, 3.0, 2.0)));
    }

    #[test]
    fn degenerate_box_contains_its_point() {
        let b = Box3::new(Point3::ORIGIN, Point3::ORIGIN).unwrap();
        assert!(contains(&b, &Point3::ORIGIN));
    }

    #[test]
    fn inverted_or_nan_boxes_are_rejected() {
        assert_eq!(
            Box3::new(Point3::new(0.0, 2.0, 0.0), Point3::new(1.0, 1.0, 1.0)),
            Err(GeometryError::Inverted('y'))
        );
        assert_eq!(
            Box3::new(Point3::new(f64::NAN, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0)),
            Err(GeometryError::NonFinite)
        );
    }

    #[test]
    fn ids_reject_empty_and_whitespace() {
        assert!(SensorId::new("").is_err());
        assert!(SensorId::new("stack count").is_err());
        assert!(SensorId::new("stack_count").is_ok());
        assert_ne!(SensorId::new("A").unwrap(), SensorId::new("a").unwrap());
    }

    #[test]
    fn empty_model_is_valid() {
        assert!(validate_model(&SpatialModel::default()).is_empty());
    }

    #[test]
    fn anchor_outside_zone_is_reported() {
        let mut m = SpatialModel::default();
        m.zones.insert(cid("cap_stack"), unit());
        m.anchors.insert(cid("cap_stack"), Point3::new(2.0, 0.0, 0.0));
        let v = validate_model(&m);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::AnchorOutsideZone { .. }));
        assert_eq!(v[0].subject(), "cap_stack");
    }

    #[test]
    fn sensor_bound_to_undeclared_component_is_reported() {
        let mut m = SpatialModel::default();
        m.sensor_bindings
            .insert(SensorId::new("stack_count").unwrap(), cid("cap_stack"));
        let v = validate_model(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].subject(), "stack_count");
        assert!(v[0].to_string().contains("cap_stack"));
    }

    #[test]
    fn anchor_without_zone_is_reported() {
        let mut m = SpatialModel::default();
        m.anchors.insert(cid("ghost"), Point3::ORIGIN);
        assert_eq!(
            validate_model(&m),
            vec![Violation::AnchorWithoutZone { component: cid("ghost") }]
        );
    }

    fn arb_point() -> impl Strategy<Value = Point3> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    fn arb_box() -> impl Strategy<Value = Box3> {
        (arb_point(), arb_point()).prop_map(|(a, b)| Box3 {
            min: Point3::new(a.x.min(b.x), a.y.min(b.y), a.z.min(b.z)),
            max: Point3::new(a.x.max(b.x), a.y.max(b.y), a.z.max(b.z)),
        })
    }

    proptest! {
        #[test]
        fn contains_matches_componentwise_oracle(b in arb_box(), p in arb_point()) {
            let lo: [f64; 3] = b.min.into();
            let hi: [f64; 3] = b.max.into();
            let q: [f64; 3] = p.into();
            let oracle = (0..3).all(|i| lo[i] <= q[i] && q[i] <= hi[i]);
            prop_assert_eq!(contains(&b, &p), oracle);
        }

        #[test]
        fn contains_is_monotone(inner in arb_box(), grow in (0.0..3.0f64, 0.0..3.0f64), p in arb_point()) {
            let outer = Box3 {
                min: inner.min.sub(Point3::new(grow.0, grow.0, grow.0)),
                max: inner.max.add(Point3::new(grow.1, grow.1, grow.1)),
            };
            prop_assert!(outer.encloses(&inner));
            if contains(&inner, &p) {
                prop_assert!(contains(&outer, &p));
            }
        }
    }
}
