use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::ingestion::SensorReading;
use crate::spatial::{Box3, ComponentId, Point3, SensorId, SpatialModel};

/// Default retention horizon, ms of producer time.
pub const DEFAULT_HORIZON_MS: u64 = 60_000;
/// Default number of readings kept per sensor.
pub const DEFAULT_RING_SIZE: usize = 1024;

/// A reading with the geometry of the component its sensor belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct SituatedReading {
    pub reading: SensorReading,
    pub component: ComponentId,
    pub zone: Box3,
    pub anchor: Point3,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("sensor {0} is not bound to any component")]
pub struct UnboundSensor(pub SensorId);

pub fn situate(model: &SpatialModel, r: &SensorReading) -> Result<SituatedReading, UnboundSensor> {
    let unbound = || UnboundSensor(r.sensor.clone());
    let component = model.component_of(&r.sensor).ok_or_else(unbound)?;
    let zone = *model.zones.get(component).ok_or_else(unbound)?;
    let anchor = model.anchor_of(component).unwrap_or_else(|| zone.center());
    Ok(SituatedReading { reading: r.clone(), component: component.clone(), zone, anchor })
}

/// Recent readings per sensor, timestamp-ordered, bounded by count and by
/// age relative to the newest timestamp seen.
#[derive(Debug, Clone)]
pub struct HistoryWindow {
    ring_size: usize,
    horizon_ms: u64,
    latest_ms: u64,
    sensors: HashMap<SensorId, VecDeque<SituatedReading>>,
}

impl Default for HistoryWindow {
    fn default() -> Self {
        HistoryWindow::new(DEFAULT_RING_SIZE, DEFAULT_HORIZON_MS)
    }
}

impl HistoryWindow {
    pub fn new(ring_size: usize, horizon_ms: u64) -> Self {
        assert!(ring_size > 0, "ring size must be positive");
        HistoryWindow { ring_size, horizon_ms, latest_ms: 0, sensors: HashMap::new() }
    }

    pub fn horizon_ms(&self) -> u64 {
        self.horizon_ms
    }

    pub fn push(&mut self, r: SituatedReading) {
        self.latest_ms = self.latest_ms.max(r.reading.timestamp);
        let ring = self.sensors.entry(r.reading.sensor.clone()).or_default();
        let ts = r.reading.timestamp;
        let at = ring.partition_point(|x| x.reading.timestamp <= ts);
        ring.insert(at, r);
        if ring.len() > self.ring_size {
            ring.pop_front();
        }
    }

    /// Drops readings older than the horizon.
    pub fn prune(&mut self) {
        let cutoff = self.latest_ms.saturating_sub(self.horizon_ms);
        self.sensors.retain(|_, ring| {
            while ring.front().is_some_and(|x| x.reading.timestamp < cutoff) {
                ring.pop_front();
            }
            !ring.is_empty()
        });
    }

    /// Readings of one sensor, oldest first.
    pub fn readings(&self, sensor: &SensorId) -> impl DoubleEndedIterator<Item = &SituatedReading> {
        self.sensors.get(sensor).into_iter().flatten()
    }

    pub fn latest(&self, sensor: &SensorId) -> Option<&SituatedReading> {
        self.sensors.get(sensor).and_then(|r| r.back())
    }

    pub fn len(&self) -> usize {
        self.sensors.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::ReadingValue;
    use crate::spatial::ProducerId;

    fn model() -> SpatialModel {
        let mut m = SpatialModel::default();
        let cap = ComponentId::new("cap_stack").unwrap();
        m.zones.insert(cap.clone(), Box3::new(Point3::ORIGIN, Point3::new(1.0, 1.0, 2.0)).unwrap());
        m.anchors.insert(cap.clone(), Point3::new(0.5, 0.5, 2.0));
        m.sensor_bindings.insert(SensorId::new("stack_count").unwrap(), cap);
        m
    }

    fn reading(sensor: &str, ts: u64) -> SensorReading {
        SensorReading {
            producer: ProducerId::new("p").unwrap(),
            seq: ts,
            sensor: SensorId::new(sensor).unwrap(),
            value: ReadingValue::Real(1.0),
            timestamp: ts,
        }
    }

    #[test]
    fn situate_attaches_zone_and_anchor() {
        let m = model();
        let a = situate(&m, &reading("stack_count", 1)).unwrap();
        let b = situate(&m, &reading("stack_count", 2)).unwrap();
        assert_eq!(a.component.as_str(), "cap_stack");
        assert_eq!(a.zone, m.zones.values().next().copied().unwrap());
        assert_eq!(a.anchor, Point3::new(0.5, 0.5, 2.0));
        assert_eq!((a.zone, a.anchor), (b.zone, b.anchor));
    }

    #[test]
    fn unbound_sensor() {
        assert_eq!(
            situate(&model(), &reading("mystery", 0)),
            Err(UnboundSensor(SensorId::new("mystery").unwrap()))
        );
    }

    #[test]
    fn window_orders_bounds_and_prunes() {
        let m = model();
        let mut w = HistoryWindow::new(3, 100);
        for ts in [10, 30, 20, 40] {
            w.push(situate(&m, &reading("stack_count", ts)).unwrap());
        }
        let s = SensorId::new("stack_count").unwrap();
        let ts: Vec<u64> = w.readings(&s).map(|r| r.reading.timestamp).collect();
        assert_eq!(ts, vec![20, 30, 40]);
        w.push(situate(&m, &reading("stack_count", 135)).unwrap());
        w.prune();
        let ts: Vec<u64> = w.readings(&s).map(|r| r.reading.timestamp).collect();
        assert_eq!(ts, vec![40, 135]);
    }
}
