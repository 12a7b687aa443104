//! Discrete-time twin of the cap-transfer stage.
//!
//! One machine cycle runs piston-extend, pick, place-on-conveyor, conveyor
//! shifts, transfer-to-staging and staging-clear at fixed offsets from the
//! cycle start:
//!
//! | offset (ms) | phase                  | readings                              |
//! |-------------|------------------------|---------------------------------------|
//! | 0           | piston extends         |                                       |
//! | 100         | pick                   | `stack_count`, `pick_actuated`        |
//! | 200         | place on conveyor      |                                       |
//! | 300..=500   | conveyor shifts        |                                       |
//! | 600         | transfer to staging    | `staging_occupied` (actual)           |
//! | 900         | staging cleared        | `staging_occupied = false`            |
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`. A probabilistic plan draws one `u64` per pick attempt and
//! fails the grip when `(x >> 11) * 2^-53 < p`.

use std::collections::BTreeSet;

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{Predicate, Rule, RuleKind, SensorTest, Severity};
use crate::ingestion::{ReadingValue, SensorReading};
use crate::spatial::{Box3, ComponentId, Point3, ProducerId, SensorId, SpatialModel};

mod render;
mod run;

pub use render::{render_depth, CameraPose, SceneTemplate, TemplateError};
pub use run::{run, BrokerSink, FnSink, FrameSink, HubFrameSink, ReadingSink, RunAborted, RunSummary, Simulator, SinkError, Sinks};

pub const DEFAULT_CYCLE_MS: u64 = 1_000;
pub const DEFAULT_CONVEYOR_SLOTS: usize = 4;
pub const PICK_OFFSET_MS: u64 = 100;
pub const PLACE_OFFSET_MS: u64 = 200;
pub const STAGE_OFFSET_MS: u64 = 600;
pub const CLEAR_OFFSET_MS: u64 = 900;

pub const STACK_COUNT: &str = "stack_count";
pub const PICK_ACTUATED: &str = "pick_actuated";
pub const STAGING_OCCUPIED: &str = "staging_occupied";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Piston {
    Retracted,
    Extended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gripper {
    Idle,
    Holding,
    EmptyAfterPick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FailurePlan {
    None,
    Probabilistic { p: f64 },
    Scripted { cycles: BTreeSet<u64> },
}

impl FailurePlan {
    pub fn scripted(cycles: impl IntoIterator<Item = u64>) -> Self {
        FailurePlan::Scripted { cycles: cycles.into_iter().collect() }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            FailurePlan::Probabilistic { p } if !(0.0..=1.0).contains(p) => {
                Err(format!("failure probability {p} is outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// Machine state between cycles (or mid-cycle, in a trace snapshot).
#[derive(Debug, Clone, PartialEq)]
pub struct CapStageState {
    pub capacity: u32,
    pub stack_count: u32,
    pub piston: Piston,
    pub gripper: Gripper,
    pub conveyor_slots: Vec<bool>,
    pub staging_occupied: bool,
    pub clock_ms: u64,
    pub cycle: u64,
    pub producer: ProducerId,
    /// Next reading sequence number.
    pub seq: u64,
    pub delivered: u64,
    pub dropped: u64,
    rng: ChaCha8Rng,
}

impl CapStageState {
    /// A full stack at `start_ms`.
    pub fn new(capacity: u32, conveyor_slots: usize, seed: u64, start_ms: u64) -> Self {
        CapStageState {
            capacity,
            stack_count: capacity,
            piston: Piston::Retracted,
            gripper: Gripper::Idle,
            conveyor_slots: vec![false; conveyor_slots.max(1)],
            staging_occupied: false,
            clock_ms: start_ms,
            cycle: 0,
            producer: ProducerId::new("captransfer").expect("valid id"),
            seq: 0,
            delivered: 0,
            dropped: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_producer(mut self, producer: ProducerId) -> Self {
        self.producer = producer;
        self
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn removed(&self) -> u64 {
        u64::from(self.capacity - self.stack_count)
    }

    fn reading(&mut self, sensor: &str, value: ReadingValue, offset: u64, start: u64) -> SensorReading {
        let r = SensorReading {
            producer: self.producer.clone(),
            seq: self.seq,
            sensor: SensorId::new(sensor).expect("valid id"),
            value,
            timestamp: start + offset,
        };
        self.seq += 1;
        r
    }
}

/// What happened during one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTrace {
    pub readings: Vec<SensorReading>,
    pub picked: bool,
    pub grip_failed: bool,
    /// The machine at the transfer-to-staging instant.
    pub at_staging: CapStageState,
}

fn grip_fails(state: &mut CapStageState, plan: &FailurePlan) -> bool {
    match plan {
        FailurePlan::None => false,
        FailurePlan::Probabilistic { p } => {
            let x = state.rng.next_u64();
            ((x >> 11) as f64) * (1.0 / (1u64 << 53) as f64) < *p
        }
        FailurePlan::Scripted { cycles } => cycles.contains(&state.cycle),
    }
}

/// Advances `state` by one cycle in place.
pub fn advance(state: &mut CapStageState, plan: &FailurePlan, cycle_ms: u64) -> CycleTrace {
    let start = state.clock_ms;
    let mut readings = Vec::with_capacity(4);

    state.piston = Piston::Extended;
    state.gripper = Gripper::Idle;
    let picked = state.stack_count > 0;
    let mut grip_failed = false;
    if picked {
        state.stack_count -= 1;
        grip_failed = grip_fails(state, plan);
        state.gripper = if grip_failed { Gripper::EmptyAfterPick } else { Gripper::Holding };
    }
    let count = ReadingValue::Real(f64::from(state.stack_count));
    readings.push(state.reading(STACK_COUNT, count, PICK_OFFSET_MS, start));
    readings.push(state.reading(PICK_ACTUATED, ReadingValue::Bool(picked), PICK_OFFSET_MS, start));
    state.piston = Piston::Retracted;

    if state.gripper == Gripper::Holding {
        state.conveyor_slots[0] = true;
        state.gripper = Gripper::Idle;
    }
    let slots = state.conveyor_slots.len();
    for _ in 0..slots {
        if state.conveyor_slots[slots - 1] {
            state.staging_occupied = true;
        }
        state.conveyor_slots.rotate_right(1);
        state.conveyor_slots[0] = false;
    }
    if grip_failed {
        state.dropped += 1;
    }
    let at_staging = CapStageState { clock_ms: start + STAGE_OFFSET_MS, ..state.clone() };
    let staged = ReadingValue::Bool(state.staging_occupied);
    readings.push(state.reading(STAGING_OCCUPIED, staged, STAGE_OFFSET_MS, start));

    if state.staging_occupied {
        state.delivered += 1;
        state.staging_occupied = false;
    }
    readings.push(state.reading(STAGING_OCCUPIED, ReadingValue::Bool(false), CLEAR_OFFSET_MS, start));

    state.clock_ms = start + cycle_ms;
    state.cycle += 1;
    CycleTrace { readings, picked, grip_failed, at_staging }
}

/// One cycle at the default cycle length.
pub fn step(state: &CapStageState, plan: &FailurePlan) -> (CapStageState, Vec<SensorReading>) {
    let mut next = state.clone();
    let trace = advance(&mut next, plan, DEFAULT_CYCLE_MS);
    (next, trace.readings)
}

fn cid(s: &str) -> ComponentId {
    ComponentId::new(s).expect("valid id")
}

fn bx(min: [f64; 3], max: [f64; 3]) -> Box3 {
    Box3::new(min.into(), max.into()).expect("valid box")
}

/// Zones (meters, z up) and sensor bindings of the cap-transfer stage.
pub fn reference_model() -> SpatialModel {
    let mut m = SpatialModel::default();
    m.zones.insert(cid("cap_stack"), bx([0.0, 0.0, 0.0], [0.1, 0.1, 0.4]));
    m.zones.insert(cid("pick_place"), bx([0.1, 0.0, 0.0], [0.3, 0.1, 0.4]));
    m.zones.insert(cid("conveyor"), bx([0.3, 0.0, 0.0], [0.9, 0.1, 0.1]));
    m.zones.insert(cid("staging"), bx([0.9, 0.0, 0.0], [1.0, 0.1, 0.1]));
    m.anchors.insert(cid("cap_stack"), Point3::new(0.05, 0.05, 0.4));
    m.anchors.insert(cid("staging"), Point3::new(0.95, 0.05, 0.1));
    for (s, c) in [(STACK_COUNT, "cap_stack"), (PICK_ACTUATED, "pick_place"), (STAGING_OCCUPIED, "staging")] {
        m.sensor_bindings.insert(SensorId::new(s).expect("valid id"), cid(c));
    }
    m
}

/// `stack_empty` (warning) and `cap_missing` (fault).
pub fn reference_rules() -> Vec<Rule> {
    vec![
        Rule {
            id: "cap_missing".into(),
            kind: RuleKind::AbsenceAfterTrigger {
                trigger: SensorTest::new(PICK_ACTUATED, Predicate::Is(true)),
                expect: SensorTest::new(STAGING_OCCUPIED, Predicate::Is(true)),
                timeout_ms: 800,
            },
            severity: Severity::Fault,
            component: cid("cap_stack"),
            message: "cap missing at {component}".into(),
        },
        Rule {
            id: "stack_empty".into(),
            kind: RuleKind::ThresholdSustained {
                when: SensorTest::new(STACK_COUNT, Predicate::AtMost(0.0)),
                sustain_ms: 1_000,
            },
            severity: Severity::Warning,
            component: cid("cap_stack"),
            message: "stack empty".into(),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn values(rs: &[SensorReading]) -> Vec<(&str, String, u64)> {
        rs.iter().map(|r| (r.sensor.as_str(), r.value.to_string(), r.timestamp)).collect()
    }

    #[test]
    fn full_stack_one_cycle() {
        let s = CapStageState::new(5, 4, 1, 0);
        let mut next = s.clone();
        let trace = advance(&mut next, &FailurePlan::None, 1000);
        assert_eq!(
            values(&trace.readings),
            vec![
                ("stack_count", "4".into(), 100),
                ("pick_actuated", "true".into(), 100),
                ("staging_occupied", "true".into(), 600),
                ("staging_occupied", "false".into(), 900),
            ]
        );
        assert!(trace.at_staging.staging_occupied);
        assert_eq!((next.stack_count, next.delivered, next.dropped, next.clock_ms), (4, 1, 0, 1000));
        assert_eq!(next.seq, 4);
    }

    #[test]
    fn scripted_failure_at_cycle_zero() {
        let s = CapStageState::new(5, 4, 1, 0);
        let mut next = s.clone();
        let trace = advance(&mut next, &FailurePlan::scripted([0]), 1000);
        assert!(trace.grip_failed);
        assert_eq!(next.stack_count, 4);
        assert_eq!(next.dropped, 1);
        assert!(!trace.at_staging.staging_occupied);
        let staging: Vec<_> = trace.readings.iter().filter(|r| r.sensor.as_str() == STAGING_OCCUPIED).collect();
        assert!(staging.iter().all(|r| r.value == ReadingValue::Bool(false)));
    }

    #[test]
    fn empty_stack_extends_without_picking() {
        let s = CapStageState::new(0, 4, 1, 0);
        let (next, readings) = step(&s, &FailurePlan::Probabilistic { p: 1.0 });
        assert_eq!(readings[0].value, ReadingValue::Real(0.0));
        assert_eq!(readings[1].value, ReadingValue::Bool(false));
        assert_eq!((next.dropped, next.delivered), (0, 0));
        assert_eq!(next.rng_word_pos(), 0);
    }

    #[test]
    fn reference_config_is_consistent() {
        let m = reference_model();
        assert!(m.validate().is_empty());
        assert!(crate::analysis::Engine::new(m, reference_rules()).is_ok());
    }

    fn plan_strategy() -> impl Strategy<Value = FailurePlan> {
        prop_oneof![
            Just(FailurePlan::None),
            (0.0..=1.0f64).prop_map(|p| FailurePlan::Probabilistic { p }),
            proptest::collection::btree_set(0u64..40, 0..10).prop_map(|cycles| FailurePlan::Scripted { cycles }),
        ]
    }

    proptest! {
        #[test]
        fn conservation(cap in 0u32..30, slots in 1usize..6, seed: u64, n in 0usize..40, plan in plan_strategy()) {
            let mut s = CapStageState::new(cap, slots, seed, 0);
            for _ in 0..n {
                let before = s.clock_ms;
                advance(&mut s, &plan, 1000);
                prop_assert!(s.clock_ms > before);
                prop_assert!(s.stack_count <= s.capacity);
                prop_assert_eq!(s.removed(), s.delivered + s.dropped);
                prop_assert!(s.conveyor_slots.iter().all(|c| !c) && !s.staging_occupied);
            }
        }

        #[test]
        fn deterministic(seed: u64, n in 0usize..30, plan in plan_strategy()) {
            let mut a = CapStageState::new(20, 4, seed, 5);
            let mut b = a.clone();
            for _ in 0..n {
                prop_assert_eq!(advance(&mut a, &plan, 1000), advance(&mut b, &plan, 1000));
            }
            prop_assert_eq!(a, b);
        }
    }
}
