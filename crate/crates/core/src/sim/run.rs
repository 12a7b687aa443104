use std::fmt;

use thiserror::Error;

use super::{advance, CapStageState, CycleTrace, FailurePlan, SceneTemplate, TemplateError, DEFAULT_CYCLE_MS};
use crate::hub::server::SharedHub;
use crate::ingestion::net::BrokerClient;
use crate::ingestion::{Broker, SensorReading};
use crate::pointcloud::PointCloudFrame;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("sink failed: {0}")]
pub struct SinkError(pub String);

pub trait ReadingSink {
    fn publish(&mut self, r: &SensorReading) -> Result<(), SinkError>;
}

pub trait FrameSink {
    fn broadcast(&mut self, f: &PointCloudFrame) -> Result<(), SinkError>;
}

impl ReadingSink for Vec<SensorReading> {
    fn publish(&mut self, r: &SensorReading) -> Result<(), SinkError> {
        self.push(r.clone());
        Ok(())
    }
}

impl FrameSink for Vec<PointCloudFrame> {
    fn broadcast(&mut self, f: &PointCloudFrame) -> Result<(), SinkError> {
        self.push(f.clone());
        Ok(())
    }
}

/// Adapts a closure into either sink.
pub struct FnSink<F>(pub F);

impl<F: FnMut(&SensorReading) -> Result<(), SinkError>> ReadingSink for FnSink<F> {
    fn publish(&mut self, r: &SensorReading) -> Result<(), SinkError> {
        (self.0)(r)
    }
}

impl<F: FnMut(&PointCloudFrame) -> Result<(), SinkError>> FrameSink for FnSink<F> {
    fn broadcast(&mut self, f: &PointCloudFrame) -> Result<(), SinkError> {
        (self.0)(f)
    }
}

/// Publishes every reading to one topic.
pub enum BrokerSink {
    Local(Broker, String),
    Remote(BrokerClient, String),
}

impl ReadingSink for BrokerSink {
    fn publish(&mut self, r: &SensorReading) -> Result<(), SinkError> {
        let res = match self {
            BrokerSink::Local(b, topic) => b.publish(topic, r.clone()),
            BrokerSink::Remote(c, topic) => c.publish(topic, r.clone()),
        };
        res.map(drop).map_err(|e| SinkError(e.to_string()))
    }
}

/// Broadcasts frames through an in-process hub.
pub struct HubFrameSink {
    pub hub: SharedHub,
    pub source: String,
}

impl FrameSink for HubFrameSink {
    fn broadcast(&mut self, f: &PointCloudFrame) -> Result<(), SinkError> {
        self.hub.lock().broadcast_frame(&self.source, f);
        Ok(())
    }
}

#[derive(Default)]
pub struct Sinks<'a> {
    pub readings: Option<&'a mut dyn ReadingSink>,
    pub frames: Option<&'a mut dyn FrameSink>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub cycles: u64,
    pub failures_injected: u64,
    pub readings_published: u64,
    pub frames_broadcast: u64,
    pub delivered: u64,
    pub stack_exhausted: bool,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cycles={} failures_injected={} readings_published={} frames_broadcast={} delivered={} stack_exhausted={}",
            self.cycles,
            self.failures_injected,
            self.readings_published,
            self.frames_broadcast,
            self.delivered,
            self.stack_exhausted
        )
    }
}

#[derive(Debug, Error)]
#[error("{cause} after {partial}")]
pub struct RunAborted {
    pub partial: RunSummary,
    pub cause: SinkError,
}

/// A state, a failure plan and an optional frame cadence.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub state: CapStageState,
    pub plan: FailurePlan,
    pub cycle_ms: u64,
    frames: Option<(SceneTemplate, u64)>,
    next_frame_id: u64,
}

impl Simulator {
    pub fn new(state: CapStageState, plan: FailurePlan) -> Self {
        Simulator { state, plan, cycle_ms: DEFAULT_CYCLE_MS, frames: None, next_frame_id: 1 }
    }

    pub fn with_cycle_ms(mut self, ms: u64) -> Self {
        self.cycle_ms = ms;
        self
    }

    /// Renders a frame at the staging instant of every `every`-th cycle.
    pub fn with_frames(mut self, template: SceneTemplate, every: u64) -> Result<Self, TemplateError> {
        template.validate(self.state.capacity, self.state.conveyor_slots.len())?;
        self.frames = (every > 0).then_some((template, every));
        Ok(self)
    }

    /// One cycle, plus a frame when one is due and `render` is set.
    pub fn cycle(&mut self, render: bool) -> (CycleTrace, Option<PointCloudFrame>) {
        let trace = advance(&mut self.state, &self.plan, self.cycle_ms);
        let frame = match &self.frames {
            Some((template, every)) if render && self.state.cycle % every == 0 => {
                let s = &trace.at_staging;
                let f = template.cloud(s, self.next_frame_id, s.clock_ms);
                self.next_frame_id += 1;
                Some(f)
            }
            _ => None,
        };
        (trace, frame)
    }
}

/// Runs `n` cycles, publishing readings after each step and frames at the
/// configured cadence. A sink error stops the run.
pub fn run(sim: &mut Simulator, n: u64, sinks: &mut Sinks<'_>) -> Result<RunSummary, RunAborted> {
    let mut summary = RunSummary::default();
    for _ in 0..n {
        let (trace, frame) = sim.cycle(sinks.frames.is_some());
        summary.cycles += 1;
        summary.failures_injected += u64::from(trace.grip_failed);
        summary.delivered = sim.state.delivered;
        summary.stack_exhausted = sim.state.stack_count == 0;
        if let Some(out) = sinks.readings.as_deref_mut() {
            for r in &trace.readings {
                out.publish(r).map_err(|cause| RunAborted { partial: summary, cause })?;
                summary.readings_published += 1;
            }
        }
        if let (Some(f), Some(out)) = (frame, sinks.frames.as_deref_mut()) {
            out.broadcast(&f).map_err(|cause| RunAborted { partial: summary, cause })?;
            summary.frames_broadcast += 1;
        }
    }
    Ok(summary)
}
