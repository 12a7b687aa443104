//! Wiring of the services: the analysis worker and the in-process demo.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;
use tracing::{debug, info};

use crate::analysis::{Condition, Engine, Severity, StatusEvent};
use crate::config::Scenario;
use crate::hub::protocol::Register;
use crate::hub::server::{ClientError, ClientMessage, HubClient, HubServer};
use crate::ingestion::{Broker, BrokerError, DedupFilter, Delivery, Subscription};
use crate::sim::{run, BrokerSink, FnSink, HubFrameSink, ReadingSink, RunSummary, SinkError, Sinks};

/// Dedup filter in front of an engine.
pub struct Analyzer {
    engine: Engine,
    dedup: DedupFilter,
}

impl Analyzer {
    pub fn new(engine: Engine) -> Self {
        Analyzer { engine, dedup: DedupFilter::new() }
    }

    /// Events caused by one delivery; redeliveries yield none.
    pub fn handle(&mut self, d: &Delivery) -> Vec<StatusEvent> {
        if !self.dedup.accept_item(d) {
            return Vec::new();
        }
        self.engine.process(&d.reading)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn duplicates(&self) -> u64 {
        self.dedup.duplicates()
    }
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("broker: {0}")]
    Broker(#[from] BrokerError),
    #[error("hub: {0}")]
    Hub(#[from] ClientError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("simulator: {0}")]
    Sim(String),
    #[error("pipeline did not drain: {0}")]
    Stalled(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoOptions {
    /// Wall time per simulated millisecond; 0 runs flat out.
    pub time_scale: f64,
    pub drain_timeout: Duration,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions { time_scale: 0.01, drain_timeout: Duration::from_secs(10) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSummary {
    pub sim: RunSummary,
    /// Fault raises seen by the overlay client.
    pub faults_raised: u64,
    /// All status events seen by the overlay client.
    pub events: Vec<StatusEvent>,
    pub duplicates: u64,
    /// Reading publish to overlay receipt, one sample per status event.
    pub latencies_ms: Vec<f64>,
}

impl DemoSummary {
    pub fn ok(&self) -> bool {
        self.faults_raised == self.sim.failures_injected
    }

    pub fn percentile_ms(&self, q: f64) -> f64 {
        percentile(&self.latencies_ms, q)
    }
}

impl fmt::Display for DemoSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "cycles={} failures_injected={} faults_raised={} events={} readings_published={} frames_broadcast={}",
            self.sim.cycles,
            self.sim.failures_injected,
            self.faults_raised,
            self.events.len(),
            self.sim.readings_published,
            self.sim.frames_broadcast,
        )?;
        write!(
            f,
            "latency_p50_ms={:.3} latency_p95_ms={:.3} samples={}",
            self.percentile_ms(0.5),
            self.percentile_ms(0.95),
            self.latencies_ms.len()
        )
    }
}

/// Nearest-rank percentile; NaN for no samples.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Runs broker, analysis, hub and simulator in one process. Status events
/// travel to the hub and on to an overlay client over loopback websocket.
pub async fn run_demo(
    scenario: &Scenario,
    engine: Engine,
    opts: DemoOptions,
) -> Result<DemoSummary, DemoError> {
    let broker = Broker::new();
    let hub = HubServer::bind("demo", "127.0.0.1:0").await?;
    let addr = hub.local_addr().to_string();
    let (mut overlay, _) = HubClient::connect(&addr, Register::Ar).await?;

    // First publish instant per reading timestamp.
    let published: Arc<Mutex<HashMap<u64, Instant>>> = Arc::default();
    let pushed = Arc::new(Mutex::new(0u64));
    let stop = Arc::new(AtomicBool::new(false));
    let _stop_guard = StopOnDrop(stop.clone());

    let mut sim = scenario.simulator(Some(engine.model())).map_err(|e| DemoError::Sim(e.to_string()))?;
    let consumer = broker.subscribe(Subscription::new("factory.*", "analysis")?)?;
    let analysis = {
        let (hub, pushed, stop) = (hub.hub(), pushed.clone(), stop.clone());
        thread::spawn(move || -> Result<u64, BrokerError> {
            let mut an = Analyzer::new(engine);
            while !stop.load(Ordering::Acquire) {
                let Some(d) = consumer.next_timeout(Duration::from_millis(20))? else { continue };
                for ev in an.handle(&d) {
                    debug!(rule = %ev.rule_id, condition = %ev.condition, "status");
                    if hub.lock().push_status(ev).is_ok() {
                        *pushed.lock() += 1;
                    }
                }
                consumer.ack(d.topic.as_str(), d.offset)?;
            }
            Ok(an.duplicates())
        })
    };

    let sim_task = {
        let (broker, published) = (broker.clone(), published.clone());
        let (topic, cycles, scale, cycle_ms) =
            (scenario.topic.clone(), scenario.cycles, opts.time_scale, scenario.cycle_ms);
        let hub = hub.hub();
        thread::spawn(move || -> Result<RunSummary, DemoError> {
            let mut sink = BrokerSink::Local(broker, topic);
            let mut readings = FnSink(|r: &crate::ingestion::SensorReading| -> Result<(), SinkError> {
                published.lock().entry(r.timestamp).or_insert_with(Instant::now);
                sink.publish(r)
            });
            let mut frames = HubFrameSink { hub, source: "sim".into() };
            let mut total = RunSummary::default();
            let pace = Duration::from_secs_f64(cycle_ms as f64 * scale / 1000.0);
            for _ in 0..cycles {
                let step = run(&mut sim, 1, &mut Sinks { readings: Some(&mut readings), frames: Some(&mut frames) })
                    .map_err(|e| DemoError::Sim(e.to_string()))?;
                total.cycles += step.cycles;
                total.failures_injected += step.failures_injected;
                total.readings_published += step.readings_published;
                total.frames_broadcast += step.frames_broadcast;
                total.delivered = step.delivered;
                total.stack_exhausted = step.stack_exhausted;
                if !pace.is_zero() {
                    thread::sleep(pace);
                }
            }
            Ok(total)
        })
    };

    let mut events = Vec::new();
    let mut latencies_ms = Vec::new();
    let mut sim_summary = None;
    loop {
        if sim_summary.is_none() && sim_task.is_finished() {
            sim_summary = Some(sim_task.join().expect("sim thread")?);
            break;
        }
        match tokio::time::timeout(Duration::from_millis(5), overlay.next()).await {
            Ok(Ok(ClientMessage::Status { event, .. })) => {
                record(&published, &event, &mut latencies_ms);
                events.push(event);
            }
            Ok(Ok(_)) | Err(_) => {}
            Ok(Err(e)) => return Err(e.into()),
        }
    }
    let sim_summary = sim_summary.expect("joined");

    // Drain: everything published is acked and every pushed event arrived.
    let deadline = tokio::time::Instant::now() + opts.drain_timeout;
    loop {
        let stats = broker.stats();
        let drained = stats.acked >= stats.published && events.len() as u64 >= *pushed.lock();
        if drained {
            break;
        }
        if tokio::time::Instant::now() > deadline {
            stop.store(true, Ordering::Release);
            return Err(DemoError::Stalled(format!(
                "acked {} of {}, received {} of {} events",
                stats.acked,
                stats.published,
                events.len(),
                pushed.lock()
            )));
        }
        if let Ok(Ok(ClientMessage::Status { event, .. })) =
            tokio::time::timeout(Duration::from_millis(5), overlay.next()).await
        {
            record(&published, &event, &mut latencies_ms);
            events.push(event);
        }
    }
    stop.store(true, Ordering::Release);
    let duplicates = analysis.join().expect("analysis thread")?;
    overlay.close().await;
    hub.shutdown().await;
    broker.close();

    let faults_raised =
        events.iter().filter(|e| e.severity == Severity::Fault && e.condition == Condition::Raised).count() as u64;
    let summary = DemoSummary { sim: sim_summary, faults_raised, events, duplicates, latencies_ms };
    info!(faults = summary.faults_raised, failures = summary.sim.failures_injected, "demo finished");
    Ok(summary)
}

struct StopOnDrop(Arc<AtomicBool>);

impl Drop for StopOnDrop {
    fn drop(&mut self) {
        self.0.store(true, Ordering::Release);
    }
}

fn record(published: &Mutex<HashMap<u64, Instant>>, ev: &StatusEvent, out: &mut Vec<f64>) {
    if let Some(t) = published.lock().get(&ev.timestamp) {
        out.push(t.elapsed().as_secs_f64() * 1000.0);
    }
}
