use std::io;
use std::path::Path;
use std::thread;
use std::time::Duration;

use tokio::sync::mpsc;
use tracing::{info, warn};
use twinwall::analysis::StatusEvent;
use twinwall::config::{load_engine, Config, Scenario};
use twinwall::hub::protocol::Register;
use twinwall::hub::server::{HubClient, HubServer};
use twinwall::ingestion::net::{BrokerClient, BrokerServer};
use twinwall::ingestion::{Broker, Subscription};
use twinwall::pipeline::Analyzer;
use twinwall::pointcloud::PointCloudFrame;
use twinwall::sim::{run, BrokerSink, FnSink, RunSummary, SinkError, Sinks};

use crate::{Failure, Outcome};

fn listen_error(addr: &str, e: io::Error) -> Failure {
    if e.kind() == io::ErrorKind::AddrInUse {
        Failure::Runtime(format!("port in use: {addr}"))
    } else {
        Failure::Runtime(format!("cannot listen on {addr}: {e}"))
    }
}

async fn interrupted() {
    let _ = tokio::signal::ctrl_c().await;
    info!("shutting down");
}

pub async fn hub(cfg: &Config) -> Outcome {
    let server = HubServer::bind(&cfg.hub.id, cfg.hub.listen.as_str())
        .await
        .map_err(|e| listen_error(&cfg.hub.listen, e))?;
    for peer in &cfg.hub.peers {
        server.link(peer.clone());
    }
    info!(service = "hub", id = %cfg.hub.id, addr = %server.local_addr(), "ready");
    interrupted().await;
    let s = server.hub().lock().stats();
    server.shutdown().await;
    println!(
        "service=hub frames_received={} frames_relayed={} frames_stale={} interactions_applied={}",
        s.frames_received, s.frames_relayed, s.frames_stale, s.interactions_applied
    );
    Ok(())
}

pub async fn broker(cfg: &Config) -> Outcome {
    let addr = &cfg.broker.listen;
    let listener = std::net::TcpListener::bind(addr.as_str()).map_err(|e| listen_error(addr, e))?;
    let broker = Broker::new();
    let server = BrokerServer::start(broker.clone(), listener).map_err(|e| listen_error(addr, e))?;
    info!(service = "broker", addr = %server.local_addr(), "ready");
    interrupted().await;
    server.shutdown();
    let s = broker.stats();
    println!(
        "service=broker published={} delivered={} redelivered={} acked={}",
        s.published, s.delivered, s.redelivered, s.acked
    );
    Ok(())
}

pub async fn analysis(cfg: &Config) -> Outcome {
    let a = &cfg.analysis;
    let model = a.model.as_deref().ok_or_else(|| Failure::Config("analysis.model is not set".into()))?;
    let engine = load_engine(model, a.rules.as_deref())?;
    let sub = Subscription::new(&a.topic, a.consumer.as_str())
        .map_err(|e| Failure::Config(e.to_string()))?
        .with_ack_deadline(a.ack_deadline_ms);
    let client = BrokerClient::connect(a.broker.as_str())
        .map_err(|e| Failure::Runtime(format!("broker {}: {e}", a.broker)))?;
    let deliveries = client.subscribe(&sub).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut hub = match &a.hub {
        Some(addr) => Some(
            HubClient::connect(addr, Register::Producer { source: "analysis".into() })
                .await
                .map_err(|e| Failure::Runtime(format!("hub {addr}: {e}")))?
                .0,
        ),
        None => None,
    };

    let (tx, mut rx) = mpsc::unbounded_channel::<StatusEvent>();
    let worker = thread::spawn(move || {
        let mut an = Analyzer::new(engine);
        for d in deliveries {
            for ev in an.handle(&d) {
                if tx.send(ev).is_err() {
                    return an;
                }
            }
            if let Err(e) = client.ack(&sub.consumer, d.topic.as_str(), d.offset) {
                warn!(error = %e, "ack failed");
            }
        }
        an
    });
    info!(service = "analysis", broker = %a.broker, topic = %a.topic, "ready");
    let mut events = 0u64;
    loop {
        let ev = tokio::select! {
            _ = interrupted() => break,
            ev = rx.recv() => match ev { Some(ev) => ev, None => break },
        };
        events += 1;
        println!(
            "event rule={} condition={} severity={} component={} timestamp={}",
            ev.rule_id, ev.condition, ev.severity, ev.component, ev.timestamp
        );
        if let Some(h) = hub.as_mut() {
            h.send_status(&ev).await.map_err(|e| Failure::Runtime(format!("hub: {e}")))?;
        }
    }
    if worker.is_finished() {
        let an = worker.join().expect("analysis worker");
        println!(
            "service=analysis events={events} processed={} quarantined={} duplicates={}",
            an.engine().processed(),
            an.engine().quarantined(),
            an.duplicates()
        );
    } else {
        println!("service=analysis events={events}");
    }
    if let Some(h) = hub {
        h.close().await;
    }
    Ok(())
}

pub fn load_scenario(cfg: &Config, path: Option<&Path>, seed: Option<u64>) -> Result<Scenario, Failure> {
    let path = path
        .or(cfg.sim.scenario.as_deref())
        .ok_or_else(|| Failure::Config("no scenario: pass --scenario or set sim.scenario".into()))?;
    let mut s = Scenario::load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

pub async fn sim(cfg: &Config, scenario: Option<&Path>, seed: Option<u64>, fast: bool) -> Outcome {
    let s = load_scenario(cfg, scenario, seed)?;
    let model = match &cfg.analysis.model {
        Some(p) => Some(twinwall::config::load_model(p)?.0),
        None => Some(twinwall::sim::reference_model()),
    };
    let broker = match &cfg.sim.broker {
        Some(addr) => Some(
            BrokerClient::connect(addr.as_str()).map_err(|e| Failure::Runtime(format!("broker {addr}: {e}")))?,
        ),
        None => None,
    };
    let hub = match &cfg.sim.hub {
        Some(addr) => Some(
            HubClient::connect(addr, Register::Producer { source: "sim".into() })
                .await
                .map_err(|e| Failure::Runtime(format!("hub {addr}: {e}")))?
                .0,
        ),
        None => None,
    };
    let mut simulator = s.simulator(model.as_ref())?;
    let pace = (cfg.sim.realtime && !fast).then(|| Duration::from_millis(s.cycle_ms));
    let (ftx, mut frx) = mpsc::unbounded_channel::<PointCloudFrame>();
    let with_frames = hub.is_some();
    let (topic, cycles) = (s.topic.clone(), s.cycles);
    info!(service = "sim", cycles, seed = s.seed, "ready");

    let runner = thread::spawn(move || -> Result<RunSummary, String> {
        let mut readings = broker.map(|c| BrokerSink::Remote(c, topic));
        let mut frames = FnSink(|f: &PointCloudFrame| ftx.send(f.clone()).map_err(|_| SinkError("hub gone".into())));
        let mut total = RunSummary::default();
        for _ in 0..cycles {
            let mut sinks = Sinks {
                readings: readings.as_mut().map(|r| r as _),
                frames: if with_frames { Some(&mut frames) } else { None },
            };
            let step = run(&mut simulator, 1, &mut sinks).map_err(|e| e.to_string())?;
            total.cycles += 1;
            total.failures_injected += step.failures_injected;
            total.readings_published += step.readings_published;
            total.frames_broadcast += step.frames_broadcast;
            total.delivered = step.delivered;
            total.stack_exhausted = step.stack_exhausted;
            if let Some(p) = pace {
                thread::sleep(p);
            }
        }
        Ok(total)
    });

    if let Some(mut h) = hub {
        while let Some(f) = frx.recv().await {
            h.send_frame(&f).await.map_err(|e| Failure::Runtime(format!("hub: {e}")))?;
        }
        h.close().await;
    }
    let summary = tokio::task::spawn_blocking(move || runner.join().expect("sim thread"))
        .await
        .expect("join")
        .map_err(Failure::Runtime)?;
    println!("service=sim {summary}");
    Ok(())
}
