//! Codec and hub relay measurements.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use parking_lot::Mutex;
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hub::protocol::Register;
use crate::hub::server::{ClientError, ClientMessage, HubClient, HubServer};
use crate::hub::{FrameCodec, WallConfig};
use crate::pipeline::percentile;
use crate::pointcloud::{decode_binary, decode_json, encode_binary, encode_json, PointCloudFrame};
use crate::spatial::Point3;

/// A frame of `n` points drawn uniformly from a 4 m cube.
pub fn random_frame(n: usize, seed: u64) -> PointCloudFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coord = || (rng.next_u32() as f64 / u32::MAX as f64) * 4.0 - 2.0;
    let points = (0..n).map(|_| Point3::new(coord(), coord(), coord())).collect();
    PointCloudFrame::new(1, 0, points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecBench {
    pub points: usize,
    pub reps: u32,
    pub json_bytes: usize,
    pub binary_bytes: usize,
    pub json_encode_mbps: f64,
    pub json_decode_mbps: f64,
    pub binary_encode_mbps: f64,
    pub binary_decode_mbps: f64,
}

impl CodecBench {
    /// Bytes encoded plus bytes decoded over total binary codec time.
    pub fn binary_aggregate_mbps(&self) -> f64 {
        2.0 / (1.0 / self.binary_encode_mbps + 1.0 / self.binary_decode_mbps)
    }
}

impl fmt::Display for CodecBench {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "codec=json points={} bytes={} encode_mbps={:.1} decode_mbps={:.1}",
            self.points, self.json_bytes, self.json_encode_mbps, self.json_decode_mbps
        )?;
        write!(
            f,
            "codec=binary points={} bytes={} encode_mbps={:.1} decode_mbps={:.1} aggregate_mbps={:.1}",
            self.points,
            self.binary_bytes,
            self.binary_encode_mbps,
            self.binary_decode_mbps,
            self.binary_aggregate_mbps()
        )
    }
}

fn mbps(bytes: usize, reps: u32, took: Duration) -> f64 {
    (bytes as f64 * f64::from(reps)) / took.as_secs_f64().max(1e-9) / 1e6
}

fn time<T>(reps: u32, mut f: impl FnMut() -> T) -> Duration {
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(f());
    }
    start.elapsed()
}

/// Encodes and decodes an `n_points` frame `reps` times in each format.
/// Throughput is measured against the encoded size.
pub fn bench_codec(n_points: usize, reps: u32) -> CodecBench {
    let reps = reps.max(1);
    let frame = random_frame(n_points, 42);
    let json = encode_json(&frame);
    let bin = encode_binary(&frame);
    let je = time(reps, || encode_json(&frame));
    let jd = time(reps, || decode_json(&json).expect("own output decodes"));
    let be = time(reps, || encode_binary(&frame));
    let bd = time(reps, || decode_binary(&bin).expect("own output decodes"));
    CodecBench {
        points: n_points,
        reps,
        json_bytes: json.len(),
        binary_bytes: bin.len(),
        json_encode_mbps: mbps(json.len(), reps, je),
        json_decode_mbps: mbps(json.len(), reps, jd),
        binary_encode_mbps: mbps(bin.len(), reps, be),
        binary_decode_mbps: mbps(bin.len(), reps, bd),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HubBench {
    pub clients: usize,
    pub target_fps: f64,
    pub points: usize,
    pub frames_sent: u64,
    /// Frames decoded per second of producer stream time, per display client.
    pub client_fps: Vec<f64>,
    /// Producer send to client decode, all clients pooled.
    pub latencies_ms: Vec<f64>,
}

impl HubBench {
    pub fn min_fps(&self) -> f64 {
        self.client_fps.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn p95_ms(&self) -> f64 {
        percentile(&self.latencies_ms, 0.95)
    }
}

impl fmt::Display for HubBench {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, fps) in self.client_fps.iter().enumerate() {
            writeln!(f, "client={i} relay_fps={fps:.2}")?;
        }
        write!(
            f,
            "clients={} target_fps={} points={} frames_sent={} min_fps={:.2} p50_ms={:.3} p95_ms={:.3}",
            self.clients,
            self.target_fps,
            self.points,
            self.frames_sent,
            self.min_fps(),
            percentile(&self.latencies_ms, 0.5),
            self.p95_ms()
        )
    }
}

/// Streams `points`-point binary frames from one producer through a
/// loopback hub to `clients` displays at `fps` for `seconds`.
pub async fn bench_hub(clients: usize, fps: f64, seconds: f64, points: usize) -> Result<HubBench, ClientError> {
    let server = HubServer::bind("bench", "127.0.0.1:0").await.map_err(|e| {
        ClientError::Protocol(crate::hub::HubError::InvalidPayload(e.to_string()))
    })?;
    let addr = server.local_addr().to_string();
    let wall = WallConfig { columns: clients.max(1) as u32, rows: 1, tile_width_px: 640, tile_height_px: 480 };
    let sent: Arc<Mutex<HashMap<u64, Instant>>> = Arc::default();
    let run_for = Duration::from_secs_f64(seconds);

    let mut readers = Vec::new();
    for i in 0..clients {
        let reg = Register::Display {
            wall: "bench".into(),
            config: wall,
            client: format!("c{i}"),
            column: i as u32,
            row: 0,
            codec: FrameCodec::Binary,
        };
        let (mut c, _) = HubClient::connect(&addr, reg).await?;
        let sent = sent.clone();
        readers.push(tokio::spawn(async move {
            let mut lat = Vec::new();
            while let Ok(Ok(msg)) = tokio::time::timeout(Duration::from_secs(1), c.next()).await {
                if let ClientMessage::BinaryFrame(b) = msg {
                    let frame = decode_binary(&b).expect("hub relays valid frames");
                    if let Some(t) = sent.lock().get(&frame.frame_id) {
                        lat.push(t.elapsed().as_secs_f64() * 1000.0);
                    }
                }
            }
            lat
        }));
    }

    let (mut producer, _) = HubClient::connect(&addr, Register::Producer { source: "bench".into() }).await?;
    let template = encode_binary(&random_frame(points, 7));
    let mut tick = tokio::time::interval(Duration::from_secs_f64(1.0 / fps));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Burst);
    let start = Instant::now();
    let mut frames_sent = 0u64;
    let (mut first_tick, mut last_tick) = (None, None);
    while start.elapsed() < run_for {
        let at = tick.tick().await;
        first_tick.get_or_insert(at);
        last_tick = Some(at);
        frames_sent += 1;
        let mut buf = template.clone();
        buf[4..12].copy_from_slice(&frames_sent.to_le_bytes());
        sent.lock().insert(frames_sent, Instant::now());
        producer.send_encoded_frame(Bytes::from(buf)).await?;
    }
    // Paced rate from the scheduled ticks; missed ticks are sent late.
    let offered_fps = match (first_tick, last_tick) {
        (Some(a), Some(b)) if frames_sent > 1 => (frames_sent - 1) as f64 * 1e9 / (b - a).as_nanos() as f64,
        _ => fps,
    };

    let mut client_fps = Vec::new();
    let mut latencies_ms = Vec::new();
    for r in readers {
        let lat = r.await.expect("reader task");
        // Offered rate scaled by the share of frames this client decoded.
        client_fps.push(offered_fps * lat.len() as f64 / frames_sent.max(1) as f64);
        latencies_ms.extend(lat);
    }
    producer.close().await;
    server.shutdown().await;
    Ok(HubBench { clients, target_fps: fps, points, frames_sent, client_fps, latencies_ms })
}
