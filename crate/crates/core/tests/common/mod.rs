//! Checks shared by the focused test files and the acceptance run. Each
//! returns `Err` with a description instead of panicking, so acceptance can
//! report it.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver};
use twinwall::analysis::{Condition, Engine, Severity, StatusEvent};
use twinwall::hub::{apply_interaction, FrameCodec, Hub, HubState, InteractionKind, Outbound, TileAssignment, WallConfig};
use twinwall::ingestion::{Broker, Delivery, ManualClock, SensorReading, Subscription};
use twinwall::pipeline::Analyzer;
use twinwall::pointcloud::{decode_binary, decode_json, encode_binary, encode_json, PointCloudFrame};
use twinwall::sim::{reference_model, reference_rules, run, CapStageState, FailurePlan, Simulator, Sinks};
use twinwall::{Box3, ComponentId, Point3};

pub type Check<T = ()> = Result<T, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- codecs

/// The six-point example listing.
pub const EXAMPLE_JSON: &str = "{\"values\": [ \"0.0 1.1 1.1\",\"2.0 3.1 2.0\",
\t     \"1.0 1.0 2.0\", \"1.0 3.0 2.0\",
\t     \"1.0 0.0 1.0\",\"0.5 1.0 1.0\" ]}";

pub fn example_points() -> Vec<[f64; 3]> {
    vec![[0.0, 1.1, 1.1], [2.0, 3.1, 2.0], [1.0, 1.0, 2.0], [1.0, 3.0, 2.0], [1.0, 0.0, 1.0], [0.5, 1.0, 1.0]]
}

pub fn check_example() -> Check {
    let f = decode_json(EXAMPLE_JSON.as_bytes()).map_err(|e| e.to_string())?;
    let got: Vec<[f64; 3]> = f.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    ensure(got == example_points(), || format!("decoded {got:?}"))
}

/// Frame sizes log-uniform on [1, max_points], mixed magnitudes.
pub fn random_frame(rng: &mut ChaCha8Rng, max_points: usize) -> PointCloudFrame {
    let u = rng.next_u64() as f64 / u64::MAX as f64;
    let n = ((max_points as f64).powf(u)).floor() as usize;
    let scale = [1e-3, 1.0, 10.0, 1e4][(rng.next_u32() % 4) as usize];
    let mut c = || (rng.next_u64() as f64 / u64::MAX as f64 * 2.0 - 1.0) * scale;
    let points = (0..n).map(|_| Point3::new(c(), c(), c())).collect();
    let id = rng.next_u64();
    let ts = rng.next_u64();
    let mut f = PointCloudFrame::new(id, ts, points);
    if rng.next_u32() % 2 == 0 {
        f.colors = Some((0..n).map(|_| rng.next_u32().to_le_bytes()[..3].try_into().unwrap()).collect());
    }
    f
}

pub fn check_codec_frame(f: &PointCloudFrame) -> Check {
    // JSON carries points only.
    let plain = PointCloudFrame::new(f.frame_id, f.timestamp, f.points.clone());
    let back = decode_json(&encode_json(&plain)).map_err(|e| format!("json decode: {e}"))?;
    ensure(back.points == f.points, || format!("json round trip changed a {}-point frame", f.len()))?;

    let bin = encode_binary(f);
    let color_bytes = if f.colors.is_some() { 3 } else { 0 };
    ensure(bin.len() == 25 + (12 + color_bytes) * f.len(), || format!("binary size {} for {} points", bin.len(), f.len()))?;
    ensure(&bin[..4] == b"EPC1", || "magic".into())?;
    let back = decode_binary(&bin).map_err(|e| format!("binary decode: {e}"))?;
    ensure(back.frame_id == f.frame_id && back.timestamp == f.timestamp, || "binary header".into())?;
    ensure(back.points.len() == f.points.len(), || "binary count".into())?;
    ensure(back.colors == f.colors, || "binary colors".into())?;
    for (a, b) in f.points.iter().zip(&back.points) {
        // Exactly the nearest f32, independent of the codec's own conversion.
        let want = [a.x as f32 as f64, a.y as f32 as f64, a.z as f32 as f64];
        ensure([b.x, b.y, b.z] == want, || format!("binary coord {a:?} -> {b:?}"))?;
    }
    // Once quantized, the binary form is a fixed point.
    ensure(encode_binary(&back) == bin, || "binary re-encode differs".into())
}

// ---- detection

pub struct DetectionRun {
    pub injected: u64,
    pub events: Vec<StatusEvent>,
}

pub fn detect(cap: u32, cycles: u64, plan: FailurePlan, seed: u64) -> DetectionRun {
    let mut readings = Vec::new();
    let mut sim = Simulator::new(CapStageState::new(cap, 4, seed, 0), plan);
    let summary = run(&mut sim, cycles, &mut Sinks { readings: Some(&mut readings), frames: None }).expect("vec sink");
    let mut engine = Engine::new(reference_model(), reference_rules()).expect("reference config");
    let events = readings.iter().flat_map(|r| engine.process(r)).collect();
    DetectionRun { injected: summary.failures_injected, events }
}

/// Up to `max` distinct failure cycles in `0..below`, no two adjacent.
pub fn separated_cycles(rng: &mut ChaCha8Rng, below: u64, max: usize) -> BTreeSet<u64> {
    let mut out = BTreeSet::new();
    let want = 1 + (rng.next_u32() as usize % max);
    while out.len() < want {
        let c = rng.next_u64() % below;
        if !out.contains(&c) && !out.contains(&(c + 1)) && (c == 0 || !out.contains(&(c - 1))) {
            out.insert(c);
        }
    }
    out
}

fn times(evs: &[StatusEvent], rule: &str, cond: Condition) -> Vec<u64> {
    evs.iter().filter(|e| e.rule_id == rule && e.condition == cond).map(|e| e.timestamp).collect()
}

/// 50 cycles with a full 40-cap stack, so the stack runs out at cycle 40.
pub fn check_detection_run(seed: u64, failures: &BTreeSet<u64>) -> Check {
    let r = detect(40, 50, FailurePlan::Scripted { cycles: failures.clone() }, seed);
    ensure(r.injected == failures.len() as u64, || format!("injected {} of {failures:?}", r.injected))?;
    let raised = times(&r.events, "cap_missing", Condition::Raised);
    ensure(raised.len() as u64 == r.injected, || format!("seed {seed}: {} raises for {} failures", raised.len(), r.injected))?;
    // A failed cycle misses staging at +600 and times out at +900.
    let want: Vec<u64> = failures.iter().map(|c| c * 1000 + 900).collect();
    ensure(raised == want, || format!("seed {seed}: raised at {raised:?}, expected {want:?}"))?;
    let cleared = times(&r.events, "cap_missing", Condition::Cleared);
    // Cleared when the next cycle stages a cap; a failed grip still uses up
    // a cap, so cycle 40 onwards has none to stage.
    let want: Vec<u64> = failures.iter().filter(|&&c| c + 1 < 40).map(|c| (c + 1) * 1000 + 600).collect();
    ensure(cleared == want, || format!("seed {seed}: cleared at {cleared:?}, expected {want:?}"))?;
    let empties = times(&r.events, "stack_empty", Condition::Raised);
    ensure(empties.len() == 1, || format!("seed {seed}: stack_empty raised {} times", empties.len()))
}

pub fn check_failure_free_run(seed: u64) -> Check {
    let r = detect(40, 50, FailurePlan::None, seed);
    let faults = r.events.iter().filter(|e| e.severity == Severity::Fault && e.condition == Condition::Raised).count();
    ensure(r.injected == 0 && faults == 0, || format!("seed {seed}: {faults} fault raises without failures"))?;
    let empties = times(&r.events, "stack_empty", Condition::Raised);
    ensure(empties.len() == 1, || format!("seed {seed}: stack_empty raised {} times", empties.len()))
}

// ---- reliability

pub const TOPIC: &str = "factory.captransfer";
const DEADLINE: u64 = 50;

fn sim_readings(seed: u64, cycles: u64) -> Vec<SensorReading> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let plan = FailurePlan::Scripted { cycles: separated_cycles(&mut rng, cycles.min(12), 3) };
    let mut readings = Vec::new();
    let mut sim = Simulator::new(CapStageState::new(12, 4, seed, 0), plan);
    run(&mut sim, cycles, &mut Sinks { readings: Some(&mut readings), frames: None }).expect("vec sink");
    readings
}

fn clean_events(readings: &[SensorReading]) -> Vec<StatusEvent> {
    let mut engine = Engine::new(reference_model(), reference_rules()).expect("reference config");
    readings.iter().flat_map(|r| engine.process(r)).collect()
}

fn fresh_broker() -> (Broker, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(0));
    (Broker::with_clock(clock.clone()), clock)
}

/// Every message is delivered 1 to 3 times: the consumer withholds its ack
/// until the planned attempt, and acks of earlier messages are deferred a
/// random number of polls. Analysis output must equal the clean run.
pub fn check_redelivery_schedule(seed: u64) -> Check {
    let readings = sim_readings(seed, 16);
    let want = clean_events(&readings);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (broker, clock) = fresh_broker();
    let consumer = broker
        .subscribe(Subscription::new("factory.*", "analysis").unwrap().with_ack_deadline(DEADLINE))
        .map_err(|e| e.to_string())?;
    let plan: Vec<u32> = readings.iter().map(|_| 1 + rng.next_u32() % 3).collect();
    let mut attempts = vec![0u32; readings.len()];
    let mut pending: Vec<(u64, u32)> = Vec::new(); // offset, polls left before ack
    let mut an = Analyzer::new(Engine::new(reference_model(), reference_rules()).unwrap());
    let mut got = Vec::new();
    let mut published = 0;
    loop {
        // Publishing interleaves with consumption.
        if published < readings.len() && rng.next_u32() % 2 == 0 {
            broker.publish(TOPIC, readings[published].clone()).map_err(|e| e.to_string())?;
            published += 1;
        }
        match consumer.try_next().map_err(|e| e.to_string())? {
            Some(d) => {
                let i = d.offset as usize;
                attempts[i] += 1;
                ensure(d.attempt == attempts[i], || format!("offset {i}: attempt {} after {}", d.attempt, attempts[i]))?;
                ensure(attempts[i] <= plan[i], || format!("offset {i} redelivered after its ack"))?;
                got.extend(an.handle(&d));
                if attempts[i] == plan[i] {
                    pending.push((d.offset, rng.next_u32() % 4));
                }
            }
            None if published == readings.len() && pending.is_empty() && consumer.unacked() == 0 => break,
            // Deferred acks land before the clock moves on.
            None if !pending.is_empty() => {}
            None => clock.advance(DEADLINE),
        }
        let mut keep = Vec::new();
        for (off, left) in pending.drain(..) {
            if left == 0 {
                consumer.ack(TOPIC, off).map_err(|e| e.to_string())?;
            } else {
                keep.push((off, left - 1));
            }
        }
        pending = keep;
    }
    for (i, (&a, &p)) in attempts.iter().zip(&plan).enumerate() {
        ensure(a == p, || format!("offset {i}: {a} deliveries, planned {p}"))?;
    }
    ensure(got == want, || format!("seed {seed}: analysis diverged from clean delivery"))?;
    ensure(an.duplicates() == attempts.iter().map(|&a| u64::from(a) - 1).sum::<u64>(), || "duplicate count".into())
}

#[derive(Clone, Copy, Debug)]
enum Act {
    Poll,
    Tick,
    AckOldest,
    AckNewest,
}

/// Every interleaving of polls, deadline expiries and acks of length
/// `depth` over `msgs` pre-published readings, each followed by a drain.
pub fn model_check_delivery(msgs: usize, depth: usize) -> Check<u64> {
    // A failing first cycle, so the prefix raises at +900.
    let mut all = Vec::new();
    let mut sim = Simulator::new(CapStageState::new(4, 4, 3, 0), FailurePlan::scripted([0]));
    run(&mut sim, 2, &mut Sinks { readings: Some(&mut all), frames: None }).expect("vec sink");
    let readings: Vec<SensorReading> = all.into_iter().take(msgs).collect();
    let want = clean_events(&readings);
    let mut schedules = 0;
    let mut sched = Vec::new();
    fn rec(sched: &mut Vec<Act>, depth: usize, f: &mut dyn FnMut(&[Act]) -> Check) -> Check {
        f(sched)?;
        if sched.len() < depth {
            for a in [Act::Poll, Act::Tick, Act::AckOldest, Act::AckNewest] {
                sched.push(a);
                rec(sched, depth, f)?;
                sched.pop();
            }
        }
        Ok(())
    }
    rec(&mut sched, depth, &mut |s| {
        schedules += 1;
        replay_schedule(&readings, &want, s)
    })?;
    Ok(schedules)
}

fn replay_schedule(readings: &[SensorReading], want: &[StatusEvent], sched: &[Act]) -> Check {
    let (broker, clock) = fresh_broker();
    let consumer = broker
        .subscribe(Subscription::new("factory.*", "analysis").unwrap().with_ack_deadline(DEADLINE))
        .unwrap();
    for r in readings {
        broker.publish(TOPIC, r.clone()).unwrap();
    }
    let mut an = Analyzer::new(Engine::new(reference_model(), reference_rules()).unwrap());
    let mut got = Vec::new();
    let mut held: Vec<u64> = Vec::new();
    let mut acked: BTreeSet<u64> = BTreeSet::new();
    let mut firsts: Vec<u64> = Vec::new();
    let mut count: BTreeMap<u64, u32> = BTreeMap::new();
    let mut on_delivery = |d: Delivery, held: &mut Vec<u64>, acked: &BTreeSet<u64>| -> Check {
        ensure(!acked.contains(&d.offset), || format!("{sched:?}: acked offset {} delivered again", d.offset))?;
        let c = count.entry(d.offset).or_default();
        *c += 1;
        ensure(d.attempt == *c, || format!("{sched:?}: attempt numbering"))?;
        if *c == 1 {
            firsts.push(d.offset);
        }
        got.extend(an.handle(&d));
        held.retain(|&o| o != d.offset);
        held.push(d.offset);
        Ok(())
    };
    for a in sched {
        match a {
            Act::Poll => {
                if let Some(d) = consumer.try_next().unwrap() {
                    on_delivery(d, &mut held, &acked)?;
                }
            }
            Act::Tick => clock.advance(DEADLINE),
            Act::AckOldest | Act::AckNewest if !held.is_empty() => {
                let o = if matches!(a, Act::AckOldest) { held.remove(0) } else { held.pop().unwrap() };
                consumer.ack(TOPIC, o).unwrap();
                acked.insert(o);
            }
            _ => {}
        }
    }
    // Drain: poll and ack until the broker has nothing left.
    loop {
        match consumer.try_next().unwrap() {
            Some(d) => {
                let o = d.offset;
                on_delivery(d, &mut held, &acked)?;
                consumer.ack(TOPIC, o).unwrap();
                acked.insert(o);
                held.retain(|&x| x != o);
            }
            None if consumer.unacked() > 0 => clock.advance(DEADLINE),
            None => break,
        }
    }
    let all: Vec<u64> = (0..readings.len() as u64).collect();
    ensure(firsts == all, || format!("{sched:?}: first deliveries {firsts:?}"))?;
    ensure(acked.len() == readings.len(), || format!("{sched:?}: acked {acked:?}"))?;
    ensure(got == want, || format!("{sched:?}: analysis output differs"))
}

// ---- federation

#[derive(Clone, Copy, Debug, PartialEq)]
enum Step {
    LocalA,
    LocalB,
    /// Deliver the oldest message in flight from A to B.
    ToB,
    ToA,
}

struct Side {
    hub: Hub,
    inbox: UnboundedReceiver<Outbound>,
    clock: u64,
    seen: Vec<(u64, &'static str, InteractionKind)>,
}

fn canonical_fold(items: &[(u64, &'static str, InteractionKind)]) -> HubState {
    let mut v = items.to_vec();
    v.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut s = HubState::default();
    for (_, _, k) in &v {
        s = apply_interaction(&s, k).expect("valid script");
    }
    s
}

fn replay_federation(a: &[InteractionKind], b: &[InteractionKind], steps: &[Step]) -> Check {
    let (tx_ab, rx_b) = unbounded_channel();
    let (tx_ba, rx_a) = unbounded_channel();
    let mut sa = Side { hub: Hub::new("a"), inbox: rx_a, clock: 0, seen: Vec::new() };
    let mut sb = Side { hub: Hub::new("b"), inbox: rx_b, clock: 0, seen: Vec::new() };
    sa.hub.attach_peer(tx_ab).map_err(|e| e.to_string())?;
    sb.hub.attach_peer(tx_ba).map_err(|e| e.to_string())?;
    let (mut ia, mut ib) = (0, 0);
    fn local(s: &mut Side, name: &'static str, k: &InteractionKind) -> Check {
        s.clock += 1;
        s.seen.push((s.clock, name, k.clone()));
        s.hub.apply_local(k.clone()).map_err(|e| e.to_string())?;
        Ok(())
    }
    fn deliver(to: &mut Side) -> Check {
        let Ok(Outbound::PeerInteraction(i)) = to.inbox.try_recv() else {
            return Err("no interaction in flight".into());
        };
        let origin: &'static str = if i.origin.0 == "a" { "a" } else { "b" };
        to.clock = to.clock.max(i.origin_seq);
        to.seen.push((i.origin_seq, origin, i.kind.clone()));
        to.hub.receive_remote(i).map_err(|e| e.to_string())?;
        Ok(())
    }
    for s in steps {
        match s {
            Step::LocalA => {
                local(&mut sa, "a", &a[ia])?;
                ia += 1;
            }
            Step::LocalB => {
                local(&mut sb, "b", &b[ib])?;
                ib += 1;
            }
            Step::ToB => deliver(&mut sb)?,
            Step::ToA => deliver(&mut sa)?,
        }
        // Each hub always shows the canonical fold of what it has seen.
        for side in [&sa, &sb] {
            let want = canonical_fold(&side.seen);
            ensure(*side.hub.state() == want, || format!("{steps:?}: hub {} off its own fold", side.hub.id()))?;
        }
    }
    ensure(sa.hub.state() == sb.hub.state(), || format!("{steps:?}: hubs diverged"))?;
    ensure(sa.hub.state().state_version == (a.len() + b.len()) as u64, || "final version".into())
}

/// Every schedule of local applies and FIFO peer deliveries for the two
/// scripts. Returns the number of interleavings checked.
pub fn check_federation(a: &[InteractionKind], b: &[InteractionKind]) -> Check<u64> {
    fn rec(
        a: &[InteractionKind],
        b: &[InteractionKind],
        steps: &mut Vec<Step>,
        counts: [usize; 4],
        n: &mut u64,
    ) -> Check {
        let [la, lb, tb, ta] = counts;
        if la == a.len() && lb == b.len() && tb == la && ta == lb {
            *n += 1;
            return replay_federation(a, b, steps);
        }
        let options = [
            (la < a.len(), Step::LocalA, [la + 1, lb, tb, ta]),
            (lb < b.len(), Step::LocalB, [la, lb + 1, tb, ta]),
            (tb < la, Step::ToB, [la, lb, tb + 1, ta]),
            (ta < lb, Step::ToA, [la, lb, tb, ta + 1]),
        ];
        for (ok, s, next) in options {
            if ok {
                steps.push(s);
                rec(a, b, steps, next, n)?;
                steps.pop();
            }
        }
        Ok(())
    }
    let mut n = 0;
    rec(a, b, &mut Vec::new(), [0; 4], &mut n)?;
    Ok(n)
}

pub fn status(rule: &str, condition: Condition, ts: u64) -> StatusEvent {
    StatusEvent {
        rule_id: rule.into(),
        component: ComponentId::new("cap_stack").unwrap(),
        condition,
        severity: Severity::Fault,
        anchor: Point3::new(0.05, 0.05, 0.4),
        timestamp: ts,
        message: "cap missing at cap_stack".into(),
    }
}

/// Interactions that mostly do not commute with each other.
pub fn interaction_pool() -> Vec<InteractionKind> {
    vec![
        InteractionKind::Orbit { d_yaw: 0.3, d_pitch: 0.2 },
        InteractionKind::Pan { dx: 0.5, dy: -0.25 },
        InteractionKind::Zoom { factor: 1.5 },
        InteractionKind::SetBox { measuring_box: Box3::new(Point3::ORIGIN, Point3::new(0.5, 0.5, 0.5)).unwrap() },
        InteractionKind::StatusUpdate { event: status("cap_missing", Condition::Raised, 900) },
        InteractionKind::StatusUpdate { event: status("cap_missing", Condition::Cleared, 1600) },
        InteractionKind::Orbit { d_yaw: -1.0, d_pitch: 2.0 },
    ]
}

/// All splits of up to four pool interactions across the two hubs.
pub fn check_all_federations() -> Check<u64> {
    let pool = interaction_pool();
    let mut total = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=4usize {
        for na in 0..=n {
            // Several different picks per split.
            for _ in 0..6 {
                let mut pick = || pool[(rng.next_u32() as usize) % pool.len()].clone();
                let a: Vec<_> = (0..na).map(|_| pick()).collect();
                let b: Vec<_> = (0..n - na).map(|_| pick()).collect();
                total += check_federation(&a, &b)?;
            }
        }
    }
    Ok(total)
}

// ---- tiles

/// Interior-disjoint tiles covering the canvas exactly, by integer
/// arithmetic on the rectangles.
pub fn check_tiles(wall: WallConfig) -> Check {
    let (cw, ch) = (wall.columns as u64 * wall.tile_width_px as u64, wall.rows as u64 * wall.tile_height_px as u64);
    let mut rects = Vec::new();
    for row in 0..wall.rows {
        for column in 0..wall.columns {
            let v = wall.viewport(column, row).map_err(|e| e.to_string())?;
            ensure(v.width > 0 && v.height > 0, || format!("{wall:?}: empty tile"))?;
            ensure(v.x + v.width <= cw && v.y + v.height <= ch, || format!("{wall:?}: tile outside canvas"))?;
            rects.push((v.x, v.y, v.x + v.width, v.y + v.height));
        }
    }
    for (i, a) in rects.iter().enumerate() {
        for b in &rects[i + 1..] {
            let w = a.2.min(b.2).saturating_sub(a.0.max(b.0));
            let h = a.3.min(b.3).saturating_sub(a.1.max(b.1));
            ensure(w * h == 0, || format!("{wall:?}: {a:?} overlaps {b:?}"))?;
        }
    }
    let area: u64 = rects.iter().map(|r| (r.2 - r.0) * (r.3 - r.1)).sum();
    ensure(area == cw * ch, || format!("{wall:?}: tiles cover {area} of {}", cw * ch))?;
    ensure(wall.viewport(wall.columns, 0).is_err() && wall.viewport(0, wall.rows).is_err(), || {
        format!("{wall:?}: out-of-range tile accepted")
    })
}

/// Every tile of every wall up to 4x4, including odd pixel sizes.
pub fn check_all_tiles() -> Check<u64> {
    let mut n = 0;
    for columns in 1..=4 {
        for rows in 1..=4 {
            for (w, h) in [(320, 180), (1920, 1080), (1, 1), (7, 13)] {
                check_tiles(WallConfig { columns, rows, tile_width_px: w, tile_height_px: h })?;
                n += 1;
            }
        }
    }
    Ok(n)
}

/// Registers every tile of `wall` on a hub; a second claim on any tile fails.
pub fn check_tile_registration(wall: WallConfig) -> Check {
    let mut hub = Hub::new("h");
    let mut keep = Vec::new();
    for row in 0..wall.rows {
        for column in 0..wall.columns {
            let (tx, rx) = unbounded_channel();
            keep.push(rx);
            let tile = TileAssignment { client: format!("{column}.{row}"), column, row };
            hub.register_display("w", wall, tile, FrameCodec::Binary, tx).map_err(|e| e.to_string())?;
        }
    }
    let (tx, _rx) = unbounded_channel();
    let dup = TileAssignment { client: "late".into(), column: wall.columns - 1, row: wall.rows - 1 };
    ensure(hub.register_display("w", wall, dup, FrameCodec::Binary, tx).is_err(), || "duplicate tile accepted".into())?;
    ensure(hub.display_count() == (wall.columns * wall.rows) as usize, || "display count".into())
}
