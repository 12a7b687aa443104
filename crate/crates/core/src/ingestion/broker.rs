use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use super::{BrokerError, SensorReading, Subscription, Topic, TopicPattern};

/// Millisecond time source for ack deadlines.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Monotonic milliseconds since the clock was created.
#[derive(Debug)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

/// Hand-driven clock for deterministic tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now_ms(&self) -> u64 {
        (**self).now_ms()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub topic: Topic,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub topic: Topic,
    pub offset: u64,
    /// 1 on first delivery, incremented on each redelivery.
    pub attempt: u32,
    pub reading: Arc<SensorReading>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BrokerStats {
    pub published: u64,
    pub delivered: u64,
    pub redelivered: u64,
    pub acked: u64,
}

struct Message {
    /// Broker-wide publish order, used to interleave topics fairly.
    global: u64,
    reading: Arc<SensorReading>,
}

struct Inflight {
    deadline: u64,
    attempt: u32,
}

struct ConsumerState {
    pattern: TopicPattern,
    ack_deadline_ms: u64,
    /// Next never-delivered offset per topic.
    cursors: HashMap<Topic, u64>,
    inflight: BTreeMap<(Topic, u64), Inflight>,
}

#[derive(Default)]
struct State {
    closed: bool,
    next_global: u64,
    topics: BTreeMap<Topic, Vec<Message>>,
    consumers: HashMap<String, ConsumerState>,
    stats: BrokerStats,
}

struct Inner {
    state: Mutex<State>,
    published: Condvar,
    clock: Box<dyn Clock>,
}

/// In-process topic broker with at-least-once delivery.
///
/// Cloning yields another handle to the same broker. Messages are retained
/// for the life of the broker; consumers are identified by name, so a new
/// [`Consumer`] with an existing name resumes that consumer's cursors and
/// unacked deliveries.
#[derive(Clone)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl Default for Broker {
    fn default() -> Self {
        Broker::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        Broker::with_clock(SystemClock::default())
    }

    pub fn with_clock(clock: impl Clock + 'static) -> Self {
        Broker {
            inner: Arc::new(Inner {
                state: Mutex::new(State::default()),
                published: Condvar::new(),
                clock: Box::new(clock),
            }),
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.inner.clock.now_ms()
    }

    /// Appends `reading` to `topic` and returns its offset.
    pub fn publish(&self, topic: &str, reading: SensorReading) -> Result<Receipt, BrokerError> {
        let topic = Topic::new(topic)?;
        reading.validate()?;
        let mut st = self.inner.state.lock();
        if st.closed {
            return Err(BrokerError::Unavailable);
        }
        let global = st.next_global;
        st.next_global += 1;
        st.stats.published += 1;
        let log = st.topics.entry(topic.clone()).or_default();
        let offset = log.len() as u64;
        log.push(Message { global, reading: Arc::new(reading) });
        drop(st);
        self.inner.published.notify_all();
        Ok(Receipt { topic, offset })
    }

    /// Registers (or resumes) a consumer. Fresh consumers start at offset 0
    /// of every matching topic.
    pub fn subscribe(&self, sub: Subscription) -> Result<Consumer, BrokerError> {
        let mut st = self.inner.state.lock();
        if st.closed {
            return Err(BrokerError::Unavailable);
        }
        let entry = st.consumers.entry(sub.consumer.clone()).or_insert_with(|| ConsumerState {
            pattern: sub.pattern.clone(),
            ack_deadline_ms: sub.ack_deadline_ms,
            cursors: HashMap::new(),
            inflight: BTreeMap::new(),
        });
        entry.pattern = sub.pattern;
        entry.ack_deadline_ms = sub.ack_deadline_ms;
        Ok(Consumer { broker: self.clone(), name: sub.consumer })
    }

    /// Rejects further operations and wakes blocked consumers.
    pub fn close(&self) {
        self.inner.state.lock().closed = true;
        self.inner.published.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.state.lock().closed
    }

    pub fn stats(&self) -> BrokerStats {
        self.inner.state.lock().stats
    }

    /// Number of messages retained on `topic`.
    pub fn topic_len(&self, topic: &str) -> usize {
        let st = self.inner.state.lock();
        st.topics.iter().find(|(t, _)| t.as_str() == topic).map_or(0, |(_, log)| log.len())
    }

    /// Acknowledges on behalf of the named consumer.
    pub fn ack(&self, consumer: &str, topic: &str, offset: u64) -> Result<(), BrokerError> {
        let mut st = self.inner.state.lock();
        if st.closed {
            return Err(BrokerError::Unavailable);
        }
        let State { consumers, stats, .. } = &mut *st;
        let unknown = || BrokerError::UnknownOffset { topic: topic.to_string(), offset };
        let c = consumers.get_mut(consumer).ok_or_else(unknown)?;
        let topic = Topic::new(topic).map_err(|_| unknown())?;
        let cursor = c.cursors.get(&topic).copied().unwrap_or(0);
        if offset >= cursor {
            return Err(unknown());
        }
        if c.inflight.remove(&(topic, offset)).is_some() {
            stats.acked += 1;
        }
        Ok(())
    }

    fn poll_locked(st: &mut State, name: &str, now: u64) -> Result<Option<Delivery>, BrokerError> {
        if st.closed {
            return Err(BrokerError::Unavailable);
        }
        let State { topics, consumers, stats, .. } = st;
        let c = consumers.get_mut(name).ok_or(BrokerError::Unavailable)?;

        let expired = c
            .inflight
            .iter()
            .filter(|(_, f)| f.deadline <= now)
            .min_by_key(|(key, f)| (f.deadline, topics[&key.0][key.1 as usize].global))
            .map(|(key, _)| key.clone());
        if let Some(key) = expired {
            let f = c.inflight.get_mut(&key).expect("key taken from map");
            f.deadline = now + c.ack_deadline_ms;
            f.attempt += 1;
            stats.delivered += 1;
            stats.redelivered += 1;
            let reading = topics[&key.0][key.1 as usize].reading.clone();
            return Ok(Some(Delivery { topic: key.0, offset: key.1, attempt: f.attempt, reading }));
        }

        let next = topics
            .iter()
            .filter(|(t, _)| c.pattern.matches(t))
            .filter_map(|(t, log)| {
                let cursor = c.cursors.get(t).copied().unwrap_or(0);
                log.get(cursor as usize).map(|m| (m.global, t, cursor))
            })
            .min_by_key(|(global, _, _)| *global);
        let Some((_, topic, offset)) = next else {
            return Ok(None);
        };
        let topic = topic.clone();
        c.cursors.insert(topic.clone(), offset + 1);
        c.inflight
            .insert((topic.clone(), offset), Inflight { deadline: now + c.ack_deadline_ms, attempt: 1 });
        stats.delivered += 1;
        let reading = topics[&topic][offset as usize].reading.clone();
        Ok(Some(Delivery { topic, offset, attempt: 1, reading }))
    }

    fn earliest_deadline(st: &State, name: &str) -> Option<u64> {
        st.consumers.get(name)?.inflight.values().map(|f| f.deadline).min()
    }
}

/// A consumer's view of the broker.
///
/// Deliveries come in publish order for new messages; expired unacked
/// messages are delivered again before any new ones.
pub struct Consumer {
    broker: Broker,
    name: String,
}

impl Consumer {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Next delivery available right now, if any.
    pub fn try_next(&self) -> Result<Option<Delivery>, BrokerError> {
        let now = self.broker.now_ms();
        let mut st = self.broker.inner.state.lock();
        Broker::poll_locked(&mut st, &self.name, now)
    }

    /// Waits up to `timeout` for a delivery. Redelivery deadlines are
    /// honored while waiting.
    pub fn next_timeout(&self, timeout: Duration) -> Result<Option<Delivery>, BrokerError> {
        let give_up = Instant::now() + timeout;
        let inner = &self.broker.inner;
        let mut st = inner.state.lock();
        loop {
            let now = inner.clock.now_ms();
            if let Some(d) = Broker::poll_locked(&mut st, &self.name, now)? {
                return Ok(Some(d));
            }
            let mut wake = give_up;
            if let Some(deadline) = Broker::earliest_deadline(&st, &self.name) {
                let wait = Duration::from_millis(deadline.saturating_sub(now).max(1));
                wake = wake.min(Instant::now() + wait);
            }
            if Instant::now() >= give_up {
                return Ok(None);
            }
            inner.published.wait_until(&mut st, wake);
        }
    }

    /// Marks a delivered offset as processed. Acking twice is a no-op;
    /// acking an offset this consumer never received fails.
    pub fn ack(&self, topic: &str, offset: u64) -> Result<(), BrokerError> {
        self.broker.ack(&self.name, topic, offset)
    }

    /// Number of delivered but unacknowledged messages.
    pub fn unacked(&self) -> usize {
        let st = self.broker.inner.state.lock();
        st.consumers.get(&self.name).map_or(0, |c| c.inflight.len())
    }
}
