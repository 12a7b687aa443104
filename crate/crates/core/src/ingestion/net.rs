//! The broker contract over TCP, using [`wire`](super::wire) envelopes.
//!
//! Requests (`publish`, `subscribe`, `ack`) carry a `req` number that the
//! server echoes in a `receipt` or `error`. Deliveries for a subscription
//! are pushed on the same connection as they become available.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use parking_lot::Mutex;
use tracing::{debug, warn};

use super::wire::{error_from_code, read_envelope, write_envelope, Envelope, WireError};
use super::{Broker, BrokerError, Delivery, Receipt, SensorReading, Subscription, Topic, TopicPattern};

const REPLY_TIMEOUT: Duration = Duration::from_secs(10);

type Writer = Arc<Mutex<BufWriter<TcpStream>>>;

/// A running TCP front end for a [`Broker`].
pub struct BrokerServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl BrokerServer {
    /// Serves `broker` on an already-bound listener.
    pub fn start(broker: Broker, listener: TcpListener) -> io::Result<BrokerServer> {
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = thread::Builder::new().name("broker-accept".into()).spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        debug!(%peer, "broker connection");
                        let broker = broker.clone();
                        let flag = flag.clone();
                        thread::spawn(move || {
                            if let Err(e) = serve_connection(broker, stream, flag) {
                                debug!(%peer, error = %e, "broker connection closed");
                            }
                        });
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(10));
                    }
                    Err(e) => warn!(error = %e, "accept failed"),
                }
            }
        })?;
        Ok(BrokerServer { addr, stop, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections. Open connections end when their peers
    /// disconnect or their subscriptions next poll.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BrokerServer {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

fn serve_connection(broker: Broker, stream: TcpStream, stop: Arc<AtomicBool>) -> Result<(), WireError> {
    stream.set_nodelay(true)?;
    let writer: Writer = Arc::new(Mutex::new(BufWriter::new(stream.try_clone()?)));
    let mut reader = BufReader::new(stream);
    let closed = Arc::new(AtomicBool::new(false));
    let result = (|| {
        while let Some(env) = read_envelope(&mut reader)? {
            let reply = match env {
                Envelope::Publish { req, topic, reading } => match broker.publish(&topic, reading) {
                    Ok(r) => Envelope::Receipt { req, topic: Some(r.topic.to_string()), offset: Some(r.offset) },
                    Err(e) => Envelope::error(req, &e),
                },
                Envelope::Ack { req, consumer, topic, offset } => match broker.ack(&consumer, &topic, offset) {
                    Ok(()) => Envelope::Receipt { req, topic: None, offset: None },
                    Err(e) => Envelope::error(req, &e),
                },
                Envelope::Subscribe { req, consumer, pattern, ack_deadline_ms } => {
                    let sub = TopicPattern::parse(&pattern).map(|pattern| Subscription {
                        pattern,
                        consumer,
                        ack_deadline_ms,
                    });
                    match sub.and_then(|s| broker.subscribe(s)) {
                        Ok(consumer) => {
                            let writer = writer.clone();
                            let closed = closed.clone();
                            let stop = stop.clone();
                            // Receipt goes out before the first delivery.
                            write_envelope(&mut *writer.lock(), &Envelope::Receipt { req, topic: None, offset: None })?;
                            thread::spawn(move || pump_deliveries(consumer, writer, closed, stop));
                            continue;
                        }
                        Err(e) => Envelope::error(req, &e),
                    }
                }
                other => {
                    warn!(kind = ?other.kind(), "unexpected envelope from client");
                    Envelope::Error { req: 0, code: "bad-request".into(), message: format!("unexpected {:?}", other.kind()) }
                }
            };
            write_envelope(&mut *writer.lock(), &reply)?;
        }
        Ok(())
    })();
    closed.store(true, Ordering::Relaxed);
    result
}

fn pump_deliveries(consumer: super::Consumer, writer: Writer, closed: Arc<AtomicBool>, stop: Arc<AtomicBool>) {
    while !closed.load(Ordering::Relaxed) && !stop.load(Ordering::Relaxed) {
        match consumer.next_timeout(Duration::from_millis(50)) {
            Ok(Some(d)) => {
                let env = Envelope::Deliver {
                    topic: d.topic.to_string(),
                    offset: d.offset,
                    attempt: d.attempt,
                    reading: (*d.reading).clone(),
                };
                if write_envelope(&mut *writer.lock(), &env).is_err() {
                    break;
                }
            }
            Ok(None) => {}
            Err(_) => break,
        }
    }
}

type Pending = Arc<Mutex<HashMap<u64, Sender<Envelope>>>>;

/// Blocking client for a [`BrokerServer`].
pub struct BrokerClient {
    writer: Mutex<BufWriter<TcpStream>>,
    pending: Pending,
    next_req: AtomicU64,
    deliveries: Arc<Mutex<Option<Sender<Delivery>>>>,
    alive: Arc<AtomicBool>,
}

impl BrokerClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<BrokerClient> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let pending: Pending = Arc::default();
        let deliveries: Arc<Mutex<Option<Sender<Delivery>>>> = Arc::default();
        let alive = Arc::new(AtomicBool::new(true));
        {
            let pending = pending.clone();
            let deliveries = deliveries.clone();
            let alive = alive.clone();
            thread::Builder::new().name("broker-client".into()).spawn(move || {
                while let Ok(Some(env)) = read_envelope(&mut reader) {
                    match env {
                        Envelope::Deliver { topic, offset, attempt, reading } => {
                            let Ok(topic) = Topic::new(topic) else { continue };
                            let d = Delivery { topic, offset, attempt, reading: Arc::new(reading) };
                            if let Some(tx) = deliveries.lock().as_ref() {
                                let _ = tx.send(d);
                            }
                        }
                        Envelope::Receipt { req, .. } | Envelope::Error { req, .. } => {
                            if let Some(tx) = pending.lock().remove(&req) {
                                let _ = tx.send(env);
                            }
                        }
                        _ => {}
                    }
                }
                alive.store(false, Ordering::Relaxed);
                pending.lock().clear();
                deliveries.lock().take();
            })?;
        }
        Ok(BrokerClient {
            writer: Mutex::new(BufWriter::new(stream)),
            pending,
            next_req: AtomicU64::new(1),
            deliveries,
            alive,
        })
    }

    pub fn is_connected(&self) -> bool {
        self.alive.load(Ordering::Relaxed)
    }

    fn request(&self, build: impl FnOnce(u64) -> Envelope) -> Result<Envelope, BrokerError> {
        if !self.is_connected() {
            return Err(BrokerError::Unavailable);
        }
        let req = self.next_req.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        self.pending.lock().insert(req, tx);
        let sent = write_envelope(&mut *self.writer.lock(), &build(req));
        if sent.is_err() {
            self.pending.lock().remove(&req);
            return Err(BrokerError::Unavailable);
        }
        match rx.recv_timeout(REPLY_TIMEOUT) {
            Ok(Envelope::Error { code, message, .. }) => Err(error_from_code(&code, &message)),
            Ok(env) => Ok(env),
            Err(_) => {
                self.pending.lock().remove(&req);
                Err(BrokerError::Unavailable)
            }
        }
    }

    pub fn publish(&self, topic: &str, reading: SensorReading) -> Result<Receipt, BrokerError> {
        let topic_owned = Topic::new(topic)?;
        let reply = self.request(|req| Envelope::Publish { req, topic: topic.to_string(), reading })?;
        match reply {
            Envelope::Receipt { offset: Some(offset), .. } => Ok(Receipt { topic: topic_owned, offset }),
            _ => Err(BrokerError::Unavailable),
        }
    }

    /// Subscribes this connection; deliveries arrive on the returned channel.
    /// A connection carries one subscription at a time.
    pub fn subscribe(&self, sub: &Subscription) -> Result<Receiver<Delivery>, BrokerError> {
        let (tx, rx) = mpsc::channel();
        *self.deliveries.lock() = Some(tx);
        self.request(|req| Envelope::Subscribe {
            req,
            consumer: sub.consumer.clone(),
            pattern: sub.pattern.to_string(),
            ack_deadline_ms: sub.ack_deadline_ms,
        })?;
        Ok(rx)
    }

    pub fn ack(&self, consumer: &str, topic: &str, offset: u64) -> Result<(), BrokerError> {
        self.request(|req| Envelope::Ack {
            req,
            consumer: consumer.to_string(),
            topic: topic.to_string(),
            offset,
        })
        .map(drop)
    }
}

impl Drop for BrokerClient {
    fn drop(&mut self) {
        let _ = self.writer.lock().get_ref().shutdown(std::net::Shutdown::Both);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::ReadingValue;
    use crate::spatial::{ProducerId, SensorId};

    fn reading(seq: u64) -> SensorReading {
        SensorReading {
            producer: ProducerId::new("rpi").unwrap(),
            seq,
            sensor: SensorId::new("pick_actuated").unwrap(),
            value: ReadingValue::Bool(seq % 2 == 0),
            timestamp: seq,
        }
    }

    fn server() -> (Broker, BrokerServer) {
        let broker = Broker::new();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let srv = BrokerServer::start(broker.clone(), listener).unwrap();
        (broker, srv)
    }

    #[test]
    fn publish_consume_ack_over_tcp() {
        let (broker, srv) = server();
        let producer = BrokerClient::connect(srv.local_addr()).unwrap();
        assert_eq!(producer.publish("festo.caps", reading(0)).unwrap().offset, 0);
        assert_eq!(producer.publish("festo.caps", reading(1)).unwrap().offset, 1);
        assert_eq!(producer.publish("a..b", reading(2)), Err(BrokerError::InvalidTopic("a..b".into())));

        let consumer = BrokerClient::connect(srv.local_addr()).unwrap();
        let sub = Subscription::new("festo.*", "analysis").unwrap();
        let rx = consumer.subscribe(&sub).unwrap();
        for expect in 0..2 {
            let d = rx.recv_timeout(Duration::from_secs(5)).unwrap();
            assert_eq!(d.offset, expect);
            assert_eq!(*d.reading, reading(expect));
            consumer.ack("analysis", d.topic.as_str(), d.offset).unwrap();
        }
        assert!(matches!(consumer.ack("analysis", "festo.caps", 9), Err(BrokerError::UnknownOffset { .. })));
        assert_eq!(broker.stats().acked, 2);
    }

    #[test]
    fn unacked_deliveries_come_back_over_tcp() {
        let (_broker, srv) = server();
        let c = BrokerClient::connect(srv.local_addr()).unwrap();
        c.publish("t", reading(0)).unwrap();
        let rx = c.subscribe(&Subscription::new("t", "c").unwrap().with_ack_deadline(30)).unwrap();
        let first = rx.recv_timeout(Duration::from_secs(5)).unwrap();
        let again = rx.recv_timeout(Duration::from_secs(5)).unwrap();
        assert_eq!((first.offset, first.attempt), (0, 1));
        assert_eq!((again.offset, again.attempt), (0, 2));
    }

    #[test]
    fn dead_server_is_unavailable() {
        let (broker, srv) = server();
        let c = BrokerClient::connect(srv.local_addr()).unwrap();
        broker.close();
        assert_eq!(c.publish("t", reading(0)), Err(BrokerError::Unavailable));
    }
}
