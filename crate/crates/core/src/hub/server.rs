//! Websocket front end for a [`Hub`], the hub-to-hub link, and a client
//! used by producers, tests and benchmarks.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use bytes::Bytes;
use futures_util::stream::{SplitSink, SplitStream};
use futures_util::{SinkExt, StreamExt};
use parking_lot::Mutex;
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver};
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{accept_async, connect_async, MaybeTlsStream, WebSocketStream};
use tracing::{debug, info, warn};

use super::protocol::{
    decode_peer_frame, encode_peer_frame, status_envelope, Envelope, ErrorPayload, InteractionPayload, MessageType,
    Register, SnapshotPayload,
};
use super::{FrameCodec, Hub, HubError, HubId, HubState, InteractionKind, Outbound, RelayFrame, SessionId, TileAssignment};
use crate::analysis::StatusEvent;
use crate::pointcloud::{self, PointCloudFrame};

pub type SharedHub = Arc<Mutex<Hub>>;

const RELINK_DELAY: Duration = Duration::from_millis(500);

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn to_message(msg: Outbound) -> Message {
    match msg {
        Outbound::Snapshot { session, state, viewport } => {
            let version = state.state_version;
            Message::text(Envelope::new(MessageType::Snapshot, version, SnapshotPayload { session, state, viewport }).to_text())
        }
        Outbound::StateDelta { state } => {
            Message::text(Envelope::new(MessageType::StateDelta, state.state_version, &state).to_text())
        }
        Outbound::Status { version, event } => Message::text(status_envelope(version, &event).to_text()),
        Outbound::Frame { frame, codec: FrameCodec::Binary } => Message::Binary(frame.binary().clone()),
        Outbound::Frame { frame, codec: FrameCodec::Json } => {
            let values = std::str::from_utf8(frame.json()).expect("JSON codec emits UTF-8");
            Message::text(format!(r#"{{"type":"frame","version":{},"payload":{values}}}"#, frame.frame_id))
        }
        Outbound::PeerInteraction(i) => Message::text(Envelope::new(MessageType::Interaction, 0, &i).to_text()),
        Outbound::PeerFrame(frame) => Message::binary(encode_peer_frame(&frame.source, frame.binary())),
        Outbound::Error { code, message } => {
            Message::text(Envelope::new(MessageType::Error, 0, ErrorPayload { code, message }).to_text())
        }
    }
}

async fn pump<S>(mut sink: SplitSink<WebSocketStream<S>, Message>, mut rx: UnboundedReceiver<Outbound>)
where
    S: tokio::io::AsyncRead + tokio::io::AsyncWrite + Unpin,
{
    while let Some(msg) = rx.recv().await {
        if sink.send(to_message(msg)).await.is_err() {
            break;
        }
    }
    let _ = sink.close().await;
}

/// A hub listening for websocket clients.
pub struct HubServer {
    addr: SocketAddr,
    hub: SharedHub,
    stop: watch::Sender<bool>,
    accept: JoinHandle<()>,
}

impl HubServer {
    /// Binds `addr` and starts serving a fresh hub. Fails if the port is taken.
    pub async fn bind(hub_id: &str, addr: impl ToSocketAddrs) -> io::Result<HubServer> {
        let listener = TcpListener::bind(addr).await?;
        Ok(HubServer::serve(Hub::new(hub_id), listener))
    }

    pub fn serve(hub: Hub, listener: TcpListener) -> HubServer {
        let addr = listener.local_addr().expect("bound listener has an address");
        let hub = Arc::new(Mutex::new(hub));
        let (stop, stop_rx) = watch::channel(false);
        let accept = tokio::spawn(accept_loop(listener, hub.clone(), stop_rx));
        debug!(%addr, "hub listening");
        HubServer { addr, hub, stop, accept }
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn hub(&self) -> SharedHub {
        self.hub.clone()
    }

    /// Keeps a link to the peer hub at `peer` (`host:port`), reconnecting
    /// until shutdown. Interactions made while the peer is unreachable are
    /// replayed from the log on reconnect.
    pub fn link(&self, peer: String) -> JoinHandle<()> {
        tokio::spawn(link_loop(self.hub.clone(), peer, self.stop.subscribe()))
    }

    /// Stops accepting and closes every session's queue.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.accept.await;
    }
}

async fn accept_loop(listener: TcpListener, hub: SharedHub, mut stop: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let _ = stream.set_nodelay(true);
                    let hub = hub.clone();
                    let stop = stop.clone();
                    tokio::spawn(async move {
                        if let Err(e) = serve_socket(stream, hub, stop).await {
                            debug!(%peer, error = %e, "hub connection ended");
                        }
                    });
                }
                Err(e) => warn!(error = %e, "accept failed"),
            }
        }
    }
}

/// What a connection is, after its register message.
enum Attached {
    Session { id: SessionId, source: String, may_publish: bool },
    Peer { hub: HubId },
}

async fn serve_socket(stream: TcpStream, hub: SharedHub, mut stop: watch::Receiver<bool>) -> Result<(), ClientError> {
    let ws = accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    let first = loop {
        match source.next().await {
            Some(Ok(Message::Text(t))) => break t,
            Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
            _ => return Ok(()),
        }
    };
    let reg = Envelope::parse(first.as_str()).and_then(|env| {
        if env.kind != MessageType::Register {
            return Err(HubError::InvalidPayload("first message must be register".into()));
        }
        env.payload_as::<Register>()
    });
    let (tx, rx) = unbounded_channel();
    let attached = reg.and_then(|reg| {
        let mut h = hub.lock();
        Ok(match reg {
            Register::Display { wall, config, client, column, row, codec } => {
                let tile = TileAssignment { client, column, row };
                let (id, _, _) = h.register_display(&wall, config, tile, codec, tx)?;
                Attached::Session { id, source: format!("session-{id}"), may_publish: false }
            }
            Register::Ar => {
                let (id, _) = h.register_ar(tx);
                Attached::Session { id, source: format!("session-{id}"), may_publish: false }
            }
            Register::Producer { source } => {
                let (id, _) = h.register_producer(&source, tx);
                Attached::Session { id, source, may_publish: true }
            }
            Register::Peer { hub: peer } => {
                h.attach_peer(tx)?;
                info!(peer = %peer, "peer hub linked");
                Attached::Peer { hub: peer }
            }
        })
    });
    let attached = match attached {
        Ok(a) => a,
        Err(e) => {
            let _ = sink.send(Message::text(Envelope::error(&e).to_text())).await;
            let _ = sink.close().await;
            return Ok(());
        }
    };
    let writer = tokio::spawn(pump(sink, rx));
    loop {
        let msg = tokio::select! {
            _ = stop.changed() => break,
            msg = source.next() => msg,
        };
        let Some(Ok(msg)) = msg else { break };
        match &attached {
            Attached::Session { id, source, may_publish } => handle_client(&hub, *id, source, *may_publish, msg),
            Attached::Peer { hub: peer } => handle_peer(&hub, peer, msg),
        }
    }
    {
        let mut h = hub.lock();
        match attached {
            Attached::Session { id, .. } => h.remove_session(id),
            Attached::Peer { .. } => h.detach_peer(),
        }
    }
    writer.abort();
    Ok(())
}

fn handle_client(hub: &SharedHub, id: SessionId, source: &str, may_publish: bool, msg: Message) {
    let mut h = hub.lock();
    let result = match msg {
        Message::Binary(bytes) if may_publish => RelayFrame::from_binary(source, bytes).map(|f| {
            h.broadcast_encoded(f);
        }),
        Message::Text(text) => Envelope::parse(text.as_str()).and_then(|env| match env.kind {
            MessageType::Interaction => match env.payload_as::<InteractionPayload>()? {
                InteractionPayload::Local(kind) => h.apply_local(kind).map(drop),
                InteractionPayload::Tagged(i) => h.apply_local(i.kind).map(drop),
            },
            MessageType::Status if may_publish => h.push_status(env.payload_as::<StatusEvent>()?).map(drop),
            MessageType::Frame if may_publish => {
                let raw = serde_json::to_vec(&env.payload).expect("value serializes");
                let frame = pointcloud::decode_json_with(&raw, env.version, now_ms())
                    .map_err(|e| HubError::InvalidPayload(e.to_string()))?;
                h.broadcast_frame(source, &frame);
                Ok(())
            }
            other => Err(HubError::InvalidPayload(format!("unexpected {other:?} message"))),
        }),
        Message::Binary(_) => Err(HubError::InvalidPayload("only producers may publish frames".into())),
        _ => Ok(()),
    };
    if let Err(e) = result {
        h.reject(id, &e);
    }
}

fn handle_peer(hub: &SharedHub, peer: &HubId, msg: Message) {
    let result = match msg {
        Message::Text(text) => Envelope::parse(text.as_str()).and_then(|env| match env.kind {
            MessageType::Interaction => match env.payload_as::<InteractionPayload>()? {
                InteractionPayload::Tagged(i) => hub.lock().receive_remote(i).map(drop),
                InteractionPayload::Local(_) => Err(HubError::InvalidPayload("peer interaction without tags".into())),
            },
            _ => Ok(()),
        }),
        Message::Binary(bytes) => decode_peer_frame(&bytes).and_then(|(src, _)| {
            let skip = 2 + src.len();
            let frame = RelayFrame::from_binary(format!("{peer}/{src}"), bytes.slice(skip..))?;
            hub.lock().relay_from_peer(frame);
            Ok(())
        }),
        _ => Ok(()),
    };
    if let Err(e) = result {
        warn!(peer = %peer, error = %e, "bad message from peer");
    }
}

async fn link_loop(hub: SharedHub, peer: String, mut stop: watch::Receiver<bool>) {
    let my_id = hub.lock().id().clone();
    loop {
        if *stop.borrow() {
            return;
        }
        match connect_async(format!("ws://{peer}")).await {
            Ok((ws, _)) => {
                let (mut sink, mut source) = ws.split();
                let reg = Envelope::new(MessageType::Register, 0, Register::Peer { hub: my_id.clone() });
                if sink.send(Message::text(reg.to_text())).await.is_ok() {
                    let (tx, rx) = unbounded_channel();
                    let attached = hub.lock().attach_peer(tx);
                    match attached {
                        Ok(()) => {
                            info!(%peer, "linked to peer hub");
                            let writer = tokio::spawn(pump(sink, rx));
                            let peer_id = HubId(peer.clone());
                            loop {
                                let msg = tokio::select! {
                                    _ = stop.changed() => None,
                                    msg = source.next() => msg,
                                };
                                match msg {
                                    Some(Ok(m)) => handle_peer(&hub, &peer_id, m),
                                    _ => break,
                                }
                            }
                            hub.lock().detach_peer();
                            writer.abort();
                            warn!(%peer, "peer link lost");
                        }
                        Err(e) => warn!(%peer, error = %e, "cannot link"),
                    }
                }
            }
            Err(e) => debug!(%peer, error = %e, "peer unreachable, retrying"),
        }
        tokio::select! {
            _ = stop.changed() => return,
            _ = tokio::time::sleep(RELINK_DELAY) => {}
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("hub rejected the request: {} ({})", .0.message, .0.code)]
    Rejected(ErrorPayload),
    #[error("protocol: {0}")]
    Protocol(#[from] HubError),
    #[error("connection closed")]
    Closed,
}

/// A decoded message from the hub.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Snapshot(SnapshotPayload),
    StateDelta(HubState),
    Status { version: u64, event: StatusEvent },
    /// A raw `EPC1` payload.
    BinaryFrame(Bytes),
    JsonFrame { frame_id: u64, frame: PointCloudFrame },
    Error(ErrorPayload),
}

type ClientStream = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// Websocket client of a hub.
pub struct HubClient {
    sink: SplitSink<ClientStream, Message>,
    source: SplitStream<ClientStream>,
}

impl HubClient {
    /// Connects, registers, and waits for the initial snapshot.
    pub async fn connect(addr: &str, register: Register) -> Result<(HubClient, SnapshotPayload), ClientError> {
        let (ws, _) = connect_async(format!("ws://{addr}")).await?;
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            let _ = s.set_nodelay(true);
        }
        let (mut sink, source) = ws.split();
        sink.send(Message::text(Envelope::new(MessageType::Register, 0, register).to_text())).await?;
        let mut client = HubClient { sink, source };
        match client.next().await? {
            ClientMessage::Snapshot(s) => Ok((client, s)),
            ClientMessage::Error(e) => Err(ClientError::Rejected(e)),
            _ => Err(ClientError::Protocol(HubError::InvalidPayload("expected snapshot".into()))),
        }
    }

    pub async fn next(&mut self) -> Result<ClientMessage, ClientError> {
        loop {
            let msg = self.source.next().await.ok_or(ClientError::Closed)??;
            let env = match msg {
                Message::Binary(b) => return Ok(ClientMessage::BinaryFrame(b)),
                Message::Text(t) => Envelope::parse(t.as_str())?,
                Message::Close(_) => return Err(ClientError::Closed),
                _ => continue,
            };
            return Ok(match env.kind {
                MessageType::Snapshot => ClientMessage::Snapshot(env.payload_as()?),
                MessageType::StateDelta => ClientMessage::StateDelta(env.payload_as()?),
                MessageType::Status => ClientMessage::Status { version: env.version, event: env.payload_as()? },
                MessageType::Frame => {
                    let raw = serde_json::to_vec(&env.payload).expect("value serializes");
                    let frame = pointcloud::decode_json_with(&raw, env.version, now_ms())
                        .map_err(|e| HubError::InvalidPayload(e.to_string()))?;
                    ClientMessage::JsonFrame { frame_id: env.version, frame }
                }
                MessageType::Error => ClientMessage::Error(env.payload_as()?),
                MessageType::Register | MessageType::Interaction => continue,
            });
        }
    }

    pub async fn send_frame(&mut self, frame: &PointCloudFrame) -> Result<(), ClientError> {
        self.send_encoded_frame(Bytes::from(pointcloud::encode_binary(frame))).await
    }

    pub async fn send_encoded_frame(&mut self, epc1: Bytes) -> Result<(), ClientError> {
        Ok(self.sink.send(Message::Binary(epc1)).await?)
    }

    pub async fn send_status(&mut self, event: &StatusEvent) -> Result<(), ClientError> {
        Ok(self.sink.send(Message::text(status_envelope(0, event).to_text())).await?)
    }

    pub async fn send_interaction(&mut self, kind: &InteractionKind) -> Result<(), ClientError> {
        Ok(self.sink.send(Message::text(Envelope::new(MessageType::Interaction, 0, kind).to_text())).await?)
    }

    pub async fn close(mut self) {
        let _ = self.sink.close().await;
    }
}
