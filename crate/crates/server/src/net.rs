//! TCP and web-socket carriers around the realtime simulation loop.
//!
//! Both carriers move the same frames. Over TCP the byte stream is
//! self-delimiting; over a web socket every binary message holds exactly
//! one frame. Connection threads only move bytes; all dispatch happens on
//! the loop thread, in arrival order.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Sender, TrySendError};
use log::{debug, info, warn};
use tungstenite::Message as WsMessage;

use teleop_core::protocol::{decode_frame, DecodeError, FrameDecoder, FrameKind, WireFrame};

use crate::engine::{ClientId, Engine, Outgoing};
use crate::streams::frame_bytes;

/// Frames queued per connection before stream frames are dropped.
const OUTBOUND_QUEUE: usize = 256;
const POLL: Duration = Duration::from_millis(5);

type Bytes = Arc<Vec<u8>>;

enum Event {
    Open { conn: u64, out: Sender<Bytes>, peer: SocketAddr, carrier: &'static str },
    Frame { conn: u64, frame: WireFrame },
    Close { conn: u64 },
}

pub struct Listeners {
    tcp: TcpListener,
    ws: TcpListener,
}

impl Listeners {
    pub fn bind(host: &str, port: u16, ws_port: u16) -> io::Result<Listeners> {
        let tcp = TcpListener::bind((host, port))?;
        let ws = TcpListener::bind((host, ws_port))?;
        Ok(Listeners { tcp, ws })
    }

    pub fn tcp_addr(&self) -> io::Result<SocketAddr> {
        self.tcp.local_addr()
    }

    pub fn ws_addr(&self) -> io::Result<SocketAddr> {
        self.ws.local_addr()
    }
}

fn accept_loop(listener: TcpListener, ws: bool, events: Sender<Event>, next: Arc<AtomicU64>, stop: Arc<AtomicBool>) {
    listener.set_nonblocking(true).expect("listener supports non-blocking mode");
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let conn = next.fetch_add(1, Ordering::Relaxed);
                let events = events.clone();
                let stop = stop.clone();
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                thread::spawn(move || {
                    if ws {
                        serve_ws(conn, stream, peer, events, stop)
                    } else {
                        serve_tcp(conn, stream, peer, events, stop)
                    }
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn serve_tcp(conn: u64, stream: TcpStream, peer: SocketAddr, events: Sender<Event>, stop: Arc<AtomicBool>) {
    let (out_tx, out_rx) = bounded::<Bytes>(OUTBOUND_QUEUE);
    if events.send(Event::Open { conn, out: out_tx, peer, carrier: "tcp" }).is_err() {
        return;
    }
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(e) => {
            warn!("connection {conn}: {e}");
            let _ = events.send(Event::Close { conn });
            return;
        }
    };
    let write_thread = thread::spawn(move || {
        // Ends when the loop drops the sender or the peer goes away.
        for bytes in out_rx {
            if writer.write_all(&bytes).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    });

    let mut reader = stream;
    let _ = reader.set_read_timeout(Some(Duration::from_millis(100)));
    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    while !stop.load(Ordering::Relaxed) {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => continue,
            Err(_) => break,
        };
        match decoder.push(&buf[..n]) {
            Ok(frames) => {
                for frame in frames {
                    if events.send(Event::Frame { conn, frame }).is_err() {
                        return;
                    }
                }
            }
            Err(e) => {
                warn!("connection {conn}: framing error, closing: {e}");
                break;
            }
        }
    }
    let _ = reader.shutdown(Shutdown::Both);
    let _ = events.send(Event::Close { conn });
    let _ = write_thread.join();
}

fn serve_ws(conn: u64, stream: TcpStream, peer: SocketAddr, events: Sender<Event>, stop: Arc<AtomicBool>) {
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            debug!("web-socket handshake from {peer} failed: {e}");
            return;
        }
    };
    let (out_tx, out_rx) = bounded::<Bytes>(OUTBOUND_QUEUE);
    if events.send(Event::Open { conn, out: out_tx, peer, carrier: "ws" }).is_err() {
        return;
    }
    let _ = ws.get_mut().set_read_timeout(Some(POLL));
    'conn: while !stop.load(Ordering::Relaxed) {
        loop {
            match out_rx.try_recv() {
                Ok(bytes) => {
                    if ws.send(WsMessage::Binary(bytes.to_vec())).is_err() {
                        break 'conn;
                    }
                }
                Err(crossbeam_channel::TryRecvError::Empty) => break,
                Err(crossbeam_channel::TryRecvError::Disconnected) => break 'conn,
            }
        }
        match ws.read() {
            Ok(WsMessage::Binary(data)) => match decode_frame(&data) {
                Ok((frame, used)) if used == data.len() => {
                    if events.send(Event::Frame { conn, frame }).is_err() {
                        break;
                    }
                }
                Ok(_) => {
                    warn!("connection {conn}: message holds more than one frame, closing");
                    break;
                }
                Err(DecodeError::NeedMoreBytes(_)) => {
                    warn!("connection {conn}: truncated frame, closing");
                    break;
                }
                Err(DecodeError::Framing(e)) => {
                    warn!("connection {conn}: framing error, closing: {e}");
                    break;
                }
            },
            Ok(WsMessage::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    let _ = events.send(Event::Close { conn });
}

struct Peer {
    client: ClientId,
    out: Sender<Bytes>,
}

/// Runs the simulation loop at the engine's step rate until `stop` is set.
/// Returns the engine so callers can inspect the final state.
pub fn serve(listeners: Listeners, mut engine: Engine, stop: Arc<AtomicBool>) -> Engine {
    let (events_tx, events) = unbounded::<Event>();
    let next = Arc::new(AtomicU64::new(1));
    let acceptors: Vec<_> = [(listeners.tcp, false), (listeners.ws, true)]
        .into_iter()
        .map(|(l, ws)| {
            let (tx, next, stop) = (events_tx.clone(), next.clone(), stop.clone());
            thread::spawn(move || accept_loop(l, ws, tx, next, stop))
        })
        .collect();
    drop(events_tx);

    let mut peers: std::collections::BTreeMap<u64, Peer> = Default::default();
    let step = Duration::from_nanos(engine.step_nanos());
    let mut deadline = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        while let Ok(ev) = events.try_recv() {
            match ev {
                Event::Open { conn, out, peer, carrier } => {
                    let client = engine.connect();
                    info!("{carrier} connection {conn} from {peer} is client {client}");
                    peers.insert(conn, Peer { client, out });
                }
                Event::Frame { conn, frame } => {
                    if let Some(p) = peers.get(&conn) {
                        engine.handle_frame(p.client, frame);
                    }
                }
                Event::Close { conn } => {
                    if let Some(p) = peers.remove(&conn) {
                        engine.disconnect(p.client);
                    }
                }
            }
        }
        let outgoing = engine.tick();
        route(&mut engine, &mut peers, outgoing);

        deadline += step;
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
        } else if now - deadline > step * 10 {
            // Far behind; resync rather than burst.
            deadline = now;
        }
    }
    peers.clear();
    for a in acceptors {
        let _ = a.join();
    }
    engine
}

fn route(engine: &mut Engine, peers: &mut std::collections::BTreeMap<u64, Peer>, outgoing: Vec<Outgoing>) {
    let mut gone = Vec::new();
    for out in outgoing {
        let bytes: Bytes = Arc::new(frame_bytes(&out.frame));
        for (&conn, p) in peers.iter() {
            if !engine.delivers_to(&out, p.client) {
                continue;
            }
            match p.out.try_send(bytes.clone()) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) if out.frame.kind == FrameKind::Publish => {
                    debug!("client {}: queue full, dropped {}", p.client, out.frame.channel);
                }
                Err(TrySendError::Full(_)) => {
                    warn!("client {}: too slow for action traffic, disconnecting", p.client);
                    gone.push(conn);
                }
                Err(TrySendError::Disconnected(_)) => gone.push(conn),
            }
        }
    }
    for conn in gone {
        if let Some(p) = peers.remove(&conn) {
            engine.disconnect(p.client);
        }
    }
}
