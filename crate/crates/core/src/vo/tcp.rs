//! TCP transport. One connection per peer address, many requests in flight
//! on it; the client renumbers request ids per connection and the server
//! handles each frame on its own thread, so responses may arrive out of
//! order and are matched by id.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;

use super::transport::{encode_response, respond, Service, Transport, TransportError};
use super::wire::{decode_payload, encode_frame, FrameDecoder, Message, WireError};

const READ_BUF: usize = 64 * 1024;

pub struct TcpServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl TcpServer {
    pub fn bind(addr: &str, service: Arc<dyn Service>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let accept = {
            let stop = Arc::clone(&stop);
            let conns = Arc::clone(&conns);
            std::thread::Builder::new()
                .name(format!("accept-{local_addr}"))
                .spawn(move || {
                    for stream in listener.incoming() {
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        let Ok(stream) = stream else { continue };
                        if let Ok(clone) = stream.try_clone() {
                            conns.lock().push(clone);
                        }
                        let service = Arc::clone(&service);
                        std::thread::spawn(move || serve_connection(stream, service));
                    }
                })?
        };
        Ok(Self {
            local_addr,
            stop,
            conns,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting and closes every open connection.
    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.local_addr, Duration::from_millis(500));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for c in self.conns.lock().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_connection(mut stream: TcpStream, service: Arc<dyn Service>) {
    let _ = stream.set_nodelay(true);
    let Ok(writer) = stream.try_clone() else { return };
    let writer = Arc::new(Mutex::new(writer));
    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; READ_BUF];
    loop {
        let n = match stream.read(&mut buf) {
            Ok(0) | Err(_) => return,
            Ok(n) => n,
        };
        decoder.push(&buf[..n]);
        loop {
            match decoder.next_body() {
                Ok(Some(body)) => {
                    let service = Arc::clone(&service);
                    let writer = Arc::clone(&writer);
                    std::thread::spawn(move || {
                        let response = match decode_payload(&body) {
                            Ok(msg) => respond(service.as_ref(), msg),
                            Err(e) => e.to_reply(),
                        };
                        let bytes = encode_response(&response);
                        let _ = writer.lock().write_all(&bytes);
                    });
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = writer.lock().write_all(&encode_response(&e.to_reply()));
                    let _ = stream.shutdown(Shutdown::Both);
                    return;
                }
            }
        }
    }
}

struct Conn {
    writer: Mutex<TcpStream>,
    pending: Mutex<HashMap<u64, mpsc::Sender<Message>>>,
    next_id: AtomicU64,
    alive: AtomicBool,
}

impl Conn {
    fn open(addr: &str, timeout: Duration) -> Result<Arc<Self>, TransportError> {
        let unreachable = |e: &dyn std::fmt::Display| TransportError::Unreachable(format!("{addr}: {e}"));
        let target = addr
            .to_socket_addrs()
            .map_err(|e| unreachable(&e))?
            .next()
            .ok_or_else(|| unreachable(&"no address"))?;
        let stream = TcpStream::connect_timeout(&target, timeout).map_err(|e| unreachable(&e))?;
        let _ = stream.set_nodelay(true);
        let reader = stream.try_clone().map_err(|e| unreachable(&e))?;
        let conn = Arc::new(Conn {
            writer: Mutex::new(stream),
            pending: Mutex::default(),
            next_id: AtomicU64::new(1),
            alive: AtomicBool::new(true),
        });
        let weak = Arc::downgrade(&conn);
        std::thread::spawn(move || read_responses(reader, weak));
        Ok(conn)
    }

    fn close(&self) {
        self.alive.store(false, Ordering::SeqCst);
        let _ = self.writer.lock().shutdown(Shutdown::Both);
        self.pending.lock().clear();
    }
}

fn read_responses(mut stream: TcpStream, conn: std::sync::Weak<Conn>) {
    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; READ_BUF];
    'outer: loop {
        let n = match stream.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        decoder.push(&buf[..n]);
        loop {
            match decoder.next_message() {
                Ok(Some(msg)) => {
                    let Some(conn) = conn.upgrade() else { break 'outer };
                    let tx = conn.pending.lock().remove(&msg.id);
                    if let Some(tx) = tx {
                        let _ = tx.send(msg);
                    }
                }
                Ok(None) => break,
                Err(_) => break 'outer,
            }
        }
    }
    if let Some(conn) = conn.upgrade() {
        conn.close();
    }
}

/// Client side of the TCP transport.
#[derive(Default)]
pub struct TcpTransport {
    conns: Mutex<HashMap<String, Arc<Conn>>>,
}

impl TcpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    fn connection(&self, addr: &str, timeout: Duration) -> Result<Arc<Conn>, TransportError> {
        let mut conns = self.conns.lock();
        if let Some(c) = conns.get(addr) {
            if c.alive.load(Ordering::SeqCst) {
                return Ok(Arc::clone(c));
            }
        }
        let c = Conn::open(addr, timeout)?;
        conns.insert(addr.to_owned(), Arc::clone(&c));
        Ok(c)
    }

    fn forget(&self, addr: &str, conn: &Arc<Conn>) {
        let mut conns = self.conns.lock();
        if conns.get(addr).is_some_and(|c| Arc::ptr_eq(c, conn)) {
            conns.remove(addr);
        }
        conn.close();
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for c in self.conns.lock().values() {
            c.close();
        }
    }
}

impl Transport for TcpTransport {
    fn call(&self, addr: &str, msg: &Message, timeout_ms: u64) -> Result<Message, TransportError> {
        let timeout = Duration::from_millis(timeout_ms.max(1));
        // A pooled connection may have been closed by the peer since its
        // last use; a failed write is retried once on a fresh connection.
        for attempt in 0..2 {
            let conn = self.connection(addr, timeout)?;
            let wire_id = conn.next_id.fetch_add(1, Ordering::SeqCst);
            let mut out = msg.clone();
            out.id = wire_id;
            let frame = encode_frame(&out).map_err(|e: WireError| TransportError::Protocol(e.to_string()))?;
            let (tx, rx) = mpsc::channel();
            conn.pending.lock().insert(wire_id, tx);
            if let Err(e) = conn.writer.lock().write_all(&frame) {
                self.forget(addr, &conn);
                if attempt == 0 {
                    continue;
                }
                return Err(TransportError::Unreachable(format!("{addr}: {e}")));
            }
            return match rx.recv_timeout(timeout) {
                Ok(mut resp) => {
                    resp.id = msg.id;
                    Ok(resp)
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    conn.pending.lock().remove(&wire_id);
                    Err(TransportError::Timeout)
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    self.forget(addr, &conn);
                    Err(TransportError::Unreachable(format!("{addr}: connection closed")))
                }
            };
        }
        unreachable!("second attempt always returns")
    }
}
