//! In-process transport with a message trace and fault injection.
//!
//! Every call is encoded to a frame, delivered to the target node's
//! `handle_frame` on the caller's thread and decoded again, so the service
//! code runs exactly as it would behind a socket.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use mgvo::vo::{decode_frame, encode_frame, handle_frame, Kind, Message, Service, Transport, TransportError};
use parking_lot::{Mutex, RwLock};

use crate::HarnessError;

/// Address scheme understood by [`SimNetwork`].
pub fn sim_addr(node: &str) -> String {
    format!("sim:{node}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// The node refuses connections.
    Halt,
    /// Responses take this many simulated milliseconds. A caller whose
    /// timeout is shorter gets `Timeout`, although the request was handled.
    Delay(u64),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Halt => f.write_str("HALT"),
            Fault::Delay(ms) => write!(f, "DELAY {ms}"),
        }
    }
}

/// One delivered (or attempted) frame. Rendered as `seq|from|to|kind|bytes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub seq: u64,
    pub from: String,
    pub to: String,
    pub kind: Kind,
    pub bytes: usize,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}|{}",
            self.seq, self.from, self.to, self.kind, self.bytes
        )
    }
}

#[derive(Default)]
struct Inner {
    nodes: RwLock<HashMap<String, Arc<dyn Service>>>,
    faults: Mutex<HashMap<String, Fault>>,
    trace: Mutex<Vec<TraceEntry>>,
}

#[derive(Clone, Default)]
pub struct SimNetwork {
    inner: Arc<Inner>,
}

impl SimNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attach(&self, node: &str, service: Arc<dyn Service>) {
        self.inner.nodes.write().insert(node.to_owned(), service);
    }

    /// A transport whose calls are traced as coming from `node`.
    pub fn endpoint(&self, node: &str) -> Arc<dyn Transport> {
        Arc::new(Endpoint {
            net: self.clone(),
            from: node.to_owned(),
        })
    }

    pub fn inject_fault(&self, node: &str, fault: Fault) -> Result<(), HarnessError> {
        if !self.inner.nodes.read().contains_key(node) {
            return Err(HarnessError::UnknownSite(node.to_owned()));
        }
        self.inner.faults.lock().insert(node.to_owned(), fault);
        Ok(())
    }

    pub fn clear_fault(&self, node: &str) {
        self.inner.faults.lock().remove(node);
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.inner.trace.lock().clone()
    }

    pub fn clear_trace(&self) {
        self.inner.trace.lock().clear();
    }

    /// The trace, one line per entry.
    pub fn trace_dump(&self) -> String {
        self.inner.trace.lock().iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn count(&self, kind: Kind) -> usize {
        self.inner.trace.lock().iter().filter(|e| e.kind == kind).count()
    }

    fn record(&self, from: &str, to: &str, kind: Kind, bytes: usize) {
        let mut trace = self.inner.trace.lock();
        let seq = trace.len() as u64;
        trace.push(TraceEntry {
            seq,
            from: from.to_owned(),
            to: to.to_owned(),
            kind,
            bytes,
        });
    }

    fn deliver(
        &self,
        from: &str,
        addr: &str,
        msg: &Message,
        timeout_ms: u64,
    ) -> Result<Message, TransportError> {
        let to = addr
            .strip_prefix("sim:")
            .ok_or_else(|| TransportError::Unreachable(format!("{addr}: not a sim address")))?;
        let frame = encode_frame(msg).map_err(|e| TransportError::Protocol(e.to_string()))?;
        self.record(from, to, msg.kind, frame.len());
        let fault = self.inner.faults.lock().get(to).copied();
        if fault == Some(Fault::Halt) {
            return Err(TransportError::Unreachable(format!("{addr}: connection refused")));
        }
        let service = self
            .inner
            .nodes
            .read()
            .get(to)
            .cloned()
            .ok_or_else(|| TransportError::Unreachable(format!("{addr}: no such node")))?;
        let reply = handle_frame(service.as_ref(), &frame);
        let decoded = decode_frame(&reply).map_err(|e| TransportError::Protocol(e.to_string()))?;
        if let Some(Fault::Delay(ms)) = fault {
            if ms > timeout_ms {
                return Err(TransportError::Timeout);
            }
        }
        self.record(to, from, decoded.kind, reply.len());
        Ok(decoded)
    }
}

struct Endpoint {
    net: SimNetwork,
    from: String,
}

impl Transport for Endpoint {
    fn call(&self, addr: &str, msg: &Message, timeout_ms: u64) -> Result<Message, TransportError> {
        self.net.deliver(&self.from, addr, msg, timeout_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    struct Echo;

    impl Service for Echo {
        fn handle(&self, msg: Message) -> Message {
            Message::ok(msg.id, msg.payload)
        }
    }

    fn ping(id: u64) -> Message {
        Message::request(Kind::ListSites, Some("t"), id, json!({ "n": id }))
    }

    #[test]
    fn delivers_and_traces_both_directions() {
        let net = SimNetwork::new();
        net.attach("x", Arc::new(Echo));
        let t = net.endpoint("client");
        let r = t.call("sim:x", &ping(3), 100).unwrap();
        assert_eq!((r.kind, r.id), (Kind::Ok, 3));
        let dump = net.trace_dump();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("0|client|x|LIST_SITES|"));
        assert!(lines[1].starts_with("1|x|client|OK|"));
        let bytes: usize = lines[0].rsplit('|').next().unwrap().parse().unwrap();
        assert_eq!(bytes, encode_frame(&ping(3)).unwrap().len());
    }

    #[test]
    fn faults() {
        let net = SimNetwork::new();
        net.attach("x", Arc::new(Echo));
        let t = net.endpoint("c");
        assert!(matches!(
            net.inject_fault("y", Fault::Halt),
            Err(HarnessError::UnknownSite(_))
        ));
        net.inject_fault("x", Fault::Halt).unwrap();
        assert!(matches!(
            t.call("sim:x", &ping(1), 100),
            Err(TransportError::Unreachable(_))
        ));
        net.inject_fault("x", Fault::Delay(100)).unwrap();
        assert!(t.call("sim:x", &ping(2), 100).is_ok());
        assert_eq!(t.call("sim:x", &ping(3), 99), Err(TransportError::Timeout));
        net.clear_fault("x");
        assert!(t.call("sim:x", &ping(4), 1).is_ok());
        assert!(matches!(
            t.call("sim:nobody", &ping(5), 1),
            Err(TransportError::Unreachable(_))
        ));
        assert!(matches!(
            t.call("127.0.0.1:1", &ping(6), 1),
            Err(TransportError::Unreachable(_))
        ));
    }
}
