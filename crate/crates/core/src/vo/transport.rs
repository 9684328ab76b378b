use thiserror::Error;

use super::wire::{decode_frame, encode_frame, Message};
use super::ErrorCode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("timeout")]
    Timeout,
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Request/response delivery to a node address. Node code only talks to
/// peers through this trait, so the same services run over TCP and over
/// the in-process test network.
pub trait Transport: Send + Sync {
    fn call(&self, addr: &str, msg: &Message, timeout_ms: u64) -> Result<Message, TransportError>;
}

/// A node endpoint. Responses must echo the request id.
pub trait Service: Send + Sync {
    fn handle(&self, msg: Message) -> Message;
}

/// Serves one complete frame and returns the encoded response frame.
/// Undecodable input becomes an ERROR frame rather than a dropped request.
pub fn handle_frame(service: &dyn Service, frame: &[u8]) -> Vec<u8> {
    let response = match decode_frame(frame) {
        Ok(msg) => respond(service, msg),
        Err(e) => e.to_reply(),
    };
    encode_response(&response)
}

pub(crate) fn respond(service: &dyn Service, msg: Message) -> Message {
    let id = msg.id;
    let mut resp = service.handle(msg);
    resp.id = id;
    resp
}

pub(crate) fn encode_response(response: &Message) -> Vec<u8> {
    encode_frame(response).unwrap_or_else(|e| {
        encode_frame(&Message::error(response.id, ErrorCode::Internal, &e.to_string()))
            .expect("small error frames always fit")
    })
}
