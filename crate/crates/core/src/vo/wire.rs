//! Frames: a 32-bit big-endian length followed by that many bytes of UTF-8
//! JSON `{"kind":K,"token":T,"id":N,"payload":{...}}`. Keys appear in that
//! order, `token` is `null` when absent, and payload keys are sorted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::ErrorCode;

pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

macro_rules! kinds {
    ($($variant:ident => $text:literal),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum Kind { $($variant),+ }

        impl Kind {
            pub const ALL: &'static [Kind] = &[$(Kind::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $(Kind::$variant => $text),+ }
            }
        }

        impl FromStr for Kind {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s { $($text => Ok(Kind::$variant),)+ _ => Err(()) }
            }
        }
    };
}

kinds!(
    Auth => "AUTH",
    ValidateToken => "VALIDATE_TOKEN",
    Revoke => "REVOKE",
    RegisterSite => "REGISTER_SITE",
    ListSites => "LIST_SITES",
    Add => "ADD",
    Retrieve => "RETRIEVE",
    Query => "QUERY",
    QueryRemoteReq => "QUERY_REMOTE_REQ",
    QueryRemoteResp => "QUERY_REMOTE_RESP",
    AddAlg => "ADD_ALG",
    ExecAlg => "EXEC_ALG",
    FilePutBegin => "FILE_PUT_BEGIN",
    FileChunk => "FILE_CHUNK",
    FilePutEnd => "FILE_PUT_END",
    Ok => "OK",
    Error => "ERROR",
);

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: Kind,
    pub token: Option<String>,
    pub id: u64,
    /// Always a JSON object.
    pub payload: Value,
}

impl Message {
    pub fn request(kind: Kind, token: Option<&str>, id: u64, payload: Value) -> Self {
        Self {
            kind,
            token: token.map(str::to_owned),
            id,
            payload,
        }
    }

    pub fn ok(id: u64, payload: Value) -> Self {
        Self::request(Kind::Ok, None, id, payload)
    }

    pub fn error(id: u64, code: ErrorCode, message: &str) -> Self {
        Self::request(
            Kind::Error,
            None,
            id,
            serde_json::json!({ "code": code.as_str(), "message": message }),
        )
    }

    /// `(code, message)` of an ERROR message.
    pub fn error_parts(&self) -> Option<(&str, &str)> {
        if self.kind != Kind::Error {
            return None;
        }
        Some((
            self.payload.get("code")?.as_str()?,
            self.payload.get("message").and_then(Value::as_str).unwrap_or(""),
        ))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed frame: {reason}")]
    Malformed { reason: String, id: Option<u64> },
    #[error("unknown message kind {kind:?}")]
    UnknownKind { kind: String, id: u64 },
    #[error("frame length {0} exceeds the {MAX_FRAME_LEN}-byte limit")]
    TooLarge(usize),
}

impl WireError {
    fn malformed(reason: impl Into<String>) -> Self {
        WireError::Malformed {
            reason: reason.into(),
            id: None,
        }
    }

    /// The ERROR reply for a frame that could not be decoded.
    pub fn to_reply(&self) -> Message {
        match self {
            WireError::Malformed { id, .. } => {
                Message::error(id.unwrap_or(0), ErrorCode::MalformedFrame, &self.to_string())
            }
            WireError::UnknownKind { id, .. } => {
                Message::error(*id, ErrorCode::UnknownKind, &self.to_string())
            }
            WireError::TooLarge(_) => Message::error(0, ErrorCode::MalformedFrame, &self.to_string()),
        }
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    kind: &'a str,
    token: Option<&'a str>,
    id: u64,
    payload: &'a Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeIn {
    kind: String,
    token: Option<String>,
    id: u64,
    payload: Value,
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, WireError> {
    let env = EnvelopeOut {
        kind: msg.kind.as_str(),
        token: msg.token.as_deref(),
        id: msg.id,
        payload: &msg.payload,
    };
    let mut out = vec![0u8; 4];
    serde_json::to_writer(&mut out, &env).expect("serializing JSON values cannot fail");
    let len = out.len() - 4;
    if len > MAX_FRAME_LEN {
        return Err(WireError::TooLarge(len));
    }
    out[..4].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(out)
}

/// Decodes the JSON body of one frame.
pub fn decode_payload(body: &[u8]) -> Result<Message, WireError> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| WireError::malformed(format!("invalid JSON: {e}")))?;
    let id = value.get("id").and_then(Value::as_u64);
    let env: EnvelopeIn = serde_json::from_value(value).map_err(|e| WireError::Malformed {
        reason: format!("bad envelope: {e}"),
        id,
    })?;
    if !env.payload.is_object() {
        return Err(WireError::Malformed {
            reason: "payload must be an object".into(),
            id: Some(env.id),
        });
    }
    let kind = env.kind.parse().map_err(|_| WireError::UnknownKind {
        kind: env.kind.clone(),
        id: env.id,
    })?;
    Ok(Message {
        kind,
        token: env.token,
        id: env.id,
        payload: env.payload,
    })
}

/// Decodes a buffer that must hold exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, WireError> {
    let Some(header) = bytes.get(..4) else {
        return Err(WireError::malformed("frame shorter than its length prefix"));
    };
    let len = u32::from_be_bytes(header.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::TooLarge(len));
    }
    if len != bytes.len() - 4 {
        return Err(WireError::malformed(format!(
            "length prefix {len} but {} payload bytes",
            bytes.len() - 4
        )));
    }
    decode_payload(&bytes[4..])
}

/// Reassembles frames from a byte stream split at arbitrary points.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    start: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start * 2 >= self.buf.len() {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet returned as frames.
    pub fn buffered(&self) -> usize {
        self.buf.len() - self.start
    }

    /// Next complete frame body. An oversized length prefix poisons the
    /// stream: there is no way to resynchronize after it.
    pub fn next_body(&mut self) -> Result<Option<Vec<u8>>, WireError> {
        let avail = &self.buf[self.start..];
        let Some(header) = avail.get(..4) else {
            return Ok(None);
        };
        let len = u32::from_be_bytes(header.try_into().expect("4 bytes")) as usize;
        if len > MAX_FRAME_LEN {
            return Err(WireError::TooLarge(len));
        }
        if avail.len() < 4 + len {
            return Ok(None);
        }
        let body = avail[4..4 + len].to_vec();
        self.start += 4 + len;
        Ok(Some(body))
    }

    pub fn next_message(&mut self) -> Result<Option<Message>, WireError> {
        match self.next_body()? {
            Some(body) => decode_payload(&body).map(Some),
            None => Ok(None),
        }
    }
}
