use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};
use thiserror::Error;

use super::central::{Session, SiteInfo};
use super::transport::{Transport, TransportError};
use super::wire::{Kind, Message};
use super::{b64, b64_field, job_from_json, str_field, u64_field, ErrorCode, Failure};
use crate::compute::{AlgorithmPayload, JobRecord};
use crate::hash::{checksum_hex, fnv1a64, hex64};
use crate::query::{parse_resultset, ResultSet};
use crate::storage::{chunks, Lfn};

/// Files up to this size travel in a single ADD frame; larger ones use the
/// chunked FILE_PUT sequence.
pub const DIRECT_ADD_LIMIT: usize = 8 * 1024 * 1024;

static TRANSFER_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{code}: {message}")]
    Remote { code: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Remote { code, .. } => code.parse().ok(),
            _ => None,
        }
    }
}

impl From<Failure> for ClientError {
    fn from(f: Failure) -> Self {
        ClientError::Protocol(f.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddReceipt {
    pub lfn: Lfn,
    pub sop_uid: String,
    pub pseudonym: String,
    pub size: u64,
    pub checksum: String,
}

impl AddReceipt {
    pub(crate) fn to_json(&self) -> Value {
        json!({
            "lfn": self.lfn.to_string(),
            "sop_uid": self.sop_uid,
            "pseudonym": self.pseudonym,
            "size": self.size,
            "checksum": self.checksum,
        })
    }

    fn from_json(v: &Value) -> Result<Self, Failure> {
        Ok(Self {
            lfn: parse_lfn(str_field(v, "lfn")?)?,
            sop_uid: str_field(v, "sop_uid")?.into(),
            pseudonym: str_field(v, "pseudonym")?.into(),
            size: u64_field(v, "size")?,
            checksum: str_field(v, "checksum")?.into(),
        })
    }
}

fn parse_lfn(s: &str) -> Result<Lfn, Failure> {
    s.parse()
        .map_err(|e: crate::storage::InvalidLfn| Failure::invalid(e.to_string()))
}

/// Speaks the client side of the protocol to any node.
pub struct Client {
    transport: Arc<dyn Transport>,
    token: Option<String>,
    timeout_ms: u64,
    next_id: AtomicU64,
}

impl Client {
    pub fn new(transport: Arc<dyn Transport>, timeout_ms: u64) -> Self {
        Self {
            transport,
            token: None,
            timeout_ms,
            next_id: AtomicU64::new(1),
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn set_timeout(&mut self, timeout_ms: u64) {
        self.timeout_ms = timeout_ms;
    }

    /// Sends one request; an ERROR response becomes `ClientError::Remote`.
    pub fn request(&self, addr: &str, kind: Kind, payload: Value) -> Result<Message, ClientError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let msg = Message::request(kind, self.token.as_deref(), id, payload);
        let resp = self.transport.call(addr, &msg, self.timeout_ms)?;
        if resp.id != id {
            return Err(ClientError::Protocol(format!(
                "response id {} for request {id}",
                resp.id
            )));
        }
        if let Some((code, message)) = resp.error_parts() {
            return Err(ClientError::Remote {
                code: code.into(),
                message: message.into(),
            });
        }
        Ok(resp)
    }

    fn ok_payload(&self, addr: &str, kind: Kind, payload: Value) -> Result<Value, ClientError> {
        let resp = self.request(addr, kind, payload)?;
        if resp.kind != Kind::Ok {
            return Err(ClientError::Protocol(format!(
                "unexpected {} response",
                resp.kind
            )));
        }
        Ok(resp.payload)
    }

    /// Logs in and keeps the token for later requests.
    pub fn login(&mut self, addr: &str, user: &str, secret: &str) -> Result<Session, ClientError> {
        let p = self.ok_payload(addr, Kind::Auth, json!({ "user": user, "secret": secret }))?;
        let session = Session {
            user: str_field(&p, "user")?.into(),
            token: str_field(&p, "token")?.into(),
            expires_at: u64_field(&p, "expires_at")?,
        };
        self.token = Some(session.token.clone());
        Ok(session)
    }

    /// Returns the owning user and expiry of `token`.
    pub fn validate(&self, central: &str, token: &str) -> Result<(String, u64), ClientError> {
        let p = self.ok_payload(central, Kind::ValidateToken, json!({ "token": token }))?;
        Ok((str_field(&p, "user")?.into(), u64_field(&p, "expires_at")?))
    }

    pub fn revoke(&self, central: &str, token: &str) -> Result<bool, ClientError> {
        let p = self.ok_payload(central, Kind::Revoke, json!({ "token": token }))?;
        Ok(p.get("revoked").and_then(Value::as_bool).unwrap_or(false))
    }

    pub fn register_site(
        &self,
        central: &str,
        name: &str,
        address: &str,
    ) -> Result<Vec<SiteInfo>, ClientError> {
        let p = self.ok_payload(
            central,
            Kind::RegisterSite,
            json!({ "name": name, "address": address }),
        )?;
        Ok(SiteInfo::list_from_json(&p)?)
    }

    pub fn list_sites(&self, addr: &str) -> Result<Vec<SiteInfo>, ClientError> {
        let p = self.ok_payload(addr, Kind::ListSites, json!({}))?;
        Ok(SiteInfo::list_from_json(&p)?)
    }

    /// Ingests a DICOM file at the site behind `addr`.
    pub fn add(&self, addr: &str, bytes: &[u8]) -> Result<AddReceipt, ClientError> {
        let p = if bytes.len() <= DIRECT_ADD_LIMIT {
            self.ok_payload(addr, Kind::Add, json!({ "data": b64(bytes) }))?
        } else {
            self.put_file(addr, json!({ "purpose": "add" }), bytes)?
        };
        Ok(AddReceipt::from_json(&p)?)
    }

    /// Streams `bytes` with FILE_PUT_BEGIN / FILE_CHUNK / FILE_PUT_END.
    /// `header` supplies the purpose fields of the BEGIN payload.
    pub fn put_file(&self, addr: &str, header: Value, bytes: &[u8]) -> Result<Value, ClientError> {
        let n = TRANSFER_COUNTER.fetch_add(1, Ordering::SeqCst);
        let transfer = hex64(fnv1a64(
            format!(
                "{}:{}:{n}",
                self.token.as_deref().unwrap_or(""),
                std::process::id()
            )
            .as_bytes(),
        ));
        let mut begin = header;
        let obj = begin
            .as_object_mut()
            .ok_or_else(|| ClientError::Protocol("transfer header must be an object".into()))?;
        obj.insert("transfer".into(), json!(transfer));
        obj.insert("size".into(), json!(bytes.len()));
        obj.insert("checksum".into(), json!(checksum_hex(bytes)));
        self.ok_payload(addr, Kind::FilePutBegin, begin)?;
        for (index, chunk) in chunks(bytes).enumerate() {
            self.ok_payload(
                addr,
                Kind::FileChunk,
                json!({ "transfer": transfer, "index": index, "data": b64(chunk) }),
            )?;
        }
        self.ok_payload(addr, Kind::FilePutEnd, json!({ "transfer": transfer }))
    }

    /// Fetches a file chunk by chunk and verifies the reassembled bytes.
    pub fn retrieve(&self, addr: &str, lfn: &Lfn) -> Result<Vec<u8>, ClientError> {
        let mut out = Vec::new();
        let mut chunk = 0u64;
        loop {
            let p = self.ok_payload(
                addr,
                Kind::Retrieve,
                json!({ "lfn": lfn.to_string(), "chunk": chunk }),
            )?;
            if u64_field(&p, "chunk")? != chunk {
                return Err(ClientError::Protocol("chunk index mismatch".into()));
            }
            out.extend_from_slice(&b64_field(&p, "data")?);
            chunk += 1;
            if chunk >= u64_field(&p, "chunks")? {
                let size = u64_field(&p, "size")?;
                let checksum = str_field(&p, "checksum")?;
                if out.len() as u64 != size || checksum_hex(&out) != checksum {
                    return Err(ClientError::Protocol(format!(
                        "{lfn}: checksum mismatch after transfer"
                    )));
                }
                return Ok(out);
            }
        }
    }

    /// Runs a query and returns the parsed result set and its XML text.
    pub fn query(&self, addr: &str, text: &str) -> Result<(ResultSet, String), ClientError> {
        let p = self.ok_payload(addr, Kind::Query, json!({ "query": text }))?;
        let xml = str_field(&p, "xml")?.to_owned();
        let rs = parse_resultset(&xml).map_err(|e| ClientError::Protocol(e.to_string()))?;
        Ok((rs, xml))
    }

    pub fn add_algorithm(
        &self,
        addr: &str,
        name: &str,
        version: &str,
        payload: &AlgorithmPayload,
    ) -> Result<Lfn, ClientError> {
        let p = match payload {
            AlgorithmPayload::Builtin(id) => self.ok_payload(
                addr,
                Kind::AddAlg,
                json!({ "name": name, "version": version, "builtin": id }),
            )?,
            AlgorithmPayload::Executable(bytes) if bytes.len() <= DIRECT_ADD_LIMIT => self.ok_payload(
                addr,
                Kind::AddAlg,
                json!({ "name": name, "version": version, "data": b64(bytes) }),
            )?,
            AlgorithmPayload::Executable(bytes) => self.put_file(
                addr,
                json!({ "purpose": "algorithm", "name": name, "version": version }),
                bytes,
            )?,
        };
        Ok(parse_lfn(str_field(&p, "lfn")?)?)
    }

    pub fn exec_algorithm(
        &self,
        addr: &str,
        name: &str,
        version: &str,
        input: &Lfn,
    ) -> Result<JobRecord, ClientError> {
        let p = self.ok_payload(
            addr,
            Kind::ExecAlg,
            json!({ "name": name, "version": version, "input_lfn": input.to_string() }),
        )?;
        Ok(job_from_json(&p)?)
    }
}
