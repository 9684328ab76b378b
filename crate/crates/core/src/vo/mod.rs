//! VO runtime: the framed JSON wire protocol, transports, the central node
//! (identity and membership) and the site node that dispatches the six
//! client services.

mod central;
mod client;
mod site;
mod tcp;
mod transport;
mod wire;

use std::fmt;
use std::str::FromStr;

use serde_json::Value;

pub use central::{AuthError, CentralNode, Session, SiteInfo, TOKEN_LIFETIME_MS};
pub use client::{AddReceipt, Client, ClientError};
pub use site::{SiteConfig, SiteNode};
pub use tcp::{TcpServer, TcpTransport};
pub use transport::{handle_frame, Service, Transport, TransportError};
pub use wire::{
    decode_frame, decode_payload, encode_frame, FrameDecoder, Kind, Message, WireError, MAX_FRAME_LEN,
};

macro_rules! error_codes {
    ($($variant:ident),+ $(,)?) => {
        /// Machine-readable `code` of an ERROR payload.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum ErrorCode { $($variant),+ }

        impl ErrorCode {
            pub const ALL: &'static [ErrorCode] = &[$(ErrorCode::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $(ErrorCode::$variant => stringify!($variant)),+ }
            }
        }
    };
}

error_codes!(
    Unauthenticated,
    InvalidToken,
    Expired,
    MalformedFrame,
    UnknownKind,
    InvalidRequest,
    WrongNode,
    UnknownUser,
    BadSecret,
    DuplicateSite,
    NotAMember,
    ScopeViolation,
    SyntaxError,
    UnknownAttribute,
    DuplicateAttribute,
    DomainError,
    RangeInverted,
    EmptyQuery,
    InvalidDicom,
    AlreadyExists,
    NotFound,
    ChecksumMismatch,
    DestinationExists,
    Overflow,
    CatalogRejected,
    VersionConflict,
    AlgorithmNotFound,
    InputNotFound,
    ExecutionFailed,
    CentralUnreachable,
    SiteUnreachable,
    Timeout,
    Internal,
);

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCode {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Self::ALL.iter().copied().find(|c| c.as_str() == s).ok_or(())
    }
}

/// A request that could not be served; becomes an ERROR frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: ErrorCode,
    pub message: String,
}

impl Failure {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::InvalidRequest, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl From<crate::query::QueryError> for Failure {
    fn from(e: crate::query::QueryError) -> Self {
        use crate::query::QueryError as Q;
        let code = match &e {
            Q::SyntaxError { .. } => ErrorCode::SyntaxError,
            Q::UnknownAttribute(_) => ErrorCode::UnknownAttribute,
            Q::DuplicateAttribute(_) => ErrorCode::DuplicateAttribute,
            Q::DomainError { .. } => ErrorCode::DomainError,
            Q::RangeInverted { .. } => ErrorCode::RangeInverted,
            Q::Empty => ErrorCode::EmptyQuery,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<crate::storage::StorageError> for Failure {
    fn from(e: crate::storage::StorageError) -> Self {
        use crate::storage::StorageError as S;
        let code = match &e {
            S::AlreadyExists(_) => ErrorCode::AlreadyExists,
            S::NotFound(_) | S::SourceMissing(_) => ErrorCode::NotFound,
            S::ChecksumMismatch(_) => ErrorCode::ChecksumMismatch,
            S::DestinationExists(_) => ErrorCode::DestinationExists,
            S::Overflow(_) => ErrorCode::Overflow,
            S::WrongSite { .. } => ErrorCode::InvalidRequest,
            S::IoFailure(_) => ErrorCode::Internal,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<crate::catalog::CatalogError> for Failure {
    fn from(e: crate::catalog::CatalogError) -> Self {
        use crate::catalog::CatalogError as C;
        let code = match &e {
            C::DuplicateSopUid(_) | C::DuplicateLfn(_) => ErrorCode::AlreadyExists,
            C::SexMismatch(_) | C::DanglingSource(_) | C::InvalidField(_) => ErrorCode::CatalogRejected,
            C::VersionConflict { .. } => ErrorCode::VersionConflict,
            C::NotFound(_) => ErrorCode::NotFound,
            C::CorruptLog { .. } | C::Io(_) => ErrorCode::Internal,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<crate::compute::ComputeError> for Failure {
    fn from(e: crate::compute::ComputeError) -> Self {
        use crate::compute::ComputeError as X;
        match e {
            X::Storage(s) => s.into(),
            X::Catalog(c) => c.into(),
            other => {
                let code = match &other {
                    X::AlgorithmNotFound { .. } => ErrorCode::AlgorithmNotFound,
                    X::InputNotFound(_) => ErrorCode::InputNotFound,
                    X::ExecutionFailed(_) | X::NoPixelData => ErrorCode::ExecutionFailed,
                    X::VersionConflict { .. } => ErrorCode::VersionConflict,
                    _ => ErrorCode::InvalidRequest,
                };
                Failure::new(code, other.to_string())
            }
        }
    }
}

impl From<AuthError> for Failure {
    fn from(e: AuthError) -> Self {
        Failure::new(e.code(), e.to_string())
    }
}

pub(crate) fn str_field<'a>(payload: &'a Value, key: &str) -> Result<&'a str, Failure> {
    payload
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| Failure::invalid(format!("payload field {key:?} must be a string")))
}

pub(crate) fn u64_field(payload: &Value, key: &str) -> Result<u64, Failure> {
    payload
        .get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| Failure::invalid(format!("payload field {key:?} must be a non-negative integer")))
}

pub(crate) fn b64_field(payload: &Value, key: &str) -> Result<Vec<u8>, Failure> {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD
        .decode(str_field(payload, key)?)
        .map_err(|e| Failure::invalid(format!("payload field {key:?}: {e}")))
}

pub(crate) fn b64(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// JSON form of a job record, shared by the site node and the client.
pub fn job_to_json(job: &crate::compute::JobRecord) -> Value {
    serde_json::json!({
        "job_id": job.job_id,
        "name": job.name,
        "version": job.version,
        "input_lfn": job.input_lfn.to_string(),
        "output_lfn": job.output_lfn.as_ref().map(ToString::to_string),
        "status": job.status.as_str(),
        "site": job.site,
        "elapsed_ms": job.elapsed_ms,
    })
}

pub fn job_from_json(v: &Value) -> Result<crate::compute::JobRecord, Failure> {
    let lfn = |s: &str| {
        s.parse()
            .map_err(|e: crate::storage::InvalidLfn| Failure::invalid(e.to_string()))
    };
    Ok(crate::compute::JobRecord {
        job_id: str_field(v, "job_id")?.into(),
        name: str_field(v, "name")?.into(),
        version: str_field(v, "version")?.into(),
        input_lfn: lfn(str_field(v, "input_lfn")?)?,
        output_lfn: match v.get("output_lfn") {
            Some(Value::String(s)) => Some(lfn(s)?),
            _ => None,
        },
        status: str_field(v, "status")?.parse().map_err(Failure::invalid)?,
        site: str_field(v, "site")?.into(),
        elapsed_ms: u64_field(v, "elapsed_ms")?,
    })
}
