//! Central node: users, sessions and VO membership.
//!
//! Secrets are stored as `fnv1a64(salt ++ secret)`. That is a stand-in for
//! a real credential store and offers no protection against offline
//! guessing.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};
use thiserror::Error;

use super::wire::{Kind, Message};
use super::{str_field, ErrorCode, Failure, Service};
use crate::clock::Clock;
use crate::hash::{fnv1a64, hex64};
use crate::storage::{valid_site_name, BUILTIN_SITE};

pub const TOKEN_LIFETIME_MS: u64 = 3_600_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("wrong secret")]
    BadSecret,
    #[error("token is not valid")]
    InvalidToken,
    #[error("token has expired")]
    Expired,
    #[error("site {0} is already registered")]
    DuplicateSite(String),
    #[error("invalid site: {0}")]
    InvalidSite(String),
}

impl AuthError {
    pub fn code(&self) -> ErrorCode {
        match self {
            AuthError::UnknownUser(_) => ErrorCode::UnknownUser,
            AuthError::BadSecret => ErrorCode::BadSecret,
            AuthError::InvalidToken => ErrorCode::InvalidToken,
            AuthError::Expired => ErrorCode::Expired,
            AuthError::DuplicateSite(_) => ErrorCode::DuplicateSite,
            AuthError::InvalidSite(_) => ErrorCode::InvalidRequest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteInfo {
    pub name: String,
    pub address: String,
}

impl SiteInfo {
    pub fn to_json(&self) -> Value {
        json!({ "name": self.name, "address": self.address })
    }

    pub fn list_from_json(payload: &Value) -> Result<Vec<SiteInfo>, Failure> {
        payload
            .get("sites")
            .and_then(Value::as_array)
            .ok_or_else(|| Failure::invalid("payload field \"sites\" must be an array"))?
            .iter()
            .map(|s| {
                Ok(SiteInfo {
                    name: str_field(s, "name")?.into(),
                    address: str_field(s, "address")?.into(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub user: String,
    pub token: String,
    /// Unix milliseconds.
    pub expires_at: u64,
}

struct UserRecord {
    salt: String,
    digest: String,
}

pub struct CentralNode {
    clock: Arc<dyn Clock>,
    lifetime_ms: u64,
    users: RwLock<HashMap<String, UserRecord>>,
    sessions: Mutex<HashMap<String, Session>>,
    sites: RwLock<BTreeMap<String, String>>,
    rng: Mutex<ChaCha20Rng>,
}

fn digest(salt: &str, secret: &str) -> String {
    hex64(fnv1a64(format!("{salt}{secret}").as_bytes()))
}

impl CentralNode {
    /// `seed` makes token generation reproducible; `None` draws from the
    /// operating system.
    pub fn new(clock: Arc<dyn Clock>, seed: Option<u64>) -> Self {
        Self {
            clock,
            lifetime_ms: TOKEN_LIFETIME_MS,
            users: RwLock::default(),
            sessions: Mutex::default(),
            sites: RwLock::default(),
            rng: Mutex::new(match seed {
                Some(s) => ChaCha20Rng::seed_from_u64(s),
                None => ChaCha20Rng::from_entropy(),
            }),
        }
    }

    /// Adds or replaces a user.
    pub fn add_user(&self, user: &str, secret: &str) {
        let salt = hex64(self.rng.lock().next_u64());
        let digest = digest(&salt, secret);
        self.users
            .write()
            .insert(user.to_owned(), UserRecord { salt, digest });
    }

    pub fn authenticate(&self, user: &str, secret: &str) -> Result<Session, AuthError> {
        {
            let users = self.users.read();
            let rec = users
                .get(user)
                .ok_or_else(|| AuthError::UnknownUser(user.to_owned()))?;
            if digest(&rec.salt, secret) != rec.digest {
                return Err(AuthError::BadSecret);
            }
        }
        let now = self.clock.now_ms();
        let mut sessions = self.sessions.lock();
        sessions.retain(|_, s| s.expires_at > now);
        let token = loop {
            let mut raw = [0u8; 16];
            self.rng.lock().fill_bytes(&mut raw);
            let t: String = raw.iter().map(|b| format!("{b:02x}")).collect();
            if !sessions.contains_key(&t) {
                break t;
            }
        };
        let session = Session {
            user: user.to_owned(),
            token: token.clone(),
            expires_at: now + self.lifetime_ms,
        };
        sessions.insert(token, session.clone());
        Ok(session)
    }

    pub fn validate_token(&self, token: &str) -> Result<Session, AuthError> {
        let sessions = self.sessions.lock();
        let s = sessions.get(token).ok_or(AuthError::InvalidToken)?;
        if self.clock.now_ms() >= s.expires_at {
            return Err(AuthError::Expired);
        }
        Ok(s.clone())
    }

    pub fn revoke(&self, token: &str) -> bool {
        self.sessions.lock().remove(token).is_some()
    }

    pub fn register_site(&self, info: SiteInfo) -> Result<Vec<SiteInfo>, AuthError> {
        if !valid_site_name(&info.name) || info.name == BUILTIN_SITE {
            return Err(AuthError::InvalidSite(format!("name {:?}", info.name)));
        }
        if info.address.is_empty() {
            return Err(AuthError::InvalidSite("empty address".into()));
        }
        {
            let mut sites = self.sites.write();
            if sites.contains_key(&info.name) {
                return Err(AuthError::DuplicateSite(info.name));
            }
            sites.insert(info.name, info.address);
        }
        Ok(self.list_sites())
    }

    /// Members sorted by name.
    pub fn list_sites(&self) -> Vec<SiteInfo> {
        self.sites
            .read()
            .iter()
            .map(|(name, address)| SiteInfo {
                name: name.clone(),
                address: address.clone(),
            })
            .collect()
    }

    fn sites_payload(sites: &[SiteInfo]) -> Value {
        json!({ "sites": sites.iter().map(SiteInfo::to_json).collect::<Vec<_>>() })
    }

    fn dispatch(&self, msg: &Message) -> Result<Value, Failure> {
        let p = &msg.payload;
        if msg.kind == Kind::Auth {
            let s = self.authenticate(str_field(p, "user")?, str_field(p, "secret")?)?;
            return Ok(json!({ "user": s.user, "token": s.token, "expires_at": s.expires_at }));
        }
        let token = msg
            .token
            .as_deref()
            .ok_or_else(|| Failure::new(ErrorCode::Unauthenticated, "request carries no token"))?;
        let caller = self.validate_token(token)?;
        match msg.kind {
            Kind::ValidateToken => {
                let s = self.validate_token(str_field(p, "token")?)?;
                Ok(json!({ "user": s.user, "expires_at": s.expires_at }))
            }
            Kind::Revoke => {
                let target = str_field(p, "token")?;
                match self.validate_token(target) {
                    Ok(s) if s.user != caller.user => {
                        Err(Failure::invalid("only the owner may revoke a token"))
                    }
                    _ => Ok(json!({ "revoked": self.revoke(target) })),
                }
            }
            Kind::RegisterSite => {
                let sites = self.register_site(SiteInfo {
                    name: str_field(p, "name")?.into(),
                    address: str_field(p, "address")?.into(),
                })?;
                Ok(Self::sites_payload(&sites))
            }
            Kind::ListSites => Ok(Self::sites_payload(&self.list_sites())),
            other => Err(Failure::new(
                ErrorCode::WrongNode,
                format!("{other} is not served by the central node"),
            )),
        }
    }
}

impl Service for CentralNode {
    fn handle(&self, msg: Message) -> Message {
        match self.dispatch(&msg) {
            Ok(payload) => Message::ok(msg.id, payload),
            Err(f) => Message::error(msg.id, f.code, &f.message),
        }
    }
}
