//! Site node: the per-hospital endpoint serving the client services over
//! the local catalog, storage element and computing element.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde_json::{json, Value};

use super::central::SiteInfo;
use super::client::{AddReceipt, Client, ClientError};
use super::transport::{Transport, TransportError};
use super::wire::{Kind, Message};
use super::{b64, b64_field, job_to_json, str_field, u64_field, ErrorCode, Failure, Service};
use crate::catalog::{Catalog, ImageMeta};
use crate::clock::Clock;
use crate::compute::{builtin_checksum, AlgorithmEntry, AlgorithmPayload, AlgorithmSpec, ComputeElement};
use crate::dicom::{anonymize, parse_da, parse_dicom, tags, write_dicom};
use crate::federation::{
    analyze, execute_federated, handle_remote, FederationConfig, FederationError, RemoteFailure, RemoteQuery,
};
use crate::hash::{checksum_hex, fnv1a64};
use crate::query::{
    merge_results, parse_query, parse_site_result, serialize_query, serialize_resultset,
    serialize_site_result, FormalQuery, ImageKind, QueryId, Scope, SiteResult,
};
use crate::storage::{
    chunk_count, chunks, BlobMeta, Category, IncomingTransfer, Lfn, StorageElement, CHUNK_SIZE,
};

#[derive(Debug, Clone)]
pub struct SiteConfig {
    pub name: String,
    /// Address peers and clients use to reach this node.
    pub address: String,
    pub central: String,
    /// Salt for patient pseudonyms; defaults to the site name.
    pub salt: String,
    pub federation: FederationConfig,
    /// Timeout for calls to the central node and for file transfers.
    pub call_timeout_ms: u64,
    /// Timeout for a job forwarded to the data-owning site.
    pub exec_timeout_ms: u64,
    /// Upper bound on how long a positive token validation is reused.
    pub validation_ttl_ms: u64,
}

impl SiteConfig {
    pub fn new(name: &str, address: &str, central: &str) -> Self {
        Self {
            name: name.into(),
            address: address.into(),
            central: central.into(),
            salt: name.into(),
            federation: FederationConfig::default(),
            call_timeout_ms: 5000,
            exec_timeout_ms: 120_000,
            validation_ttl_ms: 60_000,
        }
    }
}

enum Purpose {
    Add,
    Replica,
    Algorithm { name: String, version: String },
}

enum Sink {
    Buffer(Vec<u8>),
    Replica(IncomingTransfer),
}

struct Upload {
    user: String,
    purpose: Purpose,
    size: u64,
    checksum: String,
    next_index: u64,
    sink: Sink,
}

pub struct SiteNode {
    config: SiteConfig,
    catalog: Arc<Catalog>,
    storage: Arc<StorageElement>,
    compute: ComputeElement,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    /// token -> (user, reuse-until)
    validated: Mutex<HashMap<String, (String, u64)>>,
    members: Mutex<Vec<SiteInfo>>,
    uploads: Mutex<HashMap<String, Upload>>,
    queries: AtomicU64,
}

impl SiteNode {
    pub fn new(
        config: SiteConfig,
        catalog: Arc<Catalog>,
        storage: Arc<StorageElement>,
        compute: ComputeElement,
        transport: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            config,
            catalog,
            storage,
            compute,
            transport,
            clock,
            validated: Mutex::default(),
            members: Mutex::default(),
            uploads: Mutex::default(),
            queries: AtomicU64::new(0),
        }
    }

    /// A node whose catalog, blobs and job records live only in memory.
    pub fn in_memory(config: SiteConfig, transport: Arc<dyn Transport>, clock: Arc<dyn Clock>) -> Self {
        let catalog = Arc::new(Catalog::in_memory(&config.name));
        let storage = Arc::new(StorageElement::in_memory(&config.name));
        let compute = ComputeElement::new(Arc::clone(&catalog), Arc::clone(&storage), Arc::clone(&clock));
        Self::new(config, catalog, storage, compute, transport, clock)
    }

    /// A node persisted under `root`: `store/`, `catalog.log`, `jobs.log`
    /// and a `tmp/` scratch directory for external executables.
    pub fn on_disk(
        config: SiteConfig,
        root: &Path,
        transport: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, Failure> {
        let internal = |e: &dyn std::fmt::Display| Failure::new(ErrorCode::Internal, e.to_string());
        std::fs::create_dir_all(root.join("tmp")).map_err(|e| internal(&e))?;
        let catalog = Arc::new(Catalog::open(&config.name, root.join("catalog.log"))?);
        let storage = Arc::new(StorageElement::on_disk(&config.name, root.join("store"))?);
        let compute = ComputeElement::new(Arc::clone(&catalog), Arc::clone(&storage), Arc::clone(&clock))
            .with_jobs_log(root.join("jobs.log"))
            .map_err(|e| internal(&e))?
            .with_scratch(root.join("tmp"));
        Ok(Self::new(config, catalog, storage, compute, transport, clock))
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn config(&self) -> &SiteConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn storage(&self) -> &Arc<StorageElement> {
        &self.storage
    }

    pub fn compute(&self) -> &ComputeElement {
        &self.compute
    }

    fn client(&self, token: &str, timeout_ms: u64) -> Client {
        Client::new(Arc::clone(&self.transport), timeout_ms).with_token(token)
    }

    /// Joins the VO using a service credential known to the central node.
    pub fn register(&self, user: &str, secret: &str) -> Result<Vec<SiteInfo>, ClientError> {
        let mut client = Client::new(Arc::clone(&self.transport), self.config.call_timeout_ms);
        client.login(&self.config.central, user, secret)?;
        let sites = client.register_site(&self.config.central, &self.config.name, &self.config.address)?;
        *self.members.lock() = sites.clone();
        Ok(sites)
    }

    /// Fetches the member list from the central node, falling back to the
    /// last known list if the central node cannot be reached.
    pub fn refresh_members(&self, token: &str) -> Vec<SiteInfo> {
        match self
            .client(token, self.config.call_timeout_ms)
            .list_sites(&self.config.central)
        {
            Ok(sites) => {
                *self.members.lock() = sites.clone();
                sites
            }
            Err(e) => {
                tracing::warn!(site = %self.config.name, "membership refresh failed: {e}");
                self.members.lock().clone()
            }
        }
    }

    fn address_of(&self, site: &str, token: &str) -> Result<String, Failure> {
        let known = self
            .members
            .lock()
            .iter()
            .find(|s| s.name == site)
            .map(|s| s.address.clone());
        known
            .or_else(|| {
                self.refresh_members(token)
                    .into_iter()
                    .find(|s| s.name == site)
                    .map(|s| s.address)
            })
            .ok_or_else(|| Failure::new(ErrorCode::NotFound, format!("site {site} is not a VO member")))
    }

    fn transport_failure(&self, addr: &str, e: TransportError) -> Failure {
        match e {
            TransportError::Timeout => Failure::new(ErrorCode::Timeout, format!("{addr} timed out")),
            TransportError::Unreachable(m) if addr == self.config.central => {
                Failure::new(ErrorCode::CentralUnreachable, m)
            }
            TransportError::Unreachable(m) => Failure::new(ErrorCode::SiteUnreachable, m),
            TransportError::Protocol(m) => Failure::new(ErrorCode::Internal, m),
        }
    }

    /// Relays `msg` unchanged; the peer's answer, ERROR or not, is returned.
    fn forward(&self, addr: &str, msg: &Message, timeout_ms: u64) -> Result<Message, Failure> {
        self.transport
            .call(addr, msg, timeout_ms)
            .map_err(|e| self.transport_failure(addr, e))
    }

    fn validate(&self, token: &str) -> Result<String, Failure> {
        let now = self.clock.now_ms();
        if let Some((user, until)) = self.validated.lock().get(token) {
            if *until > now {
                return Ok(user.clone());
            }
        }
        let central = &self.config.central;
        let req = Message::request(Kind::ValidateToken, Some(token), 0, json!({ "token": token }));
        let resp = self.forward(central, &req, self.config.call_timeout_ms)?;
        if let Some((code, message)) = resp.error_parts() {
            self.validated.lock().remove(token);
            let code = code.parse().unwrap_or(ErrorCode::InvalidToken);
            return Err(Failure::new(code, message));
        }
        let user = str_field(&resp.payload, "user")?.to_owned();
        let expires_at = u64_field(&resp.payload, "expires_at")?;
        let until = expires_at.min(now + self.config.validation_ttl_ms);
        let mut cache = self.validated.lock();
        if cache.len() > 4096 {
            cache.retain(|_, (_, u)| *u > now);
        }
        cache.insert(token.to_owned(), (user.clone(), until));
        Ok(user)
    }

    fn dispatch(&self, msg: &Message) -> Result<Message, Failure> {
        let ok = |payload: Value| Ok(Message::ok(msg.id, payload));
        if msg.kind == Kind::Auth {
            return self.forward(&self.config.central, msg, self.config.call_timeout_ms);
        }
        let token = msg
            .token
            .as_deref()
            .ok_or_else(|| Failure::new(ErrorCode::Unauthenticated, "request carries no token"))?;
        let user = self.validate(token)?;
        let p = &msg.payload;
        match msg.kind {
            Kind::ListSites => self.forward(&self.config.central, msg, self.config.call_timeout_ms),
            Kind::Add => ok(self.ingest(&b64_field(p, "data")?)?.to_json()),
            Kind::Retrieve => self.retrieve(msg, token),
            Kind::Query => ok(self.query(str_field(p, "query")?, token)?),
            Kind::QueryRemoteReq => Ok(Message::request(
                Kind::QueryRemoteResp,
                None,
                msg.id,
                self.remote_query(p)?,
            )),
            Kind::AddAlg => ok(self.add_algorithm(p)?),
            Kind::ExecAlg => self.exec_algorithm(msg, token),
            Kind::FilePutBegin => ok(self.upload_begin(p, &user)?),
            Kind::FileChunk => ok(self.upload_chunk(p, &user)?),
            Kind::FilePutEnd => ok(self.upload_end(p, &user)?),
            Kind::ValidateToken | Kind::Revoke | Kind::RegisterSite => Err(Failure::new(
                ErrorCode::WrongNode,
                format!("{} is served by the central node", msg.kind),
            )),
            Kind::Auth | Kind::Ok | Kind::Error | Kind::QueryRemoteResp => {
                Err(Failure::invalid(format!("{} is not a request kind", msg.kind)))
            }
        }
    }

    /// Anonymizes, stores and catalogs a DICOM file.
    pub fn ingest(&self, bytes: &[u8]) -> Result<AddReceipt, Failure> {
        let bad = |e: &dyn std::fmt::Display| Failure::new(ErrorCode::InvalidDicom, e.to_string());
        let file = parse_dicom(bytes).map_err(|e| bad(&e))?;
        let study_date = file
            .text(tags::STUDY_DATE)
            .and_then(parse_da)
            .ok_or_else(|| bad(&"StudyDate missing or malformed"))?;
        let (anon, _) = anonymize(&file, &self.config.salt, study_date).map_err(|e| bad(&e))?;
        let meta = ImageMeta::from_dicom(&anon).map_err(|e| bad(&e))?;
        let lfn = Lfn::new(
            &self.config.name,
            Category::Images,
            &format!("{}.dcm", meta.sop_uid),
        )
        .map_err(|e| bad(&e))?;
        self.catalog.check_image(&meta, &lfn, ImageKind::Original, None)?;
        let stored = write_dicom(&anon).map_err(|e| bad(&e))?;
        let checksum = self.storage.put(&lfn, &stored)?;
        let blob = BlobMeta {
            size: stored.len() as u64,
            checksum: checksum.clone(),
        };
        self.catalog
            .register_image(&meta, &lfn, ImageKind::Original, None, &blob)?;
        Ok(AddReceipt {
            lfn,
            sop_uid: meta.sop_uid,
            pseudonym: meta.pseudonym,
            size: blob.size,
            checksum,
        })
    }

    fn retrieve(&self, msg: &Message, token: &str) -> Result<Message, Failure> {
        let p = &msg.payload;
        let lfn = parse_lfn(str_field(p, "lfn")?)?;
        let chunk = u64_field(p, "chunk")?;
        if lfn.is_builtin() {
            return Err(Failure::new(
                ErrorCode::NotFound,
                format!("{lfn} is a built-in algorithm"),
            ));
        }
        if lfn.site() != self.config.name && !self.storage.contains(&lfn) {
            let owner = self.address_of(lfn.site(), token)?;
            return self.forward(&owner, msg, self.config.call_timeout_ms);
        }
        let bytes = self.storage.get(&lfn)?;
        let n = chunk_count(bytes.len()) as u64;
        let data = chunks(&bytes)
            .nth(usize::try_from(chunk).unwrap_or(usize::MAX))
            .ok_or_else(|| Failure::invalid(format!("chunk {chunk} out of range 0..{n}")))?;
        Ok(Message::ok(
            msg.id,
            json!({
                "lfn": lfn.to_string(),
                "size": bytes.len(),
                "checksum": checksum_hex(&bytes),
                "chunk": chunk,
                "chunks": n,
                "data": b64(data),
            }),
        ))
    }

    fn next_query_id(&self, text: &str) -> QueryId {
        let n = self.queries.fetch_add(1, Ordering::SeqCst);
        QueryId(fnv1a64(
            format!("{}:{n}:{}:{text}", self.config.name, self.clock.now_ms()).as_bytes(),
        ))
    }

    fn query(&self, text: &str, token: &str) -> Result<Value, Failure> {
        let q = parse_query(text)?;
        let query_id = self.next_query_id(text);
        let rs = match q.scope() {
            Scope::LocalOnly => {
                let r = handle_remote(&q, &self.catalog, self.clock.as_ref()).map_err(federation_failure)?;
                merge_results(vec![r], query_id).expect("single site")
            }
            Scope::Federated => {
                let members = self.refresh_members(token);
                let names: Vec<String> = members.iter().map(|s| s.name.clone()).collect();
                let plan = analyze(&q, &self.config.name, &names, query_id).map_err(federation_failure)?;
                let peers = Peers {
                    node: self,
                    token,
                    members,
                };
                execute_federated(
                    &plan,
                    &self.catalog,
                    &peers,
                    &self.config.federation,
                    self.clock.as_ref(),
                )
            }
        };
        Ok(json!({ "query_id": query_id.to_string(), "xml": serialize_resultset(&rs) }))
    }

    fn remote_query(&self, p: &Value) -> Result<Value, Failure> {
        let q = parse_query(str_field(p, "query")?)?;
        let result = handle_remote(&q, &self.catalog, self.clock.as_ref()).map_err(federation_failure)?;
        Ok(json!({
            "query_id": str_field(p, "query_id")?,
            "xml": serialize_site_result(&result),
        }))
    }

    fn add_algorithm(&self, p: &Value) -> Result<Value, Failure> {
        let name = str_field(p, "name")?;
        let version = str_field(p, "version")?;
        let payload = match p.get("builtin") {
            Some(_) => AlgorithmPayload::Builtin(str_field(p, "builtin")?.into()),
            None => AlgorithmPayload::Executable(b64_field(p, "data")?),
        };
        let lfn = self.compute.add_algorithm(name, version, &payload)?;
        Ok(json!({ "lfn": lfn.to_string() }))
    }

    /// Broker: jobs run where the input lives. A job for another site's
    /// file is forwarded there together with the algorithm, whose
    /// executable (if any) is replicated first.
    fn exec_algorithm(&self, msg: &Message, token: &str) -> Result<Message, Failure> {
        let p = &msg.payload;
        let name = str_field(p, "name")?;
        let version = str_field(p, "version")?;
        let input = parse_lfn(str_field(p, "input_lfn")?)?;

        if input.site() == self.config.name {
            if let Some(alg) = p.get("algorithm") {
                let (spec, checksum) = forwarded_spec(name, version, alg)?;
                self.compute.adopt_algorithm(&spec, &checksum)?;
            }
            let job = self.compute.execute(name, version, &input)?;
            return Ok(Message::ok(msg.id, job_to_json(&job)));
        }

        let owner = self.address_of(input.site(), token)?;
        let mut forwarded = msg.clone();
        if let Some(row) = self.catalog.algorithm(name, version) {
            let alg = match AlgorithmSpec::from_row(&row).entry {
                AlgorithmEntry::Builtin(id) => json!({ "builtin": id }),
                AlgorithmEntry::Executable(lfn) => {
                    if lfn.site() != input.site() {
                        self.push_replica(&owner, &lfn, token)?;
                    }
                    json!({ "executable": lfn.to_string(), "checksum": row.checksum })
                }
            };
            forwarded.payload["algorithm"] = alg;
        }
        self.forward(&owner, &forwarded, self.config.exec_timeout_ms)
    }

    fn push_replica(&self, addr: &str, lfn: &Lfn, token: &str) -> Result<(), Failure> {
        let bytes = self.storage.get(lfn)?;
        let client = self.client(token, self.config.call_timeout_ms);
        match client.put_file(
            addr,
            json!({ "purpose": "replica", "lfn": lfn.to_string() }),
            &bytes,
        ) {
            Ok(_) => Ok(()),
            Err(e) if e.code() == Some(ErrorCode::DestinationExists) => Ok(()),
            Err(ClientError::Remote { code, message }) => {
                Err(Failure::new(code.parse().unwrap_or(ErrorCode::Internal), message))
            }
            Err(ClientError::Transport(t)) => Err(self.transport_failure(addr, t)),
            Err(e) => Err(Failure::new(ErrorCode::Internal, e.to_string())),
        }
    }

    fn upload_begin(&self, p: &Value, user: &str) -> Result<Value, Failure> {
        let transfer = str_field(p, "transfer")?.to_owned();
        let size = u64_field(p, "size")?;
        let checksum = str_field(p, "checksum")?.to_owned();
        let (purpose, sink) = match str_field(p, "purpose")? {
            "add" => (Purpose::Add, Sink::Buffer(Vec::new())),
            "algorithm" => (
                Purpose::Algorithm {
                    name: str_field(p, "name")?.into(),
                    version: str_field(p, "version")?.into(),
                },
                Sink::Buffer(Vec::new()),
            ),
            "replica" => {
                let lfn = parse_lfn(str_field(p, "lfn")?)?;
                if lfn.site() == self.config.name {
                    return Err(Failure::invalid(format!("{lfn} is owned here, not a replica")));
                }
                let incoming = self.storage.begin_incoming(&lfn, size, &checksum)?;
                (Purpose::Replica, Sink::Replica(incoming))
            }
            other => return Err(Failure::invalid(format!("unknown transfer purpose {other:?}"))),
        };
        let mut uploads = self.uploads.lock();
        if uploads.contains_key(&transfer) {
            return Err(Failure::new(
                ErrorCode::AlreadyExists,
                format!("transfer {transfer} already open"),
            ));
        }
        uploads.insert(
            transfer.clone(),
            Upload {
                user: user.to_owned(),
                purpose,
                size,
                checksum,
                next_index: 0,
                sink,
            },
        );
        Ok(json!({ "transfer": transfer }))
    }

    fn take_upload(&self, transfer: &str, user: &str) -> Result<Upload, Failure> {
        let mut uploads = self.uploads.lock();
        match uploads.get(transfer) {
            Some(u) if u.user == user => Ok(uploads.remove(transfer).expect("present")),
            _ => Err(Failure::new(
                ErrorCode::NotFound,
                format!("no open transfer {transfer}"),
            )),
        }
    }

    fn upload_chunk(&self, p: &Value, user: &str) -> Result<Value, Failure> {
        let transfer = str_field(p, "transfer")?;
        let index = u64_field(p, "index")?;
        let data = b64_field(p, "data")?;
        // Taken out of the map while in use; any error abandons the transfer.
        let mut up = self.take_upload(transfer, user)?;
        if index != up.next_index {
            return Err(Failure::invalid(format!(
                "expected chunk {}, got {index}",
                up.next_index
            )));
        }
        match &mut up.sink {
            Sink::Buffer(buf) => {
                if data.len() > CHUNK_SIZE || (buf.len() + data.len()) as u64 > up.size {
                    return Err(Failure::new(ErrorCode::Overflow, "chunk exceeds announced size"));
                }
                buf.extend_from_slice(&data);
            }
            Sink::Replica(incoming) => incoming.push_chunk(&data)?,
        }
        up.next_index += 1;
        self.uploads.lock().insert(transfer.to_owned(), up);
        Ok(json!({ "transfer": transfer, "index": index }))
    }

    fn upload_end(&self, p: &Value, user: &str) -> Result<Value, Failure> {
        let transfer = str_field(p, "transfer")?;
        let up = self.take_upload(transfer, user)?;
        let bytes = match up.sink {
            Sink::Replica(incoming) => {
                let lfn = incoming.lfn().clone();
                let checksum = self.storage.commit_incoming(incoming)?;
                return Ok(json!({ "lfn": lfn.to_string(), "checksum": checksum }));
            }
            Sink::Buffer(bytes) => bytes,
        };
        if up.next_index == 0 || bytes.len() as u64 != up.size || checksum_hex(&bytes) != up.checksum {
            return Err(Failure::new(
                ErrorCode::ChecksumMismatch,
                format!("transfer {transfer}"),
            ));
        }
        match up.purpose {
            Purpose::Add => Ok(self.ingest(&bytes)?.to_json()),
            Purpose::Algorithm { name, version } => {
                let lfn =
                    self.compute
                        .add_algorithm(&name, &version, &AlgorithmPayload::Executable(bytes))?;
                Ok(json!({ "lfn": lfn.to_string() }))
            }
            Purpose::Replica => unreachable!("replicas use the incoming sink"),
        }
    }
}

impl Service for SiteNode {
    fn handle(&self, msg: Message) -> Message {
        match self.dispatch(&msg) {
            Ok(resp) => resp,
            Err(f) => Message::error(msg.id, f.code, &f.message),
        }
    }
}

fn parse_lfn(s: &str) -> Result<Lfn, Failure> {
    s.parse()
        .map_err(|e: crate::storage::InvalidLfn| Failure::invalid(e.to_string()))
}

fn federation_failure(e: FederationError) -> Failure {
    let code = match e {
        FederationError::NotAMember(_) => ErrorCode::NotAMember,
        FederationError::ScopeViolation => ErrorCode::ScopeViolation,
        FederationError::NotFederated | FederationError::InvalidConfig(_) => ErrorCode::Internal,
    };
    Failure::new(code, e.to_string())
}

fn forwarded_spec(name: &str, version: &str, alg: &Value) -> Result<(AlgorithmSpec, String), Failure> {
    let spec = |entry| AlgorithmSpec {
        name: name.into(),
        version: version.into(),
        entry,
    };
    if let Some(id) = alg.get("builtin").and_then(Value::as_str) {
        return Ok((spec(AlgorithmEntry::Builtin(id.into())), builtin_checksum(id)));
    }
    let lfn = parse_lfn(str_field(alg, "executable")?)?;
    let checksum = str_field(alg, "checksum")?.to_owned();
    Ok((spec(AlgorithmEntry::Executable(lfn)), checksum))
}

/// Remote-query delivery over the node's transport, authenticated with the
/// requesting user's token.
struct Peers<'a> {
    node: &'a SiteNode,
    token: &'a str,
    members: Vec<SiteInfo>,
}

impl RemoteQuery for Peers<'_> {
    fn query_remote(
        &self,
        site: &str,
        part: &FormalQuery,
        query_id: QueryId,
        timeout_ms: u64,
    ) -> Result<SiteResult, RemoteFailure> {
        let addr = self
            .members
            .iter()
            .find(|s| s.name == site)
            .map(|s| s.address.as_str())
            .ok_or_else(|| RemoteFailure::Failed("no address for site".into()))?;
        let id = fnv1a64(format!("{query_id}:{site}").as_bytes()) >> 11;
        let req = Message::request(
            Kind::QueryRemoteReq,
            Some(self.token),
            id,
            json!({ "query_id": query_id.to_string(), "query": serialize_query(part) }),
        );
        let resp = self
            .node
            .transport
            .call(addr, &req, timeout_ms)
            .map_err(|e| match e {
                TransportError::Timeout => RemoteFailure::Timeout,
                TransportError::Unreachable(_) => RemoteFailure::Unreachable,
                TransportError::Protocol(m) => RemoteFailure::Failed(m),
            })?;
        if let Some((code, message)) = resp.error_parts() {
            return Err(RemoteFailure::Failed(format!("{code}: {message}")));
        }
        if resp.kind != Kind::QueryRemoteResp {
            return Err(RemoteFailure::Failed(format!(
                "unexpected {} response",
                resp.kind
            )));
        }
        let xml = str_field(&resp.payload, "xml").map_err(|f| RemoteFailure::Failed(f.message))?;
        parse_site_result(xml).map_err(|e| RemoteFailure::Failed(e.to_string()))
    }
}
