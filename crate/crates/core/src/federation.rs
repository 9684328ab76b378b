//! Query analysis, fan-out and result merging.
//!
//! The origin site evaluates its own part locally and ships one
//! `LOCAL_ONLY` copy of the query to every other member. The scope flag is
//! the hop limit: a remote site never forwards what it receives.

use std::sync::mpsc;

use thiserror::Error;

use crate::catalog::Catalog;
use crate::clock::Clock;
use crate::query::{merge_results, FormalQuery, QueryId, ResultSet, Scope, SiteResult};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FederationError {
    #[error("{0} is not a member of the VO")]
    NotAMember(String),
    #[error("query must have FEDERATED scope to be planned")]
    NotFederated,
    #[error("FEDERATED query arrived at a remote-query endpoint")]
    ScopeViolation,
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FederationConfig {
    per_site_timeout_ms: u64,
    fanout_parallel: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            per_site_timeout_ms: 5000,
            fanout_parallel: true,
        }
    }
}

impl FederationConfig {
    pub fn new(per_site_timeout_ms: u64, fanout_parallel: bool) -> Result<Self, FederationError> {
        if per_site_timeout_ms == 0 {
            return Err(FederationError::InvalidConfig("timeout must be positive".into()));
        }
        Ok(Self {
            per_site_timeout_ms,
            fanout_parallel,
        })
    }

    pub fn per_site_timeout_ms(&self) -> u64 {
        self.per_site_timeout_ms
    }

    pub fn fanout_parallel(&self) -> bool {
        self.fanout_parallel
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPlan {
    pub query_id: QueryId,
    pub origin_site: String,
    pub local_part: FormalQuery,
    /// One part per other member, ordered by site name.
    pub remote_parts: Vec<(String, FormalQuery)>,
}

/// Splits a federated query into the origin's part and one part per other
/// member. All sites share one schema, so every part is the original query
/// with its scope forced to `LOCAL_ONLY`.
pub fn analyze(
    q: &FormalQuery,
    origin: &str,
    members: &[String],
    query_id: QueryId,
) -> Result<QueryPlan, FederationError> {
    if q.scope() != Scope::Federated {
        return Err(FederationError::NotFederated);
    }
    if !members.iter().any(|m| m == origin) {
        return Err(FederationError::NotAMember(origin.to_owned()));
    }
    let local = q.with_scope(Scope::LocalOnly);
    let mut others: Vec<&String> = members.iter().filter(|m| *m != origin).collect();
    others.sort();
    others.dedup();
    Ok(QueryPlan {
        query_id,
        origin_site: origin.to_owned(),
        remote_parts: others.into_iter().map(|s| (s.clone(), local.clone())).collect(),
        local_part: local,
    })
}

/// Why a remote part produced no rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemoteFailure {
    Timeout,
    Unreachable,
    Failed(String),
}

impl RemoteFailure {
    pub fn message(&self) -> &str {
        match self {
            RemoteFailure::Timeout => "timeout",
            RemoteFailure::Unreachable => "unreachable",
            RemoteFailure::Failed(m) => m,
        }
    }
}

/// Delivers one remote part to a peer's remote-query endpoint.
pub trait RemoteQuery: Sync {
    fn query_remote(
        &self,
        site: &str,
        part: &FormalQuery,
        query_id: QueryId,
        timeout_ms: u64,
    ) -> Result<SiteResult, RemoteFailure>;
}

fn remote_part(
    remote: &dyn RemoteQuery,
    clock: &dyn Clock,
    site: &str,
    part: &FormalQuery,
    query_id: QueryId,
    timeout_ms: u64,
) -> SiteResult {
    let t0 = clock.now_ms();
    let outcome = remote.query_remote(site, part, query_id, timeout_ms);
    let elapsed = clock.now_ms().saturating_sub(t0);
    match outcome {
        Ok(r) if r.site == site => r,
        Ok(r) => SiteResult::error(site, format!("answer came from site {}", r.site), elapsed),
        Err(f) => SiteResult::error(site, f.message(), elapsed),
    }
}

/// Runs a plan. Never fails as a whole: every remote problem becomes an
/// ERROR entry for that site. The origin's result comes first; remote
/// results follow in arrival order.
pub fn execute_federated(
    plan: &QueryPlan,
    catalog: &Catalog,
    remote: &dyn RemoteQuery,
    config: &FederationConfig,
    clock: &dyn Clock,
) -> ResultSet {
    let mut parts = Vec::with_capacity(plan.remote_parts.len() + 1);
    let t0 = clock.now_ms();
    let rows = catalog.local_query(&plan.local_part);
    parts.push(SiteResult::ok(
        plan.origin_site.clone(),
        rows,
        clock.now_ms().saturating_sub(t0),
    ));

    let timeout = config.per_site_timeout_ms;
    if config.fanout_parallel && plan.remote_parts.len() > 1 {
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|s| {
            for (site, part) in &plan.remote_parts {
                let tx = tx.clone();
                s.spawn(move || {
                    let r = remote_part(remote, clock, site, part, plan.query_id, timeout);
                    let _ = tx.send(r);
                });
            }
            drop(tx);
            parts.extend(rx.iter());
        });
    } else {
        for (site, part) in &plan.remote_parts {
            parts.push(remote_part(remote, clock, site, part, plan.query_id, timeout));
        }
    }
    merge_results(parts, plan.query_id).expect("plan sites are distinct")
}

/// Evaluates a part shipped from another site against the local catalog.
pub fn handle_remote(
    q: &FormalQuery,
    catalog: &Catalog,
    clock: &dyn Clock,
) -> Result<SiteResult, FederationError> {
    if q.scope() != Scope::LocalOnly {
        return Err(FederationError::ScopeViolation);
    }
    let t0 = clock.now_ms();
    let rows = catalog.local_query(q);
    Ok(SiteResult::ok(
        catalog.site(),
        rows,
        clock.now_ms().saturating_sub(t0),
    ))
}
