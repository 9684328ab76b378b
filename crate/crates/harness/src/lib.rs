//! Deterministic test fabric for MGVO.
//!
//! Builds a whole VO in one process over a simulated network with a
//! message trace, fault injection and a simulated clock, fills it with
//! seeded synthetic holdings, and checks federated answers against a
//! brute-force oracle built from the sites' catalog logs.

pub mod net;
pub mod oracle;
pub mod scenario;
pub mod synth;
pub mod vo;

use mgvo::catalog::CatalogError;
use mgvo::vo::ClientError;
use thiserror::Error;

pub use net::{sim_addr, Fault, SimNetwork, TraceEntry};
pub use oracle::{check_result, random_query, OracleRow, OracleStore};
pub use scenario::{Scenario, ScenarioReport};
pub use synth::{generate_holdings, ingest, SiteSpec};
pub use vo::{SimVo, VoBuilder};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("scenario: {0}")]
    Scenario(String),
}

impl From<String> for HarnessError {
    fn from(e: String) -> Self {
        HarnessError::Oracle(e)
    }
}
