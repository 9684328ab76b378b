//! Desk-scale federated mammography data grid.
//!
//! A virtual organisation (VO) is a set of autonomous site nodes, each with
//! its own catalog and storage element, coordinated by a central node that
//! owns identity and membership. Queries are shipped to the sites that hold
//! the data and the per-site XML results are merged at the originating node.
//!
//! Module map:
//!
//! - [`dicom`]: fixed-tag explicit-VR little-endian DICOM reader/writer and
//!   ingress anonymization.
//! - [`query`]: the conjunctive formal query language and the XML result-set
//!   representation.
//! - [`catalog`]: per-site indexed metadata store with an append-only log.
//! - [`storage`]: logical-file-name keyed blob store and chunked transfer.
//! - [`federation`]: query analysis, fan-out and result merging.
//! - [`compute`]: algorithm registration, data-local execution and the
//!   `smf-norm` built-in.
//! - [`vo`]: wire protocol, transports, central node and site node services.

pub mod catalog;
pub mod clock;
pub mod compute;
pub mod dicom;
pub mod federation;
pub mod hash;
pub mod query;
pub mod storage;
pub mod vo;

pub use clock::{Clock, SimClock, SystemClock};
pub use hash::{checksum_hex, fnv1a64, hex64};
