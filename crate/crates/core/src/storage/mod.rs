//! Per-site storage element: immutable blobs keyed by logical file name,
//! verified on every read, and copied between sites in fixed-size chunks.

mod backend;
mod lfn;

use std::collections::HashSet;
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

pub use backend::{BlobBackend, BlobMeta, DirBackend, MemoryBackend};
pub use lfn::{valid_file_name, valid_site_name, Category, InvalidLfn, Lfn, BUILTIN_SITE};

use crate::hash::{hex64, Fnv1a64};

/// Transfer chunk size in bytes. The final chunk may be shorter; an empty
/// blob travels as a single empty chunk.
pub const CHUNK_SIZE: usize = 262_144;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StorageError {
    #[error("{0} already exists")]
    AlreadyExists(Lfn),
    #[error("{lfn} does not belong to site {site}")]
    WrongSite { lfn: Lfn, site: String },
    #[error("{0} not found")]
    NotFound(Lfn),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(Lfn),
    #[error("transfer source does not hold {0}")]
    SourceMissing(Lfn),
    #[error("transfer destination already holds {0}")]
    DestinationExists(Lfn),
    #[error("transfer of {0} received more bytes than announced")]
    Overflow(Lfn),
    #[error("i/o failure: {0}")]
    IoFailure(String),
}

impl From<std::io::Error> for StorageError {
    fn from(e: std::io::Error) -> Self {
        StorageError::IoFailure(e.to_string())
    }
}

pub fn chunk_count(size: usize) -> usize {
    size.div_ceil(CHUNK_SIZE).max(1)
}

/// Splits `bytes` into transfer chunks; always yields at least one chunk.
pub fn chunks(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let empty: &[u8] = &[];
    let first_empty = bytes.is_empty().then_some(empty);
    first_empty.into_iter().chain(bytes.chunks(CHUNK_SIZE))
}

pub struct StorageElement {
    site: String,
    backend: Arc<dyn BlobBackend>,
    /// LFNs with a write in flight; first writer wins.
    pending: Arc<Mutex<HashSet<Lfn>>>,
}

impl std::fmt::Debug for StorageElement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StorageElement")
            .field("site", &self.site)
            .finish()
    }
}

impl StorageElement {
    pub fn new(site: &str, backend: Arc<dyn BlobBackend>) -> Self {
        Self {
            site: site.to_owned(),
            backend,
            pending: Arc::default(),
        }
    }

    pub fn in_memory(site: &str) -> Self {
        Self::new(site, Arc::new(MemoryBackend::new()))
    }

    pub fn on_disk(site: &str, root: impl Into<std::path::PathBuf>) -> Result<Self, StorageError> {
        Ok(Self::new(site, Arc::new(DirBackend::new(root, site)?)))
    }

    pub fn site(&self) -> &str {
        &self.site
    }

    fn reserve(&self, lfn: &Lfn) -> Option<Reservation> {
        if !self.pending.lock().insert(lfn.clone()) {
            return None;
        }
        Some(Reservation {
            lfn: lfn.clone(),
            pending: Arc::clone(&self.pending),
        })
    }

    /// Stores a new blob owned by this site and returns its checksum.
    pub fn put(&self, lfn: &Lfn, bytes: &[u8]) -> Result<String, StorageError> {
        if lfn.site() != self.site {
            return Err(StorageError::WrongSite {
                lfn: lfn.clone(),
                site: self.site.clone(),
            });
        }
        let _guard = self
            .reserve(lfn)
            .ok_or_else(|| StorageError::AlreadyExists(lfn.clone()))?;
        if self.backend.meta(lfn)?.is_some() {
            return Err(StorageError::AlreadyExists(lfn.clone()));
        }
        let checksum = crate::hash::checksum_hex(bytes);
        let meta = BlobMeta {
            size: bytes.len() as u64,
            checksum: checksum.clone(),
        };
        self.backend.write(lfn, bytes, &meta)?;
        Ok(checksum)
    }

    /// Returns the stored bytes after re-verifying size and checksum.
    pub fn get(&self, lfn: &Lfn) -> Result<Vec<u8>, StorageError> {
        let (bytes, meta) = self
            .backend
            .read(lfn)?
            .ok_or_else(|| StorageError::NotFound(lfn.clone()))?;
        if bytes.len() as u64 != meta.size || crate::hash::checksum_hex(&bytes) != meta.checksum {
            return Err(StorageError::ChecksumMismatch(lfn.clone()));
        }
        Ok(bytes)
    }

    pub fn stat(&self, lfn: &Lfn) -> Result<Option<BlobMeta>, StorageError> {
        Ok(self.backend.meta(lfn)?)
    }

    pub fn contains(&self, lfn: &Lfn) -> bool {
        matches!(self.backend.meta(lfn), Ok(Some(_)))
    }

    /// A replica is a locally held copy of another site's file.
    pub fn is_replica(&self, lfn: &Lfn) -> bool {
        lfn.site() != self.site && self.contains(lfn)
    }

    /// Starts receiving `lfn` from another site. Nothing becomes visible
    /// until [`commit_incoming`](Self::commit_incoming) verifies the bytes.
    pub fn begin_incoming(
        &self,
        lfn: &Lfn,
        size: u64,
        checksum: &str,
    ) -> Result<IncomingTransfer, StorageError> {
        let reservation = self
            .reserve(lfn)
            .ok_or_else(|| StorageError::DestinationExists(lfn.clone()))?;
        if self.backend.meta(lfn)?.is_some() {
            return Err(StorageError::DestinationExists(lfn.clone()));
        }
        Ok(IncomingTransfer {
            reservation,
            expected_size: size,
            expected_checksum: checksum.to_owned(),
            buf: Vec::with_capacity(usize::try_from(size).unwrap_or(0).min(64 << 20)),
            hasher: Fnv1a64::new(),
            chunks: 0,
        })
    }

    /// Verifies and stores a completed transfer. On mismatch nothing is
    /// written and the reservation is released.
    pub fn commit_incoming(&self, incoming: IncomingTransfer) -> Result<String, StorageError> {
        let lfn = incoming.reservation.lfn.clone();
        let checksum = hex64(incoming.hasher.finish());
        if incoming.buf.len() as u64 != incoming.expected_size
            || checksum != incoming.expected_checksum
            || incoming.chunks == 0
        {
            return Err(StorageError::ChecksumMismatch(lfn));
        }
        let meta = BlobMeta {
            size: incoming.expected_size,
            checksum: checksum.clone(),
        };
        self.backend.write(&lfn, &incoming.buf, &meta)?;
        Ok(checksum)
    }
}

struct Reservation {
    lfn: Lfn,
    pending: Arc<Mutex<HashSet<Lfn>>>,
}

impl Drop for Reservation {
    fn drop(&mut self) {
        self.pending.lock().remove(&self.lfn);
    }
}

/// Receiving side of a chunked transfer. Dropping it aborts the transfer
/// and leaves no trace at the destination.
pub struct IncomingTransfer {
    reservation: Reservation,
    expected_size: u64,
    expected_checksum: String,
    buf: Vec<u8>,
    hasher: Fnv1a64,
    chunks: usize,
}

impl IncomingTransfer {
    pub fn lfn(&self) -> &Lfn {
        &self.reservation.lfn
    }

    pub fn chunks_received(&self) -> usize {
        self.chunks
    }

    pub fn push_chunk(&mut self, chunk: &[u8]) -> Result<(), StorageError> {
        if chunk.len() > CHUNK_SIZE || (self.buf.len() + chunk.len()) as u64 > self.expected_size {
            return Err(StorageError::Overflow(self.lfn().clone()));
        }
        self.hasher.update(chunk);
        self.buf.extend_from_slice(chunk);
        self.chunks += 1;
        Ok(())
    }
}

/// Copies `lfn` from one storage element to another, chunk by chunk, and
/// returns the verified checksum. The destination records a replica; the
/// LFN (and so its owner) is unchanged.
pub fn transfer(lfn: &Lfn, from: &StorageElement, to: &StorageElement) -> Result<String, StorageError> {
    let bytes = match from.get(lfn) {
        Ok(b) => b,
        Err(StorageError::NotFound(_)) => return Err(StorageError::SourceMissing(lfn.clone())),
        Err(e) => return Err(e),
    };
    let meta = from
        .stat(lfn)?
        .ok_or_else(|| StorageError::SourceMissing(lfn.clone()))?;
    let mut incoming = to.begin_incoming(lfn, meta.size, &meta.checksum)?;
    for chunk in chunks(&bytes) {
        incoming.push_chunk(chunk)?;
    }
    to.commit_incoming(incoming)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    fn lfn(site: &str, name: &str) -> Lfn {
        Lfn::new(site, Category::Images, name).unwrap()
    }

    fn random_bytes(n: usize, seed: u64) -> Vec<u8> {
        let mut v = vec![0u8; n];
        rand_chacha::ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut v);
        v
    }

    fn reference_checksum(bytes: &[u8]) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in bytes {
            h = (h ^ u64::from(*b)).wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    #[test]
    fn chunk_arithmetic() {
        assert_eq!(chunks(&[]).count(), 1);
        assert_eq!(chunks(&[]).next().unwrap().len(), 0);
        assert_eq!(chunk_count(0), 1);
        let v = vec![0u8; CHUNK_SIZE + 1];
        let sizes: Vec<_> = chunks(&v).map(<[u8]>::len).collect();
        assert_eq!(sizes, vec![CHUNK_SIZE, 1]);
        assert_eq!(chunk_count(CHUNK_SIZE + 1), 2);
        assert_eq!(chunks(&vec![0u8; CHUNK_SIZE]).count(), 1);
    }

    #[test]
    fn put_get_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let se = StorageElement::on_disk("a", dir.path()).unwrap();
        let l = lfn("a", "x.dcm");
        let data = random_bytes(8 << 20, 1);
        let sum = se.put(&l, &data).unwrap();
        assert_eq!(sum, reference_checksum(&data));
        assert_eq!(se.get(&l).unwrap(), data);
        assert!(dir.path().join("images/x.dcm").exists());
        let meta = std::fs::read_to_string(dir.path().join("images/x.dcm.meta")).unwrap();
        assert_eq!(meta, format!("{}|{sum}\n", data.len()));
    }

    #[test]
    fn put_errors() {
        let se = StorageElement::in_memory("a");
        let l = lfn("a", "x");
        se.put(&l, b"1").unwrap();
        assert_eq!(se.put(&l, b"2"), Err(StorageError::AlreadyExists(l.clone())));
        assert_eq!(se.get(&l).unwrap(), b"1");
        assert!(matches!(
            se.put(&lfn("b", "x"), b"1"),
            Err(StorageError::WrongSite { .. })
        ));
        assert_eq!(se.get(&lfn("a", "y")), Err(StorageError::NotFound(lfn("a", "y"))));
    }

    #[test]
    fn flipped_byte_on_disk_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let se = StorageElement::on_disk("a", dir.path()).unwrap();
        let l = lfn("a", "x");
        se.put(&l, b"mammogram bytes").unwrap();
        let path = dir.path().join("images/x");
        let mut raw = std::fs::read(&path).unwrap();
        raw[3] ^= 0x01;
        std::fs::write(&path, raw).unwrap();
        assert_eq!(se.get(&l), Err(StorageError::ChecksumMismatch(l)));
    }

    #[test]
    fn transfer_fidelity() {
        let a = StorageElement::in_memory("a");
        let dir = tempfile::tempdir().unwrap();
        let b = StorageElement::on_disk("b", dir.path()).unwrap();
        let l = lfn("a", "big");
        let data = random_bytes(1 << 20, 7);
        a.put(&l, &data).unwrap();
        let sum = transfer(&l, &a, &b).unwrap();
        assert_eq!(sum, reference_checksum(&data));
        assert_eq!(b.get(&l).unwrap(), data);
        assert!(b.is_replica(&l));
        assert!(dir.path().join("replicas/a/images/big").exists());
        assert_eq!(
            transfer(&l, &a, &b),
            Err(StorageError::DestinationExists(l.clone()))
        );
        let missing = lfn("a", "nope");
        assert_eq!(
            transfer(&missing, &a, &b),
            Err(StorageError::SourceMissing(missing))
        );
    }

    #[test]
    fn empty_blob_transfers_as_one_chunk() {
        let a = StorageElement::in_memory("a");
        let b = StorageElement::in_memory("b");
        let l = lfn("a", "empty");
        a.put(&l, &[]).unwrap();
        let mut inc = b.begin_incoming(&l, 0, "cbf29ce484222325").unwrap();
        for c in chunks(&[]) {
            inc.push_chunk(c).unwrap();
        }
        assert_eq!(inc.chunks_received(), 1);
        assert_eq!(b.commit_incoming(inc).unwrap(), "cbf29ce484222325");
        assert_eq!(b.get(&l).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn corrupted_transfer_leaves_no_trace() {
        let dir = tempfile::tempdir().unwrap();
        let a = StorageElement::in_memory("a");
        let b = StorageElement::on_disk("b", dir.path()).unwrap();
        let l = lfn("a", "x");
        let data = random_bytes(CHUNK_SIZE + 10, 3);
        let sum = a.put(&l, &data).unwrap();
        let mut inc = b.begin_incoming(&l, data.len() as u64, &sum).unwrap();
        for (i, c) in chunks(&data).enumerate() {
            let mut c = c.to_vec();
            if i == 1 {
                c[0] ^= 0xff;
            }
            inc.push_chunk(&c).unwrap();
        }
        assert_eq!(
            b.commit_incoming(inc),
            Err(StorageError::ChecksumMismatch(l.clone()))
        );
        assert_eq!(b.get(&l), Err(StorageError::NotFound(l.clone())));
        let leftovers: Vec<_> = walk(dir.path());
        assert!(leftovers.is_empty(), "{leftovers:?}");
        // The reservation was released, so a clean retry succeeds.
        transfer(&l, &a, &b).unwrap();
    }

    #[test]
    fn abandoned_transfer_releases_reservation() {
        let b = StorageElement::in_memory("b");
        let l = lfn("a", "x");
        let inc = b.begin_incoming(&l, 3, "00").unwrap();
        assert!(matches!(
            b.begin_incoming(&l, 3, "00"),
            Err(StorageError::DestinationExists(_))
        ));
        drop(inc);
        assert!(b.begin_incoming(&l, 3, "00").is_ok());
    }

    #[test]
    fn overflow_rejected() {
        let b = StorageElement::in_memory("b");
        let mut inc = b.begin_incoming(&lfn("a", "x"), 2, "00").unwrap();
        assert!(matches!(inc.push_chunk(b"abc"), Err(StorageError::Overflow(_))));
    }

    fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }
}
