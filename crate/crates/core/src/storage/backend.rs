use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;

use super::Lfn;

/// Size and checksum recorded alongside each blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobMeta {
    pub size: u64,
    pub checksum: String,
}

impl BlobMeta {
    fn render(&self) -> String {
        format!("{}|{}\n", self.size, self.checksum)
    }

    fn parse(line: &str) -> Option<Self> {
        let (size, checksum) = line.trim_end_matches('\n').split_once('|')?;
        Some(Self {
            size: size.parse().ok()?,
            checksum: checksum.to_owned(),
        })
    }
}

/// Where blob bytes live. Writes must be atomic: a blob is either fully
/// present with its metadata or absent.
pub trait BlobBackend: Send + Sync {
    fn write(&self, lfn: &Lfn, bytes: &[u8], meta: &BlobMeta) -> io::Result<()>;
    fn read(&self, lfn: &Lfn) -> io::Result<Option<(Vec<u8>, BlobMeta)>>;
    fn meta(&self, lfn: &Lfn) -> io::Result<Option<BlobMeta>>;
}

/// On-disk layout: `<root>/<category>/<name>` with a `<name>.meta` sidecar
/// holding `size|checksum`. Replicas of other sites' files go under
/// `<root>/replicas/<site>/<category>/<name>`. The sidecar is renamed into
/// place last, so its presence marks a committed blob.
#[derive(Debug)]
pub struct DirBackend {
    root: PathBuf,
    own_site: String,
    tmp_seq: AtomicU64,
}

impl DirBackend {
    pub fn new(root: impl Into<PathBuf>, own_site: &str) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            own_site: own_site.to_owned(),
            tmp_seq: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blob_path(&self, lfn: &Lfn) -> PathBuf {
        let mut p = self.root.clone();
        if lfn.site() != self.own_site {
            p.push("replicas");
            p.push(lfn.site());
        }
        p.push(lfn.category().as_str());
        p.push(lfn.name());
        p
    }

    pub fn meta_path(&self, lfn: &Lfn) -> PathBuf {
        let mut p = self.blob_path(lfn).into_os_string();
        p.push(".meta");
        PathBuf::from(p)
    }

    fn write_tmp(&self, dir: &Path, bytes: &[u8]) -> io::Result<PathBuf> {
        let n = self.tmp_seq.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".tmp-{}-{n}", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        Ok(tmp)
    }
}

impl BlobBackend for DirBackend {
    fn write(&self, lfn: &Lfn, bytes: &[u8], meta: &BlobMeta) -> io::Result<()> {
        let path = self.blob_path(lfn);
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        let data_tmp = self.write_tmp(dir, bytes)?;
        let meta_tmp = match self.write_tmp(dir, meta.render().as_bytes()) {
            Ok(t) => t,
            Err(e) => {
                let _ = fs::remove_file(&data_tmp);
                return Err(e);
            }
        };
        let commit = fs::rename(&data_tmp, &path).and_then(|_| fs::rename(&meta_tmp, self.meta_path(lfn)));
        if let Err(e) = commit {
            let _ = fs::remove_file(&data_tmp);
            let _ = fs::remove_file(&meta_tmp);
            let _ = fs::remove_file(&path);
            return Err(e);
        }
        Ok(())
    }

    fn read(&self, lfn: &Lfn) -> io::Result<Option<(Vec<u8>, BlobMeta)>> {
        let Some(meta) = self.meta(lfn)? else {
            return Ok(None);
        };
        let bytes = fs::read(self.blob_path(lfn))?;
        Ok(Some((bytes, meta)))
    }

    fn meta(&self, lfn: &Lfn) -> io::Result<Option<BlobMeta>> {
        match fs::read_to_string(self.meta_path(lfn)) {
            Ok(s) => BlobMeta::parse(&s)
                .map(Some)
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "corrupt .meta sidecar")),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Volatile backend for simulations.
#[derive(Debug, Default)]
pub struct MemoryBackend {
    blobs: RwLock<HashMap<Lfn, (Vec<u8>, BlobMeta)>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overwrites stored bytes without touching metadata (fault injection).
    pub fn corrupt(&self, lfn: &Lfn, f: impl FnOnce(&mut Vec<u8>)) -> bool {
        match self.blobs.write().get_mut(lfn) {
            Some((bytes, _)) => {
                f(bytes);
                true
            }
            None => false,
        }
    }
}

impl BlobBackend for MemoryBackend {
    fn write(&self, lfn: &Lfn, bytes: &[u8], meta: &BlobMeta) -> io::Result<()> {
        self.blobs
            .write()
            .insert(lfn.clone(), (bytes.to_vec(), meta.clone()));
        Ok(())
    }

    fn read(&self, lfn: &Lfn) -> io::Result<Option<(Vec<u8>, BlobMeta)>> {
        Ok(self.blobs.read().get(lfn).cloned())
    }

    fn meta(&self, lfn: &Lfn) -> io::Result<Option<BlobMeta>> {
        Ok(self.blobs.read().get(lfn).map(|(_, m)| m.clone()))
    }
}
