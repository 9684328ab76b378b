//! Per-site metadata catalog: patients, images and algorithms.
//!
//! Rows live in an indexed in-memory store. Every mutation is first appended
//! to a line-oriented record log and only then applied, so replaying the log
//! rebuilds the same store:
//!
//! ```text
//! P|pseudonym|sex|age
//! I|sop|lfn|pseudonym|lat|date|kind|source|size|checksum
//! A|name|version|lfn|checksum|builtin
//! ```
//!
//! Queries go through two steps, mirroring a formal-query to SQL
//! translation: [`translate`] lowers a [`FormalQuery`] into native filters,
//! and [`Catalog::run_native`] evaluates them against the indexes.

mod eval;
mod log;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

pub use eval::{translate, ImageFilter, NativeQuery, PatientFilter};
pub use log::Record;

use crate::dicom::{self, tags, DicomFile};
use crate::query::{FormalQuery, ImageKind, Laterality, Row, Sex};
use crate::storage::{BlobMeta, Lfn};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRow {
    pub pseudonym: String,
    pub sex: Sex,
    pub age_years: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRow {
    pub sop_uid: String,
    pub lfn: Lfn,
    pub pseudonym: String,
    pub laterality: Laterality,
    pub study_date: NaiveDate,
    pub kind: ImageKind,
    pub source_sop_uid: Option<String>,
    pub size_bytes: u64,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgorithmRow {
    pub name: String,
    pub version: String,
    pub lfn: Lfn,
    pub checksum: String,
    pub builtin: bool,
}

/// Catalog-relevant attributes of an anonymized DICOM file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageMeta {
    pub sop_uid: String,
    pub pseudonym: String,
    pub sex: Sex,
    pub age_years: u32,
    pub laterality: Laterality,
    pub study_date: NaiveDate,
}

impl ImageMeta {
    pub fn from_dicom(file: &DicomFile) -> Result<Self, CatalogError> {
        let missing = |what: &str| CatalogError::InvalidField(format!("{what} missing or malformed"));
        let sop_uid = file.sop_instance_uid().to_owned();
        if !valid_key(&sop_uid) {
            return Err(missing("SOPInstanceUID"));
        }
        Ok(Self {
            sop_uid,
            pseudonym: file
                .text(tags::PATIENT_ID)
                .filter(|p| crate::hash::is_hex16(p))
                .ok_or_else(|| missing("pseudonymized PatientID"))?
                .to_owned(),
            sex: file
                .text(tags::PATIENT_SEX)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| missing("PatientSex"))?,
            age_years: file
                .text(tags::PATIENT_AGE)
                .and_then(dicom::parse_age_string)
                .ok_or_else(|| missing("PatientAge"))?,
            laterality: file
                .text(tags::IMAGE_LATERALITY)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| missing("ImageLaterality"))?,
            study_date: file
                .text(tags::STUDY_DATE)
                .and_then(dicom::parse_da)
                .ok_or_else(|| missing("StudyDate"))?,
        })
    }
}

/// What an LFN resolves to in this catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryKind {
    Image(ImageKind),
    Algorithm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LfnEntry {
    /// Known for images; algorithm rows do not record a size.
    pub size_bytes: Option<u64>,
    pub checksum: String,
    pub kind: EntryKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("SOP instance {0} is already registered")]
    DuplicateSopUid(String),
    #[error("{0} is already registered")]
    DuplicateLfn(String),
    #[error("patient {0} already registered with a different sex")]
    SexMismatch(String),
    #[error("SMF source {0:?} does not resolve to an ORIGINAL image")]
    DanglingSource(String),
    #[error("algorithm {name} {version} already registered with a different checksum")]
    VersionConflict { name: String, version: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("corrupt catalog log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("catalog log i/o: {0}")]
    Io(String),
}

/// Values that end up in log fields: non-empty, no separators, no control
/// characters.
pub(crate) fn valid_key(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c != '|' && !c.is_control())
}

#[derive(Debug, Default)]
struct State {
    patients: BTreeMap<String, PatientRow>,
    images: BTreeMap<String, ImageRow>,
    /// pseudonym -> sop uids, ascending
    images_by_patient: HashMap<String, Vec<String>>,
    lfns: HashMap<Lfn, LfnEntry>,
    algorithms: BTreeMap<(String, String), AlgorithmRow>,
}

impl State {
    /// Validates `record` against current state and applies it.
    fn apply(&mut self, record: &Record) -> Result<(), CatalogError> {
        match record {
            Record::Patient(p) => {
                if self.patients.contains_key(&p.pseudonym) {
                    return Err(CatalogError::InvalidField(format!(
                        "patient {} recorded twice",
                        p.pseudonym
                    )));
                }
                self.patients.insert(p.pseudonym.clone(), p.clone());
            }
            Record::Image(img) => {
                self.check_image(img)?;
                if !self.patients.contains_key(&img.pseudonym) {
                    return Err(CatalogError::NotFound(format!("patient {}", img.pseudonym)));
                }
                self.lfns.insert(
                    img.lfn.clone(),
                    LfnEntry {
                        size_bytes: Some(img.size_bytes),
                        checksum: img.checksum.clone(),
                        kind: EntryKind::Image(img.kind),
                    },
                );
                let list = self.images_by_patient.entry(img.pseudonym.clone()).or_default();
                let at = list.binary_search(&img.sop_uid).unwrap_or_else(|i| i);
                list.insert(at, img.sop_uid.clone());
                self.images.insert(img.sop_uid.clone(), img.clone());
            }
            Record::Algorithm(a) => {
                let key = (a.name.clone(), a.version.clone());
                if self.algorithms.contains_key(&key) {
                    return Err(CatalogError::InvalidField(format!(
                        "algorithm {} {} recorded twice",
                        a.name, a.version
                    )));
                }
                if !a.builtin && self.lfns.contains_key(&a.lfn) {
                    return Err(CatalogError::DuplicateLfn(a.lfn.to_string()));
                }
                self.lfns.insert(
                    a.lfn.clone(),
                    LfnEntry {
                        size_bytes: None,
                        checksum: a.checksum.clone(),
                        kind: EntryKind::Algorithm,
                    },
                );
                self.algorithms.insert(key, a.clone());
            }
        }
        Ok(())
    }

    fn check_image(&self, img: &ImageRow) -> Result<(), CatalogError> {
        if self.images.contains_key(&img.sop_uid) {
            return Err(CatalogError::DuplicateSopUid(img.sop_uid.clone()));
        }
        if self.lfns.contains_key(&img.lfn) {
            return Err(CatalogError::DuplicateLfn(img.lfn.to_string()));
        }
        match (img.kind, &img.source_sop_uid) {
            (ImageKind::Original, None) => Ok(()),
            (ImageKind::Original, Some(_)) => Err(CatalogError::InvalidField(
                "ORIGINAL images have no source".into(),
            )),
            (ImageKind::Smf, source) => {
                let source = source.clone().unwrap_or_default();
                match self.images.get(&source) {
                    Some(src) if src.kind == ImageKind::Original => Ok(()),
                    _ => Err(CatalogError::DanglingSource(source)),
                }
            }
        }
    }
}

enum LogSink {
    Memory(String),
    File { path: PathBuf, file: File },
}

/// Indexed per-site catalog. Writers are serialized; readers see a
/// consistent snapshot for the duration of a query.
pub struct Catalog {
    site: String,
    state: RwLock<State>,
    log: Mutex<LogSink>,
}

impl std::fmt::Debug for Catalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Catalog").field("site", &self.site).finish()
    }
}

impl Catalog {
    pub fn in_memory(site: &str) -> Self {
        Self {
            site: site.to_owned(),
            state: RwLock::default(),
            log: Mutex::new(LogSink::Memory(String::new())),
        }
    }

    /// Opens (or creates) a file-backed catalog, replaying existing records.
    pub fn open(site: &str, path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| CatalogError::Io(e.to_string());
        let existing = match std::fs::read_to_string(&path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(e)),
        };
        let mut state = State::default();
        replay_into(&mut state, &existing)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        Ok(Self {
            site: site.to_owned(),
            state: RwLock::new(state),
            log: Mutex::new(LogSink::File { path, file }),
        })
    }

    /// Builds an in-memory catalog from log text.
    pub fn replay(site: &str, text: &str) -> Result<Self, CatalogError> {
        let mut state = State::default();
        replay_into(&mut state, text)?;
        Ok(Self {
            site: site.to_owned(),
            state: RwLock::new(state),
            log: Mutex::new(LogSink::Memory(text.to_owned())),
        })
    }

    pub fn site(&self) -> &str {
        &self.site
    }

    /// Full text of the record log.
    pub fn log_text(&self) -> Result<String, CatalogError> {
        match &*self.log.lock() {
            LogSink::Memory(s) => Ok(s.clone()),
            LogSink::File { path, .. } => {
                std::fs::read_to_string(path).map_err(|e| CatalogError::Io(e.to_string()))
            }
        }
    }

    /// Appends the records to the log, then applies them. Callers validate
    /// first and hold the state write lock, so applying cannot fail.
    fn commit(&self, state: &mut State, records: &[Record]) -> Result<(), CatalogError> {
        let text: String = records.iter().map(|r| r.to_line() + "\n").collect();
        match &mut *self.log.lock() {
            LogSink::Memory(s) => s.push_str(&text),
            LogSink::File { file, .. } => file
                .write_all(text.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| CatalogError::Io(e.to_string()))?,
        }
        for r in records {
            state
                .apply(r)
                .expect("records are validated before they are logged");
        }
        Ok(())
    }

    fn image_row(
        &self,
        meta: &ImageMeta,
        lfn: &Lfn,
        kind: ImageKind,
        source_sop_uid: Option<&str>,
        blob: &BlobMeta,
    ) -> Result<ImageRow, CatalogError> {
        if !valid_key(&meta.sop_uid) || !crate::hash::is_hex16(&meta.pseudonym) {
            return Err(CatalogError::InvalidField("sop uid or pseudonym".into()));
        }
        if lfn.site() != self.site {
            return Err(CatalogError::InvalidField(format!(
                "{lfn} is not owned by site {}",
                self.site
            )));
        }
        Ok(ImageRow {
            sop_uid: meta.sop_uid.clone(),
            lfn: lfn.clone(),
            pseudonym: meta.pseudonym.clone(),
            laterality: meta.laterality,
            study_date: meta.study_date,
            kind,
            source_sop_uid: source_sop_uid.map(str::to_owned),
            size_bytes: blob.size,
            checksum: blob.checksum.clone(),
        })
    }

    /// Records needed to register `row`, or the reason it cannot be.
    fn plan_image(state: &State, meta: &ImageMeta, row: ImageRow) -> Result<Vec<Record>, CatalogError> {
        state.check_image(&row)?;
        let mut records = Vec::with_capacity(2);
        match state.patients.get(&meta.pseudonym) {
            Some(p) if p.sex != meta.sex => return Err(CatalogError::SexMismatch(meta.pseudonym.clone())),
            Some(_) => {}
            None => records.push(Record::Patient(PatientRow {
                pseudonym: meta.pseudonym.clone(),
                sex: meta.sex,
                age_years: meta.age_years,
            })),
        }
        records.push(Record::Image(row));
        Ok(records)
    }

    /// Reports whether [`register_image`](Self::register_image) would
    /// currently accept the image, without changing anything.
    pub fn check_image(
        &self,
        meta: &ImageMeta,
        lfn: &Lfn,
        kind: ImageKind,
        source_sop_uid: Option<&str>,
    ) -> Result<(), CatalogError> {
        let blob = BlobMeta {
            size: 0,
            checksum: String::new(),
        };
        let row = self.image_row(meta, lfn, kind, source_sop_uid, &blob)?;
        Self::plan_image(&self.state.read(), meta, row).map(|_| ())
    }

    /// Registers an ingested image, inserting its patient on first sight.
    pub fn register_image(
        &self,
        meta: &ImageMeta,
        lfn: &Lfn,
        kind: ImageKind,
        source_sop_uid: Option<&str>,
        blob: &BlobMeta,
    ) -> Result<ImageRow, CatalogError> {
        let row = self.image_row(meta, lfn, kind, source_sop_uid, blob)?;
        let mut state = self.state.write();
        let records = Self::plan_image(&state, meta, row.clone())?;
        self.commit(&mut state, &records)?;
        Ok(row)
    }

    /// Registers an algorithm. Re-registering the same name and version
    /// with the same checksum returns the existing row unchanged.
    pub fn register_algorithm(
        &self,
        name: &str,
        version: &str,
        lfn: &Lfn,
        checksum: &str,
        builtin: bool,
    ) -> Result<AlgorithmRow, CatalogError> {
        if !crate::storage::valid_file_name(name) || !crate::storage::valid_file_name(version) {
            return Err(CatalogError::InvalidField(format!(
                "algorithm name/version {name:?} {version:?}"
            )));
        }
        if !valid_key(checksum) || builtin != lfn.is_builtin() {
            return Err(CatalogError::InvalidField("algorithm checksum or lfn".into()));
        }
        let mut state = self.state.write();
        if let Some(existing) = state.algorithms.get(&(name.to_owned(), version.to_owned())) {
            if existing.checksum == checksum {
                return Ok(existing.clone());
            }
            return Err(CatalogError::VersionConflict {
                name: name.into(),
                version: version.into(),
            });
        }
        if !builtin && state.lfns.contains_key(lfn) {
            return Err(CatalogError::DuplicateLfn(lfn.to_string()));
        }
        let row = AlgorithmRow {
            name: name.into(),
            version: version.into(),
            lfn: lfn.clone(),
            checksum: checksum.into(),
            builtin,
        };
        self.commit(&mut state, &[Record::Algorithm(row.clone())])?;
        Ok(row)
    }

    pub fn lookup_lfn(&self, lfn: &Lfn) -> Result<LfnEntry, CatalogError> {
        self.state
            .read()
            .lfns
            .get(lfn)
            .cloned()
            .ok_or_else(|| CatalogError::NotFound(lfn.to_string()))
    }

    pub fn algorithm(&self, name: &str, version: &str) -> Option<AlgorithmRow> {
        self.state
            .read()
            .algorithms
            .get(&(name.to_owned(), version.to_owned()))
            .cloned()
    }

    pub fn image(&self, sop_uid: &str) -> Option<ImageRow> {
        self.state.read().images.get(sop_uid).cloned()
    }

    pub fn image_by_lfn(&self, lfn: &Lfn) -> Option<ImageRow> {
        let state = self.state.read();
        state.images.values().find(|i| &i.lfn == lfn).cloned()
    }

    pub fn patient(&self, pseudonym: &str) -> Option<PatientRow> {
        self.state.read().patients.get(pseudonym).cloned()
    }

    pub fn patient_count(&self) -> usize {
        self.state.read().patients.len()
    }

    pub fn image_count(&self) -> usize {
        self.state.read().images.len()
    }

    pub fn count_kind(&self, kind: ImageKind) -> usize {
        self.state
            .read()
            .images
            .values()
            .filter(|i| i.kind == kind)
            .count()
    }

    pub fn algorithm_count(&self) -> usize {
        self.state.read().algorithms.len()
    }

    pub fn patients(&self) -> Vec<PatientRow> {
        self.state.read().patients.values().cloned().collect()
    }

    pub fn images(&self) -> Vec<ImageRow> {
        self.state.read().images.values().cloned().collect()
    }

    /// Evaluates a formal query against this site's rows only.
    pub fn local_query(&self, q: &FormalQuery) -> Vec<Row> {
        self.run_native(&translate(q))
    }

    pub fn run_native(&self, native: &NativeQuery) -> Vec<Row> {
        eval::execute(native, &self.state.read(), &self.site)
    }
}

fn replay_into(state: &mut State, text: &str) -> Result<(), CatalogError> {
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let corrupt = |reason: String| CatalogError::CorruptLog { line: i + 1, reason };
        let record = Record::parse(line).map_err(corrupt)?;
        state.apply(&record).map_err(|e| corrupt(e.to_string()))?;
    }
    Ok(())
}
