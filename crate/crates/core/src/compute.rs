//! Algorithm registration and data-local execution.
//!
//! A [`ComputeElement`] only ever runs jobs on inputs its own site owns;
//! choosing that site is the broker's job (see the site node). Outputs are
//! SMF-kind images with deterministic names, so re-running a job converges
//! on the same catalog row.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, ImageMeta};
use crate::clock::Clock;
use crate::dicom::{parse_dicom, tags, write_dicom, DicomElement, DicomFile, Vr};
use crate::hash::{checksum_hex, fnv1a64, hex64};
use crate::query::ImageKind;
use crate::storage::{BlobMeta, Category, Lfn, StorageElement, StorageError};

/// Compiled-in algorithm ids.
pub const BUILTINS: &[&str] = &["smf-norm"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ComputeError {
    #[error("algorithm {name} {version} not found")]
    AlgorithmNotFound { name: String, version: String },
    #[error("input {0} not found")]
    InputNotFound(String),
    #[error("execution failed: {0}")]
    ExecutionFailed(String),
    #[error("input has no 16-bit pixel data")]
    NoPixelData,
    #[error("algorithm {name} {version} already registered with different content")]
    VersionConflict { name: String, version: String },
    #[error("unknown built-in algorithm {0:?}")]
    UnknownBuiltin(String),
    #[error("{lfn} is not owned by site {site}")]
    WrongSite { lfn: String, site: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Catalog(CatalogError),
}

impl From<CatalogError> for ComputeError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::VersionConflict { name, version } => {
                ComputeError::VersionConflict { name, version }
            }
            other => ComputeError::Catalog(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlgorithmEntry {
    Builtin(String),
    Executable(Lfn),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgorithmSpec {
    pub name: String,
    pub version: String,
    pub entry: AlgorithmEntry,
}

impl AlgorithmSpec {
    pub fn from_row(row: &crate::catalog::AlgorithmRow) -> Self {
        Self {
            name: row.name.clone(),
            version: row.version.clone(),
            entry: if row.builtin {
                AlgorithmEntry::Builtin(row.lfn.name().to_owned())
            } else {
                AlgorithmEntry::Executable(row.lfn.clone())
            },
        }
    }
}

/// What `add_algorithm` uploads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlgorithmPayload {
    Builtin(String),
    Executable(Vec<u8>),
}

/// Checksum recorded for a built-in; identical at every site.
pub fn builtin_checksum(id: &str) -> String {
    checksum_hex(id.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobStatus {
    Done,
    Failed,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Done => "DONE",
            JobStatus::Failed => "FAILED",
        }
    }
}

impl FromStr for JobStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "DONE" => Ok(JobStatus::Done),
            "FAILED" => Ok(JobStatus::Failed),
            _ => Err(format!("unknown job status {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobRecord {
    pub job_id: String,
    pub name: String,
    pub version: String,
    pub input_lfn: Lfn,
    pub output_lfn: Option<Lfn>,
    pub status: JobStatus,
    pub site: String,
    pub elapsed_ms: u64,
}

impl JobRecord {
    /// `job_id|name|version|input_lfn|output_lfn|status|site|elapsed_ms`
    pub fn to_line(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}",
            self.job_id,
            self.name,
            self.version,
            self.input_lfn,
            self.output_lfn.as_ref().map(Lfn::to_string).unwrap_or_default(),
            self.status.as_str(),
            self.site,
            self.elapsed_ms
        )
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split('|').collect();
        let [job_id, name, version, input, output, status, site, elapsed] = f[..] else {
            return Err(format!("expected 8 fields, got {}", f.len()));
        };
        let lfn = |s: &str| s.parse::<Lfn>().map_err(|e| e.to_string());
        Ok(Self {
            job_id: job_id.into(),
            name: name.into(),
            version: version.into(),
            input_lfn: lfn(input)?,
            output_lfn: if output.is_empty() {
                None
            } else {
                Some(lfn(output)?)
            },
            status: status.parse()?,
            site: site.into(),
            elapsed_ms: elapsed.parse().map_err(|_| format!("bad elapsed {elapsed:?}"))?,
        })
    }
}

/// SOP UID of the file derived from `input_sop` by `name` `version`.
pub fn derived_sop_uid(input_sop: &str, name: &str, version: &str) -> String {
    hex64(fnv1a64(format!("{input_sop}:{name}:{version}").as_bytes()))
}

pub fn output_lfn(site: &str, name: &str, version: &str, input_sop: &str) -> Result<Lfn, ComputeError> {
    Lfn::new(site, Category::Smf, &format!("{name}-{version}-{input_sop}"))
        .map_err(|e| ComputeError::ExecutionFailed(e.to_string()))
}

/// Stand-in for SMF standardization: a full-range linear rescale of the
/// pixel samples to 0..=65535. A constant image maps to all zeros.
pub fn smf_norm(input: &DicomFile, output_sop_uid: &str) -> Result<DicomFile, ComputeError> {
    let bits = input.get(tags::BITS_ALLOCATED).and_then(DicomElement::us_value);
    let samples = match (bits, input.pixel_samples()) {
        (Some(16), Some(s)) => s,
        _ => return Err(ComputeError::NoPixelData),
    };
    let min = samples.iter().copied().min().unwrap_or(0);
    let max = samples.iter().copied().max().unwrap_or(0);
    let span = u64::from(max - min);
    let out: Vec<u16> = samples
        .iter()
        .map(|&v| {
            if span == 0 {
                0
            } else {
                // round-half-up of (v - min) * 65535 / span, in integers
                let num = u64::from(v - min) * 65_535;
                ((2 * num + span) / (2 * span)) as u16
            }
        })
        .collect();
    let mut file = input.clone();
    file.set(DicomElement::pixels(&out))
        .and_then(|_| file.set(DicomElement::text(tags::SOP_INSTANCE_UID, Vr::UI, output_sop_uid)))
        .map_err(|e| ComputeError::ExecutionFailed(e.to_string()))?;
    Ok(file)
}

type JobKey = (String, String, Lfn);
type JobResult = Result<JobRecord, ComputeError>;

#[derive(Default)]
struct Pending {
    result: Mutex<Option<JobResult>>,
    done: Condvar,
}

/// Per-site computing element.
pub struct ComputeElement {
    site: String,
    catalog: Arc<Catalog>,
    storage: Arc<StorageElement>,
    clock: Arc<dyn Clock>,
    scratch: PathBuf,
    log_file: Mutex<Option<File>>,
    jobs: Mutex<Vec<JobRecord>>,
    inflight: Mutex<HashMap<JobKey, Arc<Pending>>>,
    counter: AtomicU64,
}

impl ComputeElement {
    pub fn new(catalog: Arc<Catalog>, storage: Arc<StorageElement>, clock: Arc<dyn Clock>) -> Self {
        Self {
            site: catalog.site().to_owned(),
            catalog,
            storage,
            clock,
            scratch: std::env::temp_dir(),
            log_file: Mutex::new(None),
            jobs: Mutex::default(),
            inflight: Mutex::default(),
            counter: AtomicU64::new(0),
        }
    }

    /// Appends every job record to `path` in addition to keeping it in memory.
    pub fn with_jobs_log(self, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        *self.log_file.lock() = Some(file);
        Ok(self)
    }

    /// Directory for the temporary files external executables work on.
    pub fn with_scratch(mut self, dir: impl Into<PathBuf>) -> Self {
        self.scratch = dir.into();
        self
    }

    pub fn jobs(&self) -> Vec<JobRecord> {
        self.jobs.lock().clone()
    }

    pub fn add_algorithm(
        &self,
        name: &str,
        version: &str,
        payload: &AlgorithmPayload,
    ) -> Result<Lfn, ComputeError> {
        match payload {
            AlgorithmPayload::Builtin(id) => {
                if !BUILTINS.contains(&id.as_str()) {
                    return Err(ComputeError::UnknownBuiltin(id.clone()));
                }
                let lfn = Lfn::builtin(id).expect("builtin ids are valid names");
                self.catalog
                    .register_algorithm(name, version, &lfn, &builtin_checksum(id), true)?;
                Ok(lfn)
            }
            AlgorithmPayload::Executable(bytes) => {
                let conflict = || ComputeError::VersionConflict {
                    name: name.into(),
                    version: version.into(),
                };
                let checksum = checksum_hex(bytes);
                if let Some(row) = self.catalog.algorithm(name, version) {
                    return if row.checksum == checksum {
                        Ok(row.lfn)
                    } else {
                        Err(conflict())
                    };
                }
                let lfn = Lfn::new(&self.site, Category::Algorithms, &format!("{name}-{version}"))
                    .map_err(|e| ComputeError::ExecutionFailed(e.to_string()))?;
                match self.storage.put(&lfn, bytes) {
                    Ok(_) => {}
                    // Stored by an earlier attempt that did not get to register.
                    Err(StorageError::AlreadyExists(_)) => {
                        if self.storage.stat(&lfn)?.map(|m| m.checksum) != Some(checksum.clone()) {
                            return Err(conflict());
                        }
                    }
                    Err(e) => return Err(e.into()),
                }
                self.catalog
                    .register_algorithm(name, version, &lfn, &checksum, false)?;
                Ok(lfn)
            }
        }
    }

    /// Registers an algorithm forwarded by another site's broker. An
    /// executable's blob must already be held here as a replica.
    pub fn adopt_algorithm(&self, spec: &AlgorithmSpec, checksum: &str) -> Result<(), ComputeError> {
        match &spec.entry {
            AlgorithmEntry::Builtin(id) => {
                self.add_algorithm(&spec.name, &spec.version, &AlgorithmPayload::Builtin(id.clone()))?;
            }
            AlgorithmEntry::Executable(lfn) => {
                match self.storage.stat(lfn)? {
                    Some(m) if m.checksum == checksum => {}
                    _ => {
                        return Err(ComputeError::AlgorithmNotFound {
                            name: spec.name.clone(),
                            version: spec.version.clone(),
                        })
                    }
                }
                self.catalog
                    .register_algorithm(&spec.name, &spec.version, lfn, checksum, false)?;
            }
        }
        Ok(())
    }

    /// Runs `name` `version` on a locally owned input. Concurrent calls for
    /// the same algorithm and input share one execution.
    pub fn execute(&self, name: &str, version: &str, input_lfn: &Lfn) -> JobResult {
        if input_lfn.site() != self.site {
            return Err(ComputeError::WrongSite {
                lfn: input_lfn.to_string(),
                site: self.site.clone(),
            });
        }
        let key = (name.to_owned(), version.to_owned(), input_lfn.clone());
        let (pending, leader) = {
            let mut inflight = self.inflight.lock();
            match inflight.get(&key) {
                Some(p) => (Arc::clone(p), false),
                None => {
                    let p = Arc::new(Pending::default());
                    inflight.insert(key.clone(), Arc::clone(&p));
                    (p, true)
                }
            }
        };
        if !leader {
            let mut slot = pending.result.lock();
            while slot.is_none() {
                pending.done.wait(&mut slot);
            }
            return slot.clone().expect("checked above");
        }
        let result = self.run_job(name, version, input_lfn);
        *pending.result.lock() = Some(result.clone());
        pending.done.notify_all();
        self.inflight.lock().remove(&key);
        result
    }

    fn run_job(&self, name: &str, version: &str, input_lfn: &Lfn) -> JobResult {
        let t0 = self.clock.now_ms();
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let job_id = hex64(fnv1a64(
            format!("{}:{name}:{version}:{input_lfn}:{n}", self.site).as_bytes(),
        ));
        let outcome = self.produce(name, version, input_lfn);
        let record = JobRecord {
            job_id,
            name: name.into(),
            version: version.into(),
            input_lfn: input_lfn.clone(),
            output_lfn: outcome.as_ref().ok().cloned(),
            status: if outcome.is_ok() {
                JobStatus::Done
            } else {
                JobStatus::Failed
            },
            site: self.site.clone(),
            elapsed_ms: self.clock.now_ms().saturating_sub(t0),
        };
        self.record(&record);
        outcome.map(|_| record)
    }

    fn record(&self, record: &JobRecord) {
        if let Some(f) = self.log_file.lock().as_mut() {
            if let Err(e) = writeln!(f, "{}", record.to_line()).and_then(|_| f.flush()) {
                tracing::warn!(site = %self.site, "jobs.log append failed: {e}");
            }
        }
        self.jobs.lock().push(record.clone());
    }

    fn produce(&self, name: &str, version: &str, input_lfn: &Lfn) -> Result<Lfn, ComputeError> {
        let alg = self
            .catalog
            .algorithm(name, version)
            .ok_or_else(|| ComputeError::AlgorithmNotFound {
                name: name.into(),
                version: version.into(),
            })?;
        let input = self
            .catalog
            .image_by_lfn(input_lfn)
            .filter(|i| i.kind == ImageKind::Original)
            .ok_or_else(|| ComputeError::InputNotFound(input_lfn.to_string()))?;
        let out_sop = derived_sop_uid(&input.sop_uid, name, version);
        let out_lfn = output_lfn(&self.site, name, version, &input.sop_uid)?;

        let bytes = self.storage.get(input_lfn)?;
        let file = parse_dicom(&bytes).map_err(|e| ComputeError::ExecutionFailed(e.to_string()))?;
        let output = match AlgorithmSpec::from_row(&alg).entry {
            AlgorithmEntry::Builtin(id) if id == "smf-norm" => smf_norm(&file, &out_sop)?,
            AlgorithmEntry::Builtin(id) => return Err(ComputeError::UnknownBuiltin(id)),
            AlgorithmEntry::Executable(lfn) => self.run_external(&lfn, &bytes, &out_sop)?,
        };
        let out_bytes = write_dicom(&output).map_err(|e| ComputeError::ExecutionFailed(e.to_string()))?;
        let meta = ImageMeta::from_dicom(&output)
            .map_err(|e| ComputeError::ExecutionFailed(format!("output: {e}")))?;

        let blob = match self.storage.put(&out_lfn, &out_bytes) {
            Ok(checksum) => BlobMeta {
                size: out_bytes.len() as u64,
                checksum,
            },
            Err(StorageError::AlreadyExists(_)) => self
                .storage
                .stat(&out_lfn)?
                .ok_or_else(|| StorageError::NotFound(out_lfn.clone()))?,
            Err(e) => return Err(e.into()),
        };
        match self
            .catalog
            .register_image(&meta, &out_lfn, ImageKind::Smf, Some(&input.sop_uid), &blob)
        {
            Ok(_) => Ok(out_lfn),
            // Same deterministic output derived earlier.
            Err(CatalogError::DuplicateSopUid(_)) | Err(CatalogError::DuplicateLfn(_))
                if self.catalog.image_by_lfn(&out_lfn).is_some() =>
            {
                Ok(out_lfn)
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Runs a trusted executable as `exe <input> <output>`.
    fn run_external(&self, exe: &Lfn, input: &[u8], out_sop: &str) -> Result<DicomFile, ComputeError> {
        let failed =
            |what: &str, e: &dyn std::fmt::Display| ComputeError::ExecutionFailed(format!("{what}: {e}"));
        let program = self.storage.get(exe)?;
        let dir = tempfile::Builder::new()
            .prefix("mgvo-job-")
            .tempdir_in(&self.scratch)
            .map_err(|e| failed("scratch dir", &e))?;
        let exe_path = dir.path().join("algorithm");
        let in_path = dir.path().join("input.dcm");
        let out_path = dir.path().join("output.dcm");
        write_executable(&exe_path, &program).map_err(|e| failed("install", &e))?;
        std::fs::write(&in_path, input).map_err(|e| failed("stage input", &e))?;

        let status = spawn_retrying(&exe_path, &in_path, &out_path).map_err(|e| failed("spawn", &e))?;
        if !status.success() {
            return Err(ComputeError::ExecutionFailed(match status.code() {
                Some(c) => format!("exit status {c}"),
                None => "terminated by signal".into(),
            }));
        }
        let produced = std::fs::read(&out_path).map_err(|e| failed("read output", &e))?;
        let mut file = parse_dicom(&produced).map_err(|e| failed("parse output", &e))?;
        file.set(DicomElement::text(tags::SOP_INSTANCE_UID, Vr::UI, out_sop))
            .map_err(|e| failed("output", &e))?;
        Ok(file)
    }
}

fn write_executable(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o755))?;
    }
    Ok(())
}

/// A freshly written executable can briefly report ETXTBSY while another
/// thread's fork still holds the write descriptor.
fn spawn_retrying(exe: &Path, input: &Path, output: &Path) -> std::io::Result<std::process::ExitStatus> {
    let mut attempt = 0;
    loop {
        match std::process::Command::new(exe).arg(input).arg(output).status() {
            Err(e) if e.raw_os_error() == Some(26) && attempt < 20 => {
                attempt += 1;
                std::thread::sleep(std::time::Duration::from_millis(10));
            }
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::dicom::anonymize;
    use chrono::NaiveDate;

    fn image(sop: &str, samples: &[u16]) -> DicomFile {
        DicomFile::new(vec![
            DicomElement::text(tags::SOP_INSTANCE_UID, Vr::UI, sop),
            DicomElement::text(tags::STUDY_DATE, Vr::DA, "20040110"),
            DicomElement::text(tags::PATIENT_NAME, Vr::PN, "Roe^Ann"),
            DicomElement::text(tags::PATIENT_ID, Vr::LO, "H-1"),
            DicomElement::text(tags::PATIENT_BIRTH_DATE, Vr::DA, "19500101"),
            DicomElement::text(tags::PATIENT_SEX, Vr::CS, "F"),
            DicomElement::text(tags::IMAGE_LATERALITY, Vr::CS, "R"),
            DicomElement::us(tags::ROWS, 1),
            DicomElement::us(tags::COLUMNS, samples.len() as u16),
            DicomElement::us(tags::BITS_ALLOCATED, 16),
            DicomElement::pixels(samples),
        ])
        .unwrap()
    }

    fn norm(samples: &[u16]) -> Vec<u16> {
        smf_norm(&image("1.2", samples), "9")
            .unwrap()
            .pixel_samples()
            .unwrap()
    }

    #[test]
    fn smf_norm_examples() {
        assert_eq!(norm(&[5, 5, 5]), [0, 0, 0]);
        assert_eq!(norm(&[10, 20]), [0, 65535]);
        assert_eq!(norm(&[0, 1234, 65535]), [0, 1234, 65535]);
        // 1 * 65535 / 2 = 32767.5 rounds up
        assert_eq!(norm(&[0, 1, 2]), [0, 32768, 65535]);
    }

    #[test]
    fn smf_norm_preserves_other_elements() {
        let input = image("1.2", &[3, 9]);
        let out = smf_norm(&input, "abc").unwrap();
        assert_eq!(out.sop_instance_uid(), "abc");
        for e in input.elements() {
            if e.tag != tags::SOP_INSTANCE_UID && e.tag != tags::PIXEL_DATA {
                assert_eq!(out.get(e.tag), Some(e));
            }
        }
    }

    #[test]
    fn smf_norm_requires_16_bit_pixels() {
        let mut f = image("1.2", &[1, 2]);
        f.remove(tags::PIXEL_DATA).unwrap();
        assert_eq!(smf_norm(&f, "x"), Err(ComputeError::NoPixelData));
    }

    #[test]
    fn derived_names() {
        assert_eq!(
            derived_sop_uid("1.2.3", "smf-norm", "1"),
            hex64(fnv1a64(b"1.2.3:smf-norm:1"))
        );
        assert_eq!(
            output_lfn("b", "smf-norm", "1", "1.2.3").unwrap().to_string(),
            "lfn:/mgvo/b/smf/smf-norm-1-1.2.3"
        );
    }

    #[test]
    fn job_line_round_trip() {
        let r = JobRecord {
            job_id: "00000000000000ff".into(),
            name: "smf-norm".into(),
            version: "1".into(),
            input_lfn: "lfn:/mgvo/b/images/1.2.dcm".parse().unwrap(),
            output_lfn: None,
            status: JobStatus::Failed,
            site: "b".into(),
            elapsed_ms: 12,
        };
        let line = r.to_line();
        assert_eq!(
            line,
            "00000000000000ff|smf-norm|1|lfn:/mgvo/b/images/1.2.dcm||FAILED|b|12"
        );
        assert_eq!(JobRecord::parse(&line).unwrap(), r);
        assert!(JobRecord::parse("a|b").is_err());
    }

    fn site_with_image(samples: &[u16]) -> (ComputeElement, Lfn) {
        let catalog = Arc::new(Catalog::in_memory("b"));
        let storage = Arc::new(StorageElement::in_memory("b"));
        let date = NaiveDate::from_ymd_opt(2004, 1, 10).unwrap();
        let (anon, _) = anonymize(&image("1.2.7", samples), "b", date).unwrap();
        let bytes = write_dicom(&anon).unwrap();
        let lfn = Lfn::new("b", Category::Images, "1.2.7.dcm").unwrap();
        let checksum = storage.put(&lfn, &bytes).unwrap();
        let meta = ImageMeta::from_dicom(&anon).unwrap();
        catalog
            .register_image(
                &meta,
                &lfn,
                ImageKind::Original,
                None,
                &BlobMeta {
                    size: bytes.len() as u64,
                    checksum,
                },
            )
            .unwrap();
        let ce = ComputeElement::new(catalog, storage, Arc::new(SimClock::new(0)));
        (ce, lfn)
    }

    #[test]
    fn execute_builtin_registers_one_smf_row() {
        let (ce, input) = site_with_image(&[100, 200, 300, 400]);
        ce.add_algorithm("smf-norm", "1", &AlgorithmPayload::Builtin("smf-norm".into()))
            .unwrap();
        let first = ce.execute("smf-norm", "1", &input).unwrap();
        let second = ce.execute("smf-norm", "1", &input).unwrap();
        assert_eq!(first.status, JobStatus::Done);
        assert_eq!(first.site, "b");
        assert_eq!(first.output_lfn, second.output_lfn);
        assert_ne!(first.job_id, second.job_id);
        assert_eq!(ce.catalog.count_kind(ImageKind::Smf), 1);
        let out = ce
            .catalog
            .image_by_lfn(first.output_lfn.as_ref().unwrap())
            .unwrap();
        assert_eq!(out.source_sop_uid.as_deref(), Some("1.2.7"));
        assert_eq!(out.sop_uid, derived_sop_uid("1.2.7", "smf-norm", "1"));
        let bytes = ce.storage.get(&out.lfn).unwrap();
        let px = parse_dicom(&bytes).unwrap().pixel_samples().unwrap();
        assert_eq!(px, [0, 21845, 43690, 65535]);
        assert_eq!(ce.jobs().len(), 2);
    }

    #[test]
    fn execute_errors() {
        let (ce, input) = site_with_image(&[1, 2]);
        assert!(matches!(
            ce.execute("smf-norm", "1", &input),
            Err(ComputeError::AlgorithmNotFound { .. })
        ));
        assert_eq!(ce.jobs()[0].status, JobStatus::Failed);
        ce.add_algorithm("smf-norm", "1", &AlgorithmPayload::Builtin("smf-norm".into()))
            .unwrap();
        let missing = Lfn::new("b", Category::Images, "nope").unwrap();
        assert!(matches!(
            ce.execute("smf-norm", "1", &missing),
            Err(ComputeError::InputNotFound(_))
        ));
        let foreign = Lfn::new("a", Category::Images, "x").unwrap();
        assert!(matches!(
            ce.execute("smf-norm", "1", &foreign),
            Err(ComputeError::WrongSite { .. })
        ));
        assert_eq!(
            ce.add_algorithm("x", "1", &AlgorithmPayload::Builtin("cade".into())),
            Err(ComputeError::UnknownBuiltin("cade".into()))
        );
    }

    #[test]
    fn executable_versions() {
        let (ce, _) = site_with_image(&[1, 2]);
        let a = AlgorithmPayload::Executable(b"#!/bin/sh\ncp \"$1\" \"$2\"\n".to_vec());
        let lfn = ce.add_algorithm("copy", "1", &a).unwrap();
        assert_eq!(lfn.to_string(), "lfn:/mgvo/b/algorithms/copy-1");
        assert_eq!(ce.add_algorithm("copy", "1", &a).unwrap(), lfn);
        assert!(matches!(
            ce.add_algorithm("copy", "1", &AlgorithmPayload::Executable(b"other".to_vec())),
            Err(ComputeError::VersionConflict { .. })
        ));
        assert!(ce.catalog.algorithm("copy", "1").is_some());
    }

    #[cfg(unix)]
    #[test]
    fn external_executable_contract() {
        let (ce, input) = site_with_image(&[7, 8]);
        let dir = tempfile::tempdir().unwrap();
        let ce = ce.with_scratch(dir.path());
        ce.add_algorithm(
            "copy",
            "1",
            &AlgorithmPayload::Executable(b"#!/bin/sh\ncp \"$1\" \"$2\"\n".to_vec()),
        )
        .unwrap();
        ce.add_algorithm(
            "fail",
            "1",
            &AlgorithmPayload::Executable(b"#!/bin/sh\nexit 3\n".to_vec()),
        )
        .unwrap();
        ce.add_algorithm(
            "junk",
            "1",
            &AlgorithmPayload::Executable(b"#!/bin/sh\necho hi > \"$2\"\n".to_vec()),
        )
        .unwrap();
        let job = ce.execute("copy", "1", &input).unwrap();
        let out = ce.catalog.image_by_lfn(job.output_lfn.as_ref().unwrap()).unwrap();
        assert_eq!(out.sop_uid, derived_sop_uid("1.2.7", "copy", "1"));
        assert_eq!(
            ce.execute("fail", "1", &input),
            Err(ComputeError::ExecutionFailed("exit status 3".into()))
        );
        assert!(matches!(
            ce.execute("junk", "1", &input),
            Err(ComputeError::ExecutionFailed(m)) if m.starts_with("parse output")
        ));
        // Scratch directories are cleaned up.
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn concurrent_runs_coalesce() {
        let (ce, input) = site_with_image(&[1, 5, 9]);
        ce.add_algorithm("smf-norm", "1", &AlgorithmPayload::Builtin("smf-norm".into()))
            .unwrap();
        let results: Vec<JobResult> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..8)
                .map(|_| s.spawn(|| ce.execute("smf-norm", "1", &input)))
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let outputs: std::collections::HashSet<_> = results
            .iter()
            .map(|r| r.as_ref().unwrap().output_lfn.clone())
            .collect();
        assert_eq!(outputs.len(), 1);
        assert_eq!(ce.catalog.count_kind(ImageKind::Smf), 1);
        assert!(ce.jobs().len() <= 8);
    }

    #[test]
    fn jobs_log_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jobs.log");
        let (ce, input) = site_with_image(&[1, 5]);
        let ce = ce.with_jobs_log(&path).unwrap();
        ce.add_algorithm("smf-norm", "1", &AlgorithmPayload::Builtin("smf-norm".into()))
            .unwrap();
        let job = ce.execute("smf-norm", "1", &input).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{}\n", job.to_line()));
    }
}
