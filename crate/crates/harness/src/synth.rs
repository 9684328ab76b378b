//! Synthetic mammography holdings, ingested through the real ADD path.

use chrono::{Datelike, Duration, NaiveDate};
use mgvo::dicom::{age_in_years, format_da, tags, write_dicom, DicomElement, DicomFile, Vr};
use mgvo::fnv1a64;
use mgvo::vo::{AddReceipt, Client};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::net::sim_addr;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSpec {
    pub name: String,
    pub patients: usize,
    pub images: usize,
}

impl SiteSpec {
    pub fn new(name: &str, patients: usize, images: usize) -> Self {
        Self {
            name: name.to_owned(),
            patients,
            images,
        }
    }
}

/// A patient as the hospital knows them, before anonymization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patient {
    pub id: String,
    pub sex: char,
    pub birth: NaiveDate,
}

/// One synthetic acquisition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Acquisition {
    pub sop_uid: String,
    pub patient: usize,
    pub laterality: char,
    pub study_date: NaiveDate,
    pub pixels: [u16; 16],
}

/// The hospital-side data of one site, in ingestion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Holdings {
    pub patients: Vec<Patient>,
    pub acquisitions: Vec<Acquisition>,
}

pub fn dicom_bytes(patient: &Patient, acq: &Acquisition) -> Vec<u8> {
    let text = |tag, vr, v: &str| DicomElement::text(tag, vr, v);
    let file = DicomFile::new(vec![
        text(tags::SOP_INSTANCE_UID, Vr::UI, &acq.sop_uid),
        text(tags::STUDY_DATE, Vr::DA, &format_da(acq.study_date)),
        text(tags::PATIENT_NAME, Vr::PN, &format!("Patient^{}", patient.id)),
        text(tags::PATIENT_ID, Vr::LO, &patient.id),
        text(tags::PATIENT_BIRTH_DATE, Vr::DA, &format_da(patient.birth)),
        text(tags::PATIENT_SEX, Vr::CS, &patient.sex.to_string()),
        text(tags::IMAGE_LATERALITY, Vr::CS, &acq.laterality.to_string()),
        DicomElement::us(tags::ROWS, 4),
        DicomElement::us(tags::COLUMNS, 4),
        DicomElement::us(tags::BITS_ALLOCATED, 16),
        DicomElement::pixels(&acq.pixels),
    ])
    .expect("synthetic files satisfy the subset invariants");
    write_dicom(&file).expect("valid file encodes")
}

fn site_rng(seed: u64, site: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(site.as_bytes()))
}

fn random_date(rng: &mut ChaCha8Rng, from: NaiveDate, days: i64) -> NaiveDate {
    from + Duration::days(rng.gen_range(0..days))
}

/// Birth date giving exactly `age` completed years on `on`.
fn birth_for_age(rng: &mut ChaCha8Rng, age: u32, on: NaiveDate) -> NaiveDate {
    let anniversary = on
        .with_year(on.year() - age as i32)
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(on.year() - age as i32, 2, 28).unwrap());
    loop {
        let birth = anniversary - Duration::days(rng.gen_range(0..365));
        if age_in_years(birth, on) == Some(age) {
            return birth;
        }
    }
}

/// Deterministic holdings for `spec`: sex and laterality uniform, age at
/// first study uniform in 30..=80, every patient with at least one image.
pub fn generate_holdings(seed: u64, spec: &SiteSpec) -> Holdings {
    assert!(
        spec.images >= spec.patients && (spec.patients > 0 || spec.images == 0),
        "every patient needs an image"
    );
    let mut rng = site_rng(seed, &spec.name);
    let start = NaiveDate::from_ymd_opt(1998, 1, 1).unwrap();
    let uid_root = fnv1a64(format!("{seed}:{}", spec.name).as_bytes()) % 1_000_000;
    let mut patients = Vec::with_capacity(spec.patients);
    let mut first_study = Vec::with_capacity(spec.patients);
    for i in 0..spec.patients {
        let study = random_date(&mut rng, start, 8 * 365);
        let age = rng.gen_range(30..=80);
        patients.push(Patient {
            id: format!("{}-{i:05}", spec.name.to_uppercase()),
            sex: if rng.gen_bool(0.5) { 'F' } else { 'M' },
            birth: birth_for_age(&mut rng, age, study),
        });
        first_study.push(study);
    }
    let mut acquisitions = Vec::with_capacity(spec.images);
    for n in 0..spec.images {
        // The first image of each patient comes first, at the first study.
        let (patient, study_date) = if n < spec.patients {
            (n, first_study[n])
        } else {
            let p = rng.gen_range(0..spec.patients);
            (p, first_study[p] + Duration::days(rng.gen_range(0..1500)))
        };
        let mut pixels = [0u16; 16];
        rng.fill(&mut pixels[..]);
        acquisitions.push(Acquisition {
            sop_uid: format!("1.2.826.0.1.{uid_root}.{n}"),
            patient,
            laterality: if rng.gen_bool(0.5) { 'L' } else { 'R' },
            study_date,
            pixels,
        });
    }
    Holdings {
        patients,
        acquisitions,
    }
}

/// Ingests holdings at `site` through the client's ADD requests.
pub fn ingest(client: &Client, site: &str, holdings: &Holdings) -> Result<Vec<AddReceipt>, HarnessError> {
    let addr = sim_addr(site);
    holdings
        .acquisitions
        .iter()
        .map(|a| Ok(client.add(&addr, &dicom_bytes(&holdings.patients[a.patient], a))?))
        .collect()
}
