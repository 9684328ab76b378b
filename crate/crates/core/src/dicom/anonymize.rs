use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use super::{tags, DicomElement, DicomError, DicomFile, Vr};
use crate::hash::{fnv1a64, hex64};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonRecord {
    pub original_patient_id: String,
    pub pseudonym: String,
    pub site_salt: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnonymizeError {
    #[error("PatientID (0010,0020) missing")]
    MissingPatientId,
    #[error("PatientBirthDate {0:?} is not a valid YYYYMMDD date on or before the study date")]
    InvalidBirthDate(String),
    #[error(transparent)]
    Dicom(#[from] DicomError),
}

pub const ANON_NAME: &str = "ANON";

/// `hex64(fnv1a64(salt ":" patient_id))`. Keyed but not cryptographic.
pub fn pseudonym(site_salt: &str, patient_id: &str) -> String {
    hex64(fnv1a64(format!("{site_salt}:{patient_id}").as_bytes()))
}

/// Completed years between `birth` and `on`.
pub fn age_in_years(birth: NaiveDate, on: NaiveDate) -> Option<u32> {
    if on < birth {
        return None;
    }
    let mut years = on.year() - birth.year();
    if (on.month(), on.day()) < (birth.month(), birth.day()) {
        years -= 1;
    }
    u32::try_from(years).ok()
}

pub fn parse_da(s: &str) -> Option<NaiveDate> {
    if s.len() != 8 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y%m%d").ok()
}

pub fn format_da(d: NaiveDate) -> String {
    d.format("%Y%m%d").to_string()
}

/// Parses an AS value of the form "NNNY".
pub fn parse_age_string(s: &str) -> Option<u32> {
    let digits = s.strip_suffix('Y')?;
    if digits.len() != 3 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Replaces identifying attributes at ingress.
///
/// PatientName becomes "ANON", PatientID becomes the site-keyed pseudonym,
/// PatientBirthDate is dropped and PatientAge is set to the completed years
/// at `study_date`. The file is then marked with PatientIdentityRemoved
/// "YES"; a marked file keeps its pseudonym, which makes the operation
/// idempotent.
pub fn anonymize(
    file: &DicomFile,
    site_salt: &str,
    study_date: NaiveDate,
) -> Result<(DicomFile, AnonRecord), AnonymizeError> {
    let patient_id = file
        .text(tags::PATIENT_ID)
        .ok_or(AnonymizeError::MissingPatientId)?
        .to_owned();
    let already = file.text(tags::PATIENT_IDENTITY_REMOVED) == Some("YES");
    let pseudo = if already {
        patient_id.clone()
    } else {
        pseudonym(site_salt, &patient_id)
    };

    let mut out = file.clone();
    out.set(DicomElement::text(tags::PATIENT_NAME, Vr::PN, ANON_NAME))?;
    out.set(DicomElement::text(tags::PATIENT_ID, Vr::LO, &pseudo))?;
    if let Some(raw) = file.text(tags::PATIENT_BIRTH_DATE) {
        let age = parse_da(raw)
            .and_then(|birth| age_in_years(birth, study_date))
            .filter(|&a| a <= 999)
            .ok_or_else(|| AnonymizeError::InvalidBirthDate(raw.to_owned()))?;
        out.set(DicomElement::text(
            tags::PATIENT_AGE,
            Vr::AS,
            &format!("{age:03}Y"),
        ))?;
        out.remove(tags::PATIENT_BIRTH_DATE)?;
    }
    out.set(DicomElement::text(tags::PATIENT_IDENTITY_REMOVED, Vr::CS, "YES"))?;

    Ok((
        out,
        AnonRecord {
            original_patient_id: patient_id,
            pseudonym: pseudo,
            site_salt: site_salt.to_owned(),
        },
    ))
}
