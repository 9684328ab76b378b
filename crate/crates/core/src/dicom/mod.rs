//! A closed subset of DICOM Part-10: 128-byte preamble, `DICM` magic, then
//! explicit-VR little-endian data elements in ascending tag order.
//!
//! Only the VRs in [`Vr`] are understood. Elements with unlisted tags but a
//! supported VR are kept verbatim so files survive a read/write cycle.

mod anonymize;
mod codec;

use std::fmt;

use thiserror::Error;

pub use anonymize::{
    age_in_years, anonymize, format_da, parse_age_string, parse_da, pseudonym, AnonRecord, AnonymizeError,
    ANON_NAME,
};
pub use codec::{parse_dicom, write_dicom, MAGIC, PREAMBLE_LEN};

/// Largest value length the 4-byte length form can carry (0xFFFFFFFF is the
/// undefined-length marker and is not supported).
pub const MAX_VALUE_LEN: usize = 0xFFFF_FFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DicomTag {
    pub group: u16,
    pub element: u16,
}

impl DicomTag {
    pub const fn new(group: u16, element: u16) -> Self {
        Self { group, element }
    }
}

impl fmt::Display for DicomTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.group, self.element)
    }
}

pub mod tags {
    use super::DicomTag;

    pub const SOP_INSTANCE_UID: DicomTag = DicomTag::new(0x0008, 0x0018);
    pub const STUDY_DATE: DicomTag = DicomTag::new(0x0008, 0x0020);
    pub const PATIENT_NAME: DicomTag = DicomTag::new(0x0010, 0x0010);
    pub const PATIENT_ID: DicomTag = DicomTag::new(0x0010, 0x0020);
    pub const PATIENT_BIRTH_DATE: DicomTag = DicomTag::new(0x0010, 0x0030);
    pub const PATIENT_SEX: DicomTag = DicomTag::new(0x0010, 0x0040);
    pub const PATIENT_AGE: DicomTag = DicomTag::new(0x0010, 0x1010);
    /// Set to "YES" by [`anonymize`](super::anonymize); makes re-anonymization a no-op.
    pub const PATIENT_IDENTITY_REMOVED: DicomTag = DicomTag::new(0x0012, 0x0062);
    pub const IMAGE_LATERALITY: DicomTag = DicomTag::new(0x0020, 0x0062);
    pub const ROWS: DicomTag = DicomTag::new(0x0028, 0x0010);
    pub const COLUMNS: DicomTag = DicomTag::new(0x0028, 0x0011);
    pub const BITS_ALLOCATED: DicomTag = DicomTag::new(0x0028, 0x0100);
    pub const PIXEL_DATA: DicomTag = DicomTag::new(0x7FE0, 0x0010);
}

/// The fixed tag set with its required VR and keyword.
pub const KNOWN_TAGS: &[(DicomTag, Vr, &str)] = &[
    (tags::SOP_INSTANCE_UID, Vr::UI, "SOPInstanceUID"),
    (tags::STUDY_DATE, Vr::DA, "StudyDate"),
    (tags::PATIENT_NAME, Vr::PN, "PatientName"),
    (tags::PATIENT_ID, Vr::LO, "PatientID"),
    (tags::PATIENT_BIRTH_DATE, Vr::DA, "PatientBirthDate"),
    (tags::PATIENT_SEX, Vr::CS, "PatientSex"),
    (tags::PATIENT_AGE, Vr::AS, "PatientAge"),
    (tags::IMAGE_LATERALITY, Vr::CS, "ImageLaterality"),
    (tags::ROWS, Vr::US, "Rows"),
    (tags::COLUMNS, Vr::US, "Columns"),
    (tags::BITS_ALLOCATED, Vr::US, "BitsAllocated"),
    (tags::PIXEL_DATA, Vr::OW, "PixelData"),
];

pub fn known_vr(tag: DicomTag) -> Option<Vr> {
    KNOWN_TAGS
        .iter()
        .find(|(t, _, _)| *t == tag)
        .map(|(_, vr, _)| *vr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Vr {
    PN,
    LO,
    CS,
    DA,
    AS,
    UI,
    US,
    OW,
}

impl Vr {
    pub fn from_code(code: [u8; 2]) -> Option<Self> {
        Some(match &code {
            b"PN" => Vr::PN,
            b"LO" => Vr::LO,
            b"CS" => Vr::CS,
            b"DA" => Vr::DA,
            b"AS" => Vr::AS,
            b"UI" => Vr::UI,
            b"US" => Vr::US,
            b"OW" => Vr::OW,
            _ => return None,
        })
    }

    pub fn code(self) -> [u8; 2] {
        match self {
            Vr::PN => *b"PN",
            Vr::LO => *b"LO",
            Vr::CS => *b"CS",
            Vr::DA => *b"DA",
            Vr::AS => *b"AS",
            Vr::UI => *b"UI",
            Vr::US => *b"US",
            Vr::OW => *b"OW",
        }
    }

    /// Byte used to pad odd-length values.
    pub fn pad_byte(self) -> u8 {
        match self {
            Vr::UI | Vr::OW | Vr::US => 0x00,
            Vr::PN | Vr::LO | Vr::CS | Vr::DA | Vr::AS => b' ',
        }
    }

    pub fn is_text(self) -> bool {
        !matches!(self, Vr::US | Vr::OW)
    }

    /// OW uses the 4-byte length form with a 2-byte reserved field.
    pub fn has_long_length(self) -> bool {
        matches!(self, Vr::OW)
    }
}

impl fmt::Display for Vr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let code = self.code();
        write!(f, "{}{}", code[0] as char, code[1] as char)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DicomElement {
    pub tag: DicomTag,
    pub vr: Vr,
    pub value: Vec<u8>,
}

impl DicomElement {
    pub fn new(tag: DicomTag, vr: Vr, value: Vec<u8>) -> Self {
        Self { tag, vr, value }
    }

    /// Text value padded to even length with the VR's padding byte.
    pub fn text(tag: DicomTag, vr: Vr, text: &str) -> Self {
        let mut value = text.as_bytes().to_vec();
        if value.len() % 2 == 1 {
            value.push(vr.pad_byte());
        }
        Self { tag, vr, value }
    }

    pub fn us(tag: DicomTag, v: u16) -> Self {
        Self {
            tag,
            vr: Vr::US,
            value: v.to_le_bytes().to_vec(),
        }
    }

    pub fn pixels(samples: &[u16]) -> Self {
        let value = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        Self {
            tag: tags::PIXEL_DATA,
            vr: Vr::OW,
            value,
        }
    }

    /// Value with trailing padding (space or NUL) removed.
    pub fn text_value(&self) -> Option<&str> {
        let s = std::str::from_utf8(&self.value).ok()?;
        Some(s.trim_end_matches([' ', '\0']))
    }

    pub fn us_value(&self) -> Option<u16> {
        match self.value.as_slice() {
            [a, b] => Some(u16::from_le_bytes([*a, *b])),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DicomError {
    #[error("missing DICM magic at offset 128")]
    MissingMagic,
    #[error("unsupported VR {0:?}")]
    UnsupportedVR(String),
    #[error("truncated element at offset {0}")]
    Truncated(usize),
    #[error("tag {0} is not strictly ascending")]
    NonMonotonicTag(DicomTag),
    #[error("pixel data does not match Rows x Columns x 2 with BitsAllocated=16")]
    PixelGeometryMismatch,
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

/// An ordered set of data elements satisfying the subset's invariants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DicomFile {
    elements: Vec<DicomElement>,
}

impl DicomFile {
    /// Builds a file from elements in any order; the result is sorted by tag.
    pub fn new(mut elements: Vec<DicomElement>) -> Result<Self, DicomError> {
        elements.sort_by_key(|e| e.tag);
        let file = Self { elements };
        file.validate()?;
        Ok(file)
    }

    /// Elements must already be in ascending order; used by the parser.
    pub(crate) fn from_ordered(elements: Vec<DicomElement>) -> Result<Self, DicomError> {
        let file = Self { elements };
        file.validate()?;
        Ok(file)
    }

    pub fn elements(&self) -> &[DicomElement] {
        &self.elements
    }

    pub fn get(&self, tag: DicomTag) -> Option<&DicomElement> {
        self.elements
            .binary_search_by_key(&tag, |e| e.tag)
            .ok()
            .map(|i| &self.elements[i])
    }

    pub fn text(&self, tag: DicomTag) -> Option<&str> {
        self.get(tag).and_then(DicomElement::text_value)
    }

    pub fn sop_instance_uid(&self) -> &str {
        self.text(tags::SOP_INSTANCE_UID).unwrap_or_default()
    }

    /// Inserts or replaces the element with the same tag.
    pub fn set(&mut self, element: DicomElement) -> Result<(), DicomError> {
        let mut next = self.clone();
        match next.elements.binary_search_by_key(&element.tag, |e| e.tag) {
            Ok(i) => next.elements[i] = element,
            Err(i) => next.elements.insert(i, element),
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn remove(&mut self, tag: DicomTag) -> Result<Option<DicomElement>, DicomError> {
        let Ok(i) = self.elements.binary_search_by_key(&tag, |e| e.tag) else {
            return Ok(None);
        };
        let mut next = self.clone();
        let removed = next.elements.remove(i);
        next.validate()?;
        *self = next;
        Ok(Some(removed))
    }

    /// Pixel samples as 16-bit unsigned values, if PixelData is present.
    pub fn pixel_samples(&self) -> Option<Vec<u16>> {
        let px = self.get(tags::PIXEL_DATA)?;
        Some(
            px.value
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect(),
        )
    }

    fn validate(&self) -> Result<(), DicomError> {
        for pair in self.elements.windows(2) {
            if pair[1].tag <= pair[0].tag {
                return Err(DicomError::NonMonotonicTag(pair[1].tag));
            }
        }
        for e in &self.elements {
            if e.value.len() % 2 != 0 {
                return Err(DicomError::InvariantViolation(format!(
                    "{} has odd value length {}",
                    e.tag,
                    e.value.len()
                )));
            }
            if e.value.len() > MAX_VALUE_LEN {
                return Err(DicomError::InvariantViolation(format!(
                    "{} value too long",
                    e.tag
                )));
            }
            if !e.vr.has_long_length() && e.value.len() > usize::from(u16::MAX) {
                return Err(DicomError::InvariantViolation(format!(
                    "{} exceeds the 2-byte length form",
                    e.tag
                )));
            }
            if let Some(vr) = known_vr(e.tag) {
                if vr != e.vr {
                    return Err(DicomError::InvariantViolation(format!(
                        "{} must have VR {vr}, found {}",
                        e.tag, e.vr
                    )));
                }
            }
        }
        if self.get(tags::SOP_INSTANCE_UID).is_none() {
            return Err(DicomError::InvariantViolation(
                "SOPInstanceUID (0008,0018) missing".into(),
            ));
        }
        if let Some(px) = self.get(tags::PIXEL_DATA) {
            let dim = |t| self.get(t).and_then(DicomElement::us_value);
            match (dim(tags::ROWS), dim(tags::COLUMNS), dim(tags::BITS_ALLOCATED)) {
                (Some(rows), Some(cols), Some(16))
                    if px.value.len() == usize::from(rows) * usize::from(cols) * 2 => {}
                _ => return Err(DicomError::PixelGeometryMismatch),
            }
        }
        Ok(())
    }
}
