use super::{AlgorithmRow, ImageRow, PatientRow};
use crate::dicom::{format_da, parse_da};
use crate::query::ImageKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Patient(PatientRow),
    Image(ImageRow),
    Algorithm(AlgorithmRow),
}

impl Record {
    pub fn to_line(&self) -> String {
        match self {
            Record::Patient(p) => format!("P|{}|{}|{}", p.pseudonym, p.sex, p.age_years),
            Record::Image(i) => format!(
                "I|{}|{}|{}|{}|{}|{}|{}|{}|{}",
                i.sop_uid,
                i.lfn,
                i.pseudonym,
                i.laterality,
                format_da(i.study_date),
                i.kind,
                i.source_sop_uid.as_deref().unwrap_or(""),
                i.size_bytes,
                i.checksum
            ),
            Record::Algorithm(a) => format!(
                "A|{}|{}|{}|{}|{}",
                a.name, a.version, a.lfn, a.checksum, a.builtin
            ),
        }
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split('|').collect();
        let bad = |what: &str| format!("bad {what} in {line:?}");
        let parse_field = |s: &str, what: &str| -> Result<String, String> {
            if super::valid_key(s) {
                Ok(s.to_owned())
            } else {
                Err(bad(what))
            }
        };
        match fields.as_slice() {
            ["P", pseudonym, sex, age] => Ok(Record::Patient(PatientRow {
                pseudonym: parse_field(pseudonym, "pseudonym")?,
                sex: sex.parse().map_err(|_| bad("sex"))?,
                age_years: age.parse().map_err(|_| bad("age"))?,
            })),
            ["I", sop, lfn, pseudonym, lat, date, kind, source, size, checksum] => {
                let kind: ImageKind = kind.parse().map_err(|_| bad("kind"))?;
                Ok(Record::Image(ImageRow {
                    sop_uid: parse_field(sop, "sop uid")?,
                    lfn: lfn.parse().map_err(|_| bad("lfn"))?,
                    pseudonym: parse_field(pseudonym, "pseudonym")?,
                    laterality: lat.parse().map_err(|_| bad("laterality"))?,
                    study_date: parse_da(date).ok_or_else(|| bad("date"))?,
                    kind,
                    source_sop_uid: if source.is_empty() {
                        None
                    } else {
                        Some(parse_field(source, "source")?)
                    },
                    size_bytes: size.parse().map_err(|_| bad("size"))?,
                    checksum: parse_field(checksum, "checksum")?,
                }))
            }
            ["A", name, version, lfn, checksum, builtin] => Ok(Record::Algorithm(AlgorithmRow {
                name: parse_field(name, "name")?,
                version: parse_field(version, "version")?,
                lfn: lfn.parse().map_err(|_| bad("lfn"))?,
                checksum: parse_field(checksum, "checksum")?,
                builtin: builtin.parse().map_err(|_| bad("builtin flag"))?,
            })),
            _ => Err(format!("unrecognized record {line:?}")),
        }
    }
}
