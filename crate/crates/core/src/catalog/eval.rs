use std::ops::RangeInclusive;

use chrono::NaiveDate;

use super::{ImageRow, PatientRow, State};
use crate::dicom::format_da;
use crate::query::{Attribute, FormalQuery, ImageKind, Laterality, Literal, Op, Row, Sex, Target};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatientFilter {
    pub pseudonym: Option<String>,
    pub sex: Option<Sex>,
    pub age: Option<RangeInclusive<u32>>,
}

impl PatientFilter {
    pub fn matches(&self, p: &PatientRow) -> bool {
        self.pseudonym.as_ref().is_none_or(|id| *id == p.pseudonym)
            && self.sex.is_none_or(|s| s == p.sex)
            && self.age.as_ref().is_none_or(|r| r.contains(&p.age_years))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImageFilter {
    pub laterality: Option<Laterality>,
    pub kind: Option<ImageKind>,
    pub study_date: Option<RangeInclusive<NaiveDate>>,
}

impl ImageFilter {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn matches(&self, i: &ImageRow) -> bool {
        self.laterality.is_none_or(|l| l == i.laterality)
            && self.kind.is_none_or(|k| k == i.kind)
            && self.study_date.as_ref().is_none_or(|r| r.contains(&i.study_date))
    }
}

/// The store's native form of a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NativeQuery {
    pub target: Target,
    pub patient: PatientFilter,
    pub image: ImageFilter,
}

/// Lowers a formal query into per-table filters.
pub fn translate(q: &FormalQuery) -> NativeQuery {
    let mut native = NativeQuery {
        target: q.target(),
        patient: PatientFilter::default(),
        image: ImageFilter::default(),
    };
    for p in q.conjuncts() {
        match (p.attr, &p.op) {
            (Attribute::PatientId, Op::Eq(Literal::Text(id))) => native.patient.pseudonym = Some(id.clone()),
            (Attribute::PatientSex, Op::Eq(Literal::Sex(s))) => native.patient.sex = Some(*s),
            (Attribute::PatientAge, Op::Eq(Literal::Age(a))) => native.patient.age = Some(*a..=*a),
            (Attribute::PatientAge, Op::Between(Literal::Age(lo), Literal::Age(hi))) => {
                native.patient.age = Some(*lo..=*hi)
            }
            (Attribute::ImageLaterality, Op::Eq(Literal::Laterality(l))) => {
                native.image.laterality = Some(*l)
            }
            (Attribute::ImageKind, Op::Eq(Literal::Kind(k))) => native.image.kind = Some(*k),
            (Attribute::ImageStudyDate, Op::Eq(Literal::Date(d))) => native.image.study_date = Some(*d..=*d),
            (Attribute::ImageStudyDate, Op::Between(Literal::Date(lo), Literal::Date(hi))) => {
                native.image.study_date = Some(*lo..=*hi)
            }
            // FormalQuery::new rejects every other combination.
            _ => unreachable!("validated predicate {p:?}"),
        }
    }
    native
}

fn patient_row(site: &str, p: &PatientRow) -> Row {
    Row::for_target(
        Target::Patients,
        vec![
            site.to_owned(),
            p.pseudonym.clone(),
            p.sex.to_string(),
            p.age_years.to_string(),
        ],
    )
}

fn image_row(site: &str, i: &ImageRow) -> Row {
    Row::for_target(
        Target::Images,
        vec![
            site.to_owned(),
            i.sop_uid.clone(),
            i.lfn.to_string(),
            i.kind.to_string(),
            i.laterality.to_string(),
            format_da(i.study_date),
            i.pseudonym.clone(),
        ],
    )
}

pub(super) fn execute(q: &NativeQuery, state: &State, site: &str) -> Vec<Row> {
    // Candidate patients, in pseudonym order. A pseudonym predicate turns
    // the scan into a point lookup.
    let candidates: Box<dyn Iterator<Item = &PatientRow>> = match &q.patient.pseudonym {
        Some(id) => Box::new(state.patients.get(id).into_iter()),
        None => Box::new(state.patients.values()),
    };
    let images_of = |p: &PatientRow| {
        state
            .images_by_patient
            .get(&p.pseudonym)
            .into_iter()
            .flatten()
            .filter_map(|sop| state.images.get(sop))
    };
    match q.target {
        Target::Patients => candidates
            .filter(|p| q.patient.matches(p))
            .filter(|p| q.image.is_empty() || images_of(p).any(|i| q.image.matches(i)))
            .map(|p| patient_row(site, p))
            .collect(),
        Target::Images => {
            if q.patient.pseudonym.is_some() {
                candidates
                    .filter(|p| q.patient.matches(p))
                    .flat_map(|p| images_of(p).filter(|i| q.image.matches(i)))
                    .map(|i| image_row(site, i))
                    .collect()
            } else {
                state
                    .images
                    .values()
                    .filter(|i| q.image.matches(i))
                    .filter(|i| {
                        state
                            .patients
                            .get(&i.pseudonym)
                            .is_some_and(|p| q.patient.matches(p))
                    })
                    .map(|i| image_row(site, i))
                    .collect()
            }
        }
    }
}
