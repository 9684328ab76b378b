//! Formal query language and the XML result-set format exchanged between
//! sites.
//!
//! A query is a conjunction of attribute predicates over patients or images:
//!
//! ```text
//! SELECT images WHERE patient.age BETWEEN 50 AND 60 AND image.laterality = 'L'
//! ```
//!
//! Queries have one canonical text form (see [`serialize_query`]), which is
//! what travels on the wire.

mod parse;
mod result;
mod xml;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use thiserror::Error;

pub use parse::{parse_query, serialize_query};
pub use result::{
    merge_results, MergeError, ResultSet, Row, SiteOutcome, SiteResult, IMAGE_FIELDS, PATIENT_FIELDS,
};
pub use xml::{parse_resultset, parse_site_result, serialize_resultset, serialize_site_result, XmlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Patients,
    Images,
}

impl Target {
    pub fn keyword(self) -> &'static str {
        match self {
            Target::Patients => "PATIENTS",
            Target::Images => "IMAGES",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Federated,
    LocalOnly,
}

/// Declared in name order so the derived `Ord` sorts conjuncts canonically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    ImageKind,
    ImageLaterality,
    ImageStudyDate,
    PatientAge,
    PatientId,
    PatientSex,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::ImageKind,
        Attribute::ImageLaterality,
        Attribute::ImageStudyDate,
        Attribute::PatientAge,
        Attribute::PatientId,
        Attribute::PatientSex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::ImageKind => "image.kind",
            Attribute::ImageLaterality => "image.laterality",
            Attribute::ImageStudyDate => "image.study_date",
            Attribute::PatientAge => "patient.age",
            Attribute::PatientId => "patient.id",
            Attribute::PatientSex => "patient.sex",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn is_image(self) -> bool {
        matches!(
            self,
            Attribute::ImageKind | Attribute::ImageLaterality | Attribute::ImageStudyDate
        )
    }

    pub fn allows_between(self) -> bool {
        matches!(self, Attribute::PatientAge | Attribute::ImageStudyDate)
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s { $($text => Ok($name::$variant),)+ _ => Err(()) }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

text_enum!(Sex { F => "F", M => "M" });
text_enum!(Laterality { L => "L", R => "R" });
text_enum!(ImageKind { Original => "ORIGINAL", Smf => "SMF" });

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Literal {
    Text(String),
    Sex(Sex),
    Laterality(Laterality),
    Kind(ImageKind),
    Age(u32),
    Date(NaiveDate),
}

impl Literal {
    /// Parses a literal in `attr`'s value domain.
    pub fn for_attribute(attr: Attribute, raw: &str) -> Option<Self> {
        match attr {
            Attribute::PatientId => valid_id_literal(raw).then(|| Literal::Text(raw.to_owned())),
            Attribute::PatientSex => raw.parse().ok().map(Literal::Sex),
            Attribute::ImageLaterality => raw.parse().ok().map(Literal::Laterality),
            Attribute::ImageKind => raw.parse().ok().map(Literal::Kind),
            Attribute::PatientAge => parse_age(raw).map(Literal::Age),
            Attribute::ImageStudyDate => crate::dicom::parse_da(raw).map(Literal::Date),
        }
    }

    fn matches_attribute(&self, attr: Attribute) -> bool {
        match (attr, self) {
            (Attribute::PatientId, Literal::Text(t)) => valid_id_literal(t),
            (Attribute::PatientSex, Literal::Sex(_))
            | (Attribute::ImageLaterality, Literal::Laterality(_))
            | (Attribute::ImageKind, Literal::Kind(_))
            | (Attribute::PatientAge, Literal::Age(_))
            | (Attribute::ImageStudyDate, Literal::Date(_)) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Text(t) => f.write_str(t),
            Literal::Sex(s) => s.fmt(f),
            Literal::Laterality(l) => l.fmt(f),
            Literal::Kind(k) => k.fmt(f),
            Literal::Age(a) => write!(f, "{a}"),
            Literal::Date(d) => f.write_str(&crate::dicom::format_da(*d)),
        }
    }
}

fn parse_age(raw: &str) -> Option<u32> {
    if raw.is_empty() || raw.len() > 3 || !raw.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    raw.parse().ok()
}

/// Patient id literals: non-empty, printable, no quote or pipe.
fn valid_id_literal(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| !c.is_control() && c != '\'' && c != '|')
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    Eq(Literal),
    /// Inclusive on both ends.
    Between(Literal, Literal),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate {
    pub attr: Attribute,
    pub op: Op,
}

impl Predicate {
    pub fn eq(attr: Attribute, literal: Literal) -> Self {
        Self {
            attr,
            op: Op::Eq(literal),
        }
    }

    pub fn between(attr: Attribute, lo: Literal, hi: Literal) -> Self {
        Self {
            attr,
            op: Op::Between(lo, hi),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("syntax error at byte {position}: {message}")]
    SyntaxError { position: usize, message: String },
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("attribute {0} appears more than once")]
    DuplicateAttribute(String),
    #[error("{literal:?} is outside the domain of {attr}")]
    DomainError { attr: String, literal: String },
    #[error("range lower bound {lo} exceeds upper bound {hi}")]
    RangeInverted { lo: String, hi: String },
    #[error("query has no conjuncts")]
    Empty,
}

/// A validated conjunctive query. Conjuncts are kept sorted by attribute
/// name, so two queries with the same meaning compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FormalQuery {
    target: Target,
    conjuncts: Vec<Predicate>,
    scope: Scope,
}

impl FormalQuery {
    pub fn new(target: Target, mut conjuncts: Vec<Predicate>, scope: Scope) -> Result<Self, QueryError> {
        if conjuncts.is_empty() {
            return Err(QueryError::Empty);
        }
        conjuncts.sort_by_key(|p| p.attr);
        for pair in conjuncts.windows(2) {
            if pair[0].attr == pair[1].attr {
                return Err(QueryError::DuplicateAttribute(pair[0].attr.name().into()));
            }
        }
        for p in &conjuncts {
            check_predicate(p)?;
        }
        Ok(Self {
            target,
            conjuncts,
            scope,
        })
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn conjuncts(&self) -> &[Predicate] {
        &self.conjuncts
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn with_scope(&self, scope: Scope) -> Self {
        Self {
            scope,
            ..self.clone()
        }
    }

    pub fn predicate(&self, attr: Attribute) -> Option<&Predicate> {
        self.conjuncts.iter().find(|p| p.attr == attr)
    }
}

impl fmt::Display for FormalQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_query(self))
    }
}

impl FromStr for FormalQuery {
    type Err = QueryError;
    fn from_str(s: &str) -> Result<Self, QueryError> {
        parse_query(s)
    }
}

fn check_predicate(p: &Predicate) -> Result<(), QueryError> {
    let domain = |lit: &Literal| {
        if lit.matches_attribute(p.attr) {
            Ok(())
        } else {
            Err(QueryError::DomainError {
                attr: p.attr.name().into(),
                literal: lit.to_string(),
            })
        }
    };
    match &p.op {
        Op::Eq(lit) => domain(lit),
        Op::Between(lo, hi) => {
            if !p.attr.allows_between() {
                return Err(QueryError::DomainError {
                    attr: p.attr.name().into(),
                    literal: format!("BETWEEN {lo} AND {hi}"),
                });
            }
            domain(lo)?;
            domain(hi)?;
            let inverted = match (lo, hi) {
                (Literal::Age(a), Literal::Age(b)) => a > b,
                (Literal::Date(a), Literal::Date(b)) => a > b,
                _ => false,
            };
            if inverted {
                return Err(QueryError::RangeInverted {
                    lo: lo.to_string(),
                    hi: hi.to_string(),
                });
            }
            Ok(())
        }
    }
}

/// 64-bit query identifier, rendered as 16 lowercase hex characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryId(pub u64);

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for QueryId {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        if !crate::hash::is_hex16(s) {
            return Err(());
        }
        u64::from_str_radix(s, 16).map(QueryId).map_err(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attribute_order_is_name_order() {
        let mut names: Vec<_> = Attribute::ALL.iter().map(|a| a.name()).collect();
        let sorted = {
            let mut s = names.clone();
            s.sort();
            s
        };
        assert_eq!(names, sorted);
        names.dedup();
        assert_eq!(names.len(), 6);
    }

    #[test]
    fn duplicate_attribute_rejected() {
        let p = Predicate::eq(Attribute::PatientSex, Literal::Sex(Sex::F));
        assert_eq!(
            FormalQuery::new(Target::Patients, vec![p.clone(), p], Scope::Federated),
            Err(QueryError::DuplicateAttribute("patient.sex".into()))
        );
    }

    #[test]
    fn between_restricted_to_ordered_attributes() {
        let p = Predicate::between(Attribute::PatientSex, Literal::Sex(Sex::F), Literal::Sex(Sex::M));
        assert!(matches!(
            FormalQuery::new(Target::Patients, vec![p], Scope::Federated),
            Err(QueryError::DomainError { .. })
        ));
    }

    #[test]
    fn query_id_hex_round_trip() {
        let id = QueryId(0xdead_beef);
        assert_eq!(id.to_string(), "00000000deadbeef");
        assert_eq!("00000000deadbeef".parse::<QueryId>(), Ok(id));
        assert!("DEADBEEF00000000".parse::<QueryId>().is_err());
    }
}
