use std::collections::HashSet;

use thiserror::Error;

use super::{QueryId, Target};

/// Field order for rows of a PATIENTS query.
pub const PATIENT_FIELDS: &[&str] = &["site", "patient.id", "patient.sex", "patient.age"];
/// Field order for rows of an IMAGES query.
pub const IMAGE_FIELDS: &[&str] = &[
    "site",
    "image.sop_uid",
    "image.lfn",
    "image.kind",
    "image.laterality",
    "image.study_date",
    "patient.id",
];

impl Target {
    pub fn row_fields(self) -> &'static [&'static str] {
        match self {
            Target::Patients => PATIENT_FIELDS,
            Target::Images => IMAGE_FIELDS,
        }
    }
}

/// An ordered list of named fields with unique names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Row(Vec<(String, String)>);

impl Row {
    pub fn new(fields: Vec<(String, String)>) -> Result<Self, String> {
        let mut seen = HashSet::new();
        for (name, _) in &fields {
            if !seen.insert(name.as_str()) {
                return Err(format!("duplicate field {name:?} in row"));
            }
        }
        Ok(Self(fields))
    }

    /// Builds a row from a target's fixed field list and matching values.
    pub fn for_target(target: Target, values: Vec<String>) -> Self {
        let names = target.row_fields();
        assert_eq!(names.len(), values.len(), "row arity");
        Self(names.iter().map(|n| n.to_string()).zip(values).collect())
    }

    pub fn fields(&self) -> &[(String, String)] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SiteOutcome {
    Ok(Vec<Row>),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteResult {
    pub site: String,
    pub outcome: SiteOutcome,
    pub elapsed_ms: u64,
}

impl SiteResult {
    pub fn ok(site: impl Into<String>, rows: Vec<Row>, elapsed_ms: u64) -> Self {
        Self {
            site: site.into(),
            outcome: SiteOutcome::Ok(rows),
            elapsed_ms,
        }
    }

    pub fn error(site: impl Into<String>, message: impl Into<String>, elapsed_ms: u64) -> Self {
        Self {
            site: site.into(),
            outcome: SiteOutcome::Error(message.into()),
            elapsed_ms,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, SiteOutcome::Ok(_))
    }

    pub fn rows(&self) -> &[Row] {
        match &self.outcome {
            SiteOutcome::Ok(rows) => rows,
            SiteOutcome::Error(_) => &[],
        }
    }

    pub fn error_message(&self) -> Option<&str> {
        match &self.outcome {
            SiteOutcome::Ok(_) => None,
            SiteOutcome::Error(m) => Some(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultSet {
    pub query_id: QueryId,
    pub sites: Vec<SiteResult>,
}

impl ResultSet {
    pub fn total_rows(&self) -> usize {
        self.sites.iter().map(|s| s.rows().len()).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.sites.iter().flat_map(|s| s.rows())
    }

    pub fn error_sites(&self) -> impl Iterator<Item = &SiteResult> {
        self.sites.iter().filter(|s| !s.is_ok())
    }

    pub fn site(&self, name: &str) -> Option<&SiteResult> {
        self.sites.iter().find(|s| s.site == name)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MergeError {
    #[error("site {0} reported more than once")]
    DuplicateSite(String),
}

/// Concatenates per-site results in arrival order. Rows are never
/// deduplicated: each row is owned by exactly one site.
pub fn merge_results(parts: Vec<SiteResult>, query_id: QueryId) -> Result<ResultSet, MergeError> {
    let mut seen = HashSet::new();
    for p in &parts {
        if !seen.insert(p.site.as_str()) {
            return Err(MergeError::DuplicateSite(p.site.clone()));
        }
    }
    Ok(ResultSet {
        query_id,
        sites: parts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(site: &str, n: usize) -> Vec<Row> {
        (0..n)
            .map(|i| {
                Row::for_target(
                    Target::Patients,
                    vec![site.into(), format!("{i:016x}"), "F".into(), "50".into()],
                )
            })
            .collect()
    }

    #[test]
    fn counts_add_up() {
        let r = merge_results(
            vec![
                SiteResult::ok("a", rows("a", 2), 1),
                SiteResult::ok("b", rows("b", 3), 1),
            ],
            QueryId(1),
        )
        .unwrap();
        assert_eq!(r.total_rows(), 5);
        assert_eq!(r.sites.len(), 2);
    }

    #[test]
    fn partial_failure_preserved() {
        let r = merge_results(
            vec![
                SiteResult::ok("a", rows("a", 2), 1),
                SiteResult::error("b", "timeout", 5000),
            ],
            QueryId(1),
        )
        .unwrap();
        assert_eq!(r.total_rows(), 2);
        assert_eq!(r.error_sites().count(), 1);
        assert_eq!(r.sites[1].error_message(), Some("timeout"));
    }

    #[test]
    fn duplicate_site() {
        let err = merge_results(
            vec![SiteResult::ok("a", vec![], 0), SiteResult::error("a", "x", 0)],
            QueryId(1),
        )
        .unwrap_err();
        assert_eq!(err, MergeError::DuplicateSite("a".into()));
    }

    #[test]
    fn duplicate_field_names_rejected() {
        assert!(Row::new(vec![("a".into(), "1".into()), ("a".into(), "2".into())]).is_err());
    }
}
