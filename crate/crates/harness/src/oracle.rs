//! Centralized brute-force oracle.
//!
//! The store is rebuilt from the sites' catalog logs with its own line
//! parser, and queries are evaluated by a full scan over the canonical
//! query text. Nothing here goes through the catalog's indexes or its
//! predicate translation.

use std::collections::{BTreeMap, BTreeSet};

use mgvo::query::{parse_query, serialize_query, ResultSet};
use rand::seq::SliceRandom;
use rand::Rng;

pub type OracleRow = Vec<(String, String)>;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Patient {
    site: String,
    pseudonym: String,
    sex: String,
    age: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Image {
    site: String,
    sop: String,
    lfn: String,
    pseudonym: String,
    laterality: String,
    date: String,
    kind: String,
    source: String,
}

#[derive(Debug, Clone, Default)]
pub struct OracleStore {
    patients: Vec<Patient>,
    images: Vec<Image>,
}

impl OracleStore {
    /// Builds the union of `(site, catalog log)` pairs.
    pub fn from_logs(logs: &[(String, String)]) -> Result<Self, String> {
        let mut store = Self::default();
        for (site, text) in logs {
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
                let f: Vec<&str> = line.split('|').collect();
                let err = || format!("{site} log line {}: {line:?}", n + 1);
                match f.as_slice() {
                    ["P", pseudo, sex, age] => store.patients.push(Patient {
                        site: site.clone(),
                        pseudonym: pseudo.to_string(),
                        sex: sex.to_string(),
                        age: age.parse().map_err(|_| err())?,
                    }),
                    ["I", sop, lfn, pseudo, lat, date, kind, source, _size, _sum] => {
                        store.images.push(Image {
                            site: site.clone(),
                            sop: sop.to_string(),
                            lfn: lfn.to_string(),
                            pseudonym: pseudo.to_string(),
                            laterality: lat.to_string(),
                            date: date.to_string(),
                            kind: kind.to_string(),
                            source: source.to_string(),
                        })
                    }
                    ["A", ..] => {}
                    _ => return Err(err()),
                }
            }
        }
        Ok(store)
    }

    pub fn patient_count(&self) -> usize {
        self.patients.len()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn pseudonyms(&self) -> Vec<&str> {
        self.patients.iter().map(|p| p.pseudonym.as_str()).collect()
    }

    pub fn study_dates(&self) -> Vec<&str> {
        self.images.iter().map(|i| i.date.as_str()).collect()
    }

    /// Source SOP UID recorded for a derived image, if any.
    pub fn source_of(&self, site: &str, sop: &str) -> Option<&str> {
        self.images
            .iter()
            .find(|i| i.site == site && i.sop == sop)
            .map(|i| i.source.as_str())
            .filter(|s| !s.is_empty())
    }

    /// Rows matching `query`, tagged with their owning site.
    pub fn query(&self, query: &str) -> Result<Vec<OracleRow>, String> {
        let canonical = serialize_query(&parse_query(query).map_err(|e| e.to_string())?);
        let (images_target, conds) = parse_canonical(&canonical)?;
        let (image_conds, patient_conds): (Vec<&Cond>, Vec<&Cond>) =
            conds.iter().partition(|c| c.attr.starts_with("image."));
        let patient_ok = |p: &Patient| patient_conds.iter().all(|c| c.holds_patient(p));
        let image_ok = |i: &Image| image_conds.iter().all(|c| c.holds_image(i));
        let owner = |i: &Image| {
            self.patients
                .iter()
                .find(|p| p.site == i.site && p.pseudonym == i.pseudonym)
        };
        let mut out = Vec::new();
        if images_target {
            for i in &self.images {
                if image_ok(i) && owner(i).is_some_and(&patient_ok) {
                    out.push(image_row(i));
                }
            }
        } else {
            for p in &self.patients {
                let has_image = image_conds.is_empty()
                    || self
                        .images
                        .iter()
                        .any(|i| i.site == p.site && i.pseudonym == p.pseudonym && image_ok(i));
                if patient_ok(p) && has_image {
                    out.push(patient_row(p));
                }
            }
        }
        Ok(out)
    }
}

fn patient_row(p: &Patient) -> OracleRow {
    vec![
        ("site".into(), p.site.clone()),
        ("patient.id".into(), p.pseudonym.clone()),
        ("patient.sex".into(), p.sex.clone()),
        ("patient.age".into(), p.age.to_string()),
    ]
}

fn image_row(i: &Image) -> OracleRow {
    vec![
        ("site".into(), i.site.clone()),
        ("image.sop_uid".into(), i.sop.clone()),
        ("image.lfn".into(), i.lfn.clone()),
        ("image.kind".into(), i.kind.clone()),
        ("image.laterality".into(), i.laterality.clone()),
        ("image.study_date".into(), i.date.clone()),
        ("patient.id".into(), i.pseudonym.clone()),
    ]
}

#[derive(Debug)]
struct Cond {
    attr: String,
    lo: String,
    /// Equal to `lo` for equality tests.
    hi: String,
}

impl Cond {
    fn in_range_num(&self, v: u32) -> bool {
        let lo: u32 = self.lo.parse().unwrap_or(u32::MAX);
        let hi: u32 = self.hi.parse().unwrap_or(0);
        lo <= v && v <= hi
    }

    fn in_range_text(&self, v: &str) -> bool {
        // YYYYMMDD compares correctly as text.
        self.lo.as_str() <= v && v <= self.hi.as_str()
    }

    fn holds_patient(&self, p: &Patient) -> bool {
        match self.attr.as_str() {
            "patient.id" => p.pseudonym == self.lo,
            "patient.sex" => p.sex == self.lo,
            "patient.age" => self.in_range_num(p.age),
            _ => false,
        }
    }

    fn holds_image(&self, i: &Image) -> bool {
        match self.attr.as_str() {
            "image.laterality" => i.laterality == self.lo,
            "image.kind" => i.kind == self.lo,
            "image.study_date" => self.in_range_text(&i.date),
            _ => false,
        }
    }
}

/// Splits canonical text into its target and conditions.
fn parse_canonical(text: &str) -> Result<(bool, Vec<Cond>), String> {
    let text = text.strip_suffix(" /*LOCAL*/").unwrap_or(text);
    let rest = text.strip_prefix("SELECT ").ok_or("missing SELECT")?;
    let (target, mut rest) = rest.split_once(" WHERE ").ok_or("missing WHERE")?;
    let mut conds = Vec::new();
    loop {
        let (attr, after) = rest.split_once(' ').ok_or("truncated term")?;
        let (cond, after) = if let Some(quoted) = after.strip_prefix("= '") {
            let end = quoted.find('\'').ok_or("unterminated literal")?;
            let lit = &quoted[..end];
            let cond = Cond {
                attr: attr.into(),
                lo: lit.into(),
                hi: lit.into(),
            };
            (cond, &quoted[end + 1..])
        } else if let Some(range) = after.strip_prefix("BETWEEN ") {
            let mut words = range.splitn(4, ' ');
            let lo = words.next().ok_or("missing lower bound")?;
            if words.next() != Some("AND") {
                return Err("missing AND in range".into());
            }
            let hi = words.next().ok_or("missing upper bound")?;
            let rest_len = words.next().map_or(0, |r| r.len() + 1);
            let cond = Cond {
                attr: attr.into(),
                lo: lo.into(),
                hi: hi.into(),
            };
            (cond, &range[range.len() - rest_len..])
        } else {
            return Err(format!("unexpected term {after:?}"));
        };
        conds.push(cond);
        match after.strip_prefix(" AND ") {
            Some(more) => rest = more,
            None if after.is_empty() => break,
            None => return Err(format!("trailing text {after:?}")),
        }
    }
    Ok((target == "IMAGES", conds))
}

/// Rows counted by content, so order does not matter.
pub fn multiset(rows: impl IntoIterator<Item = OracleRow>) -> BTreeMap<OracleRow, usize> {
    let mut m = BTreeMap::new();
    for r in rows {
        *m.entry(r).or_insert(0) += 1;
    }
    m
}

/// Checks a federated result against the oracle. Sites in `down` must
/// report an ERROR entry and contribute no rows; every other site must be
/// OK and the union of their rows must equal the oracle's rows for those
/// sites exactly.
pub fn check_result(rs: &ResultSet, expected: &[OracleRow], down: &[&str]) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    let mut got = Vec::new();
    for s in &rs.sites {
        if !seen.insert(s.site.as_str()) {
            return Err(format!("site {} reported twice", s.site));
        }
        match (down.contains(&s.site.as_str()), s.is_ok()) {
            (true, true) => return Err(format!("site {} should have failed", s.site)),
            (false, false) => {
                return Err(format!(
                    "site {} failed: {}",
                    s.site,
                    s.error_message().unwrap_or_default()
                ))
            }
            _ => {}
        }
        for row in s.rows() {
            if row.get("site") != Some(s.site.as_str()) {
                return Err(format!("row under site {} tagged {:?}", s.site, row.get("site")));
            }
            got.push(row.fields().to_vec());
        }
    }
    let want = multiset(
        expected
            .iter()
            .filter(|r| !down.iter().any(|d| r[0].1 == *d))
            .cloned(),
    );
    let got = multiset(got);
    if got != want {
        let missing = want.keys().filter(|k| !got.contains_key(*k)).count();
        let extra = got.keys().filter(|k| !want.contains_key(*k)).count();
        return Err(format!(
            "row multiset differs: {} rows expected, {} returned, {missing} missing, {extra} unexpected",
            want.values().sum::<usize>(),
            got.values().sum::<usize>()
        ));
    }
    Ok(())
}

/// A random valid conjunctive query over values present in `oracle`, with
/// keyword case and spacing varied.
pub fn random_query(rng: &mut impl Rng, oracle: &OracleStore) -> String {
    let mut attrs = [
        "patient.id",
        "patient.sex",
        "patient.age",
        "image.laterality",
        "image.kind",
        "image.study_date",
    ];
    attrs.shuffle(rng);
    let n = rng.gen_range(1..=4);
    let pseudonyms = oracle.pseudonyms();
    let dates = oracle.study_dates();
    let terms: Vec<String> = attrs[..n]
        .iter()
        .map(|attr| match *attr {
            "patient.id" => {
                let id = match pseudonyms.choose(rng) {
                    Some(p) if rng.gen_bool(0.9) => p.to_string(),
                    _ => format!("{:016x}", rng.gen::<u64>()),
                };
                format!("patient.id = '{id}'")
            }
            "patient.sex" => format!("patient.sex = '{}'", ["F", "M"].choose(rng).unwrap()),
            "patient.age" if rng.gen_bool(0.3) => format!("patient.age = '{}'", rng.gen_range(28..=82)),
            "patient.age" => {
                let lo = rng.gen_range(25..=85);
                format!("patient.age BETWEEN {lo} AND {}", lo + rng.gen_range(0..=25))
            }
            "image.laterality" => format!("image.laterality = '{}'", ["L", "R"].choose(rng).unwrap()),
            "image.kind" => {
                let kind = if rng.gen_bool(0.8) { "ORIGINAL" } else { "SMF" };
                format!("image.kind = '{kind}'")
            }
            _ => match dates.choose(rng) {
                Some(d) if rng.gen_bool(0.3) => format!("image.study_date = '{d}'"),
                _ => {
                    let y = rng.gen_range(1997..=2010);
                    let lo = format!("{y}{:02}{:02}", rng.gen_range(1..=12), rng.gen_range(1..=28));
                    let y2 = y + rng.gen_range(0..=4);
                    format!("image.study_date BETWEEN {lo} AND {y2}1231")
                }
            },
        })
        .collect();
    let kw = |rng: &mut dyn rand::RngCore, w: &str| {
        if rng.gen_bool(0.5) {
            w.to_owned()
        } else {
            w.to_lowercase()
        }
    };
    let target = if rng.gen_bool(0.5) { "patients" } else { "IMAGES" };
    let and = format!(" {} ", kw(rng, "AND"));
    format!(
        "{}  {target} {} {}",
        kw(rng, "SELECT"),
        kw(rng, "WHERE"),
        terms.join(&and)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LOG_A: &str = "P|00000000000000aa|F|55\n\
I|1.1|lfn:/mgvo/a/images/1.1.dcm|00000000000000aa|L|20030101|ORIGINAL||10|0000000000000001\n\
I|1.2|lfn:/mgvo/a/images/1.2.dcm|00000000000000aa|R|20040101|ORIGINAL||10|0000000000000002\n\
A|smf-norm|1|lfn:/mgvo/_builtin/algorithms/smf-norm|00000000000000ff|true\n\
I|9.9|lfn:/mgvo/a/smf/smf-norm-1-1.1|00000000000000aa|L|20030101|SMF|1.1|10|0000000000000003\n";
    const LOG_B: &str = "P|00000000000000bb|M|61\nP|00000000000000cc|F|50\n\
I|2.1|lfn:/mgvo/b/images/2.1.dcm|00000000000000bb|L|20020202|ORIGINAL||10|0000000000000004\n\
I|2.2|lfn:/mgvo/b/images/2.2.dcm|00000000000000cc|R|20020202|ORIGINAL||10|0000000000000005\n";

    fn store() -> OracleStore {
        OracleStore::from_logs(&[("a".into(), LOG_A.into()), ("b".into(), LOG_B.into())]).unwrap()
    }

    fn sites(rows: &[OracleRow]) -> Vec<&str> {
        rows.iter().map(|r| r[0].1.as_str()).collect()
    }

    #[test]
    fn empty_store_answers_nothing() {
        let empty = OracleStore::default();
        assert!(empty
            .query("SELECT patients WHERE patient.sex = 'F'")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn hand_checked_answers() {
        let s = store();
        assert_eq!((s.patient_count(), s.image_count()), (3, 5));
        let female = s.query("SELECT patients WHERE patient.sex = 'F'").unwrap();
        assert_eq!(sites(&female), ["a", "b"]);
        let point = s
            .query("SELECT patients WHERE patient.id = '00000000000000bb'")
            .unwrap();
        assert_eq!(point, vec![patient_row(&s.patients[1])]);
        assert_eq!(point[0][3], ("patient.age".into(), "61".into()));
        let q = "SELECT images WHERE patient.age BETWEEN 50 AND 60 AND image.laterality = 'L'";
        let rows = s.query(q).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1][1].1, "9.9");
        let smf = s.query("SELECT patients WHERE image.kind = 'SMF'").unwrap();
        assert_eq!(sites(&smf), ["a"]);
        assert_eq!(s.source_of("a", "9.9"), Some("1.1"));
        assert_eq!(s.source_of("a", "1.1"), None);
        let dated = s
            .query("SELECT images WHERE image.study_date BETWEEN 20020202 AND 20030101")
            .unwrap();
        assert_eq!(dated.len(), 4);
        let both = s
            .query("SELECT patients WHERE image.laterality = 'R' AND image.study_date = '20040101'")
            .unwrap();
        assert_eq!(sites(&both), ["a"]);
    }

    #[test]
    fn corrupt_log_is_reported() {
        let err = OracleStore::from_logs(&[("a".into(), "P|x|F\n".into())]).unwrap_err();
        assert!(err.contains("line 1"));
    }

    #[test]
    fn random_queries_parse() {
        let s = store();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let q = random_query(&mut rng, &s);
            assert!(s.query(&q).is_ok(), "{q}");
        }
    }
}
