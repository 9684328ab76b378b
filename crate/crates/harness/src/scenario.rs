//! Scenario files and their execution against the oracle.
//!
//! A scenario is a sequence of blocks separated by blank lines. Each block
//! is `key = value` lines and its first key names the block:
//!
//! ```text
//! seed = 42
//! timeout_ms = 500
//! fanout = sequential
//! random_queries = 20
//!
//! site = north
//! patients = 12
//! images = 40
//!
//! delay = north
//! ms = 900
//!
//! halt = south
//!
//! query = SELECT patients WHERE patient.sex = 'F'
//! ```
//!
//! Lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mgvo::federation::FederationConfig;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::net::{sim_addr, Fault};
use crate::oracle::{check_result, random_query};
use crate::synth::{generate_holdings, ingest, SiteSpec};
use crate::vo::{SimVo, VoBuilder};
use crate::HarnessError;

pub const MAX_SITES: usize = 4;
pub const MAX_PATIENTS: usize = 200;
pub const MAX_IMAGES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub timeout_ms: u64,
    pub fanout_parallel: bool,
    pub sites: Vec<SiteSpec>,
    pub faults: Vec<(String, Fault)>,
    pub queries: Vec<String>,
    /// Extra queries drawn from the oracle's data after ingestion.
    pub random_queries: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            timeout_ms: 500,
            fanout_parallel: true,
            sites: Vec::new(),
            faults: Vec::new(),
            queries: Vec::new(),
            random_queries: 0,
        }
    }
}

fn scenario_err(line: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Scenario(format!("line {line}: {msg}"))
}

fn number<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| scenario_err(line, format!("{key} must be a number, got {value:?}")))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut sc = Scenario::default();
        let mut blocks: Vec<Vec<(usize, &str, &str)>> = vec![Vec::new()];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                if !blocks.last().unwrap().is_empty() {
                    blocks.push(Vec::new());
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| scenario_err(i + 1, "expected key = value"))?;
            blocks.last_mut().unwrap().push((i + 1, k.trim(), v.trim()));
        }
        for block in blocks.iter().filter(|b| !b.is_empty()) {
            sc.parse_block(block)?;
        }
        sc.validate()?;
        Ok(sc)
    }

    fn parse_block(&mut self, block: &[(usize, &str, &str)]) -> Result<(), HarnessError> {
        let (line, head, value) = block[0];
        let mut fields = BTreeMap::new();
        for &(l, k, v) in &block[1..] {
            if fields.insert(k, (l, v)).is_some() && k != "query" {
                return Err(scenario_err(l, format!("duplicate key {k}")));
            }
        }
        fn take<'a>(
            fields: &mut BTreeMap<&str, (usize, &'a str)>,
            (line, head): (usize, &str),
            key: &str,
        ) -> Result<(usize, &'a str), HarnessError> {
            fields
                .remove(key)
                .ok_or_else(|| scenario_err(line, format!("{head} block needs {key}")))
        }
        match head {
            "seed" => {
                self.seed = number(line, head, value)?;
                for (k, (l, v)) in std::mem::take(&mut fields) {
                    match k {
                        "timeout_ms" => self.timeout_ms = number(l, k, v)?,
                        "random_queries" => self.random_queries = number(l, k, v)?,
                        "fanout" => {
                            self.fanout_parallel = match v {
                                "parallel" => true,
                                "sequential" => false,
                                _ => return Err(scenario_err(l, "fanout is parallel or sequential")),
                            }
                        }
                        _ => return Err(scenario_err(l, format!("unknown key {k}"))),
                    }
                }
            }
            "site" => {
                let (pl, p) = take(&mut fields, (line, head), "patients")?;
                let (il, n) = take(&mut fields, (line, head), "images")?;
                self.sites.push(SiteSpec::new(
                    value,
                    number(pl, "patients", p)?,
                    number(il, "images", n)?,
                ));
            }
            "halt" => self.faults.push((value.to_owned(), Fault::Halt)),
            "delay" => {
                let (l, ms) = take(&mut fields, (line, head), "ms")?;
                self.faults
                    .push((value.to_owned(), Fault::Delay(number(l, "ms", ms)?)));
            }
            "query" => {
                self.queries.push(value.to_owned());
                for &(l, k, v) in &block[1..] {
                    if k != "query" {
                        return Err(scenario_err(l, format!("unknown key {k}")));
                    }
                    self.queries.push(v.to_owned());
                }
                fields.clear();
            }
            other => return Err(scenario_err(line, format!("unknown block {other}"))),
        }
        match fields.into_iter().next() {
            Some((k, (l, _))) => Err(scenario_err(l, format!("unknown key {k}"))),
            None => Ok(()),
        }
    }

    /// Size limits, name uniqueness and fault targets.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Scenario(m));
        if self.sites.is_empty() || self.sites.len() > MAX_SITES {
            return bad(format!("between 1 and {MAX_SITES} sites required"));
        }
        for (i, s) in self.sites.iter().enumerate() {
            if self.sites[..i].iter().any(|o| o.name == s.name) {
                return bad(format!("site {} declared twice", s.name));
            }
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
                return bad(format!("bad site name {:?}", s.name));
            }
            if s.patients > MAX_PATIENTS || s.images > MAX_IMAGES {
                return bad(format!(
                    "site {} exceeds {MAX_PATIENTS} patients or {MAX_IMAGES} images",
                    s.name
                ));
            }
            if s.images < s.patients || (s.patients == 0 && s.images > 0) {
                return bad(format!("site {}: every patient needs an image", s.name));
            }
        }
        for (site, _) in &self.faults {
            if !self.sites.iter().any(|s| &s.name == site) {
                return Err(HarnessError::UnknownSite(site.clone()));
            }
        }
        if self.faults.len() >= self.sites.len() {
            return bad("at least one site must stay healthy".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "seed = {}\ntimeout_ms = {}\nfanout = {}\nrandom_queries = {}\n",
            self.seed,
            self.timeout_ms,
            if self.fanout_parallel {
                "parallel"
            } else {
                "sequential"
            },
            self.random_queries
        );
        for s in &self.sites {
            let _ = write!(
                out,
                "\nsite = {}\npatients = {}\nimages = {}\n",
                s.name, s.patients, s.images
            );
        }
        for (site, f) in &self.faults {
            let _ = match f {
                Fault::Halt => write!(out, "\nhalt = {site}\n"),
                Fault::Delay(ms) => write!(out, "\ndelay = {site}\nms = {ms}\n"),
            };
        }
        if !self.queries.is_empty() {
            out.push('\n');
            for q in &self.queries {
                let _ = writeln!(out, "query = {q}");
            }
        }
        out
    }

    /// A random scenario within the size limits: 2 to 4 sites, sometimes one
    /// faulty site.
    pub fn random(seed: u64, random_queries: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = ["north", "south", "east", "west"];
        names.shuffle(&mut rng);
        let n = rng.gen_range(2..=MAX_SITES);
        let sites: Vec<SiteSpec> = names[..n]
            .iter()
            .map(|name| {
                let patients = rng.gen_range(1..=MAX_PATIENTS);
                SiteSpec::new(
                    name,
                    patients,
                    rng.gen_range(patients..=(patients * 5).min(MAX_IMAGES)),
                )
            })
            .collect();
        let timeout_ms = 500;
        let mut faults = Vec::new();
        let victim = sites[rng.gen_range(0..n)].name.clone();
        match rng.gen_range(0..10) {
            0 | 1 => faults.push((victim, Fault::Halt)),
            2 => faults.push((victim, Fault::Delay(timeout_ms + 1))),
            3 => faults.push((victim, Fault::Delay(timeout_ms))),
            _ => {}
        }
        Self {
            seed,
            timeout_ms,
            fanout_parallel: rng.gen_bool(0.5),
            sites,
            faults,
            queries: Vec::new(),
            random_queries,
        }
    }

    /// A realistic two-hospital deployment. Larger than
    /// [`validate`](Self::validate) allows, so it is built directly.
    pub fn two_hospital_fixture(seed: u64) -> Self {
        Self {
            seed,
            sites: vec![
                SiteSpec::new("cambridge", 813, 2798),
                SiteSpec::new("udine", 489, 4663),
            ],
            ..Self::default()
        }
    }

    /// Sites that should answer with an ERROR entry, and the message.
    pub fn expected_failures(&self) -> Vec<(&str, &'static str)> {
        self.faults
            .iter()
            .filter_map(|(site, f)| match f {
                Fault::Halt => Some((site.as_str(), "unreachable")),
                Fault::Delay(ms) if *ms > self.timeout_ms => Some((site.as_str(), "timeout")),
                Fault::Delay(_) => None,
            })
            .collect()
    }

    /// Builds the VO and ingests every site's holdings. Faults are not
    /// applied yet.
    pub fn build(&self) -> Result<SimVo, HarnessError> {
        let federation = FederationConfig::new(self.timeout_ms, self.fanout_parallel)
            .map_err(|e| HarnessError::Scenario(e.to_string()))?;
        let vo = VoBuilder::new(self.seed)
            .sites(self.sites.iter().map(|s| s.name.as_str()))
            .federation(federation)
            .build()?;
        let client = vo.client()?;
        for spec in &self.sites {
            ingest(&client, &spec.name, &generate_holdings(self.seed, spec))?;
        }
        Ok(vo)
    }

    /// Runs every query from a rotating healthy origin and checks each
    /// result against the oracle.
    pub fn run(&self) -> Result<ScenarioReport, HarnessError> {
        let vo = self.build()?;
        let oracle = vo.oracle()?;
        for (site, fault) in &self.faults {
            vo.inject_fault(site, *fault)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let mut queries = self.queries.clone();
        queries.extend((0..self.random_queries).map(|_| random_query(&mut rng, &oracle)));
        let healthy: Vec<&str> = self
            .sites
            .iter()
            .map(|s| s.name.as_str())
            .filter(|n| !self.faults.iter().any(|(f, _)| f == n))
            .collect();
        let failures = self.expected_failures();
        let down: Vec<&str> = failures.iter().map(|(s, _)| *s).collect();
        let client = vo.client()?;
        let mut outcomes = Vec::new();
        for (i, q) in queries.iter().enumerate() {
            let origin = healthy[i % healthy.len()];
            let verdict = match (client.query(&sim_addr(origin), q), oracle.query(q)) {
                (Ok((rs, _)), Ok(expected)) => {
                    let rows = expected.len();
                    check_result(&rs, &expected, &down)
                        .and_then(|()| check_messages(&rs, &failures))
                        .and_then(|()| check_order(&rs, origin))
                        .map(|()| rows)
                }
                (Err(e), _) => Err(format!("query failed: {e}")),
                (_, Err(e)) => Err(format!("oracle rejected query: {e}")),
            };
            outcomes.push(QueryOutcome {
                query: q.clone(),
                origin: origin.to_owned(),
                verdict,
            });
        }
        Ok(ScenarioReport {
            outcomes,
            logs: vo.catalog_logs()?,
            trace: vo.network().trace_dump(),
        })
    }
}

fn check_messages(rs: &mgvo::query::ResultSet, failures: &[(&str, &str)]) -> Result<(), String> {
    for (site, want) in failures {
        let got = rs.site(site).and_then(|s| s.error_message());
        if got != Some(*want) {
            return Err(format!("site {site}: expected error {want:?}, got {got:?}"));
        }
    }
    Ok(())
}

fn check_order(rs: &mgvo::query::ResultSet, origin: &str) -> Result<(), String> {
    match rs.sites.first() {
        Some(s) if s.site == origin => Ok(()),
        other => Err(format!(
            "origin {origin} must come first, got {:?}",
            other.map(|s| &s.site)
        )),
    }
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub query: String,
    pub origin: String,
    /// Matching row count, or why the result was wrong.
    pub verdict: Result<usize, String>,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub outcomes: Vec<QueryOutcome>,
    pub logs: Vec<(String, String)>,
    pub trace: String,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.verdict.is_ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &QueryOutcome> {
        self.outcomes.iter().filter(|o| o.verdict.is_err())
    }
}
