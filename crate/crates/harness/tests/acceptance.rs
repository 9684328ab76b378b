//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::error::Error;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use chrono::NaiveDate;
use mgvo::compute::{derived_sop_uid, AlgorithmPayload, JobStatus};
use mgvo::dicom::{
    anonymize, format_da, parse_dicom, tags, write_dicom, DicomElement, DicomError, DicomFile, DicomTag, Vr,
    KNOWN_TAGS,
};
use mgvo::storage::{chunks, transfer, Category, DirBackend, Lfn, StorageElement, StorageError, CHUNK_SIZE};
use mgvo::vo::{
    decode_frame, encode_frame, ErrorCode, FrameDecoder, Kind, Message, MAX_FRAME_LEN, TOKEN_LIFETIME_MS,
};
use mgvo_harness::oracle::multiset;
use mgvo_harness::synth::{dicom_bytes, Acquisition, Patient};
use mgvo_harness::{sim_addr, Fault, Scenario, SimVo, SiteSpec, VoBuilder};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

type Outcome = Result<String, Box<dyn Error>>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+).into());
        }
    };
}

fn core_fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(rel)
}

fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y%m%d").unwrap()
}

fn count(vo: &SimVo, origin: &str, q: &str) -> Result<usize, Box<dyn Error>> {
    let (rs, _) = vo.client()?.query(&sim_addr(origin), q)?;
    ensure!(rs.error_sites().next().is_none(), "error sites for {q}");
    Ok(rs.total_rows())
}

fn federated_equivalence() -> Outcome {
    let started = Instant::now();
    let (mut queries, mut rows, mut faulty) = (0, 0, 0);
    for seed in 0..50u64 {
        let sc = Scenario::random(1000 + seed, 20);
        ensure!(sc.validate().is_ok(), "scenario {seed} outside the limits");
        faulty += usize::from(!sc.faults.is_empty());
        let report = sc.run()?;
        if let Some(f) = report.failures().next() {
            return Err(format!("seed {}: {} from {}: {:?}", sc.seed, f.query, f.origin, f.verdict).into());
        }
        queries += report.outcomes.len();
        rows += report
            .outcomes
            .iter()
            .map(|o| *o.verdict.as_ref().unwrap())
            .sum::<usize>();
    }
    Ok(format!(
        "50 scenarios ({faulty} with a fault), {queries} queries, {rows} oracle rows, {:.1?}",
        started.elapsed()
    ))
}

fn clinical_workflow() -> Outcome {
    let vo = Scenario::two_hospital_fixture(2005).build()?;
    let client = vo.client()?;
    let origin = sim_addr("cambridge");
    let smf = "SELECT images WHERE image.kind = 'SMF'";
    let before = count(&vo, "cambridge", smf)?;
    client.add_algorithm(
        &origin,
        "smf-norm",
        "1",
        &AlgorithmPayload::Builtin("smf-norm".into()),
    )?;
    let input = vo
        .site("udine")?
        .catalog()
        .images()
        .into_iter()
        .next()
        .ok_or("udine holds no images")?;
    vo.network().clear_trace();
    let job = client.exec_algorithm(&origin, "smf-norm", "1", &input.lfn)?;
    ensure!(job.status == JobStatus::Done, "job status {:?}", job.status);
    ensure!(job.site == "udine", "job ran at {}", job.site);
    let forwarded = vo
        .network()
        .trace()
        .iter()
        .any(|e| e.kind == Kind::ExecAlg && e.from == "cambridge" && e.to == "udine");
    ensure!(forwarded, "EXEC_ALG was not forwarded to the data owner");
    let after = count(&vo, "cambridge", smf)?;
    ensure!(after == before + 1, "SMF count {before} -> {after}");
    let (rs, _) = client.query(&origin, smf)?;
    let row = rs
        .site("udine")
        .and_then(|s| s.rows().first())
        .ok_or("no SMF row at udine")?;
    let sop = row.get("image.sop_uid").unwrap_or_default();
    ensure!(
        sop == derived_sop_uid(&input.sop_uid, "smf-norm", "1"),
        "derived SOP {sop}"
    );
    let source = vo.oracle()?.source_of("udine", sop).map(str::to_owned);
    ensure!(
        source.as_deref() == Some(input.sop_uid.as_str()),
        "source {source:?}"
    );
    Ok(format!(
        "SMF rows {before} -> {after}, job at {}, source {}",
        job.site, input.sop_uid
    ))
}

fn boundary_patient(id: &str, birth: &str, sop: &str) -> Vec<u8> {
    let patient = Patient {
        id: id.into(),
        sex: 'F',
        birth: date(birth),
    };
    let acq = Acquisition {
        sop_uid: sop.into(),
        patient: 0,
        laterality: 'L',
        study_date: date("20050310"),
        pixels: [7; 16],
    };
    dicom_bytes(&patient, &acq)
}

fn query_shapes() -> Outcome {
    let vo = Scenario::two_hospital_fixture(2005).build()?;
    let oracle = vo.oracle()?;
    let female = "SELECT patients WHERE patient.sex = 'F'";
    let by_site: usize = vo
        .sites()
        .iter()
        .map(|s| {
            s.catalog()
                .patients()
                .iter()
                .filter(|p| p.sex.to_string() == "F")
                .count()
        })
        .sum();
    let got = count(&vo, "udine", female)?;
    ensure!(
        got == by_site && got == oracle.query(female)?.len(),
        "All female: {got} vs {by_site}"
    );
    let mut age_counts = Vec::new();
    for q in [
        "SELECT patients WHERE patient.age BETWEEN 50 AND 60 AND image.laterality = 'L'",
        "SELECT images WHERE patient.age BETWEEN 50 AND 60 AND image.laterality = 'L'",
    ] {
        let (rs, _) = vo.client()?.query(&sim_addr("cambridge"), q)?;
        let want = multiset(oracle.query(q)?);
        let have = multiset(rs.rows().map(|r| r.fields().to_vec()));
        ensure!(
            have == want,
            "{q}: {} rows vs oracle {}",
            rs.total_rows(),
            want.values().sum::<usize>()
        );
        age_counts.push(rs.total_rows());
    }

    // Study on 2005-03-10: exact birthdays give 50 and 61, a day later gives 49 and 60.
    let edge = VoBuilder::new(1).sites(["a", "b"]).build()?;
    let client = edge.client()?;
    for (site, id, birth, sop) in [
        ("a", "AGE50", "19550310", "9.1"),
        ("a", "AGE49", "19550311", "9.2"),
        ("b", "AGE61", "19440310", "9.3"),
        ("b", "AGE60", "19440311", "9.4"),
    ] {
        client.add(&sim_addr(site), &boundary_patient(id, birth, sop))?;
    }
    let (rs, _) = client.query(
        &sim_addr("a"),
        "SELECT patients WHERE patient.age BETWEEN 50 AND 60",
    )?;
    let mut ages: Vec<&str> = rs.rows().filter_map(|r| r.get("patient.age")).collect();
    ages.sort();
    ensure!(ages == ["50", "60"], "boundary ages {ages:?}");

    let big = DicomFile::new(vec![
        DicomElement::text(tags::SOP_INSTANCE_UID, Vr::UI, "9.9.8"),
        DicomElement::text(tags::PATIENT_ID, Vr::LO, "BIG"),
        DicomElement::text(tags::PATIENT_BIRTH_DATE, Vr::DA, "19600101"),
        DicomElement::text(tags::PATIENT_SEX, Vr::CS, "F"),
        DicomElement::text(tags::IMAGE_LATERALITY, Vr::CS, "R"),
        DicomElement::text(tags::STUDY_DATE, Vr::DA, "20050310"),
        DicomElement::us(tags::ROWS, 2048),
        DicomElement::us(tags::COLUMNS, 2048),
        DicomElement::us(tags::BITS_ALLOCATED, 16),
        DicomElement::pixels(&vec![0x0a0b; 2048 * 2048]),
    ])?;
    let bytes = write_dicom(&big)?;
    ensure!(bytes.len() >= 8 << 20, "large file only {} bytes", bytes.len());
    let started = Instant::now();
    client.add(&sim_addr("a"), &bytes)?;
    let elapsed = started.elapsed();
    ensure!(
        elapsed < std::time::Duration::from_secs(2),
        "8 MiB add took {elapsed:?}"
    );
    Ok(format!(
        "female {got}, age/L patients {} images {}, boundaries inclusive, 8 MiB add {elapsed:.2?}",
        age_counts[0], age_counts[1]
    ))
}

fn random_text(rng: &mut ChaCha8Rng, vr: Vr) -> String {
    let n = rng.gen_range(0..=24);
    let alphabet: &[u8] = match vr {
        Vr::UI => b"0123456789.",
        Vr::DA => return format_da(date("19000101") + chrono::Duration::days(rng.gen_range(0..40_000))),
        Vr::AS => return format!("{:03}Y", rng.gen_range(0..130)),
        _ => b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789 ^-.",
    };
    (0..n)
        .map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char)
        .collect()
}

fn random_dicom(rng: &mut ChaCha8Rng) -> DicomFile {
    let mut elements = vec![DicomElement::text(
        tags::SOP_INSTANCE_UID,
        Vr::UI,
        &format!("1.{}", rng.gen::<u32>()),
    )];
    for &(tag, vr, _) in KNOWN_TAGS {
        if !vr.is_text() || tag == tags::SOP_INSTANCE_UID || rng.gen_bool(0.3) {
            continue;
        }
        elements.push(DicomElement::text(tag, vr, &random_text(rng, vr)));
    }
    if rng.gen_bool(0.7) {
        let (rows, cols) = (rng.gen_range(0..40u16), rng.gen_range(0..40u16));
        let px: Vec<u16> = (0..usize::from(rows) * usize::from(cols))
            .map(|_| rng.gen())
            .collect();
        elements.extend([
            DicomElement::us(tags::ROWS, rows),
            DicomElement::us(tags::COLUMNS, cols),
            DicomElement::us(tags::BITS_ALLOCATED, 16),
            DicomElement::pixels(&px),
        ]);
    }
    if rng.gen_bool(0.3) {
        let tag = DicomTag::new(0x0009, rng.gen_range(0x0010..0x00ff));
        elements.push(DicomElement::text(tag, Vr::LO, &random_text(rng, Vr::LO)));
    }
    DicomFile::new(elements).expect("generator respects the invariants")
}

fn dicom_subset() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let f = random_dicom(&mut rng);
        let bytes = write_dicom(&f)?;
        let back = parse_dicom(&bytes)?;
        ensure!(back == f, "file {i} changed in a round trip");
        ensure!(write_dicom(&back)? == bytes, "file {i} re-encodes differently");
    }

    let expected = std::fs::read_to_string(core_fixture("dicom-malformed/expected.txt"))?;
    let mut malformed = 0;
    for line in expected.lines() {
        let [file, variant, detail] = line.split('|').collect::<Vec<_>>()[..] else {
            return Err(format!("bad expectation line {line:?}").into());
        };
        let bytes = std::fs::read(core_fixture(&format!("dicom-malformed/{file}")))?;
        let got = match parse_dicom(&bytes) {
            Ok(_) => return Err(format!("{file} parsed").into()),
            Err(DicomError::MissingMagic) => ("MissingMagic", String::new()),
            Err(DicomError::UnsupportedVR(vr)) => ("UnsupportedVR", vr),
            Err(DicomError::Truncated(at)) => ("Truncated", at.to_string()),
            Err(DicomError::NonMonotonicTag(t)) => ("NonMonotonicTag", t.to_string()),
            Err(DicomError::PixelGeometryMismatch) => ("PixelGeometryMismatch", String::new()),
            Err(DicomError::InvariantViolation(_)) => ("InvariantViolation", String::new()),
        };
        ensure!(
            got == (variant, detail.to_owned()),
            "{file}: {got:?}, expected {variant} {detail}"
        );
        malformed += 1;
    }
    ensure!(malformed == 20, "{malformed} malformed fixtures");

    let study = date("20050310");
    for (birth, age) in [
        ("19520310", "053Y"),
        ("19520311", "052Y"),
        ("19520309", "053Y"),
        ("20050310", "000Y"),
        ("19040229", "101Y"),
    ] {
        let f = DicomFile::new(vec![
            DicomElement::text(tags::SOP_INSTANCE_UID, Vr::UI, "1.5"),
            DicomElement::text(tags::PATIENT_NAME, Vr::PN, "Roe^Jane"),
            DicomElement::text(tags::PATIENT_ID, Vr::LO, "H-0042"),
            DicomElement::text(tags::PATIENT_BIRTH_DATE, Vr::DA, birth),
            DicomElement::text(tags::PATIENT_SEX, Vr::CS, "F"),
        ])?;
        let (anon, record) = anonymize(&f, "site-salt", study)?;
        ensure!(anon.text(tags::PATIENT_NAME) == Some("ANON"), "name kept");
        ensure!(anon.get(tags::PATIENT_BIRTH_DATE).is_none(), "birth date kept");
        let pid = anon.text(tags::PATIENT_ID).unwrap_or_default();
        ensure!(
            pid != "H-0042" && pid == record.pseudonym && pid.len() == 16,
            "pseudonym {pid:?}"
        );
        ensure!(
            anon.text(tags::PATIENT_AGE) == Some(age),
            "birth {birth}: age {:?}",
            anon.text(tags::PATIENT_AGE)
        );
        ensure!(anon.text(tags::PATIENT_SEX) == Some("F"), "sex changed");
        let (again, _) = anonymize(&anon, "site-salt", study)?;
        ensure!(again == anon, "anonymization is not idempotent");
    }

    // At ingress: nothing identifying reaches the stored file.
    let vo = VoBuilder::new(3).site("a").build()?;
    let raw = boundary_patient("H-0042", "19520310", "1.6");
    let receipt = vo.client()?.add(&sim_addr("a"), &raw)?;
    let stored = vo.client()?.retrieve(&sim_addr("a"), &receipt.lfn)?;
    let text = String::from_utf8_lossy(&stored);
    ensure!(
        !text.contains("H-0042") && !text.contains("19520310"),
        "identity stored"
    );
    Ok(format!(
        "1000 round trips, {malformed} malformed fixtures, 5 anonymization cases"
    ))
}

fn reference_fnv(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn storage_transfer() -> Outcome {
    let dir = tempfile::tempdir()?;
    let a = StorageElement::on_disk("a", dir.path().join("a"))?;
    let b = StorageElement::on_disk("b", dir.path().join("b"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sizes = [0, 1, CHUNK_SIZE - 1, CHUNK_SIZE, CHUNK_SIZE + 1, 4 << 20];
    for (i, &size) in sizes.iter().enumerate() {
        let mut bytes = vec![0u8; size];
        rng.fill_bytes(&mut bytes);
        let lfn = Lfn::new("a", Category::Images, &format!("blob-{i}"))?;
        let sum = a.put(&lfn, &bytes)?;
        ensure!(sum == reference_fnv(&bytes), "size {size}: put checksum {sum}");
        ensure!(a.get(&lfn)? == bytes, "size {size}: get differs");
        ensure!(transfer(&lfn, &a, &b)? == sum, "size {size}: transfer checksum");
        ensure!(
            b.get(&lfn)? == bytes && b.is_replica(&lfn),
            "size {size}: replica differs"
        );
        let meta = b.stat(&lfn)?.ok_or("replica has no metadata")?;
        ensure!(
            meta.size == size as u64 && meta.checksum == sum,
            "size {size}: replica metadata"
        );
    }

    let lfn = Lfn::new("a", Category::Images, "blob-3")?;
    let path = DirBackend::new(dir.path().join("a"), "a")?.blob_path(&lfn);
    let mut raw = std::fs::read(&path)?;
    raw[CHUNK_SIZE / 2] ^= 0x01;
    std::fs::write(&path, raw)?;
    ensure!(
        matches!(a.get(&lfn), Err(StorageError::ChecksumMismatch(_))),
        "corruption undetected"
    );

    let big = Lfn::new("a", Category::Images, "blob-5")?;
    let c = StorageElement::on_disk("c", dir.path().join("c"))?;
    let meta = a.stat(&big)?.ok_or("missing source")?;
    let bytes = a.get(&big)?;
    let mut incoming = c.begin_incoming(&big, meta.size, &meta.checksum)?;
    for chunk in chunks(&bytes).take(5) {
        incoming.push_chunk(chunk)?;
    }
    drop(incoming);
    ensure!(!c.contains(&big), "aborted transfer visible");
    let trace = DirBackend::new(dir.path().join("c"), "c")?;
    ensure!(
        !trace.blob_path(&big).exists() && !trace.meta_path(&big).exists(),
        "aborted transfer left files"
    );
    ensure!(transfer(&big, &a, &c).is_ok(), "retry after abort failed");
    Ok(format!(
        "{} sizes, corruption detected, abort leaves no trace",
        sizes.len()
    ))
}

fn loop_freedom_and_failure() -> Outcome {
    let q = "SELECT images WHERE image.laterality = 'L'";
    let names = ["a", "b", "c", "d"];
    let mut counts = Vec::new();
    for n in 1..=4 {
        let vo = VoBuilder::new(n as u64)
            .sites(names[..n].iter().copied())
            .build()?;
        let client = vo.client()?;
        vo.network().clear_trace();
        client.query(&sim_addr("a"), q)?;
        let remote = vo.network().count(Kind::QueryRemoteReq);
        let from_origin = vo
            .network()
            .trace()
            .iter()
            .filter(|e| e.kind == Kind::QueryRemoteReq && e.from == "a")
            .count();
        ensure!(
            remote == n - 1 && from_origin == n - 1,
            "{n} sites: {remote} remote requests"
        );
        counts.push(remote);
    }

    let sc = Scenario {
        seed: 77,
        sites: ["a", "b", "c"].iter().map(|n| SiteSpec::new(n, 20, 60)).collect(),
        ..Scenario::default()
    };
    let vo = sc.build()?;
    let client = vo.client()?;
    let (before, _) = client.query(&sim_addr("a"), q)?;
    vo.inject_fault("b", Fault::Halt)?;
    let (after, _) = client.query(&sim_addr("a"), q)?;
    let errors: Vec<_> = after.error_sites().map(|s| s.site.as_str()).collect();
    ensure!(errors == ["b"], "error sites {errors:?}");
    for site in ["a", "c"] {
        let rows = |rs: &mgvo::query::ResultSet| rs.site(site).map(|s| s.rows().to_vec());
        ensure!(
            rows(&before) == rows(&after),
            "rows of {site} changed when b halted"
        );
    }
    vo.clear_fault("b");

    vo.advance_clock(TOKEN_LIFETIME_MS + 1);
    for site in ["a", "b", "c"] {
        let err = client
            .query(&sim_addr(site), q)
            .err()
            .ok_or("expired token accepted")?;
        ensure!(err.code() == Some(ErrorCode::Expired), "{site}: {err}");
        let err = client
            .retrieve(&sim_addr(site), &Lfn::new(site, Category::Images, "x.dcm")?)
            .err();
        ensure!(
            err.and_then(|e| e.code()) == Some(ErrorCode::Expired),
            "{site}: retrieve not denied"
        );
    }
    Ok(format!(
        "remote requests {counts:?}, one ERROR entry under HALT, expiry denied at 3 sites"
    ))
}

const TOKEN: &str = "0123456789abcdef0123456789abcdef";

fn canned_frames() -> Vec<(&'static str, Message)> {
    let t = Some(TOKEN);
    vec![
        (
            "01-auth",
            Message::request(Kind::Auth, None, 1, json!({ "user": "alice", "secret": "pw" })),
        ),
        (
            "02-list-sites-empty-payload",
            Message::request(Kind::ListSites, t, 2, json!({})),
        ),
        (
            "03-query",
            Message::request(
                Kind::Query,
                t,
                3,
                json!({ "query": "SELECT images WHERE patient.age BETWEEN 50 AND 60 AND image.laterality = 'L'" }),
            ),
        ),
        (
            "04-query-remote-req",
            Message::request(
                Kind::QueryRemoteReq,
                t,
                4,
                json!({ "query_id": "00000000deadbeef", "query": "SELECT PATIENTS WHERE patient.sex = 'F' /*LOCAL*/" }),
            ),
        ),
        (
            "05-query-remote-resp",
            Message::request(
                Kind::QueryRemoteResp,
                None,
                4,
                json!({
                    "query_id": "00000000deadbeef",
                    "xml": "<site name=\"a\" status=\"ok\" elapsed-ms=\"3\"><row><f n=\"site\">a</f><f n=\"patient.id\">&lt;L&amp;R&gt; &quot;q&quot; &apos;</f></row></site>",
                }),
            ),
        ),
        (
            "06-error",
            Message::error(
                6,
                ErrorCode::Unauthenticated,
                "request carries no token: naïve client",
            ),
        ),
        (
            "07-ok-sites",
            Message::ok(
                7,
                json!({ "sites": [
                    { "name": "a", "address": "127.0.0.1:7001" },
                    { "name": "b", "address": "127.0.0.1:7002" },
                ] }),
            ),
        ),
        (
            "08-file-chunk",
            Message::request(
                Kind::FileChunk,
                t,
                8,
                json!({ "transfer": "0f0e0d0c0b0a0908", "index": 0, "data": "AAECAwQFBgc=" }),
            ),
        ),
        (
            "09-exec-alg",
            Message::request(
                Kind::ExecAlg,
                t,
                u64::MAX,
                json!({
                    "name": "smf-norm",
                    "version": "1",
                    "input_lfn": "lfn:/mgvo/b/images/1.2.3.dcm",
                    "algorithm": { "builtin": "smf-norm" },
                }),
            ),
        ),
    ]
}

fn wire_goldens() -> Outcome {
    let mut stream = Vec::new();
    let mut messages = Vec::new();
    for (name, msg) in canned_frames() {
        let golden = std::fs::read(core_fixture(&format!("frames/{name}.bin")))?;
        ensure!(encode_frame(&msg)? == golden, "{name} encodes differently");
        ensure!(decode_frame(&golden)? == msg, "{name} decodes differently");
        stream.extend_from_slice(&golden);
        messages.push(msg);
    }

    let digest = std::fs::read_to_string(core_fixture("frames/10-max-length.txt"))?;
    let field = |k: &str| {
        digest
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{k}=")))
            .unwrap_or("")
            .to_owned()
    };
    let empty = encode_frame(&Message::ok(10, json!({ "pad": "" })))?;
    let max = Message::ok(10, json!({ "pad": "x".repeat(MAX_FRAME_LEN + 4 - empty.len()) }));
    let bytes = encode_frame(&max)?;
    let hex = |b: &[u8]| b.iter().map(|x| format!("{x:02x}")).collect::<String>();
    ensure!(
        bytes.len() == MAX_FRAME_LEN + 4 && bytes.len().to_string() == field("len"),
        "max frame length"
    );
    ensure!(
        hex(&Sha256::digest(&bytes)) == field("sha256"),
        "max frame digest"
    );
    ensure!(decode_frame(&bytes)? == max, "max frame decodes differently");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in 0..100 {
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        let mut at = 0;
        while at < stream.len() {
            let step = rng.gen_range(1..=stream.len() - at).min(rng.gen_range(1..=64));
            dec.push(&stream[at..at + step]);
            at += step;
            while let Some(m) = dec.next_message()? {
                got.push(m);
            }
        }
        ensure!(
            got == messages && dec.buffered() == 0,
            "chunking {round} lost frames"
        );
    }
    Ok("10 golden frames byte-exact, 100 random chunkings".into())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("federated equivalence", federated_equivalence),
        ("clinical workflow", clinical_workflow),
        ("query shapes", query_shapes),
        ("DICOM subset", dicom_subset),
        ("storage and transfer", storage_transfer),
        ("loop freedom and partial failure", loop_freedom_and_failure),
        ("wire protocol goldens", wire_goldens),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(Ok(detail)) => Ok(detail),
            Ok(Err(e)) => Err(e.to_string()),
            Err(_) => Err("panicked".to_owned()),
        };
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
