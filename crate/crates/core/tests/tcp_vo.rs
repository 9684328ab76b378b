//! A small VO over real sockets with on-disk sites.

use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use mgvo::compute::{AlgorithmPayload, JobStatus};
use mgvo::dicom::{tags, write_dicom, DicomElement, DicomFile, Vr};
use mgvo::query::ImageKind;
use mgvo::vo::{CentralNode, Client, ErrorCode, SiteConfig, SiteNode, TcpServer, TcpTransport, Transport};
use mgvo::{Clock, SystemClock};

fn free_addr() -> String {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .to_string()
}

fn image(sop: &str, patient: &str, sex: &str, lat: &str) -> Vec<u8> {
    let f = DicomFile::new(vec![
        DicomElement::text(tags::SOP_INSTANCE_UID, Vr::UI, sop),
        DicomElement::text(tags::STUDY_DATE, Vr::DA, "20030310"),
        DicomElement::text(tags::PATIENT_NAME, Vr::PN, "Roe^Ann"),
        DicomElement::text(tags::PATIENT_ID, Vr::LO, patient),
        DicomElement::text(tags::PATIENT_BIRTH_DATE, Vr::DA, "19500310"),
        DicomElement::text(tags::PATIENT_SEX, Vr::CS, sex),
        DicomElement::text(tags::IMAGE_LATERALITY, Vr::CS, lat),
        DicomElement::us(tags::ROWS, 2),
        DicomElement::us(tags::COLUMNS, 2),
        DicomElement::us(tags::BITS_ALLOCATED, 16),
        DicomElement::pixels(&[10, 20, 30, 40]),
    ])
    .unwrap();
    write_dicom(&f).unwrap()
}

struct Site {
    addr: String,
    node: Arc<SiteNode>,
    _server: TcpServer,
}

fn start_site(name: &str, addr: &str, central: &str, root: &Path, register: bool) -> Site {
    let transport: Arc<dyn Transport> = Arc::new(TcpTransport::new());
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let node =
        Arc::new(SiteNode::on_disk(SiteConfig::new(name, addr, central), root, transport, clock).unwrap());
    let server = TcpServer::bind(addr, node.clone()).unwrap();
    if register {
        node.register("svc", "svc-secret").unwrap();
    }
    Site {
        addr: addr.to_owned(),
        node,
        _server: server,
    }
}

#[test]
fn on_disk_sites_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let central = Arc::new(CentralNode::new(Arc::new(SystemClock), None));
    central.add_user("svc", "svc-secret");
    central.add_user("clin", "pw");
    let central_srv = TcpServer::bind("127.0.0.1:0", central).unwrap();
    let central_addr = central_srv.local_addr().to_string();

    let a_addr = free_addr();
    let a = start_site("a", &a_addr, &central_addr, &dir.path().join("a"), true);
    let b = start_site("b", &free_addr(), &central_addr, &dir.path().join("b"), true);

    let mut c = Client::new(Arc::new(TcpTransport::new()), 10_000);
    c.login(&central_addr, "clin", "pw").unwrap();
    let sites = c.list_sites(&a.addr).unwrap();
    assert_eq!(
        sites.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(),
        ["a", "b"]
    );

    let on_a = c.add(&a.addr, &image("1.1", "X1", "F", "L")).unwrap();
    let on_b = c.add(&b.addr, &image("2.1", "X2", "F", "R")).unwrap();
    c.add_algorithm(
        &a.addr,
        "smf-norm",
        "1",
        &AlgorithmPayload::Builtin("smf-norm".into()),
    )
    .unwrap();
    let job = c.exec_algorithm(&a.addr, "smf-norm", "1", &on_b.lfn).unwrap();
    assert_eq!((job.site.as_str(), job.status), ("b", JobStatus::Done));

    let (rs, _) = c
        .query(&b.addr, "SELECT patients WHERE patient.age BETWEEN 53 AND 53")
        .unwrap();
    assert_eq!(rs.total_rows(), 2);

    // Restart site a from its directory; the catalog log is replayed.
    drop(a);
    let a = start_site("a", &a_addr, &central_addr, &dir.path().join("a"), false);
    assert_eq!(a.node.catalog().image_count(), 1);
    assert_eq!(c.retrieve(&a.addr, &on_a.lfn).unwrap().len() as u64, on_a.size);
    let (rs, _) = c
        .query(&a.addr, "SELECT images WHERE image.kind = 'SMF'")
        .unwrap();
    assert_eq!(rs.site("b").unwrap().rows().len(), 1);
    assert_eq!(b.node.catalog().count_kind(ImageKind::Smf), 1);
    let jobs = std::fs::read_to_string(dir.path().join("b/jobs.log")).unwrap();
    assert_eq!(jobs.lines().count(), 1);
    assert!(jobs.contains("|DONE|b|"));

    // Flip one stored byte: the site refuses to serve the file.
    let blob = dir.path().join("a/store/images/1.1.dcm");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[140] ^= 0xff;
    std::fs::write(&blob, bytes).unwrap();
    let err = c.retrieve(&b.addr, &on_a.lfn).unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::ChecksumMismatch));
}
