use std::time::Duration;

use flakeshot::ingest::{FetchOptions, GitlabClient, IngestError};
use flakeshot::store::{MarkerKind, ProjectStore};
use flakeshot_core::JobStatus;
use mockito::{Matcher, Server};
use serde_json::json;

fn job(id: u64, status: &str) -> serde_json::Value {
    json!({
        "id": id,
        "name": "test",
        "status": status,
        "ref": "main",
        "created_at": format!("2024-01-01T00:{:02}:00Z", id % 60),
        "finished_at": null,
        "commit": { "id": format!("sha{}", id / 2) },
        "stage": "test"
    })
}

fn page(n: u32) -> Matcher {
    Matcher::UrlEncoded("page".into(), n.to_string())
}

fn client(server: &Server, page_size: u32) -> GitlabClient {
    let opts = FetchOptions {
        page_size,
        parallelism: 2,
        max_attempts: 3,
        backoff: Duration::from_millis(1),
        max_rate_limit_wait: Duration::from_secs(2),
        ..FetchOptions::default()
    };
    GitlabClient::new(&format!("{}/api/v4", server.url()), "secret", opts).unwrap()
}

fn store() -> (tempfile::TempDir, ProjectStore) {
    let dir = tempfile::tempdir().unwrap();
    let store = ProjectStore::create(dir.path().join("s")).unwrap();
    (dir, store)
}

const JOBS: &str = "/api/v4/projects/7/jobs";

#[test]
fn empty_project_yields_empty_manifest() {
    let mut server = Server::new();
    let m = server.mock("GET", JOBS).match_query(page(1)).match_header("private-token", "secret").with_body("[]").create();
    let (_d, st) = store();
    let r = client(&server, 100).fetch_jobs("7", &st).unwrap();
    m.assert();
    assert_eq!((r.new_jobs, r.pages, r.discarded), (0, 1, 0));
    assert!(st.jobs().unwrap().is_empty());
}

#[test]
fn canceled_jobs_are_dropped_and_failed_logs_saved() {
    let mut server = Server::new();
    let body = json!([job(3, "canceled"), job(2, "failed"), job(1, "success")]).to_string();
    server.mock("GET", JOBS).match_query(page(1)).with_body(body).create();
    let trace = server.mock("GET", "/api/v4/projects/7/jobs/2/trace").with_body("boom\nERROR: Job failed: exit code 1\n").expect(1).create();
    let (_d, st) = store();
    let r = client(&server, 100).fetch_jobs("7", &st).unwrap();
    trace.assert();
    assert_eq!((r.new_jobs, r.discarded, r.missing_logs), (2, 1, 0));
    let jobs = st.jobs().unwrap();
    assert_eq!(jobs.iter().map(|j| j.job_id).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(jobs[0].status, JobStatus::Success);
    assert_eq!(jobs[0].log_path, None);
    assert_eq!(jobs[1].log_path.as_deref(), Some("logs/2.log"));
    assert_eq!(jobs[1].commit_sha, "sha1");
    assert!(st.read_log("logs/2.log").unwrap().contains("exit code 1"));
    let logs: Vec<_> = std::fs::read_dir(st.root().join("logs")).unwrap().collect();
    assert_eq!(logs.len(), 1);
}

#[test]
fn refetching_leaves_the_manifest_byte_identical() {
    let mut server = Server::new();
    let body = json!([job(5, "failed"), job(4, "success"), job(3, "failed")]).to_string();
    let pages = server.mock("GET", JOBS).match_query(page(1)).with_body(body).expect(2).create();
    let t5 = server.mock("GET", "/api/v4/projects/7/jobs/5/trace").with_body("five").expect(1).create();
    let t3 = server.mock("GET", "/api/v4/projects/7/jobs/3/trace").with_body("three").expect(1).create();
    let (_d, st) = store();
    let c = client(&server, 100);
    c.fetch_jobs("7", &st).unwrap();
    let first = std::fs::read(st.manifest_path()).unwrap();
    let again = c.fetch_jobs("7", &st).unwrap();
    assert_eq!(again.new_jobs, 0);
    assert_eq!(std::fs::read(st.manifest_path()).unwrap(), first);
    pages.assert();
    t5.assert();
    t3.assert();
}

#[test]
fn missing_and_empty_traces_are_marked() {
    let mut server = Server::new();
    server.mock("GET", JOBS).match_query(page(1)).with_body(json!([job(9, "failed"), job(8, "failed")]).to_string()).create();
    server.mock("GET", "/api/v4/projects/7/jobs/9/trace").with_status(404).create();
    server.mock("GET", "/api/v4/projects/7/jobs/8/trace").with_body("").create();
    let (_d, st) = store();
    let r = client(&server, 100).fetch_jobs("7", &st).unwrap();
    assert_eq!((r.new_jobs, r.missing_logs, r.empty_logs), (2, 1, 1));
    let markers = st.markers().unwrap();
    assert!(markers.iter().any(|m| m.job_id == 9 && m.kind == MarkerKind::MissingLog));
    assert!(markers.iter().any(|m| m.job_id == 8 && m.kind == MarkerKind::EmptyLog));
    assert_eq!(st.excluded().unwrap().into_iter().collect::<Vec<_>>(), vec![8, 9]);
    let jobs = st.jobs().unwrap();
    assert_eq!(jobs.iter().find(|j| j.job_id == 9).unwrap().log_path, None);
}

#[test]
fn rejected_credentials_are_an_environment_error() {
    let mut server = Server::new();
    server.mock("GET", JOBS).match_query(page(1)).with_status(401).create();
    let (_d, st) = store();
    let e = client(&server, 100).fetch_jobs("7", &st).unwrap_err();
    assert!(e.is_environment());
    assert!(matches!(e, IngestError::Partial { ref source, .. } if matches!(**source, IngestError::Auth(401))));
}

#[test]
fn rate_limits_are_waited_out() {
    let mut server = Server::new();
    let limited = server.mock("GET", JOBS).match_query(page(1)).with_status(429).with_header("retry-after", "0").expect(1).create();
    let ok = server.mock("GET", JOBS).match_query(page(1)).with_body(json!([job(1, "success")]).to_string()).expect(1).create();
    let (_d, st) = store();
    let r = client(&server, 100).fetch_jobs("7", &st).unwrap();
    limited.assert();
    ok.assert();
    assert_eq!(r.new_jobs, 1);
}

#[test]
fn server_errors_are_retried_then_reported() {
    let mut server = Server::new();
    let m = server.mock("GET", JOBS).match_query(page(1)).with_status(503).expect(3).create();
    let (_d, st) = store();
    let e = client(&server, 100).fetch_jobs("7", &st).unwrap_err();
    m.assert();
    assert!(e.is_environment());
}

#[test]
fn interrupted_fetch_resumes_at_the_failed_page() {
    let mut server = Server::new();
    let p1 = server.mock("GET", JOBS).match_query(page(1)).with_body(json!([job(20, "success"), job(19, "success")]).to_string()).expect(1).create();
    let broken = server.mock("GET", JOBS).match_query(page(2)).with_status(500).expect(3).create();
    let (_d, st) = store();
    let c = client(&server, 2);
    let e = c.fetch_jobs("7", &st).unwrap_err();
    assert!(matches!(e, IngestError::Partial { ref progress, .. } if progress.new_jobs == 2));
    assert_eq!(st.cursor().unwrap().resume_page, Some(2));
    broken.assert();
    broken.remove();

    let p2 = server.mock("GET", JOBS).match_query(page(2)).with_body(json!([job(18, "success")]).to_string()).expect(1).create();
    let r = c.fetch_jobs("7", &st).unwrap();
    assert_eq!(r.new_jobs, 1);
    p1.assert();
    p2.assert();
    let cursor = st.cursor().unwrap();
    assert_eq!((cursor.high_water, cursor.resume_page), (Some(20), None));

    // A later run stops at the first already stored job.
    p1.remove();
    let fresh = server.mock("GET", JOBS).match_query(page(1)).with_body(json!([job(21, "success"), job(20, "success")]).to_string()).expect(1).create();
    let r = c.fetch_jobs("7", &st).unwrap();
    fresh.assert();
    assert_eq!((r.new_jobs, r.pages), (1, 1));
    assert_eq!(st.jobs().unwrap().len(), 4);
}

#[test]
fn pages_of_discarded_jobs_do_not_stop_the_walk() {
    let mut server = Server::new();
    server.mock("GET", JOBS).match_query(page(1)).with_body(json!([job(6, "canceled"), job(5, "skipped")]).to_string()).create();
    server.mock("GET", JOBS).match_query(page(2)).with_body(json!([job(4, "success")]).to_string()).create();
    let (_d, st) = store();
    let r = client(&server, 2).fetch_jobs("7", &st).unwrap();
    assert_eq!((r.new_jobs, r.discarded, r.pages), (1, 2, 2));
}
