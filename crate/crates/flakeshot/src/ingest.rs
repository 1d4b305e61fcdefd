//! GitLab v4 job and trace fetching into a [`ProjectStore`].

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use flakeshot_core::{JobRecord, JobStatus};
use reqwest::blocking::{Client, Response};
use reqwest::{StatusCode, Url};
use serde::{Deserialize, Serialize};

use crate::store::{Cursor, Marker, MarkerKind, ProjectStore, StoreError};

pub const TOKEN_ENV: &str = "CI_INGEST_TOKEN";

#[derive(Debug, Clone)]
pub struct FetchOptions {
    /// 1..=100, the GitLab maximum.
    pub page_size: u32,
    /// Re-fetch jobs already in the store and replace their rows.
    pub refresh: bool,
    /// Concurrent trace downloads.
    pub parallelism: usize,
    pub max_attempts: u32,
    pub backoff: Duration,
    /// Upper bound on a single 429 wait.
    pub max_rate_limit_wait: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            page_size: 100,
            refresh: false,
            parallelism: 4,
            max_attempts: 5,
            backoff: Duration::from_millis(500),
            max_rate_limit_wait: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchReport {
    pub new_jobs: usize,
    pub updated_jobs: usize,
    pub pages: u32,
    /// Jobs with a status other than success/failed.
    pub discarded: usize,
    pub missing_logs: usize,
    pub empty_logs: usize,
    pub decode_replaced: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("page_size must be in 1..=100, got {0}")]
    PageSize(u32),
    #[error("invalid base url {0:?}")]
    BaseUrl(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("HTTP {status} from {url}")]
    Http { status: u16, url: String },
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("malformed response from {url}: {message}")]
    Malformed { url: String, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("fetch interrupted after persisting {} new jobs on {} pages: {source}", .progress.new_jobs, .progress.pages)]
    Partial { progress: FetchReport, source: Box<IngestError> },
}

impl IngestError {
    /// Whether the failure lies outside the data (network, credentials).
    pub fn is_environment(&self) -> bool {
        match self {
            IngestError::Auth(_) | IngestError::Http { .. } | IngestError::Network { .. } => true,
            IngestError::Partial { source, .. } => source.is_environment(),
            _ => false,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ApiCommit {
    id: String,
}

#[derive(Debug, Deserialize)]
struct ApiJob {
    id: u64,
    name: String,
    status: String,
    #[serde(rename = "ref", default)]
    git_ref: String,
    created_at: DateTime<chrono::FixedOffset>,
    finished_at: Option<DateTime<chrono::FixedOffset>>,
    commit: ApiCommit,
}

pub struct GitlabClient {
    http: Client,
    base: Url,
    token: String,
    opts: FetchOptions,
}

enum Fetched {
    Body(Vec<u8>),
    NotFound,
}

impl GitlabClient {
    /// `base_url` is the API root, e.g. `https://gitlab.com/api/v4`. An empty
    /// token means anonymous access, which public projects allow.
    pub fn new(base_url: &str, token: &str, opts: FetchOptions) -> Result<Self, IngestError> {
        if !(1..=100).contains(&opts.page_size) {
            return Err(IngestError::PageSize(opts.page_size));
        }
        let base = Url::parse(base_url.trim_end_matches('/')).map_err(|_| IngestError::BaseUrl(base_url.to_string()))?;
        if base.cannot_be_a_base() {
            return Err(IngestError::BaseUrl(base_url.to_string()));
        }
        let http = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| IngestError::Network { attempts: 0, message: e.to_string() })?;
        Ok(Self { http, base, token: token.to_string(), opts })
    }

    fn url(&self, segments: &[&str]) -> Url {
        let mut url = self.base.clone();
        if let Ok(mut p) = url.path_segments_mut() {
            p.pop_if_empty();
            p.extend(segments);
        }
        url
    }

    /// GET with retries on transport errors and 5xx, and waits on 429.
    fn get(&self, url: &Url) -> Result<Fetched, IngestError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let retry = |msg: String| -> Result<(), IngestError> {
                if attempt >= self.opts.max_attempts {
                    return Err(IngestError::Network { attempts: attempt, message: msg });
                }
                thread::sleep(self.opts.backoff * 2u32.saturating_pow(attempt - 1));
                Ok(())
            };
            let mut req = self.http.get(url.clone());
            if !self.token.is_empty() {
                req = req.header("PRIVATE-TOKEN", &self.token);
            }
            let resp: Response = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    retry(e.to_string())?;
                    continue;
                }
            };
            let status = resp.status();
            match status {
                s if s.is_success() => {
                    return match resp.bytes() {
                        Ok(b) => Ok(Fetched::Body(b.to_vec())),
                        Err(e) => {
                            retry(e.to_string())?;
                            continue;
                        }
                    };
                }
                StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => return Err(IngestError::Auth(status.as_u16())),
                StatusCode::NOT_FOUND => return Ok(Fetched::NotFound),
                StatusCode::TOO_MANY_REQUESTS => {
                    if attempt >= self.opts.max_attempts {
                        return Err(IngestError::Network { attempts: attempt, message: "rate limited".into() });
                    }
                    let wait = resp
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<u64>().ok())
                        .map(Duration::from_secs)
                        .unwrap_or(self.opts.backoff * 2u32.saturating_pow(attempt - 1));
                    thread::sleep(wait.min(self.opts.max_rate_limit_wait));
                }
                s if s.is_server_error() => retry(format!("HTTP {}", s.as_u16()))?,
                s => return Err(IngestError::Http { status: s.as_u16(), url: url.to_string() }),
            }
        }
    }

    fn jobs_page(&self, project_id: &str, page: u32) -> Result<Vec<ApiJob>, IngestError> {
        let mut url = self.url(&["projects", project_id, "jobs"]);
        url.query_pairs_mut()
            .append_pair("scope[]", "success")
            .append_pair("scope[]", "failed")
            .append_pair("per_page", &self.opts.page_size.to_string())
            .append_pair("page", &page.to_string());
        match self.get(&url)? {
            Fetched::Body(b) => serde_json::from_slice(&b).map_err(|e| IngestError::Malformed { url: url.to_string(), message: e.to_string() }),
            Fetched::NotFound => Err(IngestError::Http { status: 404, url: url.to_string() }),
        }
    }

    /// Raw trace bytes, or `None` on 404.
    pub fn fetch_trace(&self, project_id: &str, job_id: u64) -> Result<Option<Vec<u8>>, IngestError> {
        let url = self.url(&["projects", project_id, "jobs", &job_id.to_string(), "trace"]);
        Ok(match self.get(&url)? {
            Fetched::Body(b) => Some(b),
            Fetched::NotFound => None,
        })
    }

    /// Trace decoded as UTF-8 with invalid sequences replaced. The flag
    /// reports whether any replacement happened.
    pub fn fetch_log(&self, project_id: &str, job_id: u64) -> Result<Option<(String, bool)>, IngestError> {
        Ok(self.fetch_trace(project_id, job_id)?.map(decode_trace))
    }

    fn traces(&self, project_id: &str, ids: &[u64]) -> Vec<Result<Option<Vec<u8>>, IngestError>> {
        let slots: Vec<Mutex<Option<Result<Option<Vec<u8>>, IngestError>>>> = ids.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        thread::scope(|s| {
            for _ in 0..self.opts.parallelism.clamp(1, ids.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&id) = ids.get(i) else { break };
                    let r = self.fetch_trace(project_id, id);
                    *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap_or_else(|p| p.into_inner()).unwrap_or(Ok(None)))
            .collect()
    }

    /// Fetches every completed job newer than the store cursor, with logs for
    /// failed jobs. Safe to re-run: known job ids are skipped unless
    /// `refresh` is set.
    pub fn fetch_jobs(&self, project_id: &str, store: &ProjectStore) -> Result<FetchReport, IngestError> {
        let mut report = FetchReport::default();
        let wrap = |report: &FetchReport, e: IngestError| IngestError::Partial { progress: report.clone(), source: Box::new(e) };
        let mut cursor = store.cursor()?;
        let known: BTreeSet<u64> = store.job_ids()?;
        let high_water = if self.opts.refresh { None } else { cursor.high_water };
        let mut page = if self.opts.refresh { 1 } else { cursor.resume_page.unwrap_or(1) };
        let mut pending = cursor.pending_high_water.max(cursor.high_water);
        loop {
            let jobs = self.jobs_page(project_id, page).map_err(|e| wrap(&report, e))?;
            report.pages += 1;
            let full_page = jobs.len() == self.opts.page_size as usize;
            // Pages come newest first, so one job at or below the high-water
            // mark means the rest of the history is already stored.
            let mut reached_old = false;
            let mut batch = Vec::new();
            for j in jobs {
                if high_water.is_some_and(|h| j.id <= h) {
                    reached_old = true;
                    continue;
                }
                let Some(status) = JobStatus::from_provider(&j.status) else {
                    report.discarded += 1;
                    continue;
                };
                pending = pending.max(Some(j.id));
                if known.contains(&j.id) && !self.opts.refresh {
                    continue;
                }
                batch.push(JobRecord {
                    project_id: project_id.to_string(),
                    job_id: j.id,
                    name: j.name,
                    commit_sha: j.commit.id,
                    status,
                    created_at: j.created_at.with_timezone(&Utc),
                    finished_at: j.finished_at.map(|t| t.with_timezone(&Utc)),
                    log_path: None,
                    git_ref: j.git_ref,
                });
            }
            batch.sort_by_key(|j| j.job_id);
            self.persist(project_id, store, batch, &known, &mut report).map_err(|e| wrap(&report, e))?;
            if !full_page || reached_old {
                break;
            }
            page += 1;
            cursor.resume_page = Some(page);
            cursor.pending_high_water = pending;
            store.save_cursor(&cursor).map_err(|e| wrap(&report, e.into()))?;
        }
        store.compact().map_err(|e| wrap(&report, e.into()))?;
        store
            .save_cursor(&Cursor { high_water: pending.max(cursor.high_water), resume_page: None, pending_high_water: None })
            .map_err(|e| wrap(&report, e.into()))?;
        Ok(report)
    }

    fn persist(
        &self,
        project_id: &str,
        store: &ProjectStore,
        mut batch: Vec<JobRecord>,
        known: &BTreeSet<u64>,
        report: &mut FetchReport,
    ) -> Result<(), IngestError> {
        let failed: Vec<u64> = batch.iter().filter(|j| j.is_failed()).map(|j| j.job_id).collect();
        let traces = self.traces(project_id, &failed);
        let mut markers = Vec::new();
        for (id, trace) in failed.iter().zip(traces) {
            let job = batch.iter_mut().find(|j| j.job_id == *id).expect("failed id from batch");
            match trace? {
                None => {
                    report.missing_logs += 1;
                    markers.push(Marker { job_id: *id, kind: MarkerKind::MissingLog });
                }
                Some(bytes) => {
                    let (text, replaced) = decode_trace(bytes);
                    if replaced {
                        report.decode_replaced += 1;
                        markers.push(Marker { job_id: *id, kind: MarkerKind::DecodeReplaced });
                    }
                    if text.is_empty() {
                        report.empty_logs += 1;
                        markers.push(Marker { job_id: *id, kind: MarkerKind::EmptyLog });
                    }
                    job.log_path = Some(store.write_log(*id, &text)?);
                }
            }
        }
        store.add_markers(&markers)?;
        let (updated, new): (Vec<JobRecord>, Vec<JobRecord>) = batch.into_iter().partition(|j| known.contains(&j.job_id));
        report.new_jobs += new.len();
        report.updated_jobs += updated.len();
        store.append_jobs(&new)?;
        if !updated.is_empty() {
            store.upsert_jobs(&updated)?;
        }
        Ok(())
    }
}

pub fn decode_trace(bytes: Vec<u8>) -> (String, bool) {
    match String::from_utf8(bytes) {
        Ok(s) => (s, false),
        Err(e) => (String::from_utf8_lossy(e.as_bytes()).into_owned(), true),
    }
}
