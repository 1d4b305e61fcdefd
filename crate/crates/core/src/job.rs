//! Job-level domain types shared by every stage.

use alloc::string::String;
use chrono::{DateTime, Utc};
use core::fmt;
use serde::{Deserialize, Serialize};

/// Terminal status of a CI job. Other provider statuses are dropped at ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Success,
    Failed,
}

impl JobStatus {
    /// Maps a provider status string onto the retained statuses.
    pub fn from_provider(status: &str) -> Option<Self> {
        match status {
            "success" => Some(Self::Success),
            "failed" => Some(Self::Failed),
            _ => None,
        }
    }
}

/// One CI job run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRecord {
    pub project_id: String,
    pub job_id: u64,
    pub name: String,
    pub commit_sha: String,
    pub status: JobStatus,
    pub created_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    /// Path of the raw log relative to the store root.
    pub log_path: Option<String>,
    #[serde(rename = "ref")]
    pub git_ref: String,
}

impl JobRecord {
    pub fn is_failed(&self) -> bool {
        self.status == JobStatus::Failed
    }
}

/// Binary failure class. Serialized as the integers `1` / `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Regular,
    Intermittent,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Regular => 0,
            Label::Intermittent => 1,
        }
    }

    pub fn is_intermittent(self) -> bool {
        self == Label::Intermittent
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Regular => Label::Intermittent,
            Label::Intermittent => Label::Regular,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = InvalidLabel;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Regular),
            1 => Ok(Label::Intermittent),
            other => Err(InvalidLabel(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvalidLabel(pub u8);

impl fmt::Display for InvalidLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "label must be 0 or 1, got {}", self.0)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Regular => "regular",
            Label::Intermittent => "intermittent",
        })
    }
}
