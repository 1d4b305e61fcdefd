//! Manual-label overlay files: CSV with a header row
//! `job_id,manual_label,justification,category`, labels as `1`/`0` or
//! `intermittent`/`regular`.

use std::path::Path;

use flakeshot_core::labeler::OverlayRow;
use flakeshot_core::Label;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum OverlayError {
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: row {row}: unknown label {value:?}")]
    Label { path: String, row: usize, value: String },
}

#[derive(Debug, Deserialize)]
struct Raw {
    job_id: u64,
    manual_label: String,
    #[serde(default)]
    justification: String,
    #[serde(default)]
    category: String,
}

fn parse_label(s: &str) -> Option<Label> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "intermittent" => Some(Label::Intermittent),
        "0" | "regular" => Some(Label::Regular),
        _ => None,
    }
}

pub fn read_overlay(path: &Path) -> Result<Vec<OverlayRow>, OverlayError> {
    let p = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|source| OverlayError::Csv { path: p.clone(), source })?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<Raw>().enumerate() {
        let raw = rec.map_err(|source| OverlayError::Csv { path: p.clone(), source })?;
        let manual_label = parse_label(&raw.manual_label).ok_or_else(|| OverlayError::Label { path: p.clone(), row: i + 1, value: raw.manual_label.clone() })?;
        rows.push(OverlayRow { job_id: raw.job_id, manual_label, justification: raw.justification, category: raw.category });
    }
    Ok(rows)
}

pub fn write_overlay(path: &Path, rows: &[OverlayRow]) -> Result<(), OverlayError> {
    let p = path.display().to_string();
    let wrap = |source| OverlayError::Csv { path: p.clone(), source };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(["job_id", "manual_label", "justification", "category"]).map_err(wrap)?;
    for r in rows {
        w.write_record([r.job_id.to_string(), r.manual_label.as_u8().to_string(), r.justification.clone(), r.category.clone()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| wrap(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_numeric_and_named_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.csv");
        std::fs::write(&path, "job_id,manual_label,justification,category\n7,1,\"runner died, see log\",infra\n8, regular ,,\n").unwrap();
        let rows = read_overlay(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].manual_label, Label::Intermittent);
        assert_eq!(rows[0].justification, "runner died, see log");
        assert_eq!(rows[1].manual_label, Label::Regular);
        write_overlay(&path, &rows).unwrap();
        assert_eq!(read_overlay(&path).unwrap(), rows);
    }

    #[test]
    fn rejects_unknown_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.csv");
        std::fs::write(&path, "job_id,manual_label\n7,maybe\n").unwrap();
        assert!(matches!(read_overlay(&path), Err(OverlayError::Label { row: 1, .. })));
    }
}
