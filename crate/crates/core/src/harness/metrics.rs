//! Metrics rows, CSV output and the JSON sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scheme: String,
    /// Sweep axis name; empty outside sweeps.
    pub axis: String,
    pub axis_value: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub replication: usize,
    pub seed: u64,
}

impl MetricsRow {
    pub fn new(scheme: &str, metric: impl Into<String>, value: f64, seed: u64) -> Self {
        Self {
            scheme: scheme.to_string(),
            axis: String::new(),
            axis_value: None,
            metric: metric.into(),
            value,
            replication: 0,
            seed,
        }
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}

/// Rows to `path` and the resolved settings to the sidecar next to it.
pub fn write_metrics(path: &Path, rows: &[MetricsRow], sidecar: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_rows(path, rows)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

/// First value of `metric` for `scheme`.
pub fn lookup(rows: &[MetricsRow], scheme: &str, metric: &str) -> Option<f64> {
    rows.iter().find(|r| r.scheme == scheme && r.metric == metric).map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_bits() {
        let mut a = MetricsRow::new("dlpcn", "WSR", 0.1 + 0.2, 7);
        a.axis = "p2_dbw".into();
        a.axis_value = Some(5.0);
        let b = MetricsRow::new("zfbf", "outage_0", 1.0 / 3.0, 7);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&p, &[a.clone(), b.clone()], &serde_json::json!({"k": 1})).unwrap();
        assert_eq!(read_rows(&p).unwrap(), vec![a, b]);
        assert!(sidecar_path(&p).exists());
        assert_eq!(lookup(&read_rows(&p).unwrap(), "zfbf", "outage_0"), Some(1.0 / 3.0));
    }
}
