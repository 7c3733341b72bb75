//! Imputed LC50 panels: one CSV per imputed dataset, selected by a glob pattern.

use std::path::{Path, PathBuf};

use crate::clustering::ImputedPanel;
use crate::error::{Error, Result};
use crate::model::N_DRUGS;

use super::dataset::LC50_COLUMNS;

/// Files matching `pattern`, sorted by path so the dataset order is stable.
pub fn panel_paths(pattern: &str) -> Result<Vec<PathBuf>> {
    let entries = glob::glob(pattern)
        .map_err(|e| Error::Config(format!("bad panel pattern '{pattern}': {e}")))?;
    let mut paths = Vec::new();
    for entry in entries {
        paths.push(entry.map_err(|e| {
            let path = e.path().to_path_buf();
            Error::io(path, e.into())
        })?);
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no files match panel pattern '{pattern}'"
        )));
    }
    Ok(paths)
}

/// Reads the five LC50 columns of one imputed dataset. Other columns are ignored.
pub fn read_panel_file(path: &Path, lc50_log10: bool) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let header = reader.headers()?.clone();
    let positions: Vec<usize> = LC50_COLUMNS
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h.eq_ignore_ascii_case(c))
                .ok_or_else(|| Error::format(path, format!("missing column '{c}'")))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(N_DRUGS);
        for (&p, name) in positions.iter().zip(LC50_COLUMNS) {
            let cell = record.get(p).unwrap_or("");
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite() && (!lc50_log10 || *v > 0.0))
                .ok_or_else(|| {
                    Error::format(
                        path,
                        format!("row {}: invalid {name} value '{cell}'", i + 1),
                    )
                })?;
            row.push(if lc50_log10 { v.log10() } else { v });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Loads every file matching `pattern` into a panel tagged by file name.
pub fn load_panel(pattern: &str, lc50_log10: bool) -> Result<(ImputedPanel, Vec<PathBuf>)> {
    let paths = panel_paths(pattern)?;
    let datasets = paths
        .iter()
        .map(|p| read_panel_file(p, lc50_log10))
        .collect::<Result<Vec<_>>>()?;
    let tags = paths
        .iter()
        .map(|p| {
            p.file_name().map_or_else(
                || p.display().to_string(),
                |f| f.to_string_lossy().into_owned(),
            )
        })
        .collect();
    Ok((ImputedPanel::new(datasets, tags)?, paths))
}

/// Writes one imputed dataset in the panel format.
pub fn write_panel_file(path: &Path, ids: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["id"];
    header.extend(LC50_COLUMNS);
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_sorted_files() {
        let dir = tempfile::tempdir().unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        for (name, shift) in [("imp_2.csv", 1.0), ("imp_1.csv", 0.0)] {
            let rows = vec![vec![shift; N_DRUGS], vec![shift + 0.5; N_DRUGS]];
            write_panel_file(&dir.path().join(name), &ids, &rows).unwrap();
        }
        let pattern = dir.path().join("imp_*.csv");
        let (panel, paths) = load_panel(pattern.to_str().unwrap(), false).unwrap();
        assert_eq!(panel.tags, ["imp_1.csv", "imp_2.csv"]);
        assert_eq!(paths.len(), 2);
        assert_eq!(panel.datasets[1][1][0], 1.5);
    }

    #[test]
    fn empty_match_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let pattern = dir.path().join("none_*.csv");
        assert!(load_panel(pattern.to_str().unwrap(), false).is_err());
    }
}
