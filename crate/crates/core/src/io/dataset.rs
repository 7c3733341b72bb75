//! Patient CSV ingestion and the matching writer.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowIssue};
use crate::model::design::{DEFAULT_SUBTYPES, REFERENCE_SUBTYPE};
use crate::model::{
    check_monotone_censoring, Gender, PatientRecord, Protocol, SubtypeRegistry, N_DRUGS,
};

/// Column order of the ingestion format.
pub const DATASET_COLUMNS: [&str; 13] = [
    "id",
    "age",
    "gender",
    "wbc",
    "subtype",
    "protocol",
    "mrd15",
    "mrd42",
    "lc50_asp",
    "lc50_pred",
    "lc50_vcr",
    "lc50_6tg",
    "lc50_6mp",
];

/// LC50 column names in drug order.
pub const LC50_COLUMNS: [&str; N_DRUGS] =
    ["lc50_asp", "lc50_pred", "lc50_vcr", "lc50_6tg", "lc50_6mp"];

/// Literal token for an MRD value below the detection limit.
pub const CENSOR_TOKEN: &str = "<0.01";

/// MRD detection limit in percent.
pub const MRD_LIMIT: f64 = 0.01;

/// Level rare subtypes are pooled into.
pub const OTHER_SUBTYPE: &str = "Other";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtypeRules {
    /// Levels seen fewer times than this (after renaming) become [`OTHER_SUBTYPE`].
    pub min_count: usize,
    /// Explicit renames applied first, e.g. the Ph-like CRLF2 variants into "Ph-like".
    pub merge: BTreeMap<String, String>,
}

impl Default for SubtypeRules {
    fn default() -> Self {
        let merge = [
            "Ph-like CRLF2",
            "Ph-like non-CRLF2",
            "Ph-like-CRLF2",
            "Ph-like-nonCRLF2",
        ]
        .into_iter()
        .map(|s| (s.to_string(), "Ph-like".to_string()))
        .collect();
        Self {
            min_count: 10,
            merge,
        }
    }
}

impl SubtypeRules {
    /// Parses `from:to` pairs separated by commas.
    pub fn parse_merge(spec: &str) -> Result<BTreeMap<String, String>> {
        spec.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|pair| {
                let (from, to) = pair.split_once(':').ok_or_else(|| {
                    Error::Config(format!("subtype merge entry '{pair}' is not from:to"))
                })?;
                Ok((from.trim().to_string(), to.trim().to_string()))
            })
            .collect()
    }

    pub fn format_merge(&self) -> String {
        self.merge
            .iter()
            .map(|(a, b)| format!("{a}:{b}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Applies the rename list, then pools rare levels. Idempotent and independent of
/// record order.
pub fn merge_subtypes(records: &mut [PatientRecord], rules: &SubtypeRules) {
    for r in records.iter_mut() {
        if let Some(to) = rules.merge.get(&r.subtype) {
            r.subtype = to.clone();
        }
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records.iter() {
        *counts.entry(r.subtype.as_str()).or_default() += 1;
    }
    let rare: BTreeSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c < rules.min_count)
        .map(|(s, _)| s.to_string())
        .collect();
    for r in records.iter_mut() {
        if rare.contains(&r.subtype) {
            r.subtype = OTHER_SUBTYPE.to_string();
        }
    }
}

/// Registry of the levels present: default levels in their usual order (reference
/// first), then any others alphabetically.
pub fn registry_for(records: &[PatientRecord]) -> Result<SubtypeRegistry> {
    let present: BTreeSet<&str> = records.iter().map(|r| r.subtype.as_str()).collect();
    let mut levels: Vec<String> = DEFAULT_SUBTYPES
        .iter()
        .filter(|s| present.contains(*s))
        .map(|s| s.to_string())
        .collect();
    levels.extend(
        present
            .iter()
            .filter(|s| !DEFAULT_SUBTYPES.contains(s))
            .map(|s| s.to_string()),
    );
    debug_assert!(!present.contains(REFERENCE_SUBTYPE) || levels[0] == REFERENCE_SUBTYPE);
    SubtypeRegistry::new(levels)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Take log10 of LC50 cells on ingest instead of reading them as log10 already.
    pub lc50_log10: bool,
    pub subtypes: SubtypeRules,
}

/// Parsed dataset. Missing LC50 cells are NaN until [`fill_lc50`] replaces them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDataset {
    pub records: Vec<PatientRecord>,
    /// Missing LC50 cells per drug.
    pub missing: [usize; N_DRUGS],
}

impl ParsedDataset {
    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m > 0)
    }

    /// One line per drug with the share of missing LC50 cells.
    pub fn missing_report(&self) -> String {
        let n = self.records.len().max(1) as f64;
        LC50_COLUMNS
            .iter()
            .zip(self.missing)
            .map(|(c, m)| format!("{c}: {m} missing ({:.2}%)", 100.0 * m as f64 / n))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Parses one MRD cell: the censor token or any value below the limit gives `None`.
pub fn parse_mrd(cell: &str) -> std::result::Result<Option<f64>, String> {
    let cell = cell.trim();
    if cell == CENSOR_TOKEN {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| format!("non-numeric MRD value '{cell}'"))?;
    if !v.is_finite() {
        return Err(format!("non-finite MRD value '{cell}'"));
    }
    if v < 0.0 {
        return Err(format!("negative MRD value {v}"));
    }
    Ok((v >= MRD_LIMIT).then(|| v.log10()))
}

fn parse_number(cell: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| format!("non-numeric {what} '{}'", cell.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {what} '{}'", cell.trim()))
    }
}

fn parse_row(
    cells: &[&str],
    options: &IngestOptions,
) -> std::result::Result<PatientRecord, String> {
    let id = cells[0].trim().to_string();
    let age = parse_number(cells[1], "age")?;
    let gender =
        Gender::parse(cells[2]).ok_or_else(|| format!("unknown gender '{}'", cells[2].trim()))?;
    let wbc = parse_number(cells[3], "wbc")?;
    if wbc <= 0.0 {
        return Err(format!("wbc must be positive, got {wbc}"));
    }
    let subtype = cells[4].trim().to_string();
    if subtype.is_empty() {
        return Err("empty subtype".into());
    }
    let protocol = Protocol::parse(cells[5])
        .ok_or_else(|| format!("unknown protocol '{}'", cells[5].trim()))?;
    let z1 = parse_mrd(cells[6]).map_err(|m| format!("mrd15: {m}"))?;
    let z2 = parse_mrd(cells[7]).map_err(|m| format!("mrd42: {m}"))?;
    let mut lc50 = [f64::NAN; N_DRUGS];
    for (d, v) in lc50.iter_mut().enumerate() {
        let cell = cells[8 + d].trim();
        if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
            continue;
        }
        let x = parse_number(cell, LC50_COLUMNS[d])?;
        *v = if options.lc50_log10 {
            if x <= 0.0 {
                return Err(format!(
                    "{} must be positive before log10, got {x}",
                    LC50_COLUMNS[d]
                ));
            }
            x.log10()
        } else {
            x
        };
    }
    Ok(PatientRecord {
        id,
        age,
        gender,
        log10_wbc: wbc.log10(),
        subtype,
        protocol,
        z1,
        z2,
        lc50,
    })
}

/// Parses a dataset from CSV text. `source` names the input in error messages.
pub fn parse_dataset_str(
    text: &str,
    source: &Path,
    options: &IngestOptions,
) -> Result<ParsedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let positions: Vec<usize> = DATASET_COLUMNS
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h.eq_ignore_ascii_case(c))
                .ok_or_else(|| Error::format(source, format!("missing column '{c}'")))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut issues = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let record = result?;
        let cells: Vec<&str> = positions
            .iter()
            .map(|&p| record.get(p).unwrap_or(""))
            .collect();
        match parse_row(&cells, options) {
            Ok(r) => records.push(r),
            Err(message) => issues.push(RowIssue {
                row: row + 1,
                id: cells[0].trim().to_string(),
                message,
            }),
        }
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }

    let non_monotone = check_monotone_censoring(&records);
    if !non_monotone.is_empty() {
        return Err(Error::Validation(
            non_monotone
                .into_iter()
                .map(|i| RowIssue {
                    row: i + 1,
                    id: records[i].id.clone(),
                    message: "MRD below the limit at day 15 but detected at day 42".into(),
                })
                .collect(),
        ));
    }

    merge_subtypes(&mut records, &options.subtypes);
    let mut missing = [0; N_DRUGS];
    for r in &records {
        for (m, v) in missing.iter_mut().zip(r.lc50) {
            *m += usize::from(v.is_nan());
        }
    }
    Ok(ParsedDataset { records, missing })
}

pub fn parse_dataset(path: &Path, options: &IngestOptions) -> Result<ParsedDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset_str(&text, path, options)
}

/// Replaces missing LC50 cells with the values of an imputed matrix (rows in dataset order).
pub fn fill_lc50(records: &mut [PatientRecord], imputed: &[Vec<f64>]) -> Result<()> {
    if imputed.len() != records.len() {
        return Err(Error::Dimension(format!(
            "imputed dataset has {} rows, dataset has {}",
            imputed.len(),
            records.len()
        )));
    }
    for (r, row) in records.iter_mut().zip(imputed) {
        if row.len() != N_DRUGS {
            return Err(Error::Dimension(format!(
                "imputed row has {} drugs",
                row.len()
            )));
        }
        for (v, &x) in r.lc50.iter_mut().zip(row) {
            if v.is_nan() {
                *v = x;
            }
        }
    }
    Ok(())
}

fn format_mrd(z: Option<f64>) -> String {
    match z {
        Some(z) => format!("{}", 10f64.powf(z)),
        None => CENSOR_TOKEN.to_string(),
    }
}

/// Writes records in the ingestion format. Parsing the output reproduces records
/// whose values passed through the percent scale (as simulated ones do) exactly.
pub fn write_dataset<W: std::io::Write>(records: &[PatientRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATASET_COLUMNS)?;
    for r in records {
        let mut row = vec![
            r.id.clone(),
            format!("{}", r.age),
            r.gender.code().to_string(),
            format!("{}", 10f64.powf(r.log10_wbc)),
            r.subtype.clone(),
            r.protocol.code().to_string(),
            format_mrd(r.z1),
            format_mrd(r.z2),
        ];
        row.extend(r.lc50.iter().map(|v| {
            if v.is_nan() {
                String::new()
            } else {
                format!("{v}")
            }
        }));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<dataset>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,age,gender,wbc,subtype,protocol,mrd15,mrd42,lc50_asp,lc50_pred,lc50_vcr,lc50_6tg,lc50_6mp\n";

    fn parse(body: &str) -> Result<ParsedDataset> {
        let options = IngestOptions {
            subtypes: SubtypeRules {
                min_count: 1,
                ..SubtypeRules::default()
            },
            ..IngestOptions::default()
        };
        parse_dataset_str(&format!("{HEADER}{body}"), Path::new("test.csv"), &options)
    }

    #[test]
    fn mrd_cells() {
        assert_eq!(parse_mrd("<0.01").unwrap(), None);
        assert_eq!(parse_mrd("0").unwrap(), None);
        assert_eq!(parse_mrd("0.005").unwrap(), None);
        assert!((parse_mrd("0.05").unwrap().unwrap() - (-1.3010299956639813)).abs() < 1e-12);
        assert!((parse_mrd("36.0").unwrap().unwrap() - 1.5563025007672873).abs() < 1e-12);
        assert_eq!(parse_mrd("0.01").unwrap(), Some(-2.0));
        assert!(parse_mrd("-1").is_err());
        assert!(parse_mrd("abc").is_err());
    }

    #[test]
    fn parses_a_row() {
        let d = parse("P1,5,F,100,DUX4,T16,0.05,<0.01,1,2,3,4,5\n").unwrap();
        let r = &d.records[0];
        assert_eq!(r.gender, Gender::Female);
        assert_eq!(r.log10_wbc, 2.0);
        assert_eq!(r.z2, None);
        assert_eq!(r.lc50, [1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(!d.has_missing());
    }

    #[test]
    fn row_errors_are_listed_together() {
        let err =
            parse("P1,5,F,100,DUX4,T16,-0.5,<0.01,1,2,3,4,5\nP2,x,F,100,DUX4,T16,1,1,1,2,3,4,5\n")
                .unwrap_err();
        match err {
            Error::Validation(issues) => {
                assert_eq!(issues.len(), 2);
                assert_eq!(issues[0].id, "P1");
                assert_eq!(issues[1].row, 2);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_monotone_rows_are_named() {
        let err = parse("P1,5,F,100,DUX4,T16,<0.01,0.5,1,2,3,4,5\n").unwrap_err();
        assert!(err.to_string().contains("P1"));
        assert!(err.is_validation());
    }

    #[test]
    fn missing_column_is_reported() {
        let text = "id,age\nP1,3\n";
        let err =
            parse_dataset_str(text, Path::new("x.csv"), &IngestOptions::default()).unwrap_err();
        assert!(err.to_string().contains("missing column 'gender'"));
    }

    #[test]
    fn missing_lc50_cells_are_counted() {
        let d = parse("P1,5,F,100,DUX4,T16,0.05,<0.01,,2,NA,4,5\n").unwrap();
        assert_eq!(d.missing, [1, 0, 1, 0, 0]);
        assert!(d.missing_report().contains("100.00%"));
    }

    #[test]
    fn merging_pools_rare_levels() {
        let mut recs: Vec<PatientRecord> = parse(
            "A,5,F,100,Ph-like CRLF2,T16,1,1,1,2,3,4,5\nB,5,F,100,Ph-like,T16,1,1,1,2,3,4,5\nC,5,F,100,KMT2A,T16,1,1,1,2,3,4,5\n",
        )
        .unwrap()
        .records;
        let rules = SubtypeRules {
            min_count: 2,
            ..SubtypeRules::default()
        };
        merge_subtypes(&mut recs, &rules);
        let levels: Vec<&str> = recs.iter().map(|r| r.subtype.as_str()).collect();
        assert_eq!(levels, ["Ph-like", "Ph-like", "Other"]);
    }

    #[test]
    fn merge_spec_round_trips() {
        let rules = SubtypeRules::default();
        assert_eq!(
            SubtypeRules::parse_merge(&rules.format_merge()).unwrap(),
            rules.merge
        );
        assert!(SubtypeRules::parse_merge("a-b").is_err());
    }
}
