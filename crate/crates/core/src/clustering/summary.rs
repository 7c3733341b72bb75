//! Per-cluster LC50 and subtype summaries, and MRD/LC50 Pearson correlation tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diagnostics::quantile_sorted;
use crate::model::{PatientRecord, N_DRUGS, Z_LOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub sizes: Vec<usize>,
    /// Mean log10 LC50 per cluster and drug.
    pub drug_means: Vec<[f64; N_DRUGS]>,
    /// Percentage of each cluster belonging to each subtype, keyed by subtype.
    pub subtype_percent: Vec<BTreeMap<String, f64>>,
    /// Per drug: min, Q1, median, Q3, max of the observed log10 LC50 over all patients.
    pub drug_quantiles: [[f64; 5]; N_DRUGS],
}

/// Summary tables of a partition (labels 0..k-1).
pub fn cluster_summary(
    partition: &[usize],
    lc50: &[[f64; N_DRUGS]],
    subtypes: &[String],
) -> ClusterSummary {
    assert_eq!(partition.len(), lc50.len());
    assert_eq!(partition.len(), subtypes.len());
    let k = partition.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    let mut sums = vec![[0.0; N_DRUGS]; k];
    let mut subtype_counts: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); k];
    for ((&c, y), s) in partition.iter().zip(lc50).zip(subtypes) {
        sizes[c] += 1;
        for d in 0..N_DRUGS {
            sums[c][d] += y[d];
        }
        *subtype_counts[c].entry(s.clone()).or_default() += 1;
    }
    let drug_means = sums
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| {
            let mut m = [f64::NAN; N_DRUGS];
            if n > 0 {
                for d in 0..N_DRUGS {
                    m[d] = s[d] / n as f64;
                }
            }
            m
        })
        .collect();
    let subtype_percent = subtype_counts
        .into_iter()
        .zip(&sizes)
        .map(|(counts, &n)| {
            counts
                .into_iter()
                .map(|(s, c)| (s, 100.0 * c as f64 / n as f64))
                .collect()
        })
        .collect();

    let mut drug_quantiles = [[f64::NAN; 5]; N_DRUGS];
    for (d, q) in drug_quantiles.iter_mut().enumerate() {
        let mut col: Vec<f64> = lc50.iter().map(|y| y[d]).collect();
        if col.is_empty() {
            continue;
        }
        col.sort_by(f64::total_cmp);
        for (slot, p) in q.iter_mut().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            *slot = quantile_sorted(&col, p);
        }
    }

    ClusterSummary {
        sizes,
        drug_means,
        subtype_percent,
        drug_quantiles,
    }
}

/// Why a correlation cell has no value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbsentReason {
    TooFewPairs,
    ZeroVariance,
}

impl AbsentReason {
    pub fn code(self) -> &'static str {
        match self {
            AbsentReason::TooFewPairs => "too_few_pairs",
            AbsentReason::ZeroVariance => "zero_variance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub drug: usize,
    pub subtype: String,
    /// 1 for day 15, 2 for day 42.
    pub time: u8,
    pub n: usize,
    pub value: Result<f64, AbsentReason>,
}

/// Minimum number of pairs for a correlation to be reported.
pub const MIN_PAIRS: usize = 3;

/// Sample Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation between log10 MRD and log10 LC50 per drug, subtype and time.
///
/// Censored MRD values are dropped unless `censored_at_limit` is set, in which case
/// they enter at the detection limit.
pub fn pearson_by_subtype(
    records: &[PatientRecord],
    lc50: &[[f64; N_DRUGS]],
    censored_at_limit: bool,
) -> Vec<CorrelationCell> {
    let mut subtypes: Vec<&str> = records.iter().map(|r| r.subtype.as_str()).collect();
    subtypes.sort_unstable();
    subtypes.dedup();

    let mut cells = Vec::new();
    for drug in 0..N_DRUGS {
        for &subtype in &subtypes {
            for time in [1u8, 2] {
                let (mut xs, mut ys) = (Vec::new(), Vec::new());
                for (r, y) in records.iter().zip(lc50) {
                    if r.subtype != subtype {
                        continue;
                    }
                    let z = if time == 1 { r.z1 } else { r.z2 };
                    let z = match (z, censored_at_limit) {
                        (Some(z), _) => z,
                        (None, true) => Z_LOW,
                        (None, false) => continue,
                    };
                    xs.push(z);
                    ys.push(y[drug]);
                }
                let value = if xs.len() < MIN_PAIRS {
                    Err(AbsentReason::TooFewPairs)
                } else {
                    pearson(&xs, &ys).ok_or(AbsentReason::ZeroVariance)
                };
                cells.push(CorrelationCell {
                    drug,
                    subtype: subtype.to_string(),
                    time,
                    n: xs.len(),
                    value,
                });
            }
        }
    }
    cells
}

/// Averages each cell over several LC50 matrices (one per imputed dataset). A cell is
/// reported when at least one dataset yields a value; `n` is taken from the first dataset.
pub fn pearson_by_subtype_panel(
    records: &[PatientRecord],
    panel: &[Vec<[f64; N_DRUGS]>],
    censored_at_limit: bool,
) -> Vec<CorrelationCell> {
    let tables: Vec<Vec<CorrelationCell>> = panel
        .iter()
        .map(|m| pearson_by_subtype(records, m, censored_at_limit))
        .collect();
    let Some(first) = tables.first() else {
        return Vec::new();
    };
    first
        .iter()
        .enumerate()
        .map(|(idx, cell)| {
            let values: Vec<f64> = tables.iter().filter_map(|t| t[idx].value.ok()).collect();
            let value = if values.is_empty() {
                cell.value
            } else {
                Ok(values.iter().sum::<f64>() / values.len() as f64)
            };
            CorrelationCell {
                value,
                ..cell.clone()
            }
        })
        .collect()
}
