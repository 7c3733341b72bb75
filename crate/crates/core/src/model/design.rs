//! Covariate design matrix: standardized continuous columns plus dummy blocks
//! for gender, protocol and subtype.

use serde::{Deserialize, Serialize};

use super::types::{Gender, PatientRecord, Protocol};
use crate::error::{Error, Result};

/// Reference subtype; all subtype dummies are zero for it.
pub const REFERENCE_SUBTYPE: &str = "ETV6-RUNX1";

/// Default twelve-level subtype registry, reference level first.
pub const DEFAULT_SUBTYPES: [&str; 12] = [
    REFERENCE_SUBTYPE,
    "Hyperdiploid",
    "T-ALL",
    "DUX4",
    "Ph-like",
    "BCR-ABL1",
    "KMT2A",
    "TCF3-PBX1",
    "PAX5alt",
    "ETV6-RUNX1-like",
    "Low-hypodiploid",
    "Other",
];

/// Ordered set of admissible subtype levels. Index 0 is the reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtypeRegistry {
    levels: Vec<String>,
}

impl Default for SubtypeRegistry {
    fn default() -> Self {
        Self {
            levels: DEFAULT_SUBTYPES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SubtypeRegistry {
    pub fn new(levels: Vec<String>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("subtype registry is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &levels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Config(format!("duplicate subtype level '{l}'")));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn index_of(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    pub fn dummy_count(&self) -> usize {
        self.levels.len() - 1
    }
}

/// Centering/scaling applied to one continuous column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization { mean: 0.0, sd: 1.0 };

    /// Sample mean and (n-1) standard deviation; degenerate columns keep unit scale.
    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count();
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        if n < 2 {
            return Standardization { mean, sd: 1.0 };
        }
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        Standardization {
            mean,
            sd: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
        }
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    #[inline]
    pub fn invert(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }
}

/// Row-major N × p covariate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub n: usize,
    pub p: usize,
    data: Vec<f64>,
    pub columns: Vec<String>,
    pub age_transform: Standardization,
    pub wbc_transform: Standardization,
    pub subtypes: SubtypeRegistry,
}

/// Column positions of the fixed layout.
pub mod col {
    pub const AGE: usize = 0;
    pub const GENDER_FEMALE: usize = 1;
    pub const LOG10_WBC: usize = 2;
    pub const PROTOCOL_T15: usize = 3;
    pub const PROTOCOL_T17: usize = 4;
    pub const FIRST_SUBTYPE: usize = 5;
}

impl DesignMatrix {
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.p.max(1)).take(self.n)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Builds a design directly from a dense row-major buffer (used for hand-built tests).
    pub fn from_rows(columns: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let p = columns.len();
        if p == 0 && !data.is_empty() || p > 0 && !data.len().is_multiple_of(p) {
            return Err(Error::Dimension(
                "buffer length not a multiple of column count".into(),
            ));
        }
        let n = data.len().checked_div(p).unwrap_or(0);
        Ok(Self {
            n,
            p,
            data,
            columns,
            age_transform: Standardization::IDENTITY,
            wbc_transform: Standardization::IDENTITY,
            subtypes: SubtypeRegistry::default(),
        })
    }
}

/// Column names in layout order for a given registry.
pub fn design_columns(subtypes: &SubtypeRegistry) -> Vec<String> {
    let mut columns = vec![
        "age".to_string(),
        "gender_female".to_string(),
        "log10_wbc".to_string(),
        "protocol_T15".to_string(),
        "protocol_T17".to_string(),
    ];
    columns.extend(
        subtypes.levels()[1..]
            .iter()
            .map(|s| format!("subtype_{s}")),
    );
    columns
}

/// Builds the covariate matrix. Age and log10 WBC are standardized when requested;
/// reference levels (male, T16, the first registry subtype) give all-zero dummies.
pub fn build_design(
    records: &[PatientRecord],
    subtypes: &SubtypeRegistry,
    standardize: bool,
) -> Result<DesignMatrix> {
    let columns = design_columns(subtypes);
    let p = columns.len();

    let mut subtype_idx = Vec::with_capacity(records.len());
    for r in records {
        let idx = subtypes
            .index_of(&r.subtype)
            .ok_or_else(|| Error::UnknownLevel {
                kind: "subtype",
                level: r.subtype.clone(),
                id: r.id.clone(),
            })?;
        subtype_idx.push(idx);
    }

    let (age_t, wbc_t) = if standardize {
        (
            Standardization::fit(records.iter().map(|r| r.age)),
            Standardization::fit(records.iter().map(|r| r.log10_wbc)),
        )
    } else {
        (Standardization::IDENTITY, Standardization::IDENTITY)
    };

    let mut data = vec![0.0; records.len() * p];
    for (i, (r, &s)) in records.iter().zip(&subtype_idx).enumerate() {
        let row = &mut data[i * p..(i + 1) * p];
        row[col::AGE] = age_t.apply(r.age);
        row[col::GENDER_FEMALE] = f64::from(r.gender == Gender::Female);
        row[col::LOG10_WBC] = wbc_t.apply(r.log10_wbc);
        match r.protocol {
            Protocol::T15 => row[col::PROTOCOL_T15] = 1.0,
            Protocol::T17 => row[col::PROTOCOL_T17] = 1.0,
            Protocol::T16 => {}
        }
        if s > 0 {
            row[col::FIRST_SUBTYPE + s - 1] = 1.0;
        }
    }

    Ok(DesignMatrix {
        n: records.len(),
        p,
        data,
        columns,
        age_transform: age_t,
        wbc_transform: wbc_t,
        subtypes: subtypes.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::types::N_DRUGS;

    fn record(id: &str, age: f64, subtype: &str, protocol: Protocol) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            age,
            gender: Gender::Male,
            log10_wbc: 1.0,
            subtype: subtype.into(),
            protocol,
            z1: None,
            z2: None,
            lc50: [0.0; N_DRUGS],
        }
    }

    #[test]
    fn reference_levels_give_zero_dummies() {
        let reg = SubtypeRegistry::default();
        let d = build_design(
            &[record("a", 5.0, "ETV6-RUNX1", Protocol::T16)],
            &reg,
            false,
        )
        .unwrap();
        assert_eq!(d.p, 16);
        assert_eq!(reg.dummy_count(), 11);
        assert!(d.row(0)[col::PROTOCOL_T15..].iter().all(|&v| v == 0.0));
        assert_eq!(d.row(0)[col::GENDER_FEMALE], 0.0);
    }

    #[test]
    fn non_reference_levels_set_one_dummy() {
        let reg = SubtypeRegistry::default();
        let recs = vec![
            record("a", 5.0, "Hyperdiploid", Protocol::T15),
            record("b", 5.0, "Other", Protocol::T17),
        ];
        let d = build_design(&recs, &reg, false).unwrap();
        for i in 0..2 {
            let row = d.row(i);
            let sub: f64 = row[col::FIRST_SUBTYPE..].iter().sum();
            let prot: f64 = row[col::PROTOCOL_T15..=col::PROTOCOL_T17].iter().sum();
            assert_eq!(sub, 1.0);
            assert_eq!(prot, 1.0);
        }
        assert_eq!(
            d.row(0)[d.column_index("subtype_Hyperdiploid").unwrap()],
            1.0
        );
        assert_eq!(d.row(1)[d.column_index("protocol_T17").unwrap()], 1.0);
    }

    #[test]
    fn standardized_ages_are_centered() {
        let reg = SubtypeRegistry::default();
        let recs = vec![
            record("a", 4.0, "ETV6-RUNX1", Protocol::T16),
            record("b", 6.0, "ETV6-RUNX1", Protocol::T16),
        ];
        let d = build_design(&recs, &reg, true).unwrap();
        let s = d.age_transform.sd;
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!((d.row(0)[col::AGE] + 1.0 / s).abs() < 1e-15);
        assert!((d.row(1)[col::AGE] - 1.0 / s).abs() < 1e-15);
        assert!((d.age_transform.invert(d.row(1)[col::AGE]) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_subtype_names_the_row() {
        let reg = SubtypeRegistry::default();
        let err =
            build_design(&[record("p17", 5.0, "Mystery", Protocol::T16)], &reg, true).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p17") && msg.contains("Mystery"), "{msg}");
    }
}
