use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_design, DesignMatrix, PatientRecord, Standardization, SubtypeRegistry};

/// Sampler-ready view of a validated dataset: design matrix, response
/// pattern and the (optionally standardized) LC50 matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelData {
    pub design: DesignMatrix,
    pub z1: Vec<Option<f64>>,
    pub z2: Vec<Option<f64>>,
    pub lc50: Vec<Vec<f64>>,
    pub lc50_transform: Vec<Standardization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataOptions {
    pub subtypes: SubtypeRegistry,
    pub standardize_covariates: bool,
    pub standardize_lc50: bool,
}

impl Default for DataOptions {
    fn default() -> Self {
        Self {
            subtypes: SubtypeRegistry::default(),
            standardize_covariates: true,
            standardize_lc50: true,
        }
    }
}

impl ModelData {
    pub fn new(records: &[PatientRecord], options: &DataOptions) -> Result<Self> {
        for r in records {
            r.validate()
                .map_err(|m| Error::Domain(format!("record {}: {m}", r.id)))?;
        }
        let design = build_design(records, &options.subtypes, options.standardize_covariates)?;
        let d = crate::model::N_DRUGS;
        let lc50_transform: Vec<Standardization> = (0..d)
            .map(|j| {
                if options.standardize_lc50 {
                    Standardization::fit(records.iter().map(move |r| r.lc50[j]))
                } else {
                    Standardization::IDENTITY
                }
            })
            .collect();
        let lc50 = records
            .iter()
            .map(|r| {
                r.lc50
                    .iter()
                    .zip(&lc50_transform)
                    .map(|(&v, t)| t.apply(v))
                    .collect()
            })
            .collect();
        Ok(Self {
            design,
            z1: records.iter().map(|r| r.z1).collect(),
            z2: records.iter().map(|r| r.z2).collect(),
            lc50,
            lc50_transform,
        })
    }

    pub fn n(&self) -> usize {
        self.design.n
    }

    pub fn p(&self) -> usize {
        self.design.p
    }

    pub fn dim(&self) -> usize {
        self.lc50_transform.len()
    }

    #[inline]
    pub fn delta1(&self, i: usize) -> bool {
        self.z1[i].is_some()
    }
}
