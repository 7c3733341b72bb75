use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of drugs in the LC50 panel.
pub const N_DRUGS: usize = 5;

/// Drug order used for every LC50 vector.
pub const DRUG_NAMES: [&str; N_DRUGS] = ["asparaginase", "prednisone", "vincristine", "6TG", "6MP"];

/// log10 of the 0.01% MRD detection limit.
pub const Z_LOW: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Some(Gender::Male),
            "f" | "female" => Some(Gender::Female),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

/// Treatment protocol; T16 is the reference level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    T15,
    T16,
    T17,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::T15, Protocol::T16, Protocol::T17];

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T15" | "TOTXV" | "TOTAL XV" => Some(Protocol::T15),
            "T16" | "TOTXVI" | "TOTAL XVI" => Some(Protocol::T16),
            "T17" | "TOTXVII" | "TOTAL XVII" => Some(Protocol::T17),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Protocol::T15 => "T15",
            Protocol::T16 => "T16",
            Protocol::T17 => "T17",
        }
    }
}

/// One subject: baseline covariates, the two log10-MRD responses and the log10-LC50 panel.
///
/// `z1`/`z2` are `None` when the measurement fell below the detection limit, so the
/// censoring indicators are `z.is_some()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub age: f64,
    pub gender: Gender,
    pub log10_wbc: f64,
    pub subtype: String,
    pub protocol: Protocol,
    pub z1: Option<f64>,
    pub z2: Option<f64>,
    pub lc50: [f64; N_DRUGS],
}

impl PatientRecord {
    #[inline]
    pub fn delta1(&self) -> bool {
        self.z1.is_some()
    }

    #[inline]
    pub fn delta2(&self) -> bool {
        self.z2.is_some()
    }

    /// Record-level invariants: observed responses at or above the limit, finite inputs.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, z) in [("z1", self.z1), ("z2", self.z2)] {
            if let Some(z) = z {
                if !z.is_finite() || z < Z_LOW {
                    return Err(format!("{name} = {z} is below the detection limit {Z_LOW}"));
                }
            }
        }
        if !self.age.is_finite() || !self.log10_wbc.is_finite() {
            return Err("non-finite age or wbc".into());
        }
        if self.lc50.iter().any(|v| !v.is_finite()) {
            return Err("non-finite LC50 entry".into());
        }
        Ok(())
    }
}

/// Dataset-level rule: censored at day 15 implies censored at day 42.
pub fn check_monotone_censoring(records: &[PatientRecord]) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.delta1() && r.delta2())
        .map(|(i, _)| i)
        .collect()
}

/// Horseshoe scales for one coefficient vector, with the inverse-gamma auxiliaries
/// of the half-Cauchy data augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeBlock {
    pub tau2: f64,
    pub xi: f64,
    pub lambda2: Vec<f64>,
    pub nu: Vec<f64>,
}

impl HorseshoeBlock {
    pub fn new(len: usize) -> Self {
        Self {
            tau2: 1.0,
            xi: 1.0,
            lambda2: vec![1.0; len],
            nu: vec![1.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.lambda2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda2.is_empty()
    }

    /// Prior variance λ²_j τ² of coefficient j.
    #[inline]
    pub fn prior_var(&self, j: usize) -> f64 {
        self.lambda2[j] * self.tau2
    }

    pub fn is_valid(&self) -> bool {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        ok(self.tau2)
            && ok(self.xi)
            && self.lambda2.len() == self.nu.len()
            && self.lambda2.iter().all(|&v| ok(v))
            && self.nu.iter().all(|&v| ok(v))
    }
}

/// Day-15 regression state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Day15Params {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub hs_beta: HorseshoeBlock,
    pub hs_gamma: HorseshoeBlock,
    pub sigma2: f64,
}

impl Day15Params {
    /// Zero coefficients, unit variance and unit shrinkage scales.
    pub fn initial(p: usize, k: usize) -> Self {
        let g = k.saturating_sub(1);
        Self {
            beta0: 0.0,
            beta: vec![0.0; p],
            gamma: vec![0.0; g],
            hs_beta: HorseshoeBlock::new(p),
            hs_gamma: HorseshoeBlock::new(g),
            sigma2: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) {
            return Err(Error::Domain(format!(
                "sigma2 = {} must be positive",
                self.sigma2
            )));
        }
        if self.hs_beta.len() != self.beta.len() || self.hs_gamma.len() != self.gamma.len() {
            return Err(Error::Dimension(
                "horseshoe block length mismatch (day 15)".into(),
            ));
        }
        Ok(())
    }
}

/// Day-42 regression state; `rho0`, `rho`, `beta` and `gamma` only act when day-15 MRD was detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Day42Params {
    pub beta0: f64,
    pub rho0: f64,
    pub rho: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub hs_beta: HorseshoeBlock,
    pub hs_gamma: HorseshoeBlock,
    pub sigma2: f64,
}

impl Day42Params {
    pub fn initial(p: usize, k: usize) -> Self {
        let g = k.saturating_sub(1);
        Self {
            beta0: 0.0,
            rho0: 0.0,
            rho: 0.0,
            beta: vec![0.0; p],
            gamma: vec![0.0; g],
            hs_beta: HorseshoeBlock::new(p),
            hs_gamma: HorseshoeBlock::new(g),
            sigma2: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) {
            return Err(Error::Domain(format!(
                "sigma2 = {} must be positive",
                self.sigma2
            )));
        }
        if self.hs_beta.len() != self.beta.len() || self.hs_gamma.len() != self.gamma.len() {
            return Err(Error::Dimension(
                "horseshoe block length mismatch (day 42)".into(),
            ));
        }
        Ok(())
    }
}

/// Finite Gaussian mixture over LC50 profiles with isotropic component covariances
/// `comp_var[j] * I`. Allocations are 0-based component indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub w: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub comp_var: Vec<f64>,
    pub alloc: Vec<usize>,
}

impl MixtureState {
    pub fn k(&self) -> usize {
        self.w.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.mu.len() != k || self.comp_var.len() != k {
            return Err(Error::Dimension(
                "mixture component arrays disagree in length".into(),
            ));
        }
        let total: f64 = self.w.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.w.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Domain(format!("mixture weights sum to {total}")));
        }
        if self.comp_var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain("component variance must be positive".into()));
        }
        if self.alloc.iter().any(|&c| c >= k) {
            return Err(Error::Domain("allocation out of range".into()));
        }
        Ok(())
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k()];
        for &c in &self.alloc {
            counts[c] += 1;
        }
        counts
    }
}

/// Completed log10-MRD responses: observed values where detected, imputed values
/// at or below [`Z_LOW`] where censored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatentResponses {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

impl LatentResponses {
    /// Observed values copied, censored entries set to `fill`.
    pub fn from_records(records: &[PatientRecord], fill: f64) -> Self {
        Self {
            z1: records.iter().map(|r| r.z1.unwrap_or(fill)).collect(),
            z2: records.iter().map(|r| r.z2.unwrap_or(fill)).collect(),
        }
    }
}

/// Hyperparameters of every prior in the joint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSettings {
    /// Standard deviation of the Normal(0, sd²) prior on both intercepts.
    pub intercept_sd: f64,
    pub rho0_sd: f64,
    pub rho_sd: f64,
    /// Inverse-gamma (shape, scale) on the residual variances.
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
    /// Prior variance of each component-mean coordinate.
    pub mixture_mean_var: f64,
    pub comp_var_shape: f64,
    pub comp_var_scale: f64,
    /// Scale of the half-Cauchy prior on each horseshoe global scale τ.
    pub hs_global_scale: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        Self {
            intercept_sd: 10.0,
            rho0_sd: 1.0,
            rho_sd: 1.0,
            sigma2_shape: 3.0,
            sigma2_scale: 2.0,
            mixture_mean_var: 1.0,
            comp_var_shape: 3.0,
            comp_var_scale: 2.0,
            hs_global_scale: 1.0,
        }
    }
}

impl PriorSettings {
    /// Symmetric Dirichlet concentration 1/k.
    pub fn dirichlet_alpha(&self, k: usize) -> Vec<f64> {
        vec![1.0 / k as f64; k]
    }
}

/// Dummy coding of a 0-based cluster label: label 0 is the reference (all zeros),
/// label j ≥ 1 sets position j-1.
pub fn cluster_dummy(label: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k.saturating_sub(1)];
    if label > 0 {
        v[label - 1] = 1.0;
    }
    v
}

/// `γ · dummy(label)` without materializing the dummy vector.
#[inline]
pub fn cluster_effect(gamma: &[f64], label: usize) -> f64 {
    if label == 0 {
        0.0
    } else {
        gamma[label - 1]
    }
}
