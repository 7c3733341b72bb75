//! Generative simulator for the joint model and the simulation-based calibration harness.

pub mod sbc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::design::col;
use crate::model::likelihood::{mean_day15_label, mean_day42_label};
use crate::model::{
    build_design, Day15Params, Day42Params, Gender, HorseshoeBlock, MixtureState, PatientRecord,
    PriorSettings, Protocol, SubtypeRegistry, N_DRUGS, Z_LOW,
};
use crate::sampler::draw::{dirichlet, inv_gamma, std_normal};

pub use sbc::{sbc_run, GibbsPosterior, PosteriorSampler, PriorPosterior, SbcReport, SbcSettings};

/// Subtype counts used when none are configured, in default registry order.
pub const DEFAULT_SUBTYPE_COUNTS: [f64; 12] = [
    190.0, 200.0, 90.0, 40.0, 50.0, 25.0, 25.0, 40.0, 30.0, 20.0, 18.0, 60.0,
];

/// T15, T16, T17 enrollment counts.
pub const DEFAULT_PROTOCOL_COUNTS: [f64; 3] = [192.0, 428.0, 168.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSettings {
    pub n: usize,
    pub age_min: f64,
    pub age_max: f64,
    pub log10_wbc_mean: f64,
    pub log10_wbc_sd: f64,
    pub male_probability: f64,
    /// Relative frequencies of T15, T16, T17.
    pub protocol_weights: [f64; 3],
    /// Relative frequencies in registry order.
    pub subtype_weights: Vec<f64>,
}

impl Default for CovariateSettings {
    fn default() -> Self {
        Self {
            n: 788,
            age_min: 1.0,
            age_max: 18.0,
            log10_wbc_mean: 1.2,
            log10_wbc_sd: 0.5,
            male_probability: 0.55,
            protocol_weights: DEFAULT_PROTOCOL_COUNTS,
            subtype_weights: DEFAULT_SUBTYPE_COUNTS.to_vec(),
        }
    }
}

/// Ground truth for simulation. Coefficients act on the design built with
/// `standardize_covariates`, the same design the sampler sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub theta1: Day15Params,
    pub theta2: Day42Params,
    /// Weights, means and variances; allocations are ignored.
    pub mixture: MixtureState,
    pub covariates: CovariateSettings,
    pub subtypes: SubtypeRegistry,
    pub standardize_covariates: bool,
}

impl TrueParams {
    pub fn validate(&self) -> Result<()> {
        self.theta1.validate()?;
        self.theta2.validate()?;
        let k = self.mixture.w.len();
        let p = self.subtypes.dummy_count() + crate::model::design::col::FIRST_SUBTYPE;
        if self.theta1.beta.len() != p || self.theta2.beta.len() != p {
            return Err(Error::Dimension(format!(
                "coefficient vectors must have length {p}"
            )));
        }
        if self.theta1.gamma.len() + 1 != k || self.theta2.gamma.len() + 1 != k {
            return Err(Error::Dimension(
                "cluster effects must have length k - 1".into(),
            ));
        }
        if self.mixture.mu.len() != k
            || self.mixture.comp_var.len() != k
            || self.mixture.mu.iter().any(|m| m.len() != N_DRUGS)
        {
            return Err(Error::Dimension(
                "mixture components do not match k and the drug panel".into(),
            ));
        }
        if self.mixture.comp_var.iter().any(|&v| !(v > 0.0))
            || self.mixture.w.iter().any(|&w| !(w >= 0.0))
        {
            return Err(Error::Domain(
                "mixture weights and variances must be valid".into(),
            ));
        }
        if self.covariates.subtype_weights.len() != self.subtypes.levels().len() {
            return Err(Error::Dimension(
                "one subtype weight per registry level is required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedData {
    pub records: Vec<PatientRecord>,
    /// True component of each patient, 0-based.
    pub allocations: Vec<usize>,
    /// Patients censored at day 15 but observed at day 42 under the model. Empty when
    /// the strict-monotone rule was applied, which censors their day-42 value instead.
    pub non_monotone: Vec<usize>,
}

/// Nearest value that survives writing as a percentage and taking log10 on ingest.
/// Values whose percentage overflows are kept as they are.
fn through_percent(z: f64) -> f64 {
    let trip = |v: f64| {
        let pct = 10f64.powf(v);
        (pct.is_finite() && pct > 0.0).then(|| pct.log10())
    };
    let Some(mut q) = trip(z) else { return z };
    for _ in 0..8 {
        match trip(q) {
            Some(next) if next == q => return q,
            Some(next) => q = next,
            None => return z,
        }
    }
    // walk outward one ulp at a time when the iteration cycles
    let (mut lo, mut hi) = (q, q);
    for _ in 0..64 {
        lo = lo.next_down();
        hi = hi.next_up();
        for v in [lo, hi] {
            if trip(v) == Some(v) {
                return v;
            }
        }
    }
    q
}

/// Observed value of a response, or `None` when it falls at or below the limit.
fn observe(z: f64) -> Option<f64> {
    let q = through_percent(z);
    (z > Z_LOW && q >= Z_LOW).then_some(q)
}

/// Sparse benchmark truth: two unit covariate effects at day 15, ρ = 1 with ρ0 = 0,
/// and three components separated by 3 units on the first two drugs.
pub fn recovery_truth(n: usize) -> TrueParams {
    let subtypes = SubtypeRegistry::default();
    let p = subtypes.dummy_count() + 5;
    let mut theta1 = Day15Params::initial(p, 3);
    theta1.beta0 = -1.0;
    theta1.beta[col::AGE] = 1.0;
    theta1.beta[col::LOG10_WBC] = -1.0;
    let mut theta2 = Day42Params::initial(p, 3);
    theta2.beta0 = -1.5;
    theta2.rho = 1.0;
    let mut mu = vec![vec![0.0; N_DRUGS]; 3];
    mu[0][0] = -1.5;
    mu[1][0] = 1.5;
    mu[2][1] = 2.6;
    TrueParams {
        theta1,
        theta2,
        mixture: MixtureState {
            w: vec![0.35, 0.34, 0.31],
            mu,
            comp_var: vec![0.3; 3],
            alloc: Vec::new(),
        },
        covariates: CovariateSettings {
            n,
            ..CovariateSettings::default()
        },
        subtypes,
        standardize_covariates: true,
    }
}

/// Draws a dataset from the generative model.
pub fn simulate_dataset(
    truth: &TrueParams,
    seed: u64,
    strict_monotone: bool,
) -> Result<SimulatedData> {
    truth.validate()?;
    let cov = &truth.covariates;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protocol_dist =
        WeightedIndex::new(cov.protocol_weights).map_err(|e| Error::Config(e.to_string()))?;
    let subtype_dist =
        WeightedIndex::new(&cov.subtype_weights).map_err(|e| Error::Config(e.to_string()))?;
    let comp_dist =
        WeightedIndex::new(&truth.mixture.w).map_err(|e| Error::Config(e.to_string()))?;

    let mut records = Vec::with_capacity(cov.n);
    let mut allocations = Vec::with_capacity(cov.n);
    for i in 0..cov.n {
        let age = rng.random_range(cov.age_min..=cov.age_max);
        let gender = if rng.random::<f64>() < cov.male_probability {
            Gender::Male
        } else {
            Gender::Female
        };
        let log10_wbc =
            through_percent(cov.log10_wbc_mean + cov.log10_wbc_sd * std_normal(&mut rng));
        let protocol = Protocol::ALL[protocol_dist.sample(&mut rng)];
        let subtype = truth.subtypes.levels()[subtype_dist.sample(&mut rng)].clone();
        let c = comp_dist.sample(&mut rng);
        let sd = truth.mixture.comp_var[c].sqrt();
        let mut lc50 = [0.0; N_DRUGS];
        for (d, v) in lc50.iter_mut().enumerate() {
            *v = truth.mixture.mu[c][d] + sd * std_normal(&mut rng);
        }
        records.push(PatientRecord {
            id: format!("S{:04}", i + 1),
            age,
            gender,
            log10_wbc,
            subtype,
            protocol,
            z1: None,
            z2: None,
            lc50,
        });
        allocations.push(c);
    }

    let design = build_design(&records, &truth.subtypes, truth.standardize_covariates)?;
    let sd1 = truth.theta1.sigma2.sqrt();
    let sd2 = truth.theta2.sigma2.sqrt();
    let mut non_monotone = Vec::new();
    for (i, r) in records.iter_mut().enumerate() {
        let x = design.row(i);
        let c = allocations[i];
        let z1 = mean_day15_label(x, c, &truth.theta1) + sd1 * std_normal(&mut rng);
        r.z1 = observe(z1);
        let mu2 = mean_day42_label(
            r.z1.unwrap_or(f64::NAN),
            r.z1.is_some(),
            x,
            c,
            &truth.theta2,
        );
        r.z2 = observe(mu2 + sd2 * std_normal(&mut rng));
        if r.z1.is_none() && r.z2.is_some() {
            if strict_monotone {
                r.z2 = None;
            } else {
                non_monotone.push(i);
            }
        }
    }
    Ok(SimulatedData {
        records,
        allocations,
        non_monotone,
    })
}

/// |Cauchy(0, scale)| draw.
fn half_cauchy<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    (scale * std_normal(rng) / std_normal(rng)).abs()
}

/// Horseshoe block and coefficients drawn jointly from the prior, auxiliaries included.
fn prior_horseshoe<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    global_scale: f64,
) -> (HorseshoeBlock, Vec<f64>) {
    let tau2 = half_cauchy(rng, global_scale).powi(2).clamp(1e-300, 1e300);
    let xi = inv_gamma(rng, 1.0, 1.0 / (global_scale * global_scale) + 1.0 / tau2);
    let mut block = HorseshoeBlock {
        tau2,
        xi,
        lambda2: Vec::with_capacity(m),
        nu: Vec::with_capacity(m),
    };
    let mut coeffs = Vec::with_capacity(m);
    for _ in 0..m {
        let lambda2 = half_cauchy(rng, 1.0).powi(2).clamp(1e-300, 1e300);
        block.lambda2.push(lambda2);
        block.nu.push(inv_gamma(rng, 1.0, 1.0 + 1.0 / lambda2));
        coeffs.push((lambda2 * tau2).sqrt() * std_normal(rng));
    }
    (block, coeffs)
}

/// Draws a complete parameter state from the prior.
pub fn draw_from_prior<R: Rng + ?Sized>(
    rng: &mut R,
    priors: &PriorSettings,
    p: usize,
    k: usize,
    dim: usize,
) -> (Day15Params, Day42Params, MixtureState) {
    let a = priors.hs_global_scale;
    let (hs_beta, beta) = prior_horseshoe(rng, p, a);
    let (hs_gamma, gamma) = prior_horseshoe(rng, k - 1, a);
    let theta1 = Day15Params {
        beta0: priors.intercept_sd * std_normal(rng),
        beta,
        gamma,
        hs_beta,
        hs_gamma,
        sigma2: inv_gamma(rng, priors.sigma2_shape, priors.sigma2_scale),
    };
    let (hs_beta, beta) = prior_horseshoe(rng, p, a);
    let (hs_gamma, gamma) = prior_horseshoe(rng, k - 1, a);
    let theta2 = Day42Params {
        beta0: priors.intercept_sd * std_normal(rng),
        rho0: priors.rho0_sd * std_normal(rng),
        rho: priors.rho_sd * std_normal(rng),
        beta,
        gamma,
        hs_beta,
        hs_gamma,
        sigma2: inv_gamma(rng, priors.sigma2_shape, priors.sigma2_scale),
    };
    let w = dirichlet(rng, &priors.dirichlet_alpha(k));
    let sd = priors.mixture_mean_var.sqrt();
    let mu = (0..k)
        .map(|_| (0..dim).map(|_| sd * std_normal(rng)).collect())
        .collect();
    let comp_var = (0..k)
        .map(|_| inv_gamma(rng, priors.comp_var_shape, priors.comp_var_scale))
        .collect();
    (
        theta1,
        theta2,
        MixtureState {
            w,
            mu,
            comp_var,
            alloc: Vec::new(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_truth(n: usize) -> TrueParams {
        let subtypes = SubtypeRegistry::default();
        let p = subtypes.dummy_count() + 5;
        TrueParams {
            theta1: Day15Params::initial(p, 3),
            theta2: Day42Params::initial(p, 3),
            mixture: MixtureState {
                w: vec![0.4, 0.3, 0.3],
                mu: vec![vec![0.0; N_DRUGS]; 3],
                comp_var: vec![1.0; 3],
                alloc: Vec::new(),
            },
            covariates: CovariateSettings {
                n,
                ..CovariateSettings::default()
            },
            subtypes,
            standardize_covariates: true,
        }
    }

    #[test]
    fn very_low_intercept_censors_everything() {
        let mut truth = zero_truth(200);
        truth.theta1.beta0 = -50.0;
        let sim = simulate_dataset(&truth, 1, false).unwrap();
        assert!(sim.records.iter().all(|r| r.z1.is_none()));
    }

    #[test]
    fn vanishing_noise_gives_zero_responses() {
        let mut truth = zero_truth(100);
        truth.theta1.sigma2 = 1e-30;
        truth.theta2.sigma2 = 1e-30;
        let sim = simulate_dataset(&truth, 2, false).unwrap();
        for r in &sim.records {
            assert!(r.z1.unwrap().abs() < 1e-12);
            assert!(r.z2.unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let truth = zero_truth(50);
        assert_eq!(
            simulate_dataset(&truth, 9, false).unwrap(),
            simulate_dataset(&truth, 9, false).unwrap()
        );
    }

    #[test]
    fn strict_monotone_removes_violations() {
        let mut truth = zero_truth(500);
        truth.theta1.beta0 = -2.0;
        truth.theta2.beta0 = -1.0;
        let loose = simulate_dataset(&truth, 4, false).unwrap();
        assert!(!loose.non_monotone.is_empty());
        let strict = simulate_dataset(&truth, 4, true).unwrap();
        assert!(strict.non_monotone.is_empty());
        assert!(crate::model::check_monotone_censoring(&strict.records).is_empty());
    }

    #[test]
    fn prior_draw_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (t1, t2, m) = draw_from_prior(&mut rng, &PriorSettings::default(), 16, 3, 5);
            t1.validate().unwrap();
            t2.validate().unwrap();
            assert!((m.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
