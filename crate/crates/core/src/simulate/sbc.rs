//! Simulation-based calibration: prior draw, simulated data, posterior draws, rank of
//! the truth, and uniformity tests on the rank histograms.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_from_prior, simulate_dataset, CovariateSettings, TrueParams};
use crate::diagnostics::chi_square_test;
use crate::error::{Error, Result};
use crate::model::design::design_columns;
use crate::model::{LatentResponses, PatientRecord, PriorSettings, SubtypeRegistry, N_DRUGS};
use crate::sampler::chain::flatten;
use crate::sampler::{
    run_chains, ChainState, DataOptions, McmcConfig, ModelData, ParamLayout, SamplerOptions,
};

pub const DEFAULT_MONITORED: [&str; 8] = [
    "rho",
    "rho0",
    "sigma2_d15",
    "sigma2_d42",
    "beta0_d15",
    "beta0_d42",
    "beta_d15[age]",
    "mu[1][asparaginase]",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcSettings {
    pub replicates: usize,
    pub n: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub k: usize,
    pub seed: u64,
    pub monitored: Vec<String>,
    /// Number of equal-probability bins the ranks are pooled into for the chi-square test.
    pub test_bins: usize,
}

impl Default for SbcSettings {
    fn default() -> Self {
        Self {
            replicates: 200,
            n: 100,
            iterations: 2000,
            burn_in: 500,
            thin: 3,
            k: 3,
            seed: 1,
            monitored: DEFAULT_MONITORED.iter().map(|s| s.to_string()).collect(),
            test_bins: 10,
        }
    }
}

impl SbcSettings {
    /// Posterior draws per replicate.
    pub fn draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    fn mcmc(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            chains: 1,
            seed,
            k: self.k,
        }
    }

    fn layout(&self, subtypes: &SubtypeRegistry) -> ParamLayout {
        ParamLayout::new(&design_columns(subtypes), self.k, N_DRUGS)
    }
}

/// Source of posterior draws for one simulated dataset.
pub trait PosteriorSampler: Sync {
    /// `settings.draws()` draws of the monitored scalars, one row per draw, in
    /// canonical component order.
    fn sample(
        &self,
        records: &[PatientRecord],
        settings: &SbcSettings,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>>;
}

fn monitored_values(state: &ChainState, layout: &ParamLayout, names: &[usize]) -> Vec<f64> {
    let flat = flatten(&state.canonical());
    debug_assert_eq!(flat.len(), layout.width());
    names.iter().map(|&i| flat[i]).collect()
}

fn monitored_indices(layout: &ParamLayout, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            layout
                .index_of(n)
                .ok_or_else(|| Error::Config(format!("unknown monitored parameter {n}")))
        })
        .collect()
}

/// The Gibbs sampler on the simulated data: one chain, LC50 on its simulated scale.
#[derive(Debug, Clone, Default)]
pub struct GibbsPosterior {
    pub options: SamplerOptions,
}

impl PosteriorSampler for GibbsPosterior {
    fn sample(
        &self,
        records: &[PatientRecord],
        settings: &SbcSettings,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        let data = ModelData::new(
            records,
            &DataOptions {
                standardize_lc50: false,
                ..DataOptions::default()
            },
        )?;
        let store = run_chains(&data, &settings.mcmc(seed), &self.options, None)?;
        let idx = monitored_indices(&store.layout, &settings.monitored)?;
        let w = store.layout.width();
        Ok(store.chains[0]
            .scalars
            .chunks_exact(w)
            .map(|row| idx.iter().map(|&i| row[i]).collect())
            .collect())
    }
}

/// Independent prior draws, ignoring the data. Calibrated by construction.
#[derive(Debug, Clone, Default)]
pub struct PriorPosterior {
    pub priors: PriorSettings,
}

impl PosteriorSampler for PriorPosterior {
    fn sample(
        &self,
        _records: &[PatientRecord],
        settings: &SbcSettings,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        let subtypes = SubtypeRegistry::default();
        let layout = settings.layout(&subtypes);
        let idx = monitored_indices(&layout, &settings.monitored)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..settings.draws())
            .map(|_| {
                let state =
                    prior_state(&mut rng, &self.priors, layout.covariates.len(), settings.k);
                monitored_values(&state, &layout, &idx)
            })
            .collect())
    }
}

fn prior_state(rng: &mut ChaCha8Rng, priors: &PriorSettings, p: usize, k: usize) -> ChainState {
    let (theta1, theta2, mixture) = draw_from_prior(rng, priors, p, k, N_DRUGS);
    ChainState {
        latent: LatentResponses::default(),
        theta1,
        theta2,
        mixture,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcParam {
    pub name: String,
    /// Rank of the truth among the draws, per completed replicate.
    pub ranks: Vec<usize>,
    /// Counts of each rank 0..=B.
    pub histogram: Vec<u64>,
    pub chi_square: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub replicates: usize,
    pub completed: usize,
    pub skipped: usize,
    pub draws: usize,
    pub test_bins: usize,
    pub parameters: Vec<SbcParam>,
}

impl SbcReport {
    pub fn min_p_value(&self) -> Option<f64> {
        self.parameters
            .iter()
            .filter_map(|p| p.p_value)
            .reduce(f64::min)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "SBC: {} replicates ({} completed, {} skipped), {} draws each, {} test bins",
            self.replicates, self.completed, self.skipped, self.draws, self.test_bins
        );
        for p in &self.parameters {
            match (p.chi_square, p.p_value) {
                (Some(c), Some(pv)) => {
                    let _ = writeln!(s, "  {:<24} chi2 = {:>9.3}  p = {:.4}", p.name, c, pv);
                }
                _ => {
                    let _ = writeln!(s, "  {:<24} ranks = {:?}", p.name, p.ranks);
                }
            }
        }
        s
    }
}

/// Pools ranks 0..=draws into `bins` groups and returns (observed, expected) counts.
fn pooled_counts(ranks: &[usize], draws: usize, bins: usize) -> (Vec<u64>, Vec<f64>) {
    let outcomes = draws + 1;
    let bins = bins.clamp(1, outcomes);
    let bin_of = |r: usize| r * bins / outcomes;
    let mut width = vec![0usize; bins];
    for r in 0..outcomes {
        width[bin_of(r)] += 1;
    }
    let mut observed = vec![0u64; bins];
    for &r in ranks {
        observed[bin_of(r)] += 1;
    }
    let total = ranks.len() as f64;
    let expected = width
        .iter()
        .map(|&w| total * w as f64 / outcomes as f64)
        .collect();
    (observed, expected)
}

/// Runs the calibration loop. Replicates run concurrently, each on its own RNG stream.
pub fn sbc_run(
    settings: &SbcSettings,
    priors: &PriorSettings,
    sampler: &dyn PosteriorSampler,
) -> Result<SbcReport> {
    if settings.burn_in >= settings.iterations || settings.thin == 0 || settings.draws() == 0 {
        return Err(Error::Config(
            "SBC chain settings leave no retained draws".into(),
        ));
    }
    let subtypes = SubtypeRegistry::default();
    let layout = settings.layout(&subtypes);
    let idx = monitored_indices(&layout, &settings.monitored)?;
    let b = settings.draws();

    let outcomes: Vec<Option<Vec<usize>>> = (0..settings.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(r as u64);
            let truth_state = prior_state(&mut rng, priors, layout.covariates.len(), settings.k);
            let truth = TrueParams {
                theta1: truth_state.theta1.clone(),
                theta2: truth_state.theta2.clone(),
                mixture: truth_state.mixture.clone(),
                covariates: CovariateSettings {
                    n: settings.n,
                    ..CovariateSettings::default()
                },
                subtypes: subtypes.clone(),
                standardize_covariates: true,
            };
            let truth_values = monitored_values(&truth_state, &layout, &idx);
            let data_seed: u64 = rng.random();
            let chain_seed: u64 = rng.random();
            let sim = simulate_dataset(&truth, data_seed, false).ok()?;
            let draws = sampler.sample(&sim.records, settings, chain_seed).ok()?;
            if draws.len() != b
                || draws
                    .iter()
                    .any(|d| d.len() != idx.len() || d.iter().any(|v| !v.is_finite()))
            {
                return None;
            }
            Some(
                truth_values
                    .iter()
                    .enumerate()
                    .map(|(m, &t)| draws.iter().filter(|d| d[m] < t).count())
                    .collect(),
            )
        })
        .collect();

    let completed: Vec<&Vec<usize>> = outcomes.iter().flatten().collect();
    let parameters = settings
        .monitored
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let ranks: Vec<usize> = completed.iter().map(|r| r[m]).collect();
            let mut histogram = vec![0u64; b + 1];
            for &r in &ranks {
                histogram[r] += 1;
            }
            let (chi_square, p_value) = if ranks.len() >= 2 {
                let (obs, exp) = pooled_counts(&ranks, b, settings.test_bins);
                let (c, p) = chi_square_test(&obs, &exp);
                (Some(c), Some(p))
            } else {
                (None, None)
            };
            SbcParam {
                name: name.clone(),
                ranks,
                histogram,
                chi_square,
                p_value,
            }
        })
        .collect();

    Ok(SbcReport {
        replicates: settings.replicates,
        completed: completed.len(),
        skipped: settings.replicates - completed.len(),
        draws: b,
        test_bins: settings.test_bins,
        parameters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_bins_cover_all_ranks() {
        let (obs, exp) = pooled_counts(&[0, 250, 500], 500, 10);
        assert_eq!(obs.iter().sum::<u64>(), 3);
        assert!((exp.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        assert_eq!(obs[0], 1);
        assert_eq!(obs[9], 1);
    }

    #[test]
    fn single_replicate_has_no_statistic() {
        let settings = SbcSettings {
            replicates: 1,
            n: 0,
            iterations: 40,
            burn_in: 10,
            thin: 3,
            ..SbcSettings::default()
        };
        let report = sbc_run(
            &settings,
            &PriorSettings::default(),
            &PriorPosterior::default(),
        )
        .unwrap();
        assert_eq!(report.completed, 1);
        for p in &report.parameters {
            assert_eq!(p.ranks.len(), 1);
            assert!(p.ranks[0] <= settings.draws());
            assert!(p.p_value.is_none());
        }
    }
}
