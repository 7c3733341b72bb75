//! Convergence diagnostics and posterior summaries over retained draws.
//!
//! ESS uses Geyer's initial monotone positive sequence on the within-chain
//! autocorrelations. R̂ is the classic split-chain potential scale reduction
//! (not the rank-normalized variant). Quantiles use linear interpolation between
//! order statistics ("type 7").

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Name of the quantile rule, written to output metadata.
pub const QUANTILE_METHOD: &str = "type7-linear-interpolation";

/// Why a diagnostic could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Undefined {
    TooShort,
    ZeroVariance,
    NonFinite,
}

impl Undefined {
    pub fn code(self) -> &'static str {
        match self {
            Undefined::TooShort => "too_short",
            Undefined::ZeroVariance => "zero_variance",
            Undefined::NonFinite => "non_finite",
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Effective sample size of one series.
pub fn ess(series: &[f64]) -> Result<f64, Undefined> {
    let n = series.len();
    if n < 10 {
        return Err(Undefined::TooShort);
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Undefined::NonFinite);
    }
    let m = mean(series);
    let centered: Vec<f64> = series.iter().map(|v| v - m).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return Err(Undefined::ZeroVariance);
    }
    let autocorr = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
            / c0
    };

    // Γ_m = ρ_{2m} + ρ_{2m+1}, summed while positive and forced monotone
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let rho_even = if lag == 0 { 1.0 } else { autocorr(lag) };
        let rho_odd = autocorr(lag + 1);
        let mut pair = rho_even + rho_odd;
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / (n as f64).log10());
    Ok(n as f64 / tau)
}

/// Potential scale reduction of the given chains without splitting.
pub fn potential_scale_reduction(chains: &[&[f64]]) -> Result<f64, Undefined> {
    let m = chains.len();
    if m < 2 {
        return Err(Undefined::TooShort);
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 2 {
        return Err(Undefined::TooShort);
    }
    if chains.iter().any(|c| c[..n].iter().any(|v| !v.is_finite())) {
        return Err(Undefined::NonFinite);
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let within = chains.iter().map(|c| sample_var(&c[..n])).sum::<f64>() / m as f64;
    let between = n as f64 * sample_var(&means);
    if !(within > 0.0) {
        return Err(Undefined::ZeroVariance);
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * within + between / n as f64;
    Ok((var_plus / within).sqrt())
}

/// Split-chain R̂: every chain is cut into halves (dropping the middle draw of
/// odd-length chains) and the halves are compared.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64, Undefined> {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return Err(Undefined::TooShort);
    }
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        halves.push(&c[..h]);
        halves.push(&c[c.len() - h..]);
    }
    potential_scale_reduction(&halves)
}

/// Type-7 quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(data: &[f64], p: f64) -> f64 {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// Retained draws of named scalar parameters, one row-major block per chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawTable {
    pub names: Vec<String>,
    /// `chains[c]` holds `draws × names.len()` values.
    pub chains: Vec<Vec<f64>>,
}

impl DrawTable {
    pub fn new(names: Vec<String>, chains: usize) -> Self {
        Self {
            names,
            chains: vec![Vec::new(); chains],
        }
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn draws_in(&self, chain: usize) -> usize {
        if self.width() == 0 {
            0
        } else {
            self.chains[chain].len() / self.width()
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn push(&mut self, chain: usize, row: &[f64]) {
        debug_assert_eq!(row.len(), self.width());
        self.chains[chain].extend_from_slice(row);
    }

    /// One parameter's draws in one chain.
    pub fn series(&self, chain: usize, param: usize) -> Vec<f64> {
        let w = self.width();
        self.chains[chain]
            .iter()
            .skip(param)
            .step_by(w)
            .copied()
            .collect()
    }

    /// One parameter's draws over all chains, concatenated.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        (0..self.chains.len())
            .flat_map(|c| self.series(c, param))
            .collect()
    }

    pub fn pooled_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.index_of(name).map(|i| self.pooled(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub q025: f64,
    pub q25: f64,
    pub q75: f64,
    pub q975: f64,
    pub ess: Result<f64, Undefined>,
    pub rhat: Result<f64, Undefined>,
    /// The central 95% interval excludes zero.
    pub excludes_zero: bool,
}

pub fn summarize_series(name: &str, chains: &[Vec<f64>]) -> ParamSummary {
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let total = pooled.len();
    assert!(total > 0, "no draws for {name}");
    pooled.sort_by(f64::total_cmp);
    let q = |p| quantile_sorted(&pooled, p);
    let (q025, q975) = (q(0.025), q(0.975));

    let per_chain: Vec<Result<f64, Undefined>> = chains.iter().map(|c| ess(c)).collect();
    let ess_total = if per_chain.iter().all(Result::is_err) {
        Err(per_chain[0].unwrap_err())
    } else {
        Ok(per_chain
            .iter()
            .filter_map(|r| r.ok())
            .sum::<f64>()
            .min(total as f64))
    };
    let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();

    ParamSummary {
        name: name.to_string(),
        mean: pooled.iter().sum::<f64>() / total as f64,
        median: q(0.5),
        q025,
        q25: q(0.25),
        q75: q(0.75),
        q975,
        ess: ess_total,
        rhat: split_rhat(&refs),
        excludes_zero: q025 > 0.0 || q975 < 0.0,
    }
}

/// One summary per scalar parameter, in table order.
pub fn summarize(table: &DrawTable) -> Vec<ParamSummary> {
    use rayon::prelude::*;
    (0..table.width())
        .into_par_iter()
        .map(|p| {
            let chains: Vec<Vec<f64>> = (0..table.chains.len())
                .map(|c| table.series(c, p))
                .collect();
            summarize_series(&table.names[p], &chains)
        })
        .collect()
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF. Returns (D, p-value)
/// using the asymptotic Kolmogorov distribution with the Stephens correction.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let t = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_survival(t))
}

/// P(K > t) for the Kolmogorov distribution.
fn kolmogorov_survival(t: f64) -> f64 {
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * t * t).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson chi-square goodness-of-fit. Returns (statistic, p-value).
pub fn chi_square_test(observed: &[u64], expected: &[f64]) -> (f64, f64) {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let df = expected
        .iter()
        .filter(|&&e| e > 0.0)
        .count()
        .saturating_sub(1);
    if df == 0 {
        return (stat, 1.0);
    }
    let p = 1.0 - ChiSquared::new(df as f64).expect("positive df").cdf(stat);
    (stat, p)
}
