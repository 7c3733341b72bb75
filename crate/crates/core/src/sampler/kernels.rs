//! Full-conditional Gibbs kernels. Every update is an exact conjugate draw.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use super::data::ModelData;
use super::draw::{
    categorical_log, dirichlet, inv_gamma, mvn_from_precision, normal_upper_truncated,
    normalize_log_weights, std_normal,
};
use crate::error::Result;
use crate::model::density::{log_ndtr, normal_logpdf};
use crate::model::likelihood::{isotropic_logpdf, mean_day15_label, mean_day42_label};
use crate::model::{
    Day15Params, Day42Params, HorseshoeBlock, LatentResponses, MixtureState, PriorSettings, Z_LOW,
};

/// Precision values are capped here so that vanishing prior scales pin a
/// coefficient at zero instead of producing infinities.
const MAX_PRECISION: f64 = 1e300;

#[inline]
fn precision_of(var: f64) -> f64 {
    (1.0 / var).min(MAX_PRECISION)
}

/// Redraws every censored response from its normal full conditional truncated to
/// (-∞, z_low]; observed responses are copied unchanged.
pub fn impute_censored<R: Rng + ?Sized>(
    data: &ModelData,
    latent: &LatentResponses,
    theta1: &Day15Params,
    theta2: &Day42Params,
    alloc: &[usize],
    rng: &mut R,
) -> LatentResponses {
    let mut out = latent.clone();
    let sd1 = theta1.sigma2.sqrt();
    let sd2 = theta2.sigma2.sqrt();
    for i in 0..data.n() {
        let x = data.design.row(i);
        match data.z1[i] {
            Some(z) => out.z1[i] = z,
            None => {
                let mu = mean_day15_label(x, alloc[i], theta1);
                out.z1[i] = normal_upper_truncated(rng, mu, sd1, Z_LOW);
            }
        }
        match data.z2[i] {
            Some(z) => out.z2[i] = z,
            None => {
                let z1 = data.z1[i].unwrap_or(f64::NAN);
                let mu = mean_day42_label(z1, data.delta1(i), x, alloc[i], theta2);
                out.z2[i] = normal_upper_truncated(rng, mu, sd2, Z_LOW);
            }
        }
    }
    out
}

/// Accumulates Q += r rᵀ / σ², b += r z / σ² for every design row.
fn accumulate_normal_equations(
    rows: impl Iterator<Item = (Vec<f64>, f64)>,
    sigma2: f64,
    precision: &mut DMatrix<f64>,
    linear: &mut DVector<f64>,
) {
    let q = linear.len();
    for (r, z) in rows {
        for a in 0..q {
            if r[a] == 0.0 {
                continue;
            }
            let ra = r[a] / sigma2;
            linear[a] += ra * z;
            for b in a..q {
                precision[(a, b)] += ra * r[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            precision[(a, b)] = precision[(b, a)];
        }
    }
}

/// Day-15 regression row `[1, x, cluster dummy]`.
fn day15_row(data: &ModelData, alloc: &[usize], i: usize, q: usize) -> Vec<f64> {
    let p = data.p();
    let mut r = vec![0.0; q];
    r[0] = 1.0;
    r[1..=p].copy_from_slice(data.design.row(i));
    if alloc[i] > 0 {
        r[p + alloc[i]] = 1.0;
    }
    r
}

/// Day-42 regression row `[1, g, g·z1, g·x, g·cluster dummy]` with g the day-15 detection gate.
fn day42_row(data: &ModelData, alloc: &[usize], i: usize, q: usize) -> Vec<f64> {
    let p = data.p();
    let mut r = vec![0.0; q];
    r[0] = 1.0;
    if let Some(z1) = data.z1[i] {
        r[1] = 1.0;
        r[2] = z1;
        r[3..3 + p].copy_from_slice(data.design.row(i));
        if alloc[i] > 0 {
            r[2 + p + alloc[i]] = 1.0;
        }
    }
    r
}

fn intercept_precision(priors: &PriorSettings) -> f64 {
    precision_of(priors.intercept_sd * priors.intercept_sd)
}

/// Joint draw of (β0, β, γ) at day 15 from their multivariate normal full conditional.
pub fn update_linear_day15<R: Rng + ?Sized>(
    latent: &LatentResponses,
    data: &ModelData,
    alloc: &[usize],
    theta1: &Day15Params,
    priors: &PriorSettings,
    rng: &mut R,
) -> Result<Day15Params> {
    let p = theta1.beta.len();
    let g = theta1.gamma.len();
    let q = 1 + p + g;
    let mut precision = DMatrix::zeros(q, q);
    let mut linear = DVector::zeros(q);

    let rows = (0..data.n()).map(|i| (day15_row(data, alloc, i, q), latent.z1[i]));
    accumulate_normal_equations(rows, theta1.sigma2, &mut precision, &mut linear);

    precision[(0, 0)] += intercept_precision(priors);
    for j in 0..p {
        precision[(1 + j, 1 + j)] += precision_of(theta1.hs_beta.prior_var(j));
    }
    for j in 0..g {
        precision[(1 + p + j, 1 + p + j)] += precision_of(theta1.hs_gamma.prior_var(j));
    }

    let draw = mvn_from_precision(rng, precision, &linear)?;
    let mut out = theta1.clone();
    out.beta0 = draw[0];
    out.beta.copy_from_slice(&draw.as_slice()[1..=p]);
    out.gamma.copy_from_slice(&draw.as_slice()[1 + p..]);
    Ok(out)
}

/// Joint draw of (β0, ρ0, ρ, β, γ) at day 42. Only rows with detected day-15 MRD
/// inform the gated block; every row informs β0.
pub fn update_linear_day42<R: Rng + ?Sized>(
    latent: &LatentResponses,
    data: &ModelData,
    alloc: &[usize],
    theta2: &Day42Params,
    priors: &PriorSettings,
    rng: &mut R,
) -> Result<Day42Params> {
    let p = theta2.beta.len();
    let g = theta2.gamma.len();
    let q = 3 + p + g;
    let mut precision = DMatrix::zeros(q, q);
    let mut linear = DVector::zeros(q);

    let rows = (0..data.n()).map(|i| (day42_row(data, alloc, i, q), latent.z2[i]));
    accumulate_normal_equations(rows, theta2.sigma2, &mut precision, &mut linear);

    precision[(0, 0)] += intercept_precision(priors);
    precision[(1, 1)] += precision_of(priors.rho0_sd * priors.rho0_sd);
    precision[(2, 2)] += precision_of(priors.rho_sd * priors.rho_sd);
    for j in 0..p {
        precision[(3 + j, 3 + j)] += precision_of(theta2.hs_beta.prior_var(j));
    }
    for j in 0..g {
        precision[(3 + p + j, 3 + p + j)] += precision_of(theta2.hs_gamma.prior_var(j));
    }

    let draw = mvn_from_precision(rng, precision, &linear)?;
    let mut out = theta2.clone();
    out.beta0 = draw[0];
    out.rho0 = draw[1];
    out.rho = draw[2];
    out.beta.copy_from_slice(&draw.as_slice()[3..3 + p]);
    out.gamma.copy_from_slice(&draw.as_slice()[3 + p..]);
    Ok(out)
}

/// Multipliers of the base step in the collapsed coordinate proposals, picked uniformly.
const COORDINATE_STEP_SCALES: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

/// Multipliers of the optimal random-walk scale 2.38/√q in the collapsed block proposals.
const BLOCK_STEP_SCALES: [f64; 4] = [0.3, 1.0, 3.0, 10.0];

/// Block proposals per regression per sweep.
const BLOCK_PROPOSALS: usize = 4;

/// Standard deviations of the log factor in horseshoe rescaling proposals, picked uniformly.
const LOG_SCALE_STEPS: [f64; 3] = [0.1, 0.5, 2.0];

const MIN_SCALE2: f64 = 1e-300;
const MAX_SCALE2: f64 = 1e300;

/// Log-likelihood of one response given its mean, with a censored response
/// integrated over (-∞, z_low]. Additive constants are dropped.
#[inline]
fn observed_data_term(eta: f64, obs: Option<f64>, sd: f64) -> f64 {
    match obs {
        Some(z) => {
            let u = (z - eta) / sd;
            -0.5 * u * u
        }
        None => log_ndtr((Z_LOW - eta) / sd),
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// One regression with its censored responses integrated out, tracked through the
/// current linear predictor.
struct CollapsedRegression<'a> {
    rows: Vec<Vec<f64>>,
    columns: Vec<Vec<(usize, f64)>>,
    obs: &'a [Option<f64>],
    sd: f64,
    eta: Vec<f64>,
}

impl<'a> CollapsedRegression<'a> {
    fn new(rows: Vec<Vec<f64>>, obs: &'a [Option<f64>], sigma2: f64, coef: &[f64]) -> Self {
        let mut columns = vec![Vec::new(); coef.len()];
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    columns[j].push((i, v));
                }
            }
        }
        let eta = rows
            .iter()
            .map(|r| r.iter().zip(coef).map(|(a, b)| a * b).sum())
            .collect();
        Self {
            rows,
            columns,
            obs,
            sd: sigma2.sqrt(),
            eta,
        }
    }

    /// Change in log-likelihood when row `i`'s predictor moves by `d` for each (i, d).
    fn change(&self, shift: &[(usize, f64)]) -> f64 {
        shift
            .iter()
            .map(|&(i, d)| {
                observed_data_term(self.eta[i] + d, self.obs[i], self.sd)
                    - observed_data_term(self.eta[i], self.obs[i], self.sd)
            })
            .sum()
    }

    fn apply(&mut self, shift: &[(usize, f64)]) {
        for &(i, d) in shift {
            self.eta[i] += d;
        }
    }

    /// Predictor shift from adding `delta[j]` to coefficient `range.start + j`.
    fn shift_of(&self, range: std::ops::Range<usize>, delta: &[f64]) -> Vec<(usize, f64)> {
        let mut acc = vec![0.0; self.eta.len()];
        let mut touched = vec![false; self.eta.len()];
        for (j, &d) in range.zip(delta) {
            for &(i, v) in &self.columns[j] {
                acc[i] += v * d;
                touched[i] = true;
            }
        }
        (0..acc.len())
            .filter(|&i| touched[i])
            .map(|i| (i, acc[i]))
            .collect()
    }
}

/// Random-walk Metropolis on each coefficient in turn.
fn coordinate_moves<R: Rng + ?Sized>(
    reg: &mut CollapsedRegression,
    coef: &mut [f64],
    prior_var: &[f64],
    rng: &mut R,
) -> usize {
    let mut accepted = 0;
    for j in 0..coef.len() {
        let col = &reg.columns[j];
        let mean_sq = col.iter().map(|(_, v)| v * v).sum::<f64>() / col.len().max(1) as f64;
        let base = if mean_sq > 0.0 {
            reg.sd / mean_sq.sqrt()
        } else {
            prior_var[j].sqrt()
        };
        let step = COORDINATE_STEP_SCALES[rng.random_range(0..COORDINATE_STEP_SCALES.len())] * base;
        let eps = step * std_normal(rng);
        let (old, new) = (coef[j], coef[j] + eps);
        if !new.is_finite() || eps == 0.0 {
            continue;
        }
        let shift: Vec<(usize, f64)> = col.iter().map(|&(i, v)| (i, eps * v)).collect();
        let log_ratio =
            -0.5 * (new * new - old * old) * precision_of(prior_var[j]) + reg.change(&shift);
        if accept(rng, log_ratio) {
            coef[j] = new;
            reg.apply(&shift);
            accepted += 1;
        }
    }
    accepted
}

/// Random-walk Metropolis on the whole coefficient vector. Steps have covariance
/// proportional to the inverse of X'X/σ² + prior precision, which does not involve
/// the imputed values, so the proposal is symmetric.
fn block_moves<R: Rng + ?Sized>(
    reg: &mut CollapsedRegression,
    coef: &mut [f64],
    prior_var: &[f64],
    rng: &mut R,
) -> usize {
    let q = coef.len();
    if q == 0 {
        return 0;
    }
    let sigma2 = reg.sd * reg.sd;
    let mut precision = DMatrix::zeros(q, q);
    let mut unused = DVector::zeros(q);
    accumulate_normal_equations(
        reg.rows.iter().map(|r| (r.clone(), 0.0)),
        sigma2,
        &mut precision,
        &mut unused,
    );
    for j in 0..q {
        precision[(j, j)] += precision_of(prior_var[j]);
    }
    let Some(chol) = precision.cholesky() else {
        return 0;
    };
    let upper = chol.l().transpose();
    let base = 2.38 / (q as f64).sqrt();

    let mut accepted = 0;
    for _ in 0..BLOCK_PROPOSALS {
        let scale = BLOCK_STEP_SCALES[rng.random_range(0..BLOCK_STEP_SCALES.len())] * base;
        let z = DVector::from_fn(q, |_, _| scale * std_normal(rng));
        let Some(step) = upper.solve_upper_triangular(&z) else {
            return accepted;
        };
        if step.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let mut log_ratio = 0.0;
        for j in 0..q {
            let (old, new) = (coef[j], coef[j] + step[j]);
            log_ratio -= 0.5 * (new * new - old * old) * precision_of(prior_var[j]);
        }
        let shift = reg.shift_of(0..q, step.as_slice());
        log_ratio += reg.change(&shift);
        if accept(rng, log_ratio) {
            for (c, d) in coef.iter_mut().zip(step.iter()) {
                *c += d;
            }
            reg.apply(&shift);
            accepted += 1;
        }
    }
    accepted
}

/// Log acceptance ratio of rescaling a horseshoe coefficient group by `s` together
/// with its squared scale `scale2` (prior IG(1/2, `rate`)), excluding the likelihood.
/// The normal prior terms, the scale prior and the Jacobian s^(m+2) combine to this form.
#[inline]
fn rescale_prior_ratio(s: f64, scale2: f64, rate: f64) -> f64 {
    -s.ln() - rate / scale2 * (1.0 / (s * s) - 1.0)
}

fn draw_log_factor<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let h = LOG_SCALE_STEPS[rng.random_range(0..LOG_SCALE_STEPS.len())];
    (h * std_normal(rng)).exp()
}

/// Joint rescaling moves for the horseshoe block on coefficients `range`: each
/// (β_j, λ²_j) pair in turn, then (all β_j, τ²). These cross the funnel between a
/// weakly identified coefficient and its scale. Returns (proposed, accepted).
fn horseshoe_rescale_moves<R: Rng + ?Sized>(
    reg: &mut CollapsedRegression,
    coef: &mut [f64],
    range: std::ops::Range<usize>,
    block: &mut HorseshoeBlock,
    rng: &mut R,
) -> (usize, usize) {
    let mut accepted = 0;
    for (local, j) in range.clone().enumerate() {
        let s = draw_log_factor(rng);
        let lambda2 = block.lambda2[local] * s * s;
        if !(MIN_SCALE2..=MAX_SCALE2).contains(&lambda2) {
            continue;
        }
        let delta = coef[j] * (s - 1.0);
        let shift: Vec<(usize, f64)> = reg.columns[j]
            .iter()
            .map(|&(i, v)| (i, v * delta))
            .collect();
        let log_ratio = rescale_prior_ratio(s, block.lambda2[local], 1.0 / block.nu[local])
            + reg.change(&shift);
        if accept(rng, log_ratio) {
            coef[j] *= s;
            block.lambda2[local] = lambda2;
            reg.apply(&shift);
            accepted += 1;
        }
    }

    let s = draw_log_factor(rng);
    let tau2 = block.tau2 * s * s;
    if (MIN_SCALE2..=MAX_SCALE2).contains(&tau2) && !range.is_empty() {
        let delta: Vec<f64> = coef[range.clone()].iter().map(|c| c * (s - 1.0)).collect();
        let shift = reg.shift_of(range.clone(), &delta);
        let log_ratio = rescale_prior_ratio(s, block.tau2, 1.0 / block.xi) + reg.change(&shift);
        if accept(rng, log_ratio) {
            coef[range.clone()].iter_mut().for_each(|c| *c *= s);
            block.tau2 = tau2;
            reg.apply(&shift);
            accepted += 1;
        }
    }
    (range.len() + 1, accepted)
}

/// All collapsed moves on one regression: block, coordinate, then horseshoe rescaling
/// of the coefficient groups `hs_ranges`. Returns (proposed, accepted).
fn collapsed_moves<R: Rng + ?Sized>(
    rows: Vec<Vec<f64>>,
    obs: &[Option<f64>],
    sigma2: f64,
    coef: &mut [f64],
    fixed_prior_var: &[f64],
    hs: [(std::ops::Range<usize>, &mut HorseshoeBlock); 2],
    rng: &mut R,
) -> (usize, usize) {
    let mut prior_var = fixed_prior_var.to_vec();
    for (range, block) in &hs {
        prior_var.extend((0..range.len()).map(|j| block.prior_var(j)));
    }
    let mut reg = CollapsedRegression::new(rows, obs, sigma2, coef);
    let mut accepted = block_moves(&mut reg, coef, &prior_var, rng);
    accepted += coordinate_moves(&mut reg, coef, &prior_var, rng);
    let mut proposed = BLOCK_PROPOSALS + coef.len();
    for (range, block) in hs {
        let (p, a) = horseshoe_rescale_moves(&mut reg, coef, range, block, rng);
        proposed += p;
        accepted += a;
    }
    (proposed, accepted)
}

/// Collapsed moves on (β0, β, γ) and the day-15 horseshoe scales, integrating out the
/// censored responses; the imputed values must be redrawn afterwards. Returns
/// (proposed, accepted).
pub fn collapsed_moves_day15<R: Rng + ?Sized>(
    data: &ModelData,
    alloc: &[usize],
    theta1: &mut Day15Params,
    priors: &PriorSettings,
    rng: &mut R,
) -> (usize, usize) {
    let (p, g) = (theta1.beta.len(), theta1.gamma.len());
    let q = 1 + p + g;
    let rows: Vec<Vec<f64>> = (0..data.n())
        .map(|i| day15_row(data, alloc, i, q))
        .collect();
    let mut coef: Vec<f64> = std::iter::once(theta1.beta0)
        .chain(theta1.beta.iter().copied())
        .chain(theta1.gamma.iter().copied())
        .collect();
    let stats = collapsed_moves(
        rows,
        &data.z1,
        theta1.sigma2,
        &mut coef,
        &[priors.intercept_sd * priors.intercept_sd],
        [
            (1..1 + p, &mut theta1.hs_beta),
            (1 + p..q, &mut theta1.hs_gamma),
        ],
        rng,
    );
    theta1.beta0 = coef[0];
    theta1.beta.copy_from_slice(&coef[1..=p]);
    theta1.gamma.copy_from_slice(&coef[1 + p..]);
    stats
}

/// Collapsed moves on (β0, ρ0, ρ, β, γ) and the day-42 horseshoe scales. Returns
/// (proposed, accepted).
pub fn collapsed_moves_day42<R: Rng + ?Sized>(
    data: &ModelData,
    alloc: &[usize],
    theta2: &mut Day42Params,
    priors: &PriorSettings,
    rng: &mut R,
) -> (usize, usize) {
    let (p, g) = (theta2.beta.len(), theta2.gamma.len());
    let q = 3 + p + g;
    let rows: Vec<Vec<f64>> = (0..data.n())
        .map(|i| day42_row(data, alloc, i, q))
        .collect();
    let mut coef: Vec<f64> = [theta2.beta0, theta2.rho0, theta2.rho]
        .into_iter()
        .chain(theta2.beta.iter().copied())
        .chain(theta2.gamma.iter().copied())
        .collect();
    let stats = collapsed_moves(
        rows,
        &data.z2,
        theta2.sigma2,
        &mut coef,
        &[
            priors.intercept_sd * priors.intercept_sd,
            priors.rho0_sd * priors.rho0_sd,
            priors.rho_sd * priors.rho_sd,
        ],
        [
            (3..3 + p, &mut theta2.hs_beta),
            (3 + p..q, &mut theta2.hs_gamma),
        ],
        rng,
    );
    theta2.beta0 = coef[0];
    theta2.rho0 = coef[1];
    theta2.rho = coef[2];
    theta2.beta.copy_from_slice(&coef[3..3 + p]);
    theta2.gamma.copy_from_slice(&coef[3 + p..]);
    stats
}

/// Rate parameters of the four horseshoe conditionals, exposed for exact checks.
pub mod horseshoe_rates {
    /// λ²_j | · ~ IG(1, 1/ν_j + β²_j/(2τ²))
    pub fn lambda2(nu: f64, beta: f64, tau2: f64) -> f64 {
        1.0 / nu + 0.5 * (beta * beta) / tau2
    }
    /// ν_j | · ~ IG(1, 1 + 1/λ²_j)
    pub fn nu(lambda2: f64) -> f64 {
        1.0 + 1.0 / lambda2
    }
    /// τ² | · ~ IG((m+1)/2, 1/ξ + Σ β²_j/(2λ²_j))
    pub fn tau2(xi: f64, beta: &[f64], lambda2: &[f64]) -> f64 {
        1.0 / xi
            + beta
                .iter()
                .zip(lambda2)
                .map(|(b, l)| 0.5 * (b * b) / l)
                .sum::<f64>()
    }
    /// ξ | · ~ IG(1, 1/A² + 1/τ²) with A the global half-Cauchy scale.
    pub fn xi(tau2: f64, global_scale: f64) -> f64 {
        1.0 / (global_scale * global_scale) + 1.0 / tau2
    }
}

/// One Gibbs pass over a horseshoe block given its coefficients.
pub fn update_horseshoe<R: Rng + ?Sized>(
    block: &HorseshoeBlock,
    coeffs: &[f64],
    global_scale: f64,
    rng: &mut R,
) -> HorseshoeBlock {
    let mut out = block.clone();
    // squared coefficients can overflow for |β| > 1e150; the rate clamp inside inv_gamma absorbs that
    for j in 0..coeffs.len() {
        out.lambda2[j] = inv_gamma(
            rng,
            1.0,
            horseshoe_rates::lambda2(out.nu[j], coeffs[j], out.tau2),
        );
        out.nu[j] = inv_gamma(rng, 1.0, horseshoe_rates::nu(out.lambda2[j]));
    }
    let m = coeffs.len() as f64;
    out.tau2 = inv_gamma(
        rng,
        0.5 * (m + 1.0),
        horseshoe_rates::tau2(out.xi, coeffs, &out.lambda2),
    );
    out.xi = inv_gamma(rng, 1.0, horseshoe_rates::xi(out.tau2, global_scale));
    out
}

/// Inverse-gamma parameters of the residual-variance conditional.
pub fn sigma2_posterior(residuals: &[f64], prior_shape: f64, prior_scale: f64) -> (f64, f64) {
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    (
        prior_shape + 0.5 * residuals.len() as f64,
        prior_scale + 0.5 * ssr,
    )
}

/// σ² | · ~ IG(a + n/2, b + SSR/2).
pub fn update_sigma2<R: Rng + ?Sized>(
    residuals: &[f64],
    prior_shape: f64,
    prior_scale: f64,
    rng: &mut R,
) -> f64 {
    let (a, b) = sigma2_posterior(residuals, prior_shape, prior_scale);
    inv_gamma(rng, a, b)
}

pub fn residuals_day15(
    data: &ModelData,
    latent: &LatentResponses,
    alloc: &[usize],
    theta1: &Day15Params,
) -> Vec<f64> {
    (0..data.n())
        .map(|i| latent.z1[i] - mean_day15_label(data.design.row(i), alloc[i], theta1))
        .collect()
}

pub fn residuals_day42(
    data: &ModelData,
    latent: &LatentResponses,
    alloc: &[usize],
    theta2: &Day42Params,
) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            let z1 = data.z1[i].unwrap_or(f64::NAN);
            latent.z2[i]
                - mean_day42_label(z1, data.delta1(i), data.design.row(i), alloc[i], theta2)
        })
        .collect()
}

/// Unnormalized log full-conditional of c_i = j for every component j.
pub fn allocation_log_weights(
    i: usize,
    data: &ModelData,
    latent: &LatentResponses,
    theta1: &Day15Params,
    theta2: &Day42Params,
    mixture: &MixtureState,
) -> Vec<f64> {
    let x = data.design.row(i);
    let y = &data.lc50[i];
    let z1_obs = data.z1[i].unwrap_or(f64::NAN);
    (0..mixture.k())
        .map(|j| {
            let mu1 = mean_day15_label(x, j, theta1);
            let mu2 = mean_day42_label(z1_obs, data.delta1(i), x, j, theta2);
            mixture.w[j].ln()
                + isotropic_logpdf(y, &mixture.mu[j], mixture.comp_var[j])
                + normal_logpdf(latent.z1[i], mu1, theta1.sigma2)
                + normal_logpdf(latent.z2[i], mu2, theta2.sigma2)
        })
        .collect()
}

/// Normalized full-conditional probabilities of c_i.
pub fn allocation_probabilities(
    i: usize,
    data: &ModelData,
    latent: &LatentResponses,
    theta1: &Day15Params,
    theta2: &Day42Params,
    mixture: &MixtureState,
) -> Vec<f64> {
    normalize_log_weights(&allocation_log_weights(
        i, data, latent, theta1, theta2, mixture,
    ))
}

/// Single-site Gibbs update of every allocation, coupling the LC50 mixture and both
/// regressions through the cluster dummies.
pub fn update_allocations<R: Rng + ?Sized>(
    data: &ModelData,
    latent: &LatentResponses,
    theta1: &Day15Params,
    theta2: &Day42Params,
    mixture: &MixtureState,
    rng: &mut R,
) -> Vec<usize> {
    (0..data.n())
        .map(|i| {
            if mixture.k() == 1 {
                return 0;
            }
            let lw = allocation_log_weights(i, data, latent, theta1, theta2, mixture);
            categorical_log(rng, &lw)
        })
        .collect()
}

/// Conjugate parameters of μ_j | σ²_j: (posterior precision per coordinate, posterior mean).
pub fn component_mean_posterior(
    members: &[&[f64]],
    comp_var: f64,
    prior_var: f64,
    dim: usize,
) -> (f64, Vec<f64>) {
    let n = members.len() as f64;
    let prec = 1.0 / prior_var + n / comp_var;
    let mut mean = vec![0.0; dim];
    for y in members {
        for (m, v) in mean.iter_mut().zip(y.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m = (*m / comp_var) / prec);
    (prec, mean)
}

/// Conjugate parameters of σ²_j | μ_j: IG(a + n_j d/2, b + Σ‖y - μ_j‖²/2).
pub fn component_var_posterior(
    members: &[&[f64]],
    mean: &[f64],
    prior_shape: f64,
    prior_scale: f64,
) -> (f64, f64) {
    let d = mean.len() as f64;
    let ss: f64 = members
        .iter()
        .map(|y| {
            y.iter()
                .zip(mean)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum();
    (
        prior_shape + 0.5 * members.len() as f64 * d,
        prior_scale + 0.5 * ss,
    )
}

/// Dirichlet parameters of w | c.
pub fn weights_posterior(counts: &[usize], alpha: &[f64]) -> Vec<f64> {
    alpha
        .iter()
        .zip(counts)
        .map(|(a, &c)| a + c as f64)
        .collect()
}

/// Draws w, then each μ_j given the current σ²_j, then σ²_j given the new μ_j.
pub fn update_mixture_params<R: Rng + ?Sized>(
    lc50: &[Vec<f64>],
    mixture: &MixtureState,
    priors: &PriorSettings,
    rng: &mut R,
) -> MixtureState {
    let k = mixture.k();
    let dim = mixture.dim();
    let mut out = mixture.clone();
    let counts = mixture.counts();
    out.w = dirichlet(rng, &weights_posterior(&counts, &priors.dirichlet_alpha(k)));

    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); k];
    for (y, &c) in lc50.iter().zip(&mixture.alloc) {
        members[c].push(y.as_slice());
    }
    for j in 0..k {
        let (prec, mean) =
            component_mean_posterior(&members[j], out.comp_var[j], priors.mixture_mean_var, dim);
        let sd = prec.sqrt().recip();
        out.mu[j] = mean.iter().map(|m| m + sd * std_normal(rng)).collect();
        let (a, b) = component_var_posterior(
            &members[j],
            &out.mu[j],
            priors.comp_var_shape,
            priors.comp_var_scale,
        );
        out.comp_var[j] = inv_gamma(rng, a, b);
    }
    out
}

/// Relabels the mixture components so that new label `a` is old label `perm[a]`.
///
/// The cluster effects are re-expressed against the new reference component: the
/// old effect of the new reference moves into β0 at day 15 and into ρ0 at day 42,
/// which leaves every patient's mean unchanged.
pub fn apply_label_permutation(
    perm: &[usize],
    theta1: &mut Day15Params,
    theta2: &mut Day42Params,
    mixture: &mut MixtureState,
) {
    let k = perm.len();
    let effects =
        |gamma: &[f64]| -> Vec<f64> { std::iter::once(0.0).chain(gamma.iter().copied()).collect() };
    let e1 = effects(&theta1.gamma);
    let e2 = effects(&theta2.gamma);
    let base1 = e1[perm[0]];
    let base2 = e2[perm[0]];
    theta1.beta0 += base1;
    theta2.rho0 += base2;
    for a in 1..k {
        theta1.gamma[a - 1] = e1[perm[a]] - base1;
        theta2.gamma[a - 1] = e2[perm[a]] - base2;
    }

    mixture.w = perm.iter().map(|&j| mixture.w[j]).collect();
    mixture.mu = perm.iter().map(|&j| mixture.mu[j].clone()).collect();
    mixture.comp_var = perm.iter().map(|&j| mixture.comp_var[j]).collect();
    let mut inverse = vec![0; k];
    for (a, &j) in perm.iter().enumerate() {
        inverse[j] = a;
    }
    mixture.alloc.iter_mut().for_each(|c| *c = inverse[*c]);
}

/// Prior terms that change under a label permutation.
fn label_sensitive_log_prior(
    theta1: &Day15Params,
    theta2: &Day42Params,
    priors: &PriorSettings,
) -> f64 {
    let mut lp = normal_logpdf(theta1.beta0, 0.0, priors.intercept_sd * priors.intercept_sd)
        + normal_logpdf(theta2.rho0, 0.0, priors.rho0_sd * priors.rho0_sd);
    for (j, &g) in theta1.gamma.iter().enumerate() {
        lp += normal_logpdf(g, 0.0, theta1.hs_gamma.prior_var(j));
    }
    for (j, &g) in theta2.gamma.iter().enumerate() {
        lp += normal_logpdf(g, 0.0, theta2.hs_gamma.prior_var(j));
    }
    lp
}

/// Metropolis move proposing a uniformly random relabeling of the components.
///
/// The likelihood and the exchangeable mixture prior are invariant under the
/// move, so the acceptance ratio reduces to the label-sensitive regression prior terms.
pub fn label_permutation_move<R: Rng + ?Sized>(
    theta1: &mut Day15Params,
    theta2: &mut Day42Params,
    mixture: &mut MixtureState,
    priors: &PriorSettings,
    rng: &mut R,
) -> bool {
    let k = mixture.k();
    if k < 2 {
        return false;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    perm.shuffle(rng);
    if perm.iter().enumerate().all(|(a, &j)| a == j) {
        return true;
    }
    let before = label_sensitive_log_prior(theta1, theta2, priors);
    let (mut t1, mut t2, mut mix) = (theta1.clone(), theta2.clone(), mixture.clone());
    apply_label_permutation(&perm, &mut t1, &mut t2, &mut mix);
    let after = label_sensitive_log_prior(&t1, &t2, priors);
    let u: f64 = rng.random();
    if u.ln() < after - before {
        *theta1 = t1;
        *theta2 = t2;
        *mixture = mix;
        true
    } else {
        false
    }
}

/// Permutation ordering components by ascending first LC50 coordinate (ties by index).
pub fn canonical_permutation(mixture: &MixtureState) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..mixture.k()).collect();
    perm.sort_by(|&a, &b| {
        let ka = mixture.mu[a].first().copied().unwrap_or(0.0);
        let kb = mixture.mu[b].first().copied().unwrap_or(0.0);
        ka.total_cmp(&kb).then(a.cmp(&b))
    });
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::density::inv_gamma_logpdf;

    /// Log prior density of (β, λ²) given τ² and ν.
    fn local_log_target(beta: f64, lambda2: f64, tau2: f64, nu: f64) -> f64 {
        normal_logpdf(beta, 0.0, lambda2 * tau2) + inv_gamma_logpdf(lambda2, 0.5, 1.0 / nu)
    }

    #[test]
    fn local_rescale_ratio_matches_densities() {
        let (beta, lambda2, tau2, nu) = (0.7, 2.3, 0.4, 1.9);
        for s in [0.2, 0.9, 1.0, 3.5] {
            let direct = local_log_target(s * beta, s * s * lambda2, tau2, nu)
                - local_log_target(beta, lambda2, tau2, nu)
                + 3.0 * f64::ln(s);
            let ratio = rescale_prior_ratio(s, lambda2, 1.0 / nu);
            assert!(
                (direct - ratio).abs() < 1e-12,
                "s = {s}: {direct} vs {ratio}"
            );
        }
    }

    #[test]
    fn global_rescale_ratio_matches_densities() {
        let beta = [0.3, -1.2, 2.0];
        let lambda2 = [0.5, 1.5, 4.0];
        let (tau2, xi) = (0.8, 1.3);
        let target = |s: f64| -> f64 {
            let t = s * s * tau2;
            beta.iter()
                .zip(&lambda2)
                .map(|(b, l)| normal_logpdf(s * b, 0.0, l * t))
                .sum::<f64>()
                + inv_gamma_logpdf(t, 0.5, 1.0 / xi)
        };
        for s in [0.3, 1.7] {
            let jacobian = (beta.len() as f64 + 2.0) * f64::ln(s);
            let direct = target(s) - target(1.0) + jacobian;
            let ratio = rescale_prior_ratio(s, tau2, 1.0 / xi);
            assert!(
                (direct - ratio).abs() < 1e-12,
                "s = {s}: {direct} vs {ratio}"
            );
        }
    }

    #[test]
    fn collapsed_predictor_tracks_coefficients() {
        let rows = vec![vec![1.0, 0.5], vec![1.0, -2.0], vec![1.0, 0.0]];
        let obs = [Some(-1.0), None, Some(0.5)];
        let reg = CollapsedRegression::new(rows, &obs, 1.0, &[0.2, 1.0]);
        assert_eq!(reg.eta, [0.7, -1.8, 0.2]);
        assert_eq!(reg.columns[1], [(0, 0.5), (1, -2.0)]);
        let shift = reg.shift_of(1..2, &[0.5]);
        assert_eq!(shift, [(0, 0.25), (1, -1.0)]);
        let expected = observed_data_term(0.95, Some(-1.0), 1.0)
            - observed_data_term(0.7, Some(-1.0), 1.0)
            + log_ndtr(-2.0 + 2.8)
            - log_ndtr(-2.0 + 1.8);
        assert!((reg.change(&shift) - expected).abs() < 1e-12);
    }
}
