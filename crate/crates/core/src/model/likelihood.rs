//! Exact evaluation of the censored MRD likelihood, the mixture density and the joint prior.

use super::density::{
    dirichlet_logpdf, inv_gamma_logpdf, log_ndtr, log_sum_exp, normal_logpdf, HALF_LN_2PI,
};
use super::design::DesignMatrix;
use super::types::{
    cluster_effect, Day15Params, Day42Params, HorseshoeBlock, MixtureState, PatientRecord,
    PriorSettings, Z_LOW,
};
use crate::error::{Error, Result};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Day-15 mean: β0 + β·x + γ·c.
pub fn mean_day15(x: &[f64], c_dummy: &[f64], params: &Day15Params) -> f64 {
    params.beta0 + dot(&params.beta, x) + dot(&params.gamma, c_dummy)
}

/// Day-42 mean. The autoregressive and covariate terms only enter when day-15 MRD was detected.
pub fn mean_day42(z1: f64, delta1: bool, x: &[f64], c_dummy: &[f64], params: &Day42Params) -> f64 {
    if !delta1 {
        return params.beta0;
    }
    params.beta0
        + params.rho0
        + params.rho * z1
        + dot(&params.beta, x)
        + dot(&params.gamma, c_dummy)
}

/// Same as [`mean_day15`] with the cluster given as a 0-based label.
#[inline]
pub fn mean_day15_label(x: &[f64], label: usize, params: &Day15Params) -> f64 {
    params.beta0 + dot(&params.beta, x) + cluster_effect(&params.gamma, label)
}

#[inline]
pub fn mean_day42_label(
    z1: f64,
    delta1: bool,
    x: &[f64],
    label: usize,
    params: &Day42Params,
) -> f64 {
    if !delta1 {
        return params.beta0;
    }
    params.beta0
        + params.rho0
        + params.rho * z1
        + dot(&params.beta, x)
        + cluster_effect(&params.gamma, label)
}

fn check_var(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "variance {sigma2} must be positive and finite"
        )))
    }
}

/// log N(z; mu, sigma2).
pub fn loglik_uncensored(z: f64, mu: f64, sigma2: f64) -> Result<f64> {
    check_var(sigma2)?;
    Ok(normal_logpdf(z, mu, sigma2))
}

/// log P(Z ≤ z_low) for Z ~ N(mu, sigma2).
pub fn loglik_censored(mu: f64, sigma2: f64, z_low: f64) -> Result<f64> {
    check_var(sigma2)?;
    Ok(log_ndtr((z_low - mu) / sigma2.sqrt()))
}

/// Log-likelihood contribution of patient `i` at both time points.
pub fn patient_loglik(
    record: &PatientRecord,
    x: &[f64],
    label: usize,
    theta1: &Day15Params,
    theta2: &Day42Params,
) -> Result<f64> {
    let mu1 = mean_day15_label(x, label, theta1);
    let day15 = match record.z1 {
        Some(z) => loglik_uncensored(z, mu1, theta1.sigma2)?,
        None => loglik_censored(mu1, theta1.sigma2, Z_LOW)?,
    };
    let mu2 = mean_day42_label(
        record.z1.unwrap_or(f64::NAN),
        record.delta1(),
        x,
        label,
        theta2,
    );
    let day42 = match record.z2 {
        Some(z) => loglik_uncensored(z, mu2, theta2.sigma2)?,
        None => loglik_censored(mu2, theta2.sigma2, Z_LOW)?,
    };
    Ok(day15 + day42)
}

/// Log of the censored two-time-point likelihood, censored values integrated out.
pub fn total_loglik(
    records: &[PatientRecord],
    design: &DesignMatrix,
    theta1: &Day15Params,
    theta2: &Day42Params,
    allocations: &[usize],
) -> Result<f64> {
    if records.len() != design.n || allocations.len() != records.len() {
        return Err(Error::Dimension(format!(
            "records {}, design rows {}, allocations {}",
            records.len(),
            design.n,
            allocations.len()
        )));
    }
    theta1.validate()?;
    theta2.validate()?;
    let mut total = 0.0;
    for (i, r) in records.iter().enumerate() {
        total += patient_loglik(r, design.row(i), allocations[i], theta1, theta2)?;
    }
    Ok(total)
}

/// log N_d(y; mu, var·I).
#[inline]
pub fn isotropic_logpdf(y: &[f64], mu: &[f64], var: f64) -> f64 {
    let d = y.len() as f64;
    let ss: f64 = y.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum();
    -d * HALF_LN_2PI - 0.5 * d * var.ln() - 0.5 * ss / var
}

/// log Σ_j w_j N_d(y; μ_j, σ²_j I).
pub fn mixture_loglik(y: &[f64], state: &MixtureState) -> f64 {
    let terms: Vec<f64> = (0..state.k())
        .map(|j| state.w[j].ln() + isotropic_logpdf(y, &state.mu[j], state.comp_var[j]))
        .collect();
    log_sum_exp(&terms)
}

/// Horseshoe hierarchy terms for one block: conditional normals on the coefficients
/// plus the inverse-gamma densities of the scale-mixture representation.
pub fn horseshoe_log_prior(
    coeffs: &[f64],
    block: &HorseshoeBlock,
    global_scale: f64,
) -> Result<f64> {
    if !block.is_valid() || block.len() != coeffs.len() {
        return Err(Error::Domain("invalid horseshoe block".into()));
    }
    let mut lp = 0.0;
    for (j, &b) in coeffs.iter().enumerate() {
        lp += normal_logpdf(b, 0.0, block.prior_var(j));
        lp += inv_gamma_logpdf(block.lambda2[j], 0.5, 1.0 / block.nu[j]);
        lp += inv_gamma_logpdf(block.nu[j], 0.5, 1.0);
    }
    lp += inv_gamma_logpdf(block.tau2, 0.5, 1.0 / block.xi);
    lp += inv_gamma_logpdf(block.xi, 0.5, 1.0 / (global_scale * global_scale));
    Ok(lp)
}

/// Joint log prior density of all regression and mixture parameters
/// (allocations contribute through `w` only via the likelihood, not here).
pub fn log_prior(
    theta1: &Day15Params,
    theta2: &Day42Params,
    mixture: &MixtureState,
    priors: &PriorSettings,
) -> Result<f64> {
    theta1.validate()?;
    theta2.validate()?;
    let int_var = priors.intercept_sd * priors.intercept_sd;
    let mut lp = 0.0;

    lp += normal_logpdf(theta1.beta0, 0.0, int_var);
    lp += horseshoe_log_prior(&theta1.beta, &theta1.hs_beta, priors.hs_global_scale)?;
    lp += horseshoe_log_prior(&theta1.gamma, &theta1.hs_gamma, priors.hs_global_scale)?;
    lp += inv_gamma_logpdf(theta1.sigma2, priors.sigma2_shape, priors.sigma2_scale);

    lp += normal_logpdf(theta2.beta0, 0.0, int_var);
    lp += normal_logpdf(theta2.rho0, 0.0, priors.rho0_sd * priors.rho0_sd);
    lp += normal_logpdf(theta2.rho, 0.0, priors.rho_sd * priors.rho_sd);
    lp += horseshoe_log_prior(&theta2.beta, &theta2.hs_beta, priors.hs_global_scale)?;
    lp += horseshoe_log_prior(&theta2.gamma, &theta2.hs_gamma, priors.hs_global_scale)?;
    lp += inv_gamma_logpdf(theta2.sigma2, priors.sigma2_shape, priors.sigma2_scale);

    for &v in &mixture.comp_var {
        check_var(v)?;
    }
    let k = mixture.k();
    lp += dirichlet_logpdf(&mixture.w, &priors.dirichlet_alpha(k));
    for j in 0..k {
        let zero = vec![0.0; mixture.mu[j].len()];
        lp += isotropic_logpdf(&mixture.mu[j], &zero, priors.mixture_mean_var);
        lp += inv_gamma_logpdf(
            mixture.comp_var[j],
            priors.comp_var_shape,
            priors.comp_var_scale,
        );
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncensored_reference_values() {
        assert!(
            (loglik_uncensored(0.7, 0.7, 1.0).unwrap() + 0.918_938_533_204_672_8).abs() < 1e-15
        );
        assert!(
            (loglik_uncensored(1.7, 0.7, 1.0).unwrap() + 1.418_938_533_204_672_8).abs() < 1e-15
        );
        assert!(loglik_uncensored(0.0, 0.0, 0.0).is_err());
        assert!(loglik_uncensored(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn censored_reference_values() {
        assert!((loglik_censored(-2.0, 1.0, Z_LOW).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!((loglik_censored(0.0, 1.0, Z_LOW).unwrap() + 3.783_184_333_682_032).abs() < 1e-12);
        let v = loglik_censored(-10.0, 1.0, Z_LOW).unwrap();
        assert!(v < 0.0 && (v + 6.22e-16).abs() < 1e-18, "{v}");
        assert!(loglik_censored(0.0, 0.0, Z_LOW).is_err());
    }

    #[test]
    fn censored_is_monotone_in_mean() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..400 {
            let mu = 60.0 - i as f64 * 0.3;
            let v = loglik_censored(mu, 1.3, Z_LOW).unwrap();
            assert!(v.is_finite());
            assert!(v >= prev, "mu {mu}");
            prev = v;
        }
        assert!(prev > -1e-12);
    }

    #[test]
    fn day15_mean_reference_cases() {
        let mut p = Day15Params::initial(3, 3);
        p.beta0 = 0.4;
        p.gamma = vec![-1.5, 2.0];
        assert_eq!(mean_day15(&[0.0; 3], &[0.0, 0.0], &p), 0.4);
        assert_eq!(mean_day15(&[0.0; 3], &[1.0, 0.0], &p), 0.4 - 1.5);
        assert_eq!(mean_day15_label(&[0.0; 3], 2, &p), 0.4 + 2.0);
    }

    #[test]
    fn day42_gate() {
        let mut p = Day42Params::initial(2, 3);
        p.beta0 = -1.0;
        p.rho0 = 0.3;
        p.rho = 1.0;
        assert_eq!(mean_day42(5.0, false, &[3.0, 4.0], &[1.0, 0.0], &p), -1.0);
        assert_eq!(
            mean_day42(-1.0, true, &[0.0, 0.0], &[0.0, 0.0], &p),
            -1.0 + 0.3 - 1.0
        );
    }
}
