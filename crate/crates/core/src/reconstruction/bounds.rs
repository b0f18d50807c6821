//! A-priori error bounds of the reconstruction and the decay-rate fits that
//! parametrize them.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{KqseError, Result};

use super::ReconstructionGrid;

/// Constants of the decay model `|phi(mu)| <= C e^{-tau mu}` and the Gaussian
/// overlap tail rate `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundParams {
    pub c: f64,
    pub tau: f64,
    pub beta: f64,
    pub m: f64,
}

impl Default for ErrorBoundParams {
    fn default() -> Self {
        Self { c: 1.0, tau: 0.5, beta: 0.25, m: 1.0 }
    }
}

impl ErrorBoundParams {
    pub fn new(c: f64, tau: f64, beta: f64, m: f64) -> Result<Self> {
        if !(c > 0.0 && tau >= 0.0 && beta > 0.0 && m > 0.0) {
            return Err(KqseError::InvalidParameter(format!(
                "bound constants C = {c}, tau = {tau}, beta = {beta}, M = {m}"
            )));
        }
        Ok(Self { c, tau, beta, m })
    }

    pub fn with_tau(self, tau: f64) -> Self {
        Self { tau, ..self }
    }
}

/// `C / (2 pi) e^{-tau mu_max}`.
pub fn truncation_bound(p: &ErrorBoundParams, mu_max: f64) -> f64 {
    p.c / (2.0 * PI) * (-p.tau * mu_max).exp()
}

/// `(M / pi) e^{-2 pi tau / dmu} / (1 - e^{-2 pi tau / dmu})`, `+inf` when
/// `tau = 0`.
pub fn discretization_bound(p: &ErrorBoundParams, n_mu: usize, mu_max: f64) -> f64 {
    let dmu = 2.0 * mu_max / n_mu as f64;
    let x = 2.0 * PI * p.tau / dmu;
    if !(x > 0.0) {
        return f64::INFINITY;
    }
    let e = (-x).exp();
    p.m / PI * e / (1.0 - e)
}

/// `mu_max^2 / (pi^2 n)`.
pub fn estimation_bound(mu_max: f64, n: usize) -> f64 {
    mu_max * mu_max / (PI * PI * n as f64)
}

/// `3 (trunc^2 + dis^2 + est)`.
pub fn total_bound(p: &ErrorBoundParams, grid: &ReconstructionGrid, n: usize) -> f64 {
    let t = truncation_bound(p, grid.mu_max);
    let d = discretization_bound(p, grid.n_mu, grid.mu_max);
    3.0 * (t * t + d * d + estimation_bound(grid.mu_max, n))
}

/// `e^{-4 beta min(mu_max^2, nu_max^2)}`.
pub fn overlap_truncation_bound(beta: f64, mu_max: f64, nu_max: f64) -> f64 {
    (-4.0 * beta * (mu_max * mu_max).min(nu_max * nu_max)).exp()
}

fn outer_third(mus: &[f64], mags: &[f64]) -> Result<Vec<(f64, f64)>> {
    if mus.len() != mags.len() {
        return Err(KqseError::InvalidParameter("fit inputs differ in length".into()));
    }
    let reach = mus.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let pts: Vec<(f64, f64)> = mus
        .iter()
        .zip(mags)
        .filter(|(m, v)| m.abs() >= 2.0 * reach / 3.0 && **v > 0.0)
        .map(|(m, v)| (m.abs(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(KqseError::InvalidParameter(
            "decay fit needs two positive magnitudes in the outer third".into(),
        ));
    }
    Ok(pts)
}

fn slope(pts: &[(f64, f64)]) -> Result<f64> {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(KqseError::InvalidParameter("decay fit abscissae coincide".into()));
    }
    Ok(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Least-squares `tau` from `log |phi| ~ log C - tau |mu|` over the outer
/// third of the `mu` range; clamped at zero.
pub fn fit_tau(mus: &[f64], mags: &[f64]) -> Result<f64> {
    Ok((-slope(&outer_third(mus, mags)?)?).max(0.0))
}

/// Least-squares `beta` from `log |phi_1 phi_2^*| ~ a - 4 beta mu^2` over the
/// outer third.
pub fn fit_beta(mus: &[f64], mags: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> =
        outer_third(mus, mags)?.into_iter().map(|(m, l)| (m * m, l)).collect();
    Ok((-slope(&pts)? / 4.0).max(0.0))
}
