//! Validity checks of a CF lattice: Hermiticity, normalization and
//! positivity against coherent probes.

use serde::{Deserialize, Serialize};

use crate::kcfe::CFGrid;
use crate::states::ReferenceState;

use super::trace::overlap_with_reference_complex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationTolerance {
    pub hermiticity: f64,
    pub normalization: f64,
    pub positivity: f64,
}

impl ValidationTolerance {
    pub fn analytic() -> Self {
        Self { hermiticity: 1e-10, normalization: 1e-10, positivity: 1e-6 }
    }

    /// Sampling-error tolerances for `n` samples per setting.
    ///
    /// The Hermiticity check takes the maximum of `|phi(-p) - conj phi(p)|`
    /// over `pairs` independent mirrored pairs, each a difference of two
    /// estimates with per-component variance at most `inflation^2 / 2n`
    /// (`inflation = 1 / |phi_Y|` after deconvolution). The threshold is the
    /// union bound at false-alarm rate 1e-3.
    pub fn sampled(n: usize, pairs: usize, inflation: f64) -> Self {
        let n = n.max(1) as f64;
        let se = 3.0 / n.sqrt();
        let hermiticity = inflation * (2.0 * (pairs.max(1) as f64 * 1e3).ln() / n).sqrt();
        Self { hermiticity, normalization: se, positivity: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub hermitian: bool,
    pub normalized: bool,
    pub positive: bool,
    /// `max |phi(-p) - conj phi(p)|` over mirrored pairs.
    pub worst_hermiticity: f64,
    /// `|phi(0) - 1|`, or `None` when the lattice misses the origin.
    pub normalization_error: Option<f64>,
    pub probe_overlaps: Vec<f64>,
    /// Largest distance of a probe overlap outside `[0, 1]`.
    pub worst_positivity: f64,
    pub tolerance: ValidationTolerance,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.hermitian && self.normalized && self.positive
    }
}

/// Check `grid` with tolerances picked from its provenance: analytic when no
/// entry carries samples, sampled otherwise.
pub fn validate_cf_grid(cf: &CFGrid, probes: &[ReferenceState]) -> ValidationReport {
    let n = cf.n.iter().copied().filter(|&n| n > 0).min();
    let tol = match n {
        Some(n) => {
            let inflation = match (&cf.noise, cf.deconvolved) {
                (Some(nm), true) => 1.0 / nm.cf(nm.noise_argument(1.0)).norm(),
                _ => 1.0,
            };
            ValidationTolerance::sampled(n, mirrored_pairs(cf), inflation)
        }
        None => ValidationTolerance::analytic(),
    };
    validate_cf_grid_with(cf, probes, tol)
}

fn mirrored_pairs(cf: &CFGrid) -> usize {
    let count = |len: usize, mirror: &dyn Fn(usize) -> Option<usize>| (0..len).filter(|&k| mirror(k).is_some()).count();
    let mu = count(cf.mu.len, &|k| cf.mu.mirror(k));
    let nu = count(cf.nu.len, &|k| cf.nu.mirror(k));
    (mu * nu).div_ceil(2)
}

pub fn validate_cf_grid_with(
    cf: &CFGrid,
    probes: &[ReferenceState],
    tol: ValidationTolerance,
) -> ValidationReport {
    let mut worst_hermiticity: f64 = 0.0;
    for i in 0..cf.mu.len {
        let Some(mi) = cf.mu.mirror(i) else { continue };
        for j in 0..cf.nu.len {
            let Some(mj) = cf.nu.mirror(j) else { continue };
            worst_hermiticity = worst_hermiticity.max((cf.at(mi, mj) - cf.at(i, j).conj()).norm());
        }
    }
    let normalization_error = match (cf.mu.zero_index(), cf.nu.zero_index()) {
        (Some(i), Some(j)) => Some((cf.at(i, j) - 1.0).norm()),
        _ => None,
    };
    let probe_overlaps: Vec<f64> =
        probes.iter().map(|p| overlap_with_reference_complex(p, cf, 1.0).re).collect();
    let worst_positivity = probe_overlaps
        .iter()
        .map(|&v| (-v).max(v - 1.0).max(0.0))
        .fold(0.0, f64::max);
    ValidationReport {
        hermitian: worst_hermiticity <= tol.hermiticity,
        normalized: normalization_error.map_or(true, |e| e <= tol.normalization),
        positive: worst_positivity <= tol.positivity,
        worst_hermiticity,
        normalization_error,
        probe_overlaps,
        worst_positivity,
        tolerance: tol,
    }
}
