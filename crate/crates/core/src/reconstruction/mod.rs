//! Density-matrix kernels from characteristic functions via truncated direct
//! Fourier sums, plus trace functionals, grid validation and error bounds.

mod bounds;
mod trace;
mod validate;

pub use bounds::{
    discretization_bound, estimation_bound, fit_beta, fit_tau, overlap_truncation_bound,
    total_bound, truncation_bound, ErrorBoundParams,
};
pub use trace::{
    noise_prefactor, overlap, overlap_complex, overlap_with_reference,
    overlap_with_reference_complex, purity, trace_distance_pure, trace_power_3, wigner_from_cf,
    wigner_grid, TRACE3_TERM_BUDGET,
};
pub use validate::{validate_cf_grid, validate_cf_grid_with, ValidationReport, ValidationTolerance};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{KqseError, Result};
use crate::kcfe::{Axis, CFGrid};
use crate::pool::try_par_map;
use crate::special::erfc;
use crate::states::ReferenceState;

/// Largest `|z|` at which the complex erfc has been checked against an
/// arbitrary-precision oracle.
pub const ERFC_VALIDATED_RADIUS: f64 = 20.0;

/// Anything that can report `phi(1; mu, nu)`.
pub trait CfSource: Sync {
    fn cf1(&self, mu: f64, nu: f64) -> Result<Complex64>;
}

impl CfSource for CFGrid {
    fn cf1(&self, mu: f64, nu: f64) -> Result<Complex64> {
        self.get(mu, nu).ok_or_else(|| {
            KqseError::IncompleteGrid(format!("CF grid has no entry at (mu, nu) = ({mu}, {nu})"))
        })
    }
}

impl CfSource for ReferenceState {
    fn cf1(&self, mu: f64, nu: f64) -> Result<Complex64> {
        Ok(ReferenceState::cf1(self, mu, nu))
    }
}

/// Coordinate grid and Fourier lattice of a reconstruction.
///
/// The sum runs over `mu_k = k dmu - mu_max`, `dmu = 2 mu_max / n_mu`, and
/// needs `nu = y - y'` for every pair of grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionGrid {
    pub y: Axis,
    pub mu_max: f64,
    pub n_mu: usize,
}

impl ReconstructionGrid {
    pub fn new(y_min: f64, y_max: f64, points: usize, mu_max: f64, n_mu: usize) -> Result<Self> {
        let y = if points == 1 && y_min == y_max {
            Axis::singleton(y_min)
        } else {
            Axis::span(y_min, y_max, points)?
        };
        Self::with_axis(y, mu_max, n_mu)
    }

    pub fn with_axis(y: Axis, mu_max: f64, n_mu: usize) -> Result<Self> {
        if !(mu_max > 0.0) || n_mu < 2 {
            return Err(KqseError::InvalidParameter(format!(
                "reconstruction lattice mu_max = {mu_max}, n_mu = {n_mu}"
            )));
        }
        Ok(Self { y, mu_max, n_mu })
    }

    /// `n_mu / 2` points spaced by `dmu` and centred on zero, so that every
    /// difference `y - y'` lies on the half-open lattice of the same size.
    pub fn matched(mu_max: f64, n_mu: usize) -> Result<Self> {
        let mu = Axis::half_open(mu_max, n_mu)?;
        let g = (n_mu / 2).max(1);
        let start = -0.5 * (g - 1) as f64 * mu.step;
        Self::with_axis(Axis { start, step: mu.step, len: g }, mu_max, n_mu)
    }

    pub fn delta_mu(&self) -> f64 {
        2.0 * self.mu_max / self.n_mu as f64
    }

    pub fn mu_axis(&self) -> Axis {
        Axis { start: -self.mu_max, step: self.delta_mu(), len: self.n_mu }
    }

    pub fn points(&self) -> usize {
        self.y.len
    }

    /// The `2G - 1` distinct differences `y_i - y_j`.
    pub fn required_nu(&self) -> Vec<f64> {
        let g = self.y.len as i64;
        (-(g - 1)..g).map(|d| d as f64 * self.y.step).collect()
    }
}

/// Closed-form tail model added beyond `|mu| > mu_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailModel {
    GroundState,
}

/// `rho(y_i, y_j)` on a reconstruction grid, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityKernelGrid {
    pub grid: ReconstructionGrid,
    pub values: Vec<Complex64>,
    pub tail_corrected: bool,
    /// Accuracy notes raised during construction.
    pub warnings: Vec<String>,
}

impl DensityKernelGrid {
    pub fn analytic(state: &ReferenceState, grid: ReconstructionGrid) -> Self {
        let g = grid.points();
        let ys = grid.y.values();
        let values = (0..g * g).map(|k| state.density_kernel(ys[k / g], ys[k % g])).collect();
        Self { grid, values, tail_corrected: false, warnings: Vec::new() }
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.grid.points() + j]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.grid.y.value(i)
    }

    /// `max |rho(y, y') - conj(rho(y', y))|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let g = self.grid.points();
        let mut worst: f64 = 0.0;
        for i in 0..g {
            for j in i..g {
                worst = worst.max((self.at(i, j) - self.at(j, i).conj()).norm());
            }
        }
        worst
    }

    /// `sum_i rho(y_i, y_i) dy`.
    pub fn trace(&self) -> f64 {
        (0..self.grid.points()).map(|i| self.at(i, i).re).sum::<f64>() * self.grid.y.step
    }
}

/// `rho(y, y') = (dmu / 2 pi) sum_k phi(1; mu_k, y - y') exp(-i mu_k (y + y') / 2)`,
/// plus the ground-state tail when requested.
pub fn reconstruct_rho(
    src: &dyn CfSource,
    grid: &ReconstructionGrid,
    tail: Option<TailModel>,
) -> Result<DensityKernelGrid> {
    let g = grid.points();
    let mus = grid.mu_axis().values();
    let nus = grid.required_nu();
    // columns[d] holds phi(1; mu_k, nu_d) for every k
    let columns: Vec<Vec<Complex64>> =
        try_par_map(&nus, |&nu| mus.iter().map(|&mu| src.cf1(mu, nu)).collect())?;
    let ys = grid.y.values();
    let scale = grid.delta_mu() / (2.0 * PI);
    let rows: Vec<usize> = (0..g).collect();
    let values: Vec<Vec<Complex64>> = try_par_map(&rows, |&i| {
        Ok((0..g)
            .map(|j| {
                let col = &columns[i + g - 1 - j];
                let half = 0.5 * (ys[i] + ys[j]);
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, &mu) in mus.iter().enumerate() {
                    acc += col[k] * Complex64::from_polar(1.0, -mu * half);
                }
                let mut v = acc * scale;
                if tail.is_some() {
                    v += tail_correction(ys[i], ys[j], grid.mu_max);
                }
                v
            })
            .collect())
    })?;
    let mut warnings = Vec::new();
    if tail.is_some() {
        let reach = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        if (grid.mu_max * grid.mu_max + 4.0 * reach * reach).sqrt() / 2.0 > ERFC_VALIDATED_RADIUS {
            warnings.push(format!(
                "tail-correction erfc arguments exceed |z| = {ERFC_VALIDATED_RADIUS}; accuracy not validated"
            ));
        }
    }
    Ok(DensityKernelGrid {
        grid: *grid,
        values: values.into_iter().flatten().collect(),
        tail_corrected: tail.is_some(),
        warnings,
    })
}

/// Ground-state contribution of `|mu| > mu_max` to `rho(y, y')`:
/// `(1 / 2 sqrt(pi)) e^{-(y^2 + y'^2)/2} [erfc((M - i s)/2) + erfc((M + i s)/2)]`
/// with `s = y + y'`.
pub fn tail_correction(y: f64, yp: f64, mu_max: f64) -> Complex64 {
    let s = y + yp;
    let pre = (-(y * y + yp * yp) / 2.0).exp() / (2.0 * PI.sqrt());
    let minus = erfc(Complex64::new(mu_max / 2.0, -s / 2.0));
    let plus = erfc(Complex64::new(mu_max / 2.0, s / 2.0));
    (minus + plus) * pre
}

/// `max |rho - rho_hat|^2` over the grid.
pub fn sup_error(est: &DensityKernelGrid, truth: &ReferenceState) -> f64 {
    sup_error_with(est, |y, yp| truth.density_kernel(y, yp))
}

pub fn sup_error_with(est: &DensityKernelGrid, truth: impl Fn(f64, f64) -> Complex64) -> f64 {
    let g = est.grid.points();
    let mut worst: f64 = 0.0;
    for i in 0..g {
        for j in 0..g {
            worst = worst.max((est.at(i, j) - truth(est.y(i), est.y(j))).norm_sqr());
        }
    }
    worst
}

/// `max over entries of mean_l |rho - rho_hat_l|^2` across repetitions.
pub fn mean_sup_error(
    reps: &[DensityKernelGrid],
    truth: impl Fn(f64, f64) -> Complex64,
) -> Result<f64> {
    let first = reps
        .first()
        .ok_or_else(|| KqseError::InvalidParameter("no repetitions".into()))?;
    if reps.iter().any(|r| r.grid != first.grid) {
        return Err(KqseError::GridMismatch("repetitions use different grids".into()));
    }
    let g = first.grid.points();
    let mut worst: f64 = 0.0;
    for i in 0..g {
        for j in 0..g {
            let t = truth(first.y(i), first.y(j));
            let m = reps.iter().map(|r| (r.at(i, j) - t).norm_sqr()).sum::<f64>() / reps.len() as f64;
            worst = worst.max(m);
        }
    }
    Ok(worst)
}
