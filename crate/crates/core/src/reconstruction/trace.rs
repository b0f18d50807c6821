//! Phase-space sums for overlaps, `tr rho^3`, trace distance and the Wigner
//! function.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{KqseError, Result};
use crate::kcfe::CFGrid;
use crate::pool::par_map;
use crate::sampling::NoiseModel;
use crate::states::ReferenceState;

/// Largest lattice sum `trace_power_3` will evaluate.
pub const TRACE3_TERM_BUDGET: u64 = 10_000_000;

const RESIDUE_GATE: f64 = 0.02;

fn gate(v: Complex64, what: &str) -> Result<f64> {
    if v.im.abs() > RESIDUE_GATE * v.re.abs() + 1e-9 {
        return Err(KqseError::NumericalGate(format!(
            "{what} has imaginary residue {:.3e} against real part {:.3e}; \
             the lattice is asymmetric or the deconvolution is off",
            v.im, v.re
        )));
    }
    Ok(v.re)
}

fn cell(cf: &CFGrid) -> f64 {
    cf.mu.step * cf.nu.step
}

/// `|phi_Y((1 - kappa) / kappa)|^{-sides}`, the factor that undoes the noise
/// on `sides` raw (not deconvolved) estimates.
pub fn noise_prefactor(nm: &NoiseModel, sides: i32) -> f64 {
    nm.cf(nm.noise_argument(1.0)).norm().powi(-sides)
}

/// `tr(rho_1 rho_2)` as `(dmu dnu / 2 pi) sum phi_1(p) phi_2(-p)`, before the
/// residue gate.
pub fn overlap_complex(cf1: &CFGrid, cf2: &CFGrid, prefactor: f64) -> Result<Complex64> {
    if !cf1.same_lattice(cf2) {
        return Err(KqseError::GridMismatch("overlap grids use different lattices".into()));
    }
    if !(cf1.mu.is_symmetric() && cf1.nu.is_symmetric()) {
        return Err(KqseError::GridMismatch(
            "two-sided overlap needs a mirror-symmetric lattice".into(),
        ));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..cf1.mu.len {
        let mi = cf1.mu.mirror(i).expect("symmetric axis");
        for j in 0..cf1.nu.len {
            let mj = cf1.nu.mirror(j).expect("symmetric axis");
            acc += cf1.at(i, j) * cf2.at(mi, mj);
        }
    }
    Ok(acc * cell(cf1) / (2.0 * PI) * prefactor)
}

pub fn overlap(cf1: &CFGrid, cf2: &CFGrid, prefactor: f64) -> Result<f64> {
    gate(overlap_complex(cf1, cf2, prefactor)?, "overlap")
}

pub fn purity(cf: &CFGrid, prefactor: f64) -> Result<f64> {
    overlap(cf, cf, prefactor)
}

/// One-sided overlap with an exact state: `(dmu dnu / 2 pi) sum
/// phi_true(-p) phi_hat(p)`; works on any lattice.
pub fn overlap_with_reference_complex(
    truth: &ReferenceState,
    cf: &CFGrid,
    prefactor: f64,
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, j, m, v) in cf.settings() {
        acc += truth.cf1(-m, -v) * cf.at(i, j);
    }
    acc * cell(cf) / (2.0 * PI) * prefactor
}

pub fn overlap_with_reference(truth: &ReferenceState, cf: &CFGrid, prefactor: f64) -> Result<f64> {
    gate(overlap_with_reference_complex(truth, cf, prefactor), "overlap")
}

/// `tr rho^3` from the 4-D lattice sum
/// `(cell^2 / 4 pi^2) sum phi(p1) phi(p2) phi(-p1-p2) exp(-(i/2)(mu1 nu2 - nu1 mu2))`.
///
/// The lattice must contain the origin; `-p1-p2` off the lattice counts as
/// zero.
pub fn trace_power_3(cf: &CFGrid) -> Result<f64> {
    let (nm, nn) = (cf.mu.len, cf.nu.len);
    let terms = ((nm * nn) as u64).saturating_pow(2);
    if terms > TRACE3_TERM_BUDGET {
        return Err(KqseError::TermBudget {
            terms,
            budget: TRACE3_TERM_BUDGET,
            hint: "coarsen the lattice to at most 56 points per axis".into(),
        });
    }
    let (Some(z_mu), Some(z_nu)) = (cf.mu.zero_index(), cf.nu.zero_index()) else {
        return Err(KqseError::GridMismatch("tr rho^3 needs a lattice through the origin".into()));
    };
    let mus = cf.mu.values();
    let nus = cf.nu.values();
    let rows: Vec<usize> = (0..nm).collect();
    let partial = par_map(&rows, |&i1| {
        let mut acc = Complex64::new(0.0, 0.0);
        for j1 in 0..nn {
            let p1 = cf.at(i1, j1);
            for i2 in 0..nm {
                let Some(i3) = (3 * z_mu).checked_sub(i1 + i2).filter(|&k| k < nm) else {
                    continue;
                };
                for j2 in 0..nn {
                    let Some(j3) = (3 * z_nu).checked_sub(j1 + j2).filter(|&k| k < nn) else {
                        continue;
                    };
                    let phase = -0.5 * (mus[i1] * nus[j2] - nus[j1] * mus[i2]);
                    acc += p1 * cf.at(i2, j2) * cf.at(i3, j3) * Complex64::from_polar(1.0, phase);
                }
            }
        }
        acc
    });
    let c = cell(cf);
    let total: Complex64 = partial.into_iter().sum::<Complex64>() * (c * c / (4.0 * PI * PI));
    gate(total, "tr rho^3")
}

/// `D = sqrt(1 - tr(rho_1 rho_2))` for pure states, clipped into `[0, 1]`.
pub fn trace_distance_pure(overlap_value: f64) -> f64 {
    (1.0 - overlap_value).clamp(0.0, 1.0).sqrt()
}

/// `W(q, p) = (dmu dnu / 4 pi^2) sum phi(1; mu, nu) exp(-i (mu q + nu p))`.
pub fn wigner_from_cf(cf: &CFGrid, q: f64, p: f64) -> Result<f64> {
    Ok(wigner_grid(cf, &[q], &[p])?[0])
}

/// Wigner values on the outer product `qs x ps`, row-major in `q`.
pub fn wigner_grid(cf: &CFGrid, qs: &[f64], ps: &[f64]) -> Result<Vec<f64>> {
    let mus = cf.mu.values();
    let nus = cf.nu.values();
    let scale = cell(cf) / (4.0 * PI * PI);
    // inner[p][i] = sum_j phi(mu_i, nu_j) e^{-i nu_j p}
    let inner: Vec<Vec<Complex64>> = par_map(ps, |&p| {
        (0..mus.len())
            .map(|i| {
                (0..nus.len())
                    .map(|j| cf.at(i, j) * Complex64::from_polar(1.0, -nus[j] * p))
                    .sum()
            })
            .collect()
    });
    let rows = par_map(qs, |&q| {
        let phases: Vec<Complex64> =
            mus.iter().map(|&m| Complex64::from_polar(1.0, -m * q)).collect();
        inner
            .iter()
            .map(|col| {
                let mut acc = Complex64::new(0.0, 0.0);
                let mut size = 0.0;
                for (c, ph) in col.iter().zip(&phases) {
                    acc += c * ph;
                    size += c.norm();
                }
                (acc * scale, size * scale)
            })
            .collect::<Vec<_>>()
    });
    let mut out = Vec::with_capacity(qs.len() * ps.len());
    for row in rows {
        for (w, size) in row {
            // W may vanish; measure the residue against the size of the sum
            if w.im.abs() > RESIDUE_GATE * w.re.abs().max(size * 1e-3) + 1e-9 {
                return Err(KqseError::NumericalGate(format!(
                    "Wigner value has imaginary residue {:.3e} against real part {:.3e}",
                    w.im, w.re
                )));
            }
            out.push(w.re);
        }
    }
    Ok(out)
}
