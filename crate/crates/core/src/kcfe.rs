//! Empirical and kernel-smoothed characteristic functions, the optimal CF
//! bandwidth, noise deconvolution, and grids of CF estimates over phase
//! settings.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KqseError, Result};
use crate::kde::KernelSpec;
use crate::pool::try_par_map;
use crate::sampling::{NoiseModel, SampleBatch};
use crate::states::{PhaseSetting, ReferenceState};

/// Pilot magnitudes are clipped to `[PILOT_FLOOR, 1 - PILOT_FLOOR]`.
pub const PILOT_FLOOR: f64 = 1e-3;

/// A CF estimate at one argument and setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CFPointEstimate {
    pub t: f64,
    pub setting: PhaseSetting,
    pub value: Complex64,
    pub h_used: f64,
    pub deconvolved: bool,
    pub n: usize,
}

/// `(1/n) sum_l exp(i t X_l)`.
pub fn empirical_cf(x: &SampleBatch, t: f64) -> Complex64 {
    let (mut c, mut s) = (0.0, 0.0);
    for &v in &x.values {
        let (sn, cs) = (t * v).sin_cos();
        c += cs;
        s += sn;
    }
    let n = x.len() as f64;
    let z = Complex64::new(c / n, s / n);
    // rounding can push the modulus a few ulps past one
    let r = z.norm();
    if r > 1.0 {
        z / r
    } else {
        z
    }
}

/// Smoothing factor `phi_K(t h)` of the kernel CF estimator at setting `s`.
pub fn kernel_cf(k: KernelSpec, t: f64, h: f64, s: PhaseSetting) -> Complex64 {
    let v = match k {
        KernelSpec::GaussianStd => (-t * t * h * h * s.alpha2() / 4.0).exp(),
        KernelSpec::Epanechnikov => k.cf(t * h),
    };
    Complex64::new(v, 0.0)
}

/// `(2 / (t alpha^2)) sqrt((1 - |phi|^2) / (2 n |phi|^2))`.
pub fn optimal_bandwidth_cf(phi_mag: f64, n: usize, t: f64, s: PhaseSetting) -> Result<f64> {
    if !(phi_mag > 0.0 && phi_mag < 1.0) {
        return Err(KqseError::InvalidPilot(phi_mag));
    }
    if n == 0 || t == 0.0 {
        return Err(KqseError::InvalidParameter(format!("bandwidth for n = {n}, t = {t}")));
    }
    let p2 = phi_mag * phi_mag;
    let ratio = (1.0 - p2) / (2.0 * n as f64 * p2);
    Ok(2.0 / (t.abs() * s.alpha2()) * ratio.sqrt())
}

/// Clip a pilot magnitude into the admissible band.
pub fn clip_pilot(phi_mag: f64) -> f64 {
    phi_mag.clamp(PILOT_FLOOR, 1.0 - PILOT_FLOOR)
}

/// `empirical_cf(x, t) * kernel_cf(k, t, h)`.
pub fn kcfe_point(x: &SampleBatch, t: f64, k: KernelSpec, h: f64) -> CFPointEstimate {
    let value = empirical_cf(x, t) * kernel_cf(k, t, h, x.setting);
    CFPointEstimate { t, setting: x.setting, value, h_used: h, deconvolved: false, n: x.len() }
}

/// Recover `phi_X(t)` from an estimate of `phi_Z` taken at `t / kappa`.
pub fn deconvolve(zhat: &CFPointEstimate, nm: &NoiseModel, t: f64) -> Result<CFPointEstimate> {
    let expected = t / nm.kappa;
    if (zhat.t - expected).abs() > 1e-12 * expected.abs().max(1.0) {
        return Err(KqseError::InvalidParameter(format!(
            "estimate taken at t = {}, deconvolution of t = {t} needs t / kappa = {expected}",
            zhat.t
        )));
    }
    if zhat.deconvolved {
        return Err(KqseError::InvalidParameter("estimate is already deconvolved".into()));
    }
    let u = nm.noise_argument(t);
    let noise = nm.cf(u);
    if noise.norm() == 0.0 {
        return Err(KqseError::DeconvolutionImpossible(u));
    }
    Ok(CFPointEstimate { t, value: zhat.value / noise, deconvolved: true, ..*zhat })
}

/// KCFE at `t = 1` with the plug-in optimal bandwidth, deconvolved when the
/// batch carries detection noise described by `noise`.
///
/// The pilot `|phi|` and the bandwidth come from the observed batch at the
/// argument actually evaluated (`1 / kappa` under noise).
pub fn estimate_point(
    x: &SampleBatch,
    k: KernelSpec,
    noise: Option<&NoiseModel>,
) -> Result<CFPointEstimate> {
    let t = noise.map_or(1.0, |nm| 1.0 / nm.kappa);
    let pilot = clip_pilot(empirical_cf(x, t).norm());
    let h = optimal_bandwidth_cf(pilot, x.len(), t, x.setting)?;
    let z = kcfe_point(x, t, k, h);
    match noise {
        Some(nm) => deconvolve(&z, nm, 1.0),
        None => Ok(z),
    }
}

/// Equally spaced coordinates `start + k step`, `k = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Axis {
    /// `k (2 max / n) - max` for `k = 0..n`; holds zero when `n` is even.
    pub fn half_open(max: f64, n: usize) -> Result<Self> {
        if !(max > 0.0) || n < 2 {
            return Err(KqseError::InvalidParameter(format!("axis max {max}, {n} points")));
        }
        Ok(Self { start: -max, step: 2.0 * max / n as f64, len: n })
    }

    /// `n` points from `-max` to `max` inclusive; mirror symmetric.
    pub fn closed(max: f64, n: usize) -> Result<Self> {
        if !(max > 0.0) || n < 2 {
            return Err(KqseError::InvalidParameter(format!("axis max {max}, {n} points")));
        }
        Ok(Self { start: -max, step: 2.0 * max / (n - 1) as f64, len: n })
    }

    /// `n` points from `lo` to `hi` inclusive.
    pub fn span(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 2 {
            return Err(KqseError::InvalidParameter(format!("axis [{lo}, {hi}], {n} points")));
        }
        Ok(Self { start: lo, step: (hi - lo) / (n - 1) as f64, len: n })
    }

    /// A single coordinate; its step is 1 so sums reduce to plain values.
    pub fn singleton(v: f64) -> Self {
        Self { start: v, step: 1.0, len: 1 }
    }

    /// Node `k`; a node within rounding of zero is exactly zero, so the
    /// origin is recognized as the non-setting it is.
    pub fn value(&self, k: usize) -> f64 {
        let v = self.start + k as f64 * self.step;
        if v.abs() <= 1e-9 * self.step.abs() {
            0.0
        } else {
            v
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.value(k)).collect()
    }

    /// Index of the node at `v`, if `v` is on the lattice.
    pub fn index_of(&self, v: f64) -> Option<usize> {
        let r = (v - self.start) / self.step;
        let k = r.round();
        if (r - k).abs() > 1e-6 || k < 0.0 || k >= self.len as f64 {
            return None;
        }
        Some(k as usize)
    }

    /// Index of the node at `-value(k)`.
    pub fn mirror(&self, k: usize) -> Option<usize> {
        self.index_of(-self.value(k))
    }

    /// Every node has its negative on the lattice.
    pub fn is_symmetric(&self) -> bool {
        (0..self.len).all(|k| self.mirror(k).is_some())
    }

    pub fn zero_index(&self) -> Option<usize> {
        self.index_of(0.0)
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.len == other.len
            && (self.start - other.start).abs() <= 1e-12 * self.start.abs().max(1.0)
            && (self.step - other.step).abs() <= 1e-12 * self.step.abs().max(1.0)
    }
}

/// `phi(1; mu_i, nu_j)` on a rectangular lattice, stored `mu`-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CFGrid {
    pub mu: Axis,
    pub nu: Axis,
    pub values: Vec<Complex64>,
    /// Bandwidth per setting; zero for analytic entries.
    pub h: Vec<f64>,
    /// Sample count per setting; zero for analytic entries.
    pub n: Vec<usize>,
    pub seeds: Vec<u64>,
    pub noise: Option<NoiseModel>,
    pub deconvolved: bool,
}

impl CFGrid {
    pub fn from_fn(mu: Axis, nu: Axis, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let mut values = Vec::with_capacity(mu.len * nu.len);
        for i in 0..mu.len {
            for j in 0..nu.len {
                values.push(f(mu.value(i), nu.value(j)));
            }
        }
        let size = values.len();
        Self {
            mu,
            nu,
            values,
            h: vec![0.0; size],
            n: vec![0; size],
            seeds: vec![0; size],
            noise: None,
            deconvolved: false,
        }
    }

    /// Exact CF of `state`; the origin entry is `tr rho = 1`.
    pub fn analytic(state: &ReferenceState, mu: Axis, nu: Axis) -> Self {
        Self::from_fn(mu, nu, |m, v| state.cf1(m, v))
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nu.len + j
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[self.index(i, j)]
    }

    pub fn get(&self, mu: f64, nu: f64) -> Option<Complex64> {
        Some(self.at(self.mu.index_of(mu)?, self.nu.index_of(nu)?))
    }

    pub fn settings(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        (0..self.mu.len).flat_map(move |i| {
            (0..self.nu.len).map(move |j| (i, j, self.mu.value(i), self.nu.value(j)))
        })
    }

    pub fn same_lattice(&self, other: &Self) -> bool {
        self.mu.same_as(&other.mu) && self.nu.same_as(&other.nu)
    }

    /// Average each entry with the conjugate of its mirror `-p`, where the
    /// mirror is on the lattice. Independent estimates at `p` and `-p` break
    /// `phi(-p) = conj(phi(p))` by sampling noise; this restores it.
    pub fn hermitian_part(&self) -> Self {
        let mut out = self.clone();
        for (i, j, _, _) in self.settings() {
            if let (Some(mi), Some(mj)) = (self.mu.mirror(i), self.nu.mirror(j)) {
                out.values[self.index(i, j)] = 0.5 * (self.at(i, j) + self.at(mi, mj).conj());
            }
        }
        out
    }

    /// A copy with every entry replaced by `f(mu, nu, value)`.
    pub fn map_values(&self, f: impl Fn(f64, f64, Complex64) -> Complex64) -> Self {
        let mut out = self.clone();
        for (i, j, m, v) in self.settings() {
            let k = self.index(i, j);
            out.values[k] = f(m, v, self.values[k]);
        }
        out
    }
}

/// Source of one sample batch per phase setting.
pub trait BatchSource: Sync {
    /// The batch at lattice node `(i, j)`, or `None` if it was never measured.
    fn batch(&self, i: usize, j: usize, s: PhaseSetting) -> Result<Option<SampleBatch>>;
}

impl<F> BatchSource for F
where
    F: Fn(usize, usize, PhaseSetting) -> Result<Option<SampleBatch>> + Sync,
{
    fn batch(&self, i: usize, j: usize, s: PhaseSetting) -> Result<Option<SampleBatch>> {
        self(i, j, s)
    }
}

/// Estimate the CF lattice from per-setting batches, in parallel over settings.
///
/// The origin is not a valid setting; its entry is fixed to 1.
pub fn estimate_cf_grid(
    mu: Axis,
    nu: Axis,
    kernel: KernelSpec,
    noise: Option<&NoiseModel>,
    source: &dyn BatchSource,
) -> Result<CFGrid> {
    let nodes: Vec<(usize, usize)> =
        (0..mu.len).flat_map(|i| (0..nu.len).map(move |j| (i, j))).collect();
    let points = try_par_map(&nodes, |&(i, j)| {
        let (m, v) = (mu.value(i), nu.value(j));
        let Ok(s) = PhaseSetting::new(m, v) else {
            return Ok(None);
        };
        let batch = source.batch(i, j, s)?.ok_or_else(|| {
            KqseError::IncompleteGrid(format!("no sample batch at (mu, nu) = ({m}, {v})"))
        })?;
        Ok(Some((estimate_point(&batch, kernel, noise)?, batch.seed)))
    })?;
    let mut grid = CFGrid::from_fn(mu, nu, |_, _| Complex64::new(1.0, 0.0));
    let mut count = None;
    for (k, p) in points.into_iter().enumerate() {
        if let Some((p, seed)) = p {
            if *count.get_or_insert(p.n) != p.n {
                return Err(KqseError::IncompleteGrid(format!(
                    "batches differ in size ({} vs {})",
                    count.unwrap_or(0),
                    p.n
                )));
            }
            grid.values[k] = p.value;
            grid.h[k] = p.h_used;
            grid.n[k] = p.n;
            grid.seeds[k] = seed;
        }
    }
    grid.noise = noise.copied();
    grid.deconvolved = noise.is_some();
    Ok(grid)
}
