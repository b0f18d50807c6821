//! Seeded quadrature samples drawn from analytic tomograms, and the linear
//! detection-noise mixture `Z = kappa X + (1 - kappa) Y`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{KqseError, Result};
use crate::states::{PhaseSetting, ReferenceState, Tomogram};

/// Minimum number of grid points accepted by [`build_sampler`].
pub const MIN_GRID_POINTS: usize = 2048;
/// Grid size used by [`build_sampler_auto`].
pub const DEFAULT_GRID_POINTS: usize = 8192;
/// Probability mass the sampler support must hold.
pub const MASS_FLOOR: f64 = 1.0 - 1e-10;

/// `n` quadrature values measured at one phase setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub setting: PhaseSetting,
    pub values: Vec<f64>,
    pub seed: u64,
    /// Generating state; `None` for imported data.
    pub state_tag: Option<ReferenceState>,
    pub noise_tag: Option<NoiseModel>,
}

impl SampleBatch {
    /// Wrap externally supplied values, rejecting non-finite entries.
    pub fn from_values(setting: PhaseSetting, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(KqseError::InvalidParameter("empty sample batch".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(KqseError::InvalidParameter(format!("non-finite sample {v}")));
        }
        Ok(Self { setting, values, seed: 0, state_tag: None, noise_tag: None })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let n = self.len() as f64;
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    }

    /// Values in ascending order.
    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Detection model `Z = kappa X + (1 - kappa) Y` with Gaussian `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kappa: f64,
    pub mean: f64,
    pub variance: f64,
}

impl NoiseModel {
    pub fn new(kappa: f64, mean: f64, variance: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(KqseError::InvalidParameter(format!(
                "detection efficiency kappa = {kappa} must lie in (0, 1)"
            )));
        }
        if !(variance >= 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(KqseError::InvalidParameter(format!(
                "noise N({mean}, {variance}) is not a valid Gaussian"
            )));
        }
        Ok(Self { kappa, mean, variance })
    }

    /// Standard-normal noise at efficiency `kappa`.
    pub fn standard(kappa: f64) -> Result<Self> {
        Self::new(kappa, 0.0, 1.0)
    }

    /// Characteristic function of the noise `Y`.
    pub fn cf(&self, t: f64) -> Complex64 {
        Complex64::from_polar((-0.5 * self.variance * t * t).exp(), self.mean * t)
    }

    /// Argument `(1 - kappa) t / kappa` at which the noise CF enters the
    /// deconvolution of `phi_X(t)`.
    pub fn noise_argument(&self, t: f64) -> f64 {
        (1.0 - self.kappa) * t / self.kappa
    }
}

/// Piecewise-linear density table with an exact inverse of its CDF.
#[derive(Debug, Clone)]
pub struct InverseCdfTable {
    state: ReferenceState,
    setting: PhaseSetting,
    xs: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
    mass: f64,
}

/// Tabulate the tomogram of `state` at `s` over `support`.
pub fn build_sampler(
    state: ReferenceState,
    s: PhaseSetting,
    support: (f64, f64),
    grid_points: usize,
) -> Result<InverseCdfTable> {
    let tomo = state.tomogram_at(s);
    tabulate(state, s, &tomo, support, grid_points)
}

/// [`build_sampler`] with a support that starts at the envelope mean plus or
/// minus eight standard deviations and widens until the mass floor is met.
pub fn build_sampler_auto(state: ReferenceState, s: PhaseSetting) -> Result<InverseCdfTable> {
    build_sampler_auto_with(state, s, DEFAULT_GRID_POINTS)
}

pub fn build_sampler_auto_with(
    state: ReferenceState,
    s: PhaseSetting,
    grid_points: usize,
) -> Result<InverseCdfTable> {
    let tomo = state.tomogram_at(s);
    let (mean, var) = state.quadrature_moments(s);
    let mut half = 8.0 * var.sqrt();
    let mut last = None;
    for _ in 0..8 {
        match tabulate(state, s, &tomo, (mean - half, mean + half), grid_points) {
            Ok(t) => return Ok(t),
            Err(e @ KqseError::SupportTooSmall { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
        half *= 1.5;
    }
    Err(last.expect("loop ran at least once"))
}

fn tabulate(
    state: ReferenceState,
    setting: PhaseSetting,
    tomo: &Tomogram,
    (lo, hi): (f64, f64),
    grid_points: usize,
) -> Result<InverseCdfTable> {
    if grid_points < MIN_GRID_POINTS {
        return Err(KqseError::InvalidParameter(format!(
            "sampler needs at least {MIN_GRID_POINTS} grid points, got {grid_points}"
        )));
    }
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(KqseError::InvalidParameter(format!("bad support [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (grid_points - 1) as f64;
    let xs: Vec<f64> = (0..grid_points).map(|i| lo + i as f64 * step).collect();
    let pdf: Vec<f64> = xs.iter().map(|&x| tomo.eval(x)).collect();
    // Per-cell Simpson with the midpoint value.
    let mut cdf = Vec::with_capacity(grid_points);
    cdf.push(0.0);
    let mut acc = 0.0;
    for i in 0..grid_points - 1 {
        let mid = tomo.eval(xs[i] + 0.5 * step);
        acc += step / 6.0 * (pdf[i] + 4.0 * mid + pdf[i + 1]);
        cdf.push(acc);
    }
    let mass = acc;
    if !(mass >= MASS_FLOOR) {
        return Err(KqseError::SupportTooSmall { lo, hi, mass });
    }
    for c in &mut cdf {
        *c /= mass;
    }
    Ok(InverseCdfTable { state, setting, xs, pdf, cdf, mass })
}

impl InverseCdfTable {
    pub fn setting(&self) -> PhaseSetting {
        self.setting
    }

    pub fn state(&self) -> ReferenceState {
        self.state
    }

    pub fn support(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Tomogram mass inside the support, by quadrature.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Normalized CDF, consistent with [`Self::quantile`].
    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let step = self.xs[1] - self.xs[0];
        let i = (((x - lo) / step) as usize).min(self.xs.len() - 2);
        let (p0, p1) = (self.pdf[i], self.pdf[i + 1]);
        let trap = 0.5 * (p0 + p1) * step;
        let d = x - self.xs[i];
        let r = if trap > 0.0 {
            (p0 * d + (p1 - p0) * d * d / (2.0 * step)) / trap
        } else {
            d / step
        };
        self.cdf[i] + r * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse CDF treating the density as linear inside each cell.
    pub fn quantile(&self, u: f64) -> f64 {
        let last = self.cdf.len() - 1;
        let i = match self.cdf.partition_point(|&c| c <= u) {
            0 => 0,
            k if k > last => last - 1,
            k => k - 1,
        };
        let width = self.xs[i + 1] - self.xs[i];
        let cell = self.cdf[i + 1] - self.cdf[i];
        if cell <= 0.0 {
            return self.xs[i];
        }
        let r = ((u - self.cdf[i]) / cell).clamp(0.0, 1.0);
        let (p0, p1) = (self.pdf[i], self.pdf[i + 1]);
        // Solve p0 d + (p1 - p0) d^2 / (2 width) = r (p0 + p1) width / 2.
        let target = r * 0.5 * (p0 + p1) * width;
        let a = (p1 - p0) / (2.0 * width);
        let disc = (p0 * p0 + 4.0 * a * target).max(0.0);
        let denom = p0 + disc.sqrt();
        let d = if denom > 0.0 { 2.0 * target / denom } else { r * width };
        self.xs[i] + d.clamp(0.0, width)
    }

    pub fn draw(&self, n: usize, seed: u64) -> SampleBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n).map(|_| self.quantile(rng.gen::<f64>())).collect();
        SampleBatch {
            setting: self.setting,
            values,
            seed,
            state_tag: Some(self.state),
            noise_tag: None,
        }
    }
}

/// Draw `n` samples; identical seeds give identical batches.
pub fn draw(sampler: &InverseCdfTable, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(KqseError::InvalidParameter("n must be at least 1".into()));
    }
    Ok(sampler.draw(n, seed))
}

/// `z_l = kappa x_l + (1 - kappa) y_l` with an independent noise stream.
pub fn mix_noise(x: &SampleBatch, nm: &NoiseModel, seed: u64) -> SampleBatch {
    let k = nm.kappa;
    let values = if nm.variance == 0.0 {
        x.values.iter().map(|&v| k * v + (1.0 - k) * nm.mean).collect()
    } else {
        let normal = Normal::new(nm.mean, nm.variance.sqrt()).expect("variance validated");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        x.values.iter().map(|&v| k * v + (1.0 - k) * normal.sample(&mut rng)).collect()
    };
    SampleBatch {
        setting: x.setting,
        values,
        seed: x.seed,
        state_tag: x.state_tag,
        noise_tag: Some(*nm),
    }
}

/// Counter-based seed split: a stream id for `(master, path...)` that does not
/// depend on the order in which streams are requested.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(master ^ 0x6a09_e667_f3bc_c909);
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
