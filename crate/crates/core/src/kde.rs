//! Kernel density estimates of tomograms, bandwidth selection, density error
//! metrics and the Freedman-Diaconis histogram baseline.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{KqseError, Result};
use crate::sampling::SampleBatch;

/// Second-order smoothing kernels with closed-form characteristic functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    /// Standard normal density.
    #[serde(alias = "gaussian")]
    GaussianStd,
    /// `3/4 (1 - u^2)` on `[-1, 1]`.
    Epanechnikov,
}

impl KernelSpec {
    pub fn density(&self, u: f64) -> f64 {
        match self {
            Self::GaussianStd => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
            Self::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// Characteristic function `int K(u) e^{i w u} du`.
    pub fn cf(&self, w: f64) -> f64 {
        match self {
            Self::GaussianStd => (-0.5 * w * w).exp(),
            Self::Epanechnikov => {
                if w.abs() < 1e-4 {
                    let w2 = w * w;
                    1.0 - w2 / 10.0 + w2 * w2 / 280.0
                } else {
                    3.0 * (w.sin() - w * w.cos()) / (w * w * w)
                }
            }
        }
    }

    /// `(K * K)(u)`, the kernel convolved with itself.
    fn self_convolution(&self, u: f64) -> f64 {
        match self {
            Self::GaussianStd => (-0.25 * u * u).exp() / (2.0 * PI.sqrt()),
            Self::Epanechnikov => {
                let a = u.abs();
                if a >= 2.0 {
                    0.0
                } else {
                    3.0 / 160.0 * (2.0 - a).powi(3) * (a * a + 6.0 * a + 4.0)
                }
            }
        }
    }

    /// Half-width beyond which the kernel is treated as zero.
    fn reach(&self) -> f64 {
        match self {
            Self::GaussianStd => 8.0,
            Self::Epanechnikov => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GaussianStd => "gaussian",
            Self::Epanechnikov => "epanechnikov",
        }
    }
}

/// Bandwidth selection rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthSpec {
    Silverman,
    Lscv(Vec<f64>),
    Fixed(f64),
}

impl BandwidthSpec {
    /// The default LSCV search grid: 40 log-spaced values on `[0.05, 1]`.
    pub fn lscv_default() -> Self {
        Self::Lscv(log_grid(0.05, 1.0, 40))
    }

    pub fn resolve(&self, x: &SampleBatch, k: KernelSpec) -> Result<f64> {
        match self {
            Self::Silverman => silverman_bandwidth(x),
            Self::Lscv(grid) => lscv_bandwidth_with(x, grid, k),
            Self::Fixed(h) if *h > 0.0 && h.is_finite() => Ok(*h),
            Self::Fixed(h) => Err(KqseError::InvalidParameter(format!("bandwidth {h}"))),
        }
    }
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (r * i as f64).exp()).collect()
}

/// `m` equally spaced points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub lo: f64,
    pub hi: f64,
    pub m: usize,
}

impl UniformGrid {
    pub fn new(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if !(lo < hi) || m < 2 {
            return Err(KqseError::InvalidParameter(format!(
                "grid [{lo}, {hi}] with {m} points"
            )));
        }
        Ok(Self { lo, hi, m })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.m - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.point(i)).collect()
    }

    /// Trapezoid weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.m {
            0.5 * self.step()
        } else {
            self.step()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Kernel(KernelSpec),
    /// Bin heights at bin centres; `h_used` is the bin width.
    Histogram,
}

/// Density values on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: UniformGrid,
    pub values: Vec<f64>,
    pub h_used: f64,
    pub kind: EstimatorKind,
    pub n: usize,
}

impl DensityEstimate {
    /// Off-grid value: linear interpolation for kernel estimates, the bin
    /// height for histograms, zero outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        let step = g.step();
        match self.kind {
            EstimatorKind::Histogram => {
                let edge = g.lo - 0.5 * step;
                let i = ((x - edge) / step).floor();
                if i < 0.0 || i >= g.m as f64 {
                    0.0
                } else {
                    self.values[i as usize]
                }
            }
            EstimatorKind::Kernel(_) => {
                if x < g.lo || x > g.hi {
                    return 0.0;
                }
                let i = (((x - g.lo) / step) as usize).min(g.m - 2);
                let r = (x - g.point(i)) / step;
                self.values[i] * (1.0 - r) + self.values[i + 1] * r
            }
        }
    }

    /// Trapezoid mass.
    pub fn mass(&self) -> f64 {
        self.values.iter().enumerate().map(|(i, v)| v * self.grid.weight(i)).sum()
    }

    /// The same estimate read off on another grid via [`Self::value_at`].
    pub fn resample(&self, grid: UniformGrid) -> Self {
        let values = grid.points().iter().map(|&x| self.value_at(x)).collect();
        Self { grid, values, ..self.clone() }
    }
}

/// Type-7 sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn iqr(sorted: &[f64]) -> f64 {
    quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25)
}

/// `0.9 min(sigma, IQR / 1.34) n^{-1/5}`.
///
/// When the IQR collapses but the spread does not, sigma alone is used.
pub fn silverman_bandwidth(x: &SampleBatch) -> Result<f64> {
    let n = x.len();
    if n < 3 {
        return Err(KqseError::InvalidParameter(format!("Silverman's rule needs n >= 3, got {n}")));
    }
    let sigma = x.variance().sqrt();
    if !(sigma > 0.0) {
        return Err(KqseError::DegenerateSample("all samples are equal".into()));
    }
    let q = iqr(&x.sorted()) / 1.34;
    let spread = if q > 0.0 { sigma.min(q) } else { sigma };
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Least-squares cross-validation over `grid` with the Gaussian kernel.
pub fn lscv_bandwidth(x: &SampleBatch, grid: &[f64]) -> Result<f64> {
    lscv_bandwidth_with(x, grid, KernelSpec::GaussianStd)
}

/// Least-squares cross-validation for kernel `k`.
///
/// Minimizes `int f_h^2 - (2/n) sum_i f_{h,-i}(X_i)`; ties go to the smaller
/// bandwidth.
pub fn lscv_bandwidth_with(x: &SampleBatch, grid: &[f64], k: KernelSpec) -> Result<f64> {
    if grid.is_empty() {
        return Err(KqseError::Config("LSCV bandwidth grid is empty".into()));
    }
    if let Some(h) = grid.iter().find(|h| !(**h > 0.0)) {
        return Err(KqseError::Config(format!("LSCV grid holds non-positive bandwidth {h}")));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let n = x.len();
    if n < 2 {
        return Err(KqseError::InvalidParameter("LSCV needs at least two samples".into()));
    }
    let v = &x.values;
    let mut diffs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            diffs.push(v[i] - v[j]);
        }
    }
    let nf = n as f64;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let mut best: Option<(f64, f64)> = None;
    for &gi in &order {
        let h = grid[gi];
        let (conv, kern) = match k {
            KernelSpec::GaussianStd => {
                // exp(-d^2 / 2h^2) is the square of exp(-d^2 / 4h^2).
                let c = 1.0 / (4.0 * h * h);
                let (mut sc, mut sk) = (0.0, 0.0);
                for d in &diffs {
                    let e = (-d * d * c).exp();
                    sc += e;
                    sk += e * e;
                }
                (sc / (2.0 * PI.sqrt()), sk / (2.0 * PI).sqrt())
            }
            KernelSpec::Epanechnikov => {
                let (mut sc, mut sk) = (0.0, 0.0);
                for d in &diffs {
                    let u = d / h;
                    sc += k.self_convolution(u);
                    sk += k.density(u);
                }
                (sc, sk)
            }
        };
        // Off-diagonal pairs counted twice; the diagonal adds n (K*K)(0).
        let int_f2 = (2.0 * conv + nf * k.self_convolution(0.0)) / (nf * nf * h);
        let loo = 2.0 * (2.0 * kern) / (nf * (nf - 1.0) * h);
        let score = int_f2 - loo;
        if best.map_or(true, |(s, _)| score < s) {
            best = Some((score, h));
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

/// `f(t) = (1 / nh) sum_l K((t - X_l) / h)` on `grid`.
pub fn kde_evaluate(
    x: &SampleBatch,
    k: KernelSpec,
    h: f64,
    grid: UniformGrid,
) -> Result<DensityEstimate> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(KqseError::InvalidParameter(format!("bandwidth {h}")));
    }
    let sorted = x.sorted();
    let reach = k.reach() * h;
    let scale = 1.0 / (x.len() as f64 * h);
    let values = grid
        .points()
        .iter()
        .map(|&t| {
            let lo = sorted.partition_point(|&v| v < t - reach);
            let hi = sorted.partition_point(|&v| v <= t + reach);
            sorted[lo..hi].iter().map(|&v| k.density((t - v) / h)).sum::<f64>() * scale
        })
        .collect();
    Ok(DensityEstimate { grid, values, h_used: h, kind: EstimatorKind::Kernel(k), n: x.len() })
}

/// Integrated squared error against `truth` on the estimate's own grid.
pub fn mise(est: &DensityEstimate, truth: impl Fn(f64) -> f64) -> f64 {
    let g = &est.grid;
    est.values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let d = v - truth(g.point(i));
            d * d * g.weight(i)
        })
        .sum()
}

/// Half the L1 distance between two densities, by midpoint rule.
pub fn total_variation(
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
    (lo, hi): (f64, f64),
    step: f64,
) -> f64 {
    let cells = ((hi - lo) / step).ceil() as usize;
    let l1: f64 = (0..cells)
        .map(|i| {
            let x = lo + (i as f64 + 0.5) * step;
            (f(x) - g(x)).abs()
        })
        .sum::<f64>()
        * step;
    (0.5 * l1).clamp(0.0, 1.0)
}

/// Histogram with the Freedman-Diaconis width `2 IQR n^{-1/3}`.
pub fn fd_histogram(x: &SampleBatch) -> Result<DensityEstimate> {
    let n = x.len();
    if n < 4 {
        return Err(KqseError::InvalidParameter(format!("histogram needs n >= 4, got {n}")));
    }
    let sorted = x.sorted();
    let q = iqr(&sorted);
    if !(q > 0.0) {
        return Err(KqseError::DegenerateSample("interquartile range is zero".into()));
    }
    let width = fd_width(q, n);
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let bins = (((hi - lo) / width).ceil() as usize).max(2);
    let mut counts = vec![0usize; bins];
    for &v in &sorted {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let grid = UniformGrid {
        lo: lo + 0.5 * width,
        hi: lo + (bins as f64 - 0.5) * width,
        m: bins,
    };
    let values = counts.iter().map(|&c| c as f64 / (n as f64 * width)).collect();
    Ok(DensityEstimate { grid, values, h_used: width, kind: EstimatorKind::Histogram, n })
}

pub(crate) fn fd_width(iqr: f64, n: usize) -> f64 {
    2.0 * iqr * (n as f64).powf(-1.0 / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::build_sampler_auto;
    use crate::states::{PhaseSetting, ReferenceState};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn batch(values: Vec<f64>) -> SampleBatch {
        SampleBatch::from_values(PhaseSetting::new(1.0, 0.0).unwrap(), values).unwrap()
    }

    fn normal_batch(n: usize, seed: u64) -> SampleBatch {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        batch((0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
    }

    fn cat_batch(n: usize, seed: u64) -> (SampleBatch, ReferenceState, PhaseSetting) {
        let st = ReferenceState::cat(1.0, 0.5);
        let s = PhaseSetting::new(0.8, 1.2).unwrap();
        (build_sampler_auto(st, s).unwrap().draw(n, seed), st, s)
    }

    #[test]
    fn kernel_cf_closed_forms() {
        assert_eq!(KernelSpec::GaussianStd.cf(0.0), 1.0);
        assert_eq!(KernelSpec::Epanechnikov.cf(0.0), 1.0);
        // the series and the closed form agree where both are accurate
        let w: f64 = 1e-4;
        let closed = 3.0 * (w.sin() - w * w.cos()) / (w * w * w);
        assert!((KernelSpec::Epanechnikov.cf(w * 0.999) - closed).abs() < 1e-7);
        // numerical Fourier transform
        let step = 1e-4;
        let ft: f64 = (0..20_000)
            .map(|i| {
                let u = -1.0 + (i as f64 + 0.5) * step;
                KernelSpec::Epanechnikov.density(u) * (2.3 * u).cos()
            })
            .sum::<f64>()
            * step;
        assert!((ft - KernelSpec::Epanechnikov.cf(2.3)).abs() < 1e-8);
    }

    #[test]
    fn self_convolutions_match_quadrature() {
        for k in [KernelSpec::GaussianStd, KernelSpec::Epanechnikov] {
            for u in [0.0, 0.3, 1.1, 1.9] {
                let step = 1e-4;
                let q: f64 = (0..200_000)
                    .map(|i| {
                        let v = -10.0 + (i as f64 + 0.5) * step;
                        k.density(v) * k.density(u - v)
                    })
                    .sum::<f64>()
                    * step;
                assert!((q - k.self_convolution(u)).abs() < 1e-6, "{k:?} u={u}");
            }
        }
    }

    #[test]
    fn silverman_examples() {
        assert!(silverman_bandwidth(&batch(vec![2.0; 10])).is_err());
        assert!(silverman_bandwidth(&batch(vec![1.0, 2.0])).is_err());
        let b = normal_batch(1_000_000, 1);
        let h = silverman_bandwidth(&b).unwrap();
        let expected = 0.9 * 1e6f64.powf(-0.2);
        assert!((h / expected - 1.0).abs() < 0.01, "{h} vs {expected}");
        let (c, _, _) = cat_batch(500, 4);
        let h = silverman_bandwidth(&c).unwrap();
        assert!((h - 0.33).abs() < 0.05, "{h}");
    }

    #[test]
    fn silverman_falls_back_to_sigma_when_iqr_vanishes() {
        let mut v = vec![0.0; 20];
        v[0] = -5.0;
        v[19] = 5.0;
        let b = batch(v);
        let h = silverman_bandwidth(&b).unwrap();
        let sigma = b.variance().sqrt();
        assert!((h - 0.9 * sigma * 20f64.powf(-0.2)).abs() < 1e-15);
    }

    #[test]
    fn lscv_examples() {
        let b = normal_batch(50, 2);
        assert_eq!(lscv_bandwidth(&b, &[0.42]).unwrap(), 0.42);
        assert!(matches!(lscv_bandwidth(&b, &[]), Err(KqseError::Config(_))));
        let (c, _, _) = cat_batch(500, 5);
        let h = lscv_bandwidth(&c, &log_grid(0.05, 1.0, 40)).unwrap();
        assert!((0.2..=0.6).contains(&h), "{h}");
        // A single LSCV choice is noisy; compare the median over batches.
        let mut ratios: Vec<f64> = (0..15)
            .map(|seed| {
                let b = normal_batch(2000, 30 + seed);
                lscv_bandwidth(&b, &log_grid(0.05, 1.0, 40)).unwrap()
                    / silverman_bandwidth(&b).unwrap()
            })
            .collect();
        ratios.sort_by(f64::total_cmp);
        assert!((ratios[7] - 1.0).abs() < 0.25, "median ratio {}", ratios[7]);
    }

    #[test]
    fn lscv_score_matches_brute_force() {
        let b = normal_batch(40, 9);
        for k in [KernelSpec::GaussianStd, KernelSpec::Epanechnikov] {
            let grid = [0.2, 0.35, 0.6];
            let brute = |h: f64| {
                let g = UniformGrid::new(-12.0, 12.0, 48_001).unwrap();
                let f = kde_evaluate(&b, k, h, g).unwrap();
                let int_f2: f64 = f.values.iter().enumerate().map(|(i, v)| v * v * g.weight(i)).sum();
                let n = b.len();
                let mut loo = 0.0;
                for i in 0..n {
                    let s: f64 = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| k.density((b.values[i] - b.values[j]) / h))
                        .sum();
                    loo += s / ((n - 1) as f64 * h);
                }
                int_f2 - 2.0 * loo / n as f64
            };
            let best = grid
                .iter()
                .copied()
                .min_by(|a, c| brute(*a).total_cmp(&brute(*c)))
                .unwrap();
            assert_eq!(lscv_bandwidth_with(&b, &grid, k).unwrap(), best, "{k:?}");
        }
    }

    #[test]
    fn kde_single_sample() {
        let b = batch(vec![0.0]);
        let g = UniformGrid::new(-2.0, 2.0, 5).unwrap();
        let f = kde_evaluate(&b, KernelSpec::GaussianStd, 1.0, g).unwrap();
        assert!((f.values[2] - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        let f = kde_evaluate(&b, KernelSpec::Epanechnikov, 1.0, g).unwrap();
        assert_eq!(f.values[0], 0.0);
        assert_eq!(f.values[4], 0.0);
        assert!(kde_evaluate(&b, KernelSpec::GaussianStd, 0.0, g).is_err());
    }

    #[test]
    fn kde_is_a_density() {
        let (c, _, _) = cat_batch(1000, 6);
        for k in [KernelSpec::GaussianStd, KernelSpec::Epanechnikov] {
            let h = silverman_bandwidth(&c).unwrap();
            let sorted = c.sorted();
            let g = UniformGrid::new(sorted[0] - 10.0 * h, sorted[c.len() - 1] + 10.0 * h, 4096)
                .unwrap();
            let f = kde_evaluate(&c, k, h, g).unwrap();
            assert!(f.values.iter().all(|v| *v >= 0.0));
            assert!((f.mass() - 1.0).abs() < 5e-3, "{k:?} mass {}", f.mass());
        }
    }

    #[test]
    fn mise_examples() {
        let g = UniformGrid::new(0.0, 1.0, 101).unwrap();
        let truth = |x: f64| x * x;
        let exact = DensityEstimate {
            grid: g,
            values: g.points().iter().map(|&x| truth(x)).collect(),
            h_used: 1.0,
            kind: EstimatorKind::Kernel(KernelSpec::GaussianStd),
            n: 1,
        };
        assert_eq!(mise(&exact, truth), 0.0);
        let shifted = DensityEstimate {
            values: exact.values.iter().map(|v| v + 0.3).collect(),
            ..exact.clone()
        };
        assert!((mise(&shifted, truth) - 0.09).abs() < 1e-14);
    }

    #[test]
    fn total_variation_examples() {
        let f = |x: f64| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 };
        let g = |x: f64| if (2.0..3.0).contains(&x) { 1.0 } else { 0.0 };
        assert_eq!(total_variation(f, f, (-1.0, 4.0), 1e-3), 0.0);
        assert!((total_variation(f, g, (-1.0, 4.0), 1e-3) - 1.0).abs() < 1e-9);
        let s = PhaseSetting::new(1.0, 0.0).unwrap();
        let (a, b) = (ReferenceState::coherent(0.4, 0.0), ReferenceState::coherent(-0.4, 0.0));
        let tv = total_variation(|x| a.tomogram(s, x), |x| b.tomogram(s, x), (-12.0, 12.0), 1e-3);
        assert!(tv <= (1.0 - (-0.64f64).exp()).sqrt() + 1e-6);
    }

    #[test]
    fn histogram_examples() {
        let b = batch(vec![0.0, 1.0, 2.0, 3.0]);
        let hist = fd_histogram(&b).unwrap();
        assert!((hist.h_used - 2.0 * 1.5 * 4f64.powf(-1.0 / 3.0)).abs() < 1e-15);
        let mass: f64 = hist.values.iter().sum::<f64>() * hist.h_used;
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(fd_histogram(&batch(vec![1.0; 10])).is_err());
        assert!(fd_histogram(&batch(vec![1.0, 2.0, 3.0])).is_err());

        let uniform = batch((0..101).map(|i| i as f64 / 100.0).collect());
        let hist = fd_histogram(&uniform).unwrap();
        assert!((hist.h_used - 2.0 * 0.5 * 101f64.powf(-1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn histogram_loses_to_kde() {
        let truth = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let g = UniformGrid::new(-6.0, 6.0, 1201).unwrap();
        let (mut mh, mut mk) = (0.0, 0.0);
        for rep in 0..100 {
            let b = normal_batch(2000, 100 + rep);
            let hist = fd_histogram(&b).unwrap().resample(g);
            let h = silverman_bandwidth(&b).unwrap();
            let kde = kde_evaluate(&b, KernelSpec::GaussianStd, h, g).unwrap();
            mh += mise(&hist, truth);
            mk += mise(&kde, truth);
        }
        assert!(mh > mk, "histogram {mh} kde {mk}");
    }
}
