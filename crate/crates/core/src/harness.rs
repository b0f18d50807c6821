//! Experiment runners: the reconstruction and estimation tables, convergence
//! slopes, error-bound checks and plot data.
//!
//! Every random stream is derived from the master seed and the position of
//! the draw (table, configuration, repetition, lattice node), and all
//! reductions run in a fixed order, so results do not depend on the number of
//! workers.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use crate::error::{KqseError, Result};
use crate::kcfe::{estimate_point, Axis, CFGrid};
use crate::kde::{
    fd_histogram, kde_evaluate, lscv_bandwidth_with, mise, silverman_bandwidth, BandwidthSpec,
    KernelSpec, UniformGrid,
};
use crate::pool::try_par_map;
use crate::reconstruction::{
    fit_tau, overlap_with_reference_complex, reconstruct_rho, total_bound, estimation_bound,
    wigner_grid, DensityKernelGrid, ErrorBoundParams, ReconstructionGrid,
};
use crate::sampling::{
    build_sampler_auto_with, derive_seed, mix_noise, InverseCdfTable, NoiseModel,
    DEFAULT_GRID_POINTS,
};
use crate::states::{PhaseSetting, ReferenceState};

/// Repetitions simulated per sampler build; bounds memory for long runs.
const REP_CHUNK: usize = 50;
/// Repetition count selected by `full`.
pub const FULL_REPS: usize = 1000;

const STREAM_TABLE1: u64 = 1;
const STREAM_S2: u64 = 2;
const STREAM_S3: u64 = 3;
const STREAM_S4: u64 = 4;
const STREAM_SLOPE_KDE: u64 = 5;
const STREAM_SLOPE_KCFE: u64 = 6;
const STREAM_SLOPE_E2E: u64 = 7;
const STREAM_BOUNDS: u64 = 8;
const STREAM_PLOT: u64 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettingSpec {
    pub mu: f64,
    pub nu: f64,
}

impl Default for SettingSpec {
    fn default() -> Self {
        Self { mu: 0.8, nu: 1.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub kappa: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { kappa: 0.85, mean: 0.0, variance: 1.0 }
    }
}

/// Reconstruction points: matched to the `nu` lattice, or an explicit span
/// (the `nu` lattice then becomes the `2G - 1` differences of the span).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum YGridSpec {
    #[default]
    Matched,
    Span {
        y_max: f64,
        points: usize,
    },
}

/// Lattice keys. Unset keys take the defaults of the experiment being run,
/// or the rule `mu_max = ln n`, `N_mu = mu_max ln n`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSpec {
    pub n: Option<usize>,
    pub n_values: Option<Vec<usize>>,
    pub t_values: Option<Vec<f64>>,
    pub n_mu: Option<usize>,
    pub n_nu: Option<usize>,
    pub mu_max: Option<f64>,
    pub nu_max: Option<f64>,
    pub y: YGridSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub reps: Option<usize>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub full: bool,
    pub sampler_points: usize,
    pub kernel: KernelSpec,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            reps: None,
            seed: 20_240_611,
            workers: None,
            full: false,
            sampler_points: DEFAULT_GRID_POINTS,
            kernel: KernelSpec::GaussianStd,
        }
    }
}

/// Everything an experiment needs; loaded from TOML sections `[state]`,
/// `[setting]`, `[noise]`, `[lattice]` and `[run]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub state: ReferenceState,
    pub setting: SettingSpec,
    pub noise: NoiseSpec,
    pub lattice: LatticeSpec,
    pub run: RunSpec,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            state: ReferenceState::cat(1.0, 0.5),
            setting: SettingSpec::default(),
            noise: NoiseSpec::default(),
            lattice: LatticeSpec::default(),
            run: RunSpec::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| KqseError::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KqseError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| KqseError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(KqseError::Config(m));
        if let ReferenceState::Fock { m } = self.state {
            ReferenceState::fock(m).map_err(|e| KqseError::Config(e.to_string()))?;
        }
        self.phase_setting()?;
        self.noise_model()?;
        if self.run.reps == Some(0) {
            return cfg("run.reps must be at least 1".into());
        }
        if self.run.workers == Some(0) {
            return cfg("run.workers must be at least 1".into());
        }
        if self.run.sampler_points < crate::sampling::MIN_GRID_POINTS {
            return cfg(format!(
                "run.sampler_points must be at least {}",
                crate::sampling::MIN_GRID_POINTS
            ));
        }
        let l = &self.lattice;
        if l.n == Some(0) || l.n_values.as_ref().is_some_and(|v| v.is_empty() || v.contains(&0)) {
            return cfg("lattice sample sizes must be positive".into());
        }
        if l.t_values.as_ref().is_some_and(|v| v.is_empty() || v.iter().any(|t| !(*t > 20.0))) {
            return cfg("lattice.t_values must be finite and above 20".into());
        }
        for (name, v) in [("mu_max", l.mu_max), ("nu_max", l.nu_max)] {
            if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                return cfg(format!("lattice.{name} must be positive"));
            }
        }
        for (name, v) in [("n_mu", l.n_mu), ("n_nu", l.n_nu)] {
            if v.is_some_and(|v| v < 2) {
                return cfg(format!("lattice.{name} must be at least 2"));
            }
        }
        if let YGridSpec::Span { y_max, points } = l.y {
            if !(y_max > 0.0) || points < 2 {
                return cfg("lattice.y span needs y_max > 0 and at least 2 points".into());
            }
        }
        Ok(())
    }

    pub fn phase_setting(&self) -> Result<PhaseSetting> {
        PhaseSetting::new(self.setting.mu, self.setting.nu)
            .map_err(|e| KqseError::Config(format!("setting: {e}")))
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.noise.kappa, self.noise.mean, self.noise.variance)
            .map_err(|e| KqseError::Config(format!("noise: {e}")))
    }

    /// `run.reps`, else 1000 under `full`, else `default`.
    pub fn reps(&self, default: usize) -> usize {
        self.run.reps.unwrap_or(if self.run.full { FULL_REPS } else { default })
    }

    fn n_values(&self, default: &[usize]) -> Vec<usize> {
        match (&self.lattice.n_values, self.lattice.n) {
            (Some(v), _) => v.clone(),
            (None, Some(n)) => vec![n],
            (None, None) => default.to_vec(),
        }
    }

    /// Resolve the lattice for sample size `n`: explicit keys, then
    /// `default = (mu_max, N_mu)`, then the logarithmic rule.
    pub fn lattice_for(&self, n: usize, default: Option<(f64, usize)>) -> Result<ResolvedLattice> {
        let l = &self.lattice;
        let mu_max = l.mu_max.or(default.map(|d| d.0)).unwrap_or_else(|| log_rule(n).0);
        let n_mu = l
            .n_mu
            .or(default.map(|d| d.1))
            .unwrap_or_else(|| even_round(mu_max * (n as f64).ln()));
        let lat = ResolvedLattice {
            n,
            mu_max,
            nu_max: l.nu_max.unwrap_or(mu_max),
            n_mu,
            n_nu: l.n_nu.unwrap_or(n_mu),
            y: l.y,
        };
        lat.axes()?;
        Ok(lat)
    }
}

/// `(mu_max, N_mu) = (ln n, mu_max ln n)`, with `N_mu` rounded to an even
/// count so that the half-open lattice contains zero.
pub fn log_rule(n: usize) -> (f64, usize) {
    let m = (n.max(3) as f64).ln();
    (m, even_round(m * m))
}

fn even_round(v: f64) -> usize {
    ((v / 2.0).round() as usize * 2).max(2)
}

/// A fully specified lattice for one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedLattice {
    pub n: usize,
    pub mu_max: f64,
    pub nu_max: f64,
    pub n_mu: usize,
    pub n_nu: usize,
    pub y: YGridSpec,
}

impl ResolvedLattice {
    /// The `mu` and `nu` axes to measure and the reconstruction grid.
    pub fn axes(&self) -> Result<(Axis, Axis, ReconstructionGrid)> {
        let mu = Axis::half_open(self.mu_max, self.n_mu)?;
        match self.y {
            YGridSpec::Matched => {
                if self.n_nu % 2 != 0 {
                    return Err(KqseError::Config(format!(
                        "a matched y-grid needs an even n_nu, got {}",
                        self.n_nu
                    )));
                }
                let nu = Axis::half_open(self.nu_max, self.n_nu)?;
                let g = self.n_nu / 2;
                let y = Axis { start: -0.5 * (g - 1) as f64 * nu.step, step: nu.step, len: g };
                Ok((mu, nu, ReconstructionGrid::with_axis(y, self.mu_max, self.n_mu)?))
            }
            YGridSpec::Span { y_max, points } => {
                let grid = ReconstructionGrid::new(-y_max, y_max, points, self.mu_max, self.n_mu)?;
                let nu = Axis {
                    start: -((points - 1) as f64) * grid.y.step,
                    step: grid.y.step,
                    len: 2 * points - 1,
                };
                Ok((mu, nu, grid))
            }
        }
    }

    pub fn nu_len(&self) -> usize {
        match self.y {
            YGridSpec::Matched => self.n_nu,
            YGridSpec::Span { points, .. } => 2 * points - 1,
        }
    }

    /// `T_mu = n N_mu`.
    pub fn t_mu(&self) -> u64 {
        (self.n * self.n_mu) as u64
    }

    /// `T_{mu,nu} = n N_mu N_nu`.
    pub fn t_munu(&self) -> u64 {
        self.t_mu() * self.nu_len() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Noiseless,
    Noisy,
    Corrected,
}

impl DataType {
    pub const ALL: [DataType; 3] = [Self::Noiseless, Self::Noisy, Self::Corrected];
}

/// Per-type, per-repetition CF grids for repetitions `reps`.
///
/// Samplers are built once per node; each repetition draws `X` and mixes the
/// detection noise on top, so the three data types share their draws.
fn simulate(
    plan: &ExperimentPlan,
    mu: Axis,
    nu: Axis,
    n: usize,
    reps: Range<usize>,
    stream: &[u64],
    types: &[DataType],
) -> Result<Vec<Vec<CFGrid>>> {
    let nm = plan.noise_model()?;
    let kernel = plan.run.kernel;
    let nodes: Vec<(usize, usize)> =
        (0..mu.len).flat_map(|i| (0..nu.len).map(move |j| (i, j))).collect();
    let per_node = try_par_map(&nodes, |&(i, j)| {
        let Ok(s) = PhaseSetting::new(mu.value(i), nu.value(j)) else {
            return Ok(None);
        };
        let sampler = build_sampler_auto_with(plan.state, s, plan.run.sampler_points)?;
        let mut seeds = Vec::with_capacity(reps.len());
        let mut out = Vec::with_capacity(reps.len() * types.len());
        for l in reps.clone() {
            let mut path = stream.to_vec();
            path.extend([l as u64, i as u64, j as u64]);
            let seed = derive_seed(plan.run.seed, &path);
            let x = sampler.draw(n, seed);
            let z = types
                .iter()
                .any(|t| *t != DataType::Noiseless)
                .then(|| mix_noise(&x, &nm, derive_seed(seed, &[1])));
            for t in types {
                let p = match (t, &z) {
                    (DataType::Noiseless, _) => estimate_point(&x, kernel, None)?,
                    (DataType::Noisy, Some(z)) => estimate_point(z, kernel, None)?,
                    (DataType::Corrected, Some(z)) => estimate_point(z, kernel, Some(&nm))?,
                    _ => unreachable!("noise is mixed whenever a noisy type is requested"),
                };
                out.push((p.value, p.h_used));
            }
            seeds.push(seed);
        }
        Ok(Some((seeds, out)))
    })?;
    let count = reps.len();
    Ok(types
        .iter()
        .enumerate()
        .map(|(ti, t)| {
            (0..count)
                .map(|l| {
                    let mut g = CFGrid::from_fn(mu, nu, |_, _| Complex64::new(1.0, 0.0));
                    for (k, node) in per_node.iter().enumerate() {
                        if let Some((seeds, out)) = node {
                            let (v, h) = out[l * types.len() + ti];
                            g.values[k] = v;
                            g.h[k] = h;
                            g.n[k] = n;
                            g.seeds[k] = seeds[l];
                        }
                    }
                    if *t != DataType::Noiseless {
                        g.noise = Some(nm);
                    }
                    g.deconvolved = *t == DataType::Corrected;
                    g
                })
                .collect()
        })
        .collect())
}

/// One simulated CF lattice (repetition `rep`) of the given data type.
pub fn simulate_cf_grid(
    plan: &ExperimentPlan,
    lat: &ResolvedLattice,
    data: DataType,
    rep: usize,
) -> Result<CFGrid> {
    let (mu, nu, _) = lat.axes()?;
    let mut out = simulate(plan, mu, nu, lat.n, rep..rep + 1, &[STREAM_PLOT, 3], &[data])?;
    Ok(out.remove(0).remove(0))
}

/// The matched reconstruction grid of a half-open CF lattice.
pub fn matched_grid(mu: Axis, nu: Axis) -> Result<ReconstructionGrid> {
    let lat = ResolvedLattice {
        n: 0,
        mu_max: -mu.start,
        nu_max: -nu.start,
        n_mu: mu.len,
        n_nu: nu.len,
        y: YGridSpec::Matched,
    };
    let (m, v, grid) = lat.axes()?;
    if !m.same_as(&mu) || !v.same_as(&nu) {
        return Err(KqseError::GridMismatch(
            "the CF lattice is not half-open {k dmu - mu_max}; no matched y-grid".into(),
        ));
    }
    Ok(grid)
}

fn chunks(reps: usize) -> impl Iterator<Item = Range<usize>> {
    (0..reps).step_by(REP_CHUNK).map(move |s| s..(s + REP_CHUNK).min(reps))
}

/// Running `mean_l |rho_hat_l - target|^2` per kernel entry.
struct EntryMse {
    target: Vec<Complex64>,
    sums: Vec<f64>,
    count: usize,
}

impl EntryMse {
    fn new(target: &DensityKernelGrid) -> Self {
        Self { target: target.values.clone(), sums: vec![0.0; target.values.len()], count: 0 }
    }

    fn add(&mut self, rho: &DensityKernelGrid) {
        for ((s, t), v) in self.sums.iter_mut().zip(&self.target).zip(&rho.values) {
            *s += (v - t).norm_sqr();
        }
        self.count += 1;
    }

    fn worst(&self) -> f64 {
        self.sums.iter().fold(0.0f64, |m, s| m.max(*s)) / self.count.max(1) as f64
    }
}

/// One row of the reconstruction tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRow {
    pub t: u64,
    pub n: usize,
    pub n_mu: usize,
    pub n_nu: usize,
    pub mu_max: f64,
    pub data_type: DataType,
    /// `max_{y,y'} mean_l |rho_hat_l - rho|^2`.
    pub linf: f64,
    /// `mean_l |1 - tr(rho rho_hat_l)|^2`.
    pub mse_overlap: f64,
    pub reps: usize,
}

fn run_reconstruction(
    plan: &ExperimentPlan,
    lattices: &[ResolvedLattice],
    reps: usize,
    stream: u64,
) -> Result<Vec<ReconstructionRow>> {
    let mut rows = Vec::new();
    for (c, lat) in lattices.iter().enumerate() {
        let (mu, nu, grid) = lat.axes()?;
        let truth = DensityKernelGrid::analytic(&plan.state, grid);
        let mut acc: Vec<EntryMse> = DataType::ALL.iter().map(|_| EntryMse::new(&truth)).collect();
        let mut overlap_err = [0.0; 3];
        for range in chunks(reps) {
            let grids = simulate(plan, mu, nu, lat.n, range, &[stream, c as u64], &DataType::ALL)?;
            for (t, per_rep) in grids.iter().enumerate() {
                for g in per_rep {
                    acc[t].add(&reconstruct_rho(g, &grid, None)?);
                    overlap_err[t] +=
                        (1.0 - overlap_with_reference_complex(&plan.state, g, 1.0)).norm_sqr();
                }
            }
        }
        for (t, d) in DataType::ALL.iter().enumerate() {
            rows.push(ReconstructionRow {
                t: lat.t_munu(),
                n: lat.n,
                n_mu: lat.n_mu,
                n_nu: lat.nu_len(),
                mu_max: lat.mu_max,
                data_type: *d,
                linf: acc[t].worst(),
                mse_overlap: overlap_err[t] / reps as f64,
                reps,
            });
        }
    }
    Ok(rows)
}

/// `T_{mu,nu} = n N^2` split as `(415, 36)`, `(531, 38)`, `(755, 40)`.
pub const TABLE1_CONFIGS: [(usize, usize); 3] = [(415, 36), (531, 38), (755, 40)];

/// Uniform and overlap errors of the full reconstruction for noiseless,
/// noisy and noise-corrected data; `mu_max = 6`, 50 repetitions by default.
///
/// Explicit sample sizes get `N = mu_max ln n` unless `n_mu` is set; the
/// default configurations follow the same rule.
pub fn run_table1(plan: &ExperimentPlan) -> Result<Vec<ReconstructionRow>> {
    let l = &plan.lattice;
    let lattices = if l.n.is_some() || l.n_values.is_some() {
        plan.n_values(&[])
            .into_iter()
            .map(|n| {
                let mu_max = l.mu_max.unwrap_or(6.0);
                plan.lattice_for(n, Some((mu_max, even_round(mu_max * (n as f64).ln()))))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        TABLE1_CONFIGS
            .iter()
            .map(|&(n, nm)| plan.lattice_for(n, Some((6.0, nm))))
            .collect::<Result<Vec<_>>>()?
    };
    run_reconstruction(plan, &lattices, plan.reps(50), STREAM_TABLE1)
}

/// The reconstruction table at `mu_max = 8`, `N = 160`, `n` in
/// `{500, 1000, 2000}`; 10 repetitions by default.
pub fn run_table_s4(plan: &ExperimentPlan) -> Result<Vec<ReconstructionRow>> {
    let lattices = plan
        .n_values(&[500, 1000, 2000])
        .into_iter()
        .map(|n| plan.lattice_for(n, Some((8.0, 160))))
        .collect::<Result<Vec<_>>>()?;
    run_reconstruction(plan, &lattices, plan.reps(10), STREAM_S4)
}

fn evaluation_grid(state: &ReferenceState, s: PhaseSetting) -> Result<UniformGrid> {
    let (mean, var) = state.quadrature_moments(s);
    let half = 8.0 * var.sqrt();
    UniformGrid::new(mean - half, mean + half, 801)
}

/// One row of the density-estimation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeRow {
    pub n: usize,
    pub kernel: String,
    pub bandwidth_rule: String,
    pub mean_bandwidth: f64,
    pub mise: f64,
    pub reps: usize,
}

/// Mean bandwidth and MISE of kernel tomogram estimates at the plan's
/// setting: Gaussian kernel with LSCV bandwidth, Epanechnikov kernel with
/// Silverman's rule; `n` in `{500, 1000, 2000}`, 50 repetitions by default.
pub fn run_table_s2(plan: &ExperimentPlan) -> Result<Vec<KdeRow>> {
    let s = plan.phase_setting()?;
    let sampler = build_sampler_auto_with(plan.state, s, plan.run.sampler_points)?;
    let tomo = plan.state.tomogram_at(s);
    let grid = evaluation_grid(&plan.state, s)?;
    let BandwidthSpec::Lscv(lscv_grid) = BandwidthSpec::lscv_default() else {
        unreachable!("lscv_default is an LSCV spec")
    };
    let reps = plan.reps(50);
    let cases = [("gaussian", "lscv"), ("epanechnikov", "silverman")];
    let mut rows = Vec::new();
    for n in plan.n_values(&[500, 1000, 2000]) {
        let per_rep = try_par_map(&(0..reps).collect::<Vec<_>>(), |&l| {
            let x = sampler.draw(n, derive_seed(plan.run.seed, &[STREAM_S2, n as u64, l as u64]));
            let hg = lscv_bandwidth_with(&x, &lscv_grid, KernelSpec::GaussianStd)?;
            let he = silverman_bandwidth(&x)?;
            let g = kde_evaluate(&x, KernelSpec::GaussianStd, hg, grid)?;
            let e = kde_evaluate(&x, KernelSpec::Epanechnikov, he, grid)?;
            Ok([(hg, mise(&g, |t| tomo.eval(t))), (he, mise(&e, |t| tomo.eval(t)))])
        })?;
        for (c, (kernel, rule)) in cases.iter().enumerate() {
            rows.push(KdeRow {
                n,
                kernel: kernel.to_string(),
                bandwidth_rule: rule.to_string(),
                mean_bandwidth: per_rep.iter().map(|r| r[c].0).sum::<f64>() / reps as f64,
                mise: per_rep.iter().map(|r| r[c].1).sum::<f64>() / reps as f64,
                reps,
            });
        }
    }
    Ok(rows)
}

/// One row of the CF-estimation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfRow {
    pub n: usize,
    pub data_type: DataType,
    pub mean_bandwidth: f64,
    /// Mean over the `mu` points and repetitions of `|phi_hat - phi|^2`.
    pub mse: f64,
    pub reps: usize,
}

/// KCFE accuracy along `nu = setting.nu`, `mu` in `[0, 8]` at 160 points, for
/// noiseless, noisy and corrected data; 100 repetitions by default.
pub fn run_table_s3(plan: &ExperimentPlan) -> Result<Vec<CfRow>> {
    let mu = Axis::span(
        0.0,
        plan.lattice.mu_max.unwrap_or(8.0),
        plan.lattice.n_mu.unwrap_or(160),
    )?;
    let nu = Axis::singleton(plan.setting.nu);
    let reps = plan.reps(100);
    let truth: Vec<Complex64> = mu.values().iter().map(|&m| plan.state.cf1(m, nu.start)).collect();
    let mut rows = Vec::new();
    for n in plan.n_values(&[500, 1000, 2000]) {
        let (mut err, mut bw, mut count) = ([0.0; 3], [0.0; 3], 0usize);
        for range in chunks(reps) {
            let grids = simulate(plan, mu, nu, n, range, &[STREAM_S3, n as u64], &DataType::ALL)?;
            for (t, per_rep) in grids.iter().enumerate() {
                for g in per_rep {
                    for (k, phi) in truth.iter().enumerate() {
                        err[t] += (g.values[k] - phi).norm_sqr();
                        bw[t] += g.h[k];
                    }
                }
            }
            count += grids[0].len() * truth.len();
        }
        for (t, d) in DataType::ALL.iter().enumerate() {
            rows.push(CfRow {
                n,
                data_type: *d,
                mean_bandwidth: bw[t] / count as f64,
                mse: err[t] / count as f64,
                reps,
            });
        }
    }
    Ok(rows)
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// 95% confidence interval of the slope.
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(KqseError::InvalidParameter("a slope fit needs three or more points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(KqseError::InvalidParameter("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(KqseError::InvalidParameter("slope fit abscissae coincide".into()));
    }
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let df = lx.len() - 2;
    let stderr = (rss / df as f64 / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| KqseError::InvalidParameter(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(LogLogFit { slope, intercept, stderr, ci_low: slope - q * stderr, ci_high: slope + q * stderr })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeKind {
    KdeMise,
    KcfeMse,
    KqseEnd2end,
}

impl FromStr for SlopeKind {
    type Err = KqseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kde-mise" => Ok(Self::KdeMise),
            "kcfe-mse" => Ok(Self::KcfeMse),
            "kqse-end2end" => Ok(Self::KqseEnd2end),
            _ => Err(KqseError::Config(format!(
                "unknown slope '{s}' (expected kde-mise, kcfe-mse or kqse-end2end)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub n: usize,
    /// The abscissa of the fit: `n`, or `T_{mu,nu}` for the end-to-end run.
    pub x: f64,
    pub error: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub kind: SlopeKind,
    pub rows: Vec<SlopeRow>,
    pub fit: LogLogFit,
}

const SLOPE_N: [usize; 5] = [250, 500, 1000, 2000, 4000];

/// Error against sample size and the fitted log-log slope.
///
/// * `kde-mise`: MISE of the Gaussian KDE with Silverman's rule, 200 reps.
/// * `kcfe-mse`: MSE of the noiseless KCFE at `t = 1`, 500 reps.
/// * `kqse-end2end`: corrected uniform error on the fixed lattice
///   `mu_max = 6`, `N = 36`, plotted against `T_{mu,nu}`; 20 reps.
pub fn run_slopes(plan: &ExperimentPlan, kind: SlopeKind) -> Result<SlopeReport> {
    let rows = match kind {
        SlopeKind::KdeMise | SlopeKind::KcfeMse => {
            let s = plan.phase_setting()?;
            let sampler = build_sampler_auto_with(plan.state, s, plan.run.sampler_points)?;
            let reps = plan.reps(if kind == SlopeKind::KdeMise { 200 } else { 500 });
            plan.n_values(&SLOPE_N)
                .into_iter()
                .map(|n| {
                    let error = if kind == SlopeKind::KdeMise {
                        kde_mise(plan, &sampler, n, reps)?
                    } else {
                        kcfe_mse(plan, &sampler, n, reps)?
                    };
                    Ok(SlopeRow { n, x: n as f64, error, reps })
                })
                .collect::<Result<Vec<_>>>()?
        }
        SlopeKind::KqseEnd2end => {
            let reps = plan.reps(20);
            let lattices = plan
                .n_values(&SLOPE_N)
                .into_iter()
                .map(|n| plan.lattice_for(n, Some((6.0, 36))))
                .collect::<Result<Vec<_>>>()?;
            run_reconstruction(plan, &lattices, reps, STREAM_SLOPE_E2E)?
                .into_iter()
                .filter(|r| r.data_type == DataType::Corrected)
                .map(|r| SlopeRow { n: r.n, x: r.t as f64, error: r.linf, reps })
                .collect()
        }
    };
    let xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let fit = fit_loglog(&xs, &ys)?;
    Ok(SlopeReport { kind, rows, fit })
}

fn kde_mise(plan: &ExperimentPlan, sampler: &InverseCdfTable, n: usize, reps: usize) -> Result<f64> {
    let s = sampler.setting();
    let tomo = plan.state.tomogram_at(s);
    let grid = evaluation_grid(&plan.state, s)?;
    let per_rep = try_par_map(&(0..reps).collect::<Vec<_>>(), |&l| {
        let x = sampler.draw(n, derive_seed(plan.run.seed, &[STREAM_SLOPE_KDE, n as u64, l as u64]));
        let est = kde_evaluate(&x, KernelSpec::GaussianStd, silverman_bandwidth(&x)?, grid)?;
        Ok(mise(&est, |t| tomo.eval(t)))
    })?;
    Ok(per_rep.iter().sum::<f64>() / reps as f64)
}

fn kcfe_mse(plan: &ExperimentPlan, sampler: &InverseCdfTable, n: usize, reps: usize) -> Result<f64> {
    let s = sampler.setting();
    let phi = plan.state.cf(1.0, s);
    let per_rep = try_par_map(&(0..reps).collect::<Vec<_>>(), |&l| {
        let x = sampler.draw(n, derive_seed(plan.run.seed, &[STREAM_SLOPE_KCFE, n as u64, l as u64]));
        Ok((estimate_point(&x, plan.run.kernel, None)?.value - phi).norm_sqr())
    })?;
    Ok(per_rep.iter().sum::<f64>() / reps as f64)
}

/// Observed squared estimation error of the reconstruction against the
/// bound `mu_max^2 / (pi^2 n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationBoundRow {
    pub n: usize,
    pub n_mu: usize,
    pub mu_max: f64,
    /// `max_{y,y'} mean_l |rho_hat_l - rho_exact-cf|^2`.
    pub observed: f64,
    pub bound: f64,
    pub ratio: f64,
    pub reps: usize,
}

/// Observed uniform error against the total bound at budget `T_mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalBoundRow {
    pub t_mu: u64,
    pub n: usize,
    pub n_mu: usize,
    pub mu_max: f64,
    pub tau: f64,
    pub observed: f64,
    pub bound: f64,
    pub ratio: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub estimation: Vec<EstimationBoundRow>,
    pub total: Vec<TotalBoundRow>,
}

/// Smallest `n` with `n (ln n)^2 >= t`.
pub fn n_for_budget(t: f64) -> usize {
    let f = |n: f64| n * n.ln().powi(2);
    let (mut lo, mut hi) = (3.0f64, t.max(4.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.ceil() as usize
}

/// Compare noiseless reconstructions with the error bounds.
///
/// The estimation part uses `N_mu = 50`, `mu_max = 6` and `n` in
/// `{100, 200, 500, 1000, 2000}`. The total part spends budgets `T_mu` in
/// `{1e4, 3e4, 1e5}` via `n (ln n)^2 = T_mu`, `mu_max = ln n`,
/// `N_mu = (ln n)^2`, with the CF decay rate `tau` fitted along `nu = 0`.
pub fn run_bounds(plan: &ExperimentPlan) -> Result<BoundsReport> {
    let reps = plan.reps(20);
    let mut estimation = Vec::new();
    for n in plan.n_values(&[100, 200, 500, 1000, 2000]) {
        let lat = plan.lattice_for(n, Some((6.0, 50)))?;
        let (mu, nu, grid) = lat.axes()?;
        let exact = reconstruct_rho(&CFGrid::analytic(&plan.state, mu, nu), &grid, None)?;
        let mut acc = EntryMse::new(&exact);
        for range in chunks(reps) {
            let grids =
                simulate(plan, mu, nu, n, range, &[STREAM_BOUNDS, 0, n as u64], &[DataType::Noiseless])?;
            for g in &grids[0] {
                acc.add(&reconstruct_rho(g, &grid, None)?);
            }
        }
        let bound = estimation_bound(lat.mu_max, n);
        let observed = acc.worst();
        estimation.push(EstimationBoundRow {
            n,
            n_mu: lat.n_mu,
            mu_max: lat.mu_max,
            observed,
            bound,
            ratio: bound / observed,
            reps,
        });
    }
    let mut total = Vec::new();
    let budgets = plan.lattice.t_values.clone().unwrap_or_else(|| vec![1e4, 3e4, 1e5]);
    for (c, t) in budgets.iter().enumerate() {
        let n = n_for_budget(*t);
        let (m, n_mu) = log_rule(n);
        let lat = ResolvedLattice { n, mu_max: m, nu_max: m, n_mu, n_nu: n_mu, y: YGridSpec::Matched };
        let (mu, nu, grid) = lat.axes()?;
        let mus = mu.values();
        let mags: Vec<f64> = mus.iter().map(|&x| plan.state.cf1(x, 0.0).norm()).collect();
        let params = ErrorBoundParams::default();
        let tau = fit_tau(&mus, &mags).unwrap_or(params.tau);
        let params = params.with_tau(tau);
        let mut acc = EntryMse::new(&DensityKernelGrid::analytic(&plan.state, grid));
        for range in chunks(reps) {
            let grids =
                simulate(plan, mu, nu, n, range, &[STREAM_BOUNDS, 1, c as u64], &[DataType::Noiseless])?;
            for g in &grids[0] {
                acc.add(&reconstruct_rho(g, &grid, None)?);
            }
        }
        let bound = total_bound(&params, &grid, n);
        let observed = acc.worst();
        total.push(TotalBoundRow {
            t_mu: lat.t_mu(),
            n,
            n_mu,
            mu_max: m,
            tau,
            observed,
            bound,
            ratio: bound / observed,
            reps,
        });
    }
    Ok(BoundsReport { estimation, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Figure {
    TomogramKde,
    CfCorrected,
    RhoHeatmap,
    Wigner,
}

impl FromStr for Figure {
    type Err = KqseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tomogram-kde" => Ok(Self::TomogramKde),
            "cf-corrected" => Ok(Self::CfCorrected),
            "rho-heatmap" => Ok(Self::RhoHeatmap),
            "wigner" => Ok(Self::Wigner),
            _ => Err(KqseError::Config(format!(
                "unknown figure '{s}' (expected tomogram-kde, cf-corrected, rho-heatmap or wigner)"
            ))),
        }
    }
}

/// Long-format numeric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlotTable {
    fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Data behind the figures, from one simulated data set per figure.
///
/// * `tomogram-kde`: truth, Gaussian LSCV and Epanechnikov Silverman KDEs
///   and the Freedman-Diaconis histogram at the plan's setting (`n = 500`).
/// * `cf-corrected`: CF along `nu = setting.nu`, `mu` in `[0, 8]`, for each
///   data type (`n = 500`).
/// * `rho-heatmap`: truth and corrected estimate on the first Table I
///   configuration, with a diagonal flag.
/// * `wigner`: truth and corrected estimate (Hermitian part) on `[-3, 3]^2`.
pub fn emit_plotdata(plan: &ExperimentPlan, figure: Figure) -> Result<PlotTable> {
    let seed = |tag: u64| derive_seed(plan.run.seed, &[STREAM_PLOT, tag]);
    match figure {
        Figure::TomogramKde => {
            let s = plan.phase_setting()?;
            let n = plan.lattice.n.unwrap_or(500);
            let x = build_sampler_auto_with(plan.state, s, plan.run.sampler_points)?.draw(n, seed(0));
            let grid = evaluation_grid(&plan.state, s)?;
            let hg = BandwidthSpec::lscv_default().resolve(&x, KernelSpec::GaussianStd)?;
            let g = kde_evaluate(&x, KernelSpec::GaussianStd, hg, grid)?;
            let e = kde_evaluate(&x, KernelSpec::Epanechnikov, silverman_bandwidth(&x)?, grid)?;
            let h = fd_histogram(&x)?;
            let tomo = plan.state.tomogram_at(s);
            let mut t = PlotTable::new(&["x", "truth", "kde_gauss", "kde_epan", "hist"]);
            for (i, p) in grid.points().into_iter().enumerate() {
                t.rows.push(vec![p, tomo.eval(p), g.values[i], e.values[i], h.value_at(p)]);
            }
            Ok(t)
        }
        Figure::CfCorrected => {
            let mu = Axis::span(
                0.0,
                plan.lattice.mu_max.unwrap_or(8.0),
                plan.lattice.n_mu.unwrap_or(160),
            )?;
            let nu = Axis::singleton(plan.setting.nu);
            let n = plan.lattice.n.unwrap_or(500);
            let grids = simulate(plan, mu, nu, n, 0..1, &[STREAM_PLOT, 1], &DataType::ALL)?;
            let mut t = PlotTable::new(&[
                "mu", "truth_re", "truth_im", "noiseless_re", "noiseless_im", "noisy_re",
                "noisy_im", "corrected_re", "corrected_im",
            ]);
            for (k, m) in mu.values().into_iter().enumerate() {
                let phi = plan.state.cf1(m, nu.start);
                let mut row = vec![m, phi.re, phi.im];
                for g in &grids {
                    row.extend([g[0].values[k].re, g[0].values[k].im]);
                }
                t.rows.push(row);
            }
            Ok(t)
        }
        Figure::RhoHeatmap | Figure::Wigner => {
            let (n, n_mu) = TABLE1_CONFIGS[0];
            let lat = plan.lattice_for(plan.lattice.n.unwrap_or(n), Some((6.0, n_mu)))?;
            let (mu, nu, grid) = lat.axes()?;
            let est = simulate(plan, mu, nu, lat.n, 0..1, &[STREAM_PLOT, 2], &[DataType::Corrected])?
                .remove(0)
                .remove(0);
            if figure == Figure::RhoHeatmap {
                let rho = reconstruct_rho(&est, &grid, None)?;
                let mut t = PlotTable::new(&[
                    "y", "yp", "truth_re", "truth_im", "est_re", "est_im", "diagonal",
                ]);
                let g = grid.points();
                for i in 0..g {
                    for j in 0..g {
                        let (y, yp) = (rho.y(i), rho.y(j));
                        let truth = plan.state.density_kernel(y, yp);
                        let v = rho.at(i, j);
                        let diag = if i == j { 1.0 } else { 0.0 };
                        t.rows.push(vec![y, yp, truth.re, truth.im, v.re, v.im, diag]);
                    }
                }
                Ok(t)
            } else {
                let axis: Vec<f64> = (0..61).map(|k| -3.0 + 0.1 * k as f64).collect();
                let truth = wigner_grid(&CFGrid::analytic(&plan.state, mu, nu).hermitian_part(), &axis, &axis)?;
                let w = wigner_grid(&est.hermitian_part(), &axis, &axis)?;
                let mut t = PlotTable::new(&["q", "p", "truth", "estimate"]);
                for (a, q) in axis.iter().enumerate() {
                    for (b, p) in axis.iter().enumerate() {
                        let k = a * axis.len() + b;
                        t.rows.push(vec![*q, *p, truth[k], w[k]]);
                    }
                }
                Ok(t)
            }
        }
    }
}

/// Run `f` with the plan's worker count.
pub fn with_plan_workers<R: Send>(plan: &ExperimentPlan, f: impl FnOnce() -> R + Send) -> Result<R> {
    crate::pool::with_workers(plan.run.workers, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan() -> ExperimentPlan {
        let mut p = ExperimentPlan::default();
        p.run.reps = Some(2);
        p.run.sampler_points = 2048;
        p
    }

    #[test]
    fn plan_round_trips_through_toml() {
        let text = r#"
            [state]
            kind = "cat"
            a = [1.0, 0.5]

            [noise]
            kappa = 0.9

            [lattice]
            n = 415
            n_mu = 36
            mu_max = 6.0

            [run]
            reps = 3
            seed = 7
        "#;
        let p = ExperimentPlan::from_toml_str(text).unwrap();
        assert_eq!(p.noise.kappa, 0.9);
        assert_eq!(p.noise.variance, 1.0);
        assert_eq!(p.reps(50), 3);
        let back = ExperimentPlan::from_toml_str(&p.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn plan_rejects_bad_keys() {
        assert!(matches!(
            ExperimentPlan::from_toml_str("[run]\nrepz = 3\n"),
            Err(KqseError::Config(_))
        ));
        assert!(matches!(
            ExperimentPlan::from_toml_str("[noise]\nkappa = 1.5\n"),
            Err(KqseError::Config(_))
        ));
        assert!(matches!(
            ExperimentPlan::from_toml_str("[state]\nkind = \"fock\"\nm = 99\n"),
            Err(KqseError::Config(_))
        ));
    }

    #[test]
    fn t_accounting_and_log_rule() {
        let p = ExperimentPlan::default();
        let lat = p.lattice_for(415, Some((6.0, 36))).unwrap();
        assert_eq!(lat.t_mu(), 415 * 36);
        assert_eq!(lat.t_munu(), 415 * 36 * 36);
        let (m, n_mu) = log_rule(1000);
        assert!((m - 1000f64.ln()).abs() < 1e-12);
        assert_eq!(n_mu, 48);
        let lat = p.lattice_for(1000, None).unwrap();
        assert_eq!((lat.n_mu, lat.n_nu), (48, 48));
        let t = 3e4;
        let n = n_for_budget(t);
        assert!((n as f64) * (n as f64).ln().powi(2) >= t);
        assert!(((n - 1) as f64) * ((n - 1) as f64).ln().powi(2) < t);
    }

    #[test]
    fn span_y_grid_builds_difference_lattice() {
        let mut p = ExperimentPlan::default();
        p.lattice.y = YGridSpec::Span { y_max: 2.0, points: 5 };
        let lat = p.lattice_for(100, Some((4.0, 16))).unwrap();
        let (_, nu, grid) = lat.axes().unwrap();
        for v in grid.required_nu() {
            assert!(nu.index_of(v).is_some());
        }
        assert_eq!(lat.t_munu(), 100 * 16 * 9);
    }

    #[test]
    fn loglog_fit_recovers_power_law() {
        let xs = [1.0f64, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-0.8)).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope + 0.8).abs() < 1e-12);
        assert!(f.stderr < 1e-12);
    }

    #[test]
    fn outputs_do_not_depend_on_worker_count() {
        let mut p = small_plan();
        p.lattice.n = Some(100);
        p.lattice.n_mu = Some(8);
        p.lattice.mu_max = Some(3.0);
        let a = with_plan_workers(&p, || run_table1(&p)).unwrap().unwrap();
        p.run.workers = Some(3);
        let b = with_plan_workers(&p, || run_table1(&p)).unwrap().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].t, 100 * 64);
    }

    #[test]
    fn repetitions_do_not_depend_on_chunking() {
        let mut p = small_plan();
        p.lattice.n_values = Some(vec![200]);
        p.lattice.n_mu = Some(12);
        let nm = p.noise_model().unwrap();
        let mu = Axis::span(0.0, 4.0, 12).unwrap();
        let nu = Axis::singleton(1.2);
        let all = simulate(&p, mu, nu, 200, 0..3, &[99], &DataType::ALL).unwrap();
        let tail = simulate(&p, mu, nu, 200, 2..3, &[99], &DataType::ALL).unwrap();
        for t in 0..3 {
            assert_eq!(all[t][2], tail[t][0]);
        }
        assert_eq!(all[2][0].noise, Some(nm));
        assert!(all[2][0].deconvolved && !all[1][0].deconvolved);
    }
}
