//! CSV exports with JSON sidecars carrying the metadata needed to reload them.

use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::error::{KqseError, Result};
use crate::kcfe::{Axis, CFGrid};
use crate::kde::DensityEstimate;
use crate::reconstruction::DensityKernelGrid;
use crate::sampling::{NoiseModel, SampleBatch};
use crate::states::{PhaseSetting, ReferenceState};

/// `data.csv` -> `data.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Serialize `rows` as CSV with a header taken from the field names.
pub fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    x: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleMeta {
    setting: PhaseSetting,
    seed: u64,
    n: usize,
    state: Option<ReferenceState>,
    noise: Option<NoiseModel>,
}

pub fn write_sample_batch(batch: &SampleBatch, path: &Path) -> Result<()> {
    let rows: Vec<SampleRow> = batch.values.iter().map(|&x| SampleRow { x }).collect();
    write_rows(&rows, path)?;
    let meta = SampleMeta {
        setting: batch.setting,
        seed: batch.seed,
        n: batch.len(),
        state: batch.state_tag,
        noise: batch.noise_tag,
    };
    write_json(&meta, &sidecar_path(path))
}

/// Reload a batch written by [`write_sample_batch`].
pub fn read_sample_batch(path: &Path) -> Result<SampleBatch> {
    let meta: SampleMeta = read_json(&sidecar_path(path))?;
    let values: Vec<f64> = read_rows::<SampleRow>(path)?.into_iter().map(|r| r.x).collect();
    if values.len() != meta.n {
        return Err(KqseError::Config(format!(
            "{} holds {} samples, sidecar declares {}",
            path.display(),
            values.len(),
            meta.n
        )));
    }
    let mut b = SampleBatch::from_values(meta.setting, values)?;
    b.seed = meta.seed;
    b.state_tag = meta.state;
    b.noise_tag = meta.noise;
    Ok(b)
}

/// Import a bare `x` column measured at `setting`, without a sidecar.
pub fn import_samples(path: &Path, setting: PhaseSetting) -> Result<SampleBatch> {
    let values = read_rows::<SampleRow>(path)?.into_iter().map(|r| r.x).collect();
    SampleBatch::from_values(setting, values)
}

#[derive(Debug, Serialize, Deserialize)]
struct DensityRow {
    x: f64,
    density: f64,
}

#[derive(Debug, Serialize)]
struct DensityMeta<'a> {
    h: f64,
    kind: &'a crate::kde::EstimatorKind,
    n: usize,
    seed: Option<u64>,
    grid: &'a crate::kde::UniformGrid,
}

pub fn write_density_estimate(est: &DensityEstimate, seed: Option<u64>, path: &Path) -> Result<()> {
    let rows: Vec<DensityRow> = est
        .values
        .iter()
        .enumerate()
        .map(|(i, &density)| DensityRow { x: est.grid.point(i), density })
        .collect();
    write_rows(&rows, path)?;
    let meta = DensityMeta { h: est.h_used, kind: &est.kind, n: est.n, seed, grid: &est.grid };
    write_json(&meta, &sidecar_path(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct CfRow {
    mu: f64,
    nu: f64,
    re: f64,
    im: f64,
    h: f64,
    n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CfMeta {
    mu_axis: Axis,
    nu_axis: Axis,
    noise: Option<NoiseModel>,
    deconvolved: bool,
    seeds: Vec<u64>,
}

pub fn write_cf_grid(grid: &CFGrid, path: &Path) -> Result<()> {
    let rows: Vec<CfRow> = grid
        .settings()
        .map(|(i, j, mu, nu)| {
            let k = grid.index(i, j);
            CfRow { mu, nu, re: grid.values[k].re, im: grid.values[k].im, h: grid.h[k], n: grid.n[k] }
        })
        .collect();
    write_rows(&rows, path)?;
    let meta = CfMeta {
        mu_axis: grid.mu,
        nu_axis: grid.nu,
        noise: grid.noise,
        deconvolved: grid.deconvolved,
        seeds: grid.seeds.clone(),
    };
    write_json(&meta, &sidecar_path(path))
}

pub fn read_cf_grid(path: &Path) -> Result<CFGrid> {
    let meta: CfMeta = read_json(&sidecar_path(path))?;
    let rows: Vec<CfRow> = read_rows(path)?;
    let size = meta.mu_axis.len * meta.nu_axis.len;
    if rows.len() != size || meta.seeds.len() != size {
        return Err(KqseError::Config(format!(
            "{} holds {} rows, its lattice needs {size}",
            path.display(),
            rows.len()
        )));
    }
    let mut grid = CFGrid::from_fn(meta.mu_axis, meta.nu_axis, |_, _| Complex64::new(0.0, 0.0));
    for (k, r) in rows.iter().enumerate() {
        let (i, j) = (k / meta.nu_axis.len, k % meta.nu_axis.len);
        if grid.mu.index_of(r.mu) != Some(i) || grid.nu.index_of(r.nu) != Some(j) {
            return Err(KqseError::Config(format!(
                "row {k} at ({}, {}) is out of lattice order",
                r.mu, r.nu
            )));
        }
        grid.values[k] = Complex64::new(r.re, r.im);
        grid.h[k] = r.h;
        grid.n[k] = r.n;
    }
    grid.seeds = meta.seeds;
    grid.noise = meta.noise;
    grid.deconvolved = meta.deconvolved;
    Ok(grid)
}

#[derive(Debug, Serialize, Deserialize)]
struct KernelRow {
    y: f64,
    yp: f64,
    re: f64,
    im: f64,
}

#[derive(Debug, Serialize)]
struct KernelMeta<'a> {
    grid: &'a crate::reconstruction::ReconstructionGrid,
    tail_corrected: bool,
    warnings: &'a [String],
}

pub fn write_density_kernel(rho: &DensityKernelGrid, path: &Path) -> Result<()> {
    let g = rho.grid.points();
    let rows: Vec<KernelRow> = (0..g * g)
        .map(|k| {
            let (i, j) = (k / g, k % g);
            let v = rho.at(i, j);
            KernelRow { y: rho.y(i), yp: rho.y(j), re: v.re, im: v.im }
        })
        .collect();
    write_rows(&rows, path)?;
    let meta = KernelMeta { grid: &rho.grid, tail_corrected: rho.tail_corrected, warnings: &rho.warnings };
    write_json(&meta, &sidecar_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kde::{kde_evaluate, KernelSpec, UniformGrid};
    use crate::reconstruction::{reconstruct_rho, ReconstructionGrid};
    use crate::sampling::{build_sampler_auto, mix_noise};

    #[test]
    fn sample_batch_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = PhaseSetting::new(0.8, 1.2).unwrap();
        let x = build_sampler_auto(ReferenceState::cat(1.0, 0.5), s).unwrap().draw(500, 3);
        let z = mix_noise(&x, &NoiseModel::standard(0.85).unwrap(), 4);
        let path = dir.path().join("z.csv");
        write_sample_batch(&z, &path).unwrap();
        let back = read_sample_batch(&path).unwrap();
        assert_eq!(back, z);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("x\n"));
    }

    #[test]
    fn cf_grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Axis::half_open(3.0, 6).unwrap();
        let g = CFGrid::analytic(&ReferenceState::cat(1.0, 0.5), a, a);
        let path = dir.path().join("cf.csv");
        write_cf_grid(&g, &path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("mu,nu,re,im,h,n\n"));
        assert_eq!(read_cf_grid(&path).unwrap(), g);
    }

    #[test]
    fn density_exports_have_expected_headers() {
        let dir = tempfile::tempdir().unwrap();
        let b = SampleBatch::from_values(PhaseSetting::new(1.0, 0.0).unwrap(), vec![0.0, 1.0]).unwrap();
        let est = kde_evaluate(&b, KernelSpec::GaussianStd, 0.5, UniformGrid::new(-2.0, 2.0, 9).unwrap())
            .unwrap();
        let p = dir.path().join("kde.csv");
        write_density_estimate(&est, Some(7), &p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("x,density\n"));
        let meta: serde_json::Value = read_json(&sidecar_path(&p)).unwrap();
        assert_eq!(meta["seed"], 7);

        let grid = ReconstructionGrid::new(-1.0, 1.0, 3, 4.0, 16).unwrap();
        let rho = reconstruct_rho(&ReferenceState::fock(0).unwrap(), &grid, None).unwrap();
        let p = dir.path().join("rho.csv");
        write_density_kernel(&rho, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("y,yp,re,im\n"));
        assert_eq!(text.lines().count(), 10);
    }
}
