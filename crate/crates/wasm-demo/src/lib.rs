use serde::Serialize;
use wasm_bindgen::prelude::*;

use kqse::harness::{matched_grid, simulate_cf_grid, DataType, ExperimentPlan};
use kqse::kcfe::estimate_point;
use kqse::kde::{kde_evaluate, BandwidthSpec, KernelSpec, UniformGrid};
use kqse::reconstruction::reconstruct_rho;
use kqse::sampling::{build_sampler_auto_with, derive_seed, mix_noise, NoiseModel};
use kqse::{KqseError, PhaseSetting, ReferenceState};

const SAMPLER_POINTS: usize = 2048;

fn state(kind: &str, re: f64, im: f64) -> kqse::Result<ReferenceState> {
    match kind {
        "cat" => Ok(ReferenceState::cat(re, im)),
        "coherent" => Ok(ReferenceState::coherent(re, im)),
        "fock" => ReferenceState::fock(re.max(0.0).round() as u32),
        _ => Err(KqseError::Config(format!("unknown state '{kind}'"))),
    }
}

#[derive(Serialize)]
pub struct Tomogram {
    x: Vec<f64>,
    truth: Vec<f64>,
    kde: Vec<f64>,
    h: f64,
}

pub fn tomogram(
    st: ReferenceState,
    mu: f64,
    nu: f64,
    n: usize,
    seed: u64,
) -> kqse::Result<Tomogram> {
    let s = PhaseSetting::new(mu, nu)?;
    let x = build_sampler_auto_with(st, s, SAMPLER_POINTS)?.draw(n, seed);
    let h = BandwidthSpec::Silverman.resolve(&x, KernelSpec::GaussianStd)?;
    let (m, v) = st.quadrature_moments(s);
    let half = 5.0 * v.sqrt();
    let est = kde_evaluate(
        &x,
        KernelSpec::GaussianStd,
        h,
        UniformGrid::new(m - half, m + half, 301)?,
    )?;
    let tomo = st.tomogram_at(s);
    let xs = est.grid.points();
    Ok(Tomogram {
        truth: xs.iter().map(|&p| tomo.eval(p)).collect(),
        x: xs,
        kde: est.values,
        h,
    })
}

#[derive(Serialize)]
pub struct CfCurves {
    mu: Vec<f64>,
    truth: Vec<f64>,
    noisy: Vec<f64>,
    corrected: Vec<f64>,
}

/// `Re phi(1; mu, nu)` along `mu` from noisy quadratures, raw and deconvolved.
pub fn cf_curves(
    st: ReferenceState,
    nu: f64,
    kappa: f64,
    n: usize,
    seed: u64,
) -> kqse::Result<CfCurves> {
    let nm = NoiseModel::standard(kappa)?;
    let mut out = CfCurves {
        mu: Vec::new(),
        truth: Vec::new(),
        noisy: Vec::new(),
        corrected: Vec::new(),
    };
    for k in 0..41 {
        let mu = 0.1 + k as f64 * 0.1;
        let s = PhaseSetting::new(mu, nu)?;
        let sd = derive_seed(seed, &[k]);
        let x = build_sampler_auto_with(st, s, SAMPLER_POINTS)?.draw(n, sd);
        let z = mix_noise(&x, &nm, derive_seed(sd, &[1]));
        out.mu.push(mu);
        out.truth.push(st.cf1(mu, nu).re);
        out.noisy
            .push(estimate_point(&z, KernelSpec::GaussianStd, None)?.value.re);
        out.corrected.push(
            estimate_point(&z, KernelSpec::GaussianStd, Some(&nm))?
                .value
                .re,
        );
    }
    Ok(out)
}

#[derive(Serialize)]
pub struct Heatmap {
    y: Vec<f64>,
    estimate: Vec<f64>,
    truth: Vec<f64>,
}

/// `|rho(y, y')|` reconstructed from a simulated corrected lattice.
pub fn rho_heatmap(
    st: ReferenceState,
    mu_max: f64,
    n_mu: usize,
    n: usize,
    seed: u64,
) -> kqse::Result<Heatmap> {
    let mut plan = ExperimentPlan {
        state: st,
        ..ExperimentPlan::default()
    };
    plan.run.seed = seed;
    plan.run.sampler_points = SAMPLER_POINTS;
    let lat = plan.lattice_for(n, Some((mu_max, n_mu)))?;
    let cf = simulate_cf_grid(&plan, &lat, DataType::Corrected, 0)?;
    let rho = reconstruct_rho(&cf, &matched_grid(cf.mu, cf.nu)?, None)?;
    let g = rho.grid.points();
    let y: Vec<f64> = (0..g).map(|i| rho.y(i)).collect();
    let truth = (0..g * g)
        .map(|k| st.density_kernel(y[k / g], y[k % g]).norm())
        .collect();
    Ok(Heatmap {
        estimate: rho.values.iter().map(|v| v.norm()).collect(),
        truth,
        y,
    })
}

fn to_js<T: Serialize>(r: kqse::Result<T>) -> Result<String, JsValue> {
    r.and_then(|v| Ok(serde_json::to_string(&v)?))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

fn js_state(kind: &str, re: f64, im: f64) -> Result<ReferenceState, JsValue> {
    state(kind, re, im).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn tomogram_json(
    kind: &str,
    re: f64,
    im: f64,
    mu: f64,
    nu: f64,
    n: usize,
    seed: u64,
) -> Result<String, JsValue> {
    to_js(tomogram(js_state(kind, re, im)?, mu, nu, n, seed))
}

#[wasm_bindgen]
pub fn cf_curves_json(
    kind: &str,
    re: f64,
    im: f64,
    nu: f64,
    kappa: f64,
    n: usize,
    seed: u64,
) -> Result<String, JsValue> {
    to_js(cf_curves(js_state(kind, re, im)?, nu, kappa, n, seed))
}

#[wasm_bindgen]
pub fn rho_heatmap_json(
    kind: &str,
    re: f64,
    im: f64,
    mu_max: f64,
    n_mu: usize,
    n: usize,
    seed: u64,
) -> Result<String, JsValue> {
    to_js(rho_heatmap(js_state(kind, re, im)?, mu_max, n_mu, n, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tomogram_tracks_truth() {
        let t = tomogram(state("cat", 1.0, 0.5).unwrap(), 0.8, 1.2, 2000, 1).unwrap();
        let err = t
            .kde
            .iter()
            .zip(&t.truth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.1, "{err}");
    }

    #[test]
    fn correction_undoes_attenuation() {
        let c = cf_curves(state("coherent", 0.5, 0.0).unwrap(), 0.0, 0.6, 4000, 2).unwrap();
        let gap = |v: &[f64]| {
            v.iter()
                .zip(&c.truth)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        };
        assert!(gap(&c.corrected) < gap(&c.noisy));
    }

    #[test]
    fn heatmap_is_square() {
        let h = rho_heatmap(state("fock", 1.0, 0.0).unwrap(), 4.0, 12, 300, 3).unwrap();
        assert_eq!(h.estimate.len(), h.y.len() * h.y.len());
        assert_eq!(h.truth.len(), h.estimate.len());
    }

    #[test]
    fn unknown_state_is_rejected() {
        assert!(state("squeezed", 0.0, 0.0).is_err());
    }
}
