//! Analytic reference states: tomograms, characteristic functions and
//! coordinate-representation density kernels in closed form.
//!
//! Units are dimensionless with `hbar = 1`. A tomogram `W(x | mu, nu)` is the
//! density of the quadrature `mu q + nu p`; its characteristic function is
//! `phi(t; mu, nu) = E[exp(i t X)]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{KqseError, Result};
use crate::special::{hermite_scaled, laguerre, MAX_ORDER};

/// A quadrature direction `(mu, nu)` with `mu^2 + nu^2 > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSetting {
    pub mu: f64,
    pub nu: f64,
}

impl PhaseSetting {
    pub fn new(mu: f64, nu: f64) -> Result<Self> {
        if !(mu.is_finite() && nu.is_finite()) || mu * mu + nu * nu <= 0.0 {
            return Err(KqseError::DegenerateSetting(format!(
                "(mu, nu) = ({mu}, {nu}) has no tomogram"
            )));
        }
        Ok(Self { mu, nu })
    }

    /// `mu^2 + nu^2`.
    pub fn alpha2(&self) -> f64 {
        self.mu * self.mu + self.nu * self.nu
    }

    pub fn alpha(&self) -> f64 {
        self.alpha2().sqrt()
    }

    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::new(lambda * self.mu, lambda * self.nu)
    }
}

/// Homodyne-style parametrization by radius and local-oscillator phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalSetting {
    pub r: f64,
    pub theta: f64,
}

/// `mu = r cos(theta)`, `nu = r sin(theta)`.
///
/// The tomograms are related by `W(x | mu, nu) = W(x / r | cos, sin) / r`.
pub fn optical_to_symplectic(o: OpticalSetting) -> Result<PhaseSetting> {
    if !(o.r > 0.0) {
        return Err(KqseError::DegenerateSetting(format!("optical radius r = {}", o.r)));
    }
    PhaseSetting::new(o.r * o.theta.cos(), o.r * o.theta.sin())
}

/// Ground truth states with closed-form tomograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReferenceState {
    /// Harmonic-oscillator eigenstate `|m>`.
    Fock { m: u32 },
    /// Glauber coherent state `|a>`.
    Coherent { a: Complex64 },
    /// Three-component coherent cat `N_c sum_j |a e^{2 pi i j / 3}>`.
    Cat { a: Complex64 },
}

impl ReferenceState {
    pub fn fock(m: u32) -> Result<Self> {
        if m > MAX_ORDER {
            return Err(KqseError::UnsupportedOrder { order: m, max: MAX_ORDER });
        }
        Ok(Self::Fock { m })
    }

    pub fn coherent(re: f64, im: f64) -> Self {
        Self::Coherent { a: Complex64::new(re, im) }
    }

    pub fn cat(re: f64, im: f64) -> Self {
        Self::Cat { a: Complex64::new(re, im) }
    }

    /// Whether this is the oscillator ground state (the tail-correction model).
    pub fn is_ground(&self) -> bool {
        match *self {
            Self::Fock { m } => m == 0,
            Self::Coherent { a } => a.norm_sqr() == 0.0,
            Self::Cat { .. } => false,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Self::Fock { m } => format!("fock({m})"),
            Self::Coherent { a } => format!("coherent({}{:+}i)", a.re, a.im),
            Self::Cat { a } => format!("cat({}{:+}i)", a.re, a.im),
        }
    }

    pub fn tomogram(&self, s: PhaseSetting, x: f64) -> f64 {
        self.tomogram_at(s).eval(x)
    }

    /// Tomogram at a fixed setting with the per-setting constants precomputed.
    pub fn tomogram_at(&self, s: PhaseSetting) -> Tomogram {
        let body = match *self {
            Self::Fock { m } => TomogramBody::Fock(m),
            Self::Coherent { a } => TomogramBody::Terms(coherent_terms(a, s)),
            Self::Cat { a } => TomogramBody::Terms(cat_terms(a, s, false)),
        };
        Tomogram { alpha2: s.alpha2(), body }
    }

    /// Characteristic function `phi(t; mu, nu)`.
    pub fn cf(&self, t: f64, s: PhaseSetting) -> Complex64 {
        let alpha2 = s.alpha2();
        match *self {
            Self::Fock { m } => {
                let u = t * t * alpha2;
                // m is validated at construction; laguerre only fails above the cap
                let l = laguerre(m, u / 2.0).unwrap_or(f64::NAN);
                Complex64::new((-u / 4.0).exp() * l, 0.0)
            }
            Self::Coherent { a } => gaussian_terms_cf(&coherent_terms(a, s), t, alpha2),
            Self::Cat { a } => gaussian_terms_cf(&cat_terms(a, s, false), t, alpha2),
        }
    }

    /// `phi(1; mu, nu)` extended to the origin, where it equals `tr rho = 1`.
    pub fn cf1(&self, mu: f64, nu: f64) -> Complex64 {
        match PhaseSetting::new(mu, nu) {
            Ok(s) => self.cf(1.0, s),
            Err(_) => Complex64::new(1.0, 0.0),
        }
    }

    /// Position-space wavefunction `<y|psi>`.
    pub fn wavefunction(&self, y: f64) -> Complex64 {
        match *self {
            Self::Fock { m } => {
                Complex64::new(PI.powf(-0.25) * (-y * y / 2.0).exp() * hermite_scaled(m, y), 0.0)
            }
            Self::Coherent { a } => coherent_wavefunction(a, y),
            Self::Cat { a } => {
                let norm = cat_norm_sqr(a).sqrt();
                cat_amplitudes(a)
                    .iter()
                    .map(|&aj| coherent_wavefunction(aj, y))
                    .sum::<Complex64>()
                    * norm
            }
        }
    }

    /// Density-matrix kernel `rho(y, y') = <y|rho|y'>`.
    pub fn density_kernel(&self, y: f64, yp: f64) -> Complex64 {
        self.wavefunction(y) * self.wavefunction(yp).conj()
    }

    /// Mean and variance of the quadrature at `s`, used to place sampler supports.
    pub fn quadrature_moments(&self, s: PhaseSetting) -> (f64, f64) {
        let alpha2 = s.alpha2();
        match *self {
            Self::Fock { m } => (0.0, alpha2 * (m as f64 + 0.5)),
            Self::Coherent { a } => {
                let mean = SQRT_2 * (s.mu * a.re + s.nu * a.im);
                (mean, alpha2 / 2.0)
            }
            Self::Cat { a } => {
                // Envelope: the widest spread of the component means.
                let means: Vec<f64> = cat_amplitudes(a)
                    .iter()
                    .map(|aj| SQRT_2 * (s.mu * aj.re + s.nu * aj.im))
                    .collect();
                let spread = means.iter().map(|m| m * m).sum::<f64>() / 3.0;
                (0.0, alpha2 / 2.0 + spread)
            }
        }
    }
}

/// `x -> W(x | mu, nu)` for one state and setting.
#[derive(Debug, Clone)]
pub struct Tomogram {
    alpha2: f64,
    body: TomogramBody,
}

#[derive(Debug, Clone)]
enum TomogramBody {
    Fock(u32),
    Terms(Vec<GaussianTerm>),
}

impl Tomogram {
    pub fn eval(&self, x: f64) -> f64 {
        let w0 = ground_tomogram(self.alpha2, x);
        match &self.body {
            TomogramBody::Fock(m) => {
                let h = hermite_scaled(*m, x / self.alpha2.sqrt());
                w0 * h * h
            }
            TomogramBody::Terms(terms) => w0 * gaussian_terms_tomogram(terms, x),
        }
    }
}

/// Ground-state tomogram `exp(-x^2 / alpha^2) / (sqrt(pi) alpha)`.
pub fn ground_tomogram(alpha2: f64, x: f64) -> f64 {
    (-x * x / alpha2).exp() / (PI * alpha2).sqrt()
}

/// Ground-state characteristic function `exp(-t^2 alpha^2 / 4)`.
pub fn ground_cf(t: f64, alpha2: f64) -> f64 {
    (-t * t * alpha2 / 4.0).exp()
}

/// `|N_c|^2` for the three-component cat.
pub fn cat_norm_sqr(a: Complex64) -> f64 {
    let a2 = a.norm_sqr();
    let mut total = Complex64::new(0.0, 0.0);
    for j in 0..3 {
        for k in 0..3 {
            let phase = Complex64::from_polar(1.0, 2.0 * PI * (k as f64 - j as f64) / 3.0);
            total += (-a2 + a2 * phase).exp();
        }
    }
    1.0 / total.re
}

fn cat_amplitudes(a: Complex64) -> [Complex64; 3] {
    [0, 1, 2].map(|j| a * Complex64::from_polar(1.0, 2.0 * PI * j as f64 / 3.0))
}

fn coherent_wavefunction(a: Complex64, y: f64) -> Complex64 {
    let exponent = -y * y / 2.0 - a.norm_sqr() / 2.0 + SQRT_2 * a * y - a * a / 2.0;
    exponent.exp() * PI.powf(-0.25)
}

/// One term `weight * exp(i x s + d)` of a Gaussian-mixture tomogram.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GaussianTerm {
    pub weight: f64,
    pub s: Complex64,
    pub d: Complex64,
}

/// Cross term between coherent amplitudes `aj` (ket) and `ak` (bra).
fn cross_term(aj: Complex64, ak: Complex64, st: PhaseSetting, weight: f64) -> GaussianTerm {
    let alpha2 = st.alpha2();
    let plus = Complex64::new(st.nu, st.mu);
    let minus = Complex64::new(st.nu, -st.mu);
    let s = SQRT_2 * (minus * ak.conj() - plus * aj) / alpha2;
    let d = -0.5 * (aj.norm_sqr() + ak.norm_sqr())
        + (plus * plus * aj * aj + minus * minus * ak.conj() * ak.conj()) / (2.0 * alpha2);
    GaussianTerm { weight, s, d }
}

pub(crate) fn coherent_terms(a: Complex64, st: PhaseSetting) -> Vec<GaussianTerm> {
    vec![cross_term(a, a, st, 1.0)]
}

/// The nine `(j, k)` terms of the cat tomogram. With `first_only` the sum
/// keeps only `j = k = 1`, which must reproduce the single coherent state.
pub(crate) fn cat_terms(a: Complex64, st: PhaseSetting, first_only: bool) -> Vec<GaussianTerm> {
    let amps = cat_amplitudes(a);
    if first_only {
        return vec![cross_term(amps[0], amps[0], st, 1.0)];
    }
    let norm = cat_norm_sqr(a);
    let mut terms = Vec::with_capacity(9);
    for &aj in &amps {
        for &ak in &amps {
            terms.push(cross_term(aj, ak, st, norm));
        }
    }
    terms
}

fn gaussian_terms_tomogram(terms: &[GaussianTerm], x: f64) -> f64 {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for t in terms {
        let v = t.weight * (Complex64::i() * x * t.s + t.d).exp();
        scale += v.norm();
        sum += v;
    }
    debug_assert!(
        sum.im.abs() <= 1e-10 * scale.max(1e-300) || scale < 1e-250,
        "imaginary residue {} of {} in tomogram",
        sum.im,
        scale
    );
    sum.re.max(0.0)
}

fn gaussian_terms_cf(terms: &[GaussianTerm], t: f64, alpha2: f64) -> Complex64 {
    terms
        .iter()
        .map(|g| {
            let shifted = t + g.s;
            g.weight * (-shifted * shifted * alpha2 / 4.0 + g.d).exp()
        })
        .sum()
}
