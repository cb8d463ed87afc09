//! Gravitational self-interaction kernels of a crystalline sphere.
//!
//! `I(d)` is the mutual potential energy (divided by −G) between the mass
//! distribution of the sphere and its copy shifted by `d`. Atoms are either
//! homogeneous balls of radius σ or Gaussian lumps of width σ; the lattice
//! contribution is the overlap of two homogeneous spheres of radius R.
//!
//! The dimensionless form `i(ζ, ϱ)` with ζ = d/(2σ) and ϱ = R/σ satisfies
//! `I(d) = m²/(Nσ) · i(d/(2σ), ϱ)`.

use std::fmt;
use std::str::FromStr;

use crate::constants::SQRT_2_OVER_PI;
use crate::error::{domain, Error, Result};
use crate::params::{beta_k, CrystalParams};

/// Below this ζ the Gaussian self term and its derivative are summed from
/// their power series, which avoids the 0/0 at the origin and the
/// cancellation in the closed-form derivative.
const SERIES_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// Atoms as homogeneous balls of radius σ.
    Sphere,
    /// Atoms as Gaussian mass densities ∝ exp(−x²/σ²).
    Gaussian,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Sphere => "sphere",
            KernelFamily::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" | "spherical" => Ok(KernelFamily::Sphere),
            "gauss" | "gaussian" => Ok(KernelFamily::Gaussian),
            other => Err(Error::Domain(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Overlap integral of two homogeneous spheres of radius `radius` and mass
/// `m` whose centres are `d` apart (kg²/m).
pub fn sphere_overlap(d: f64, radius: f64, m: f64) -> Result<f64> {
    if !(d >= 0.0 && radius > 0.0 && m > 0.0) {
        return domain(format!(
            "sphere_overlap needs d >= 0, R > 0, m > 0 (got d={d}, R={radius}, m={m})"
        ));
    }
    let scale = m * m / radius;
    if d >= 2.0 * radius {
        return Ok(scale * radius / d);
    }
    let x = d / (2.0 * radius);
    Ok(scale * overlap_poly(x, [1.0; 4]))
}

/// 6/5·c0 − 2·c2·x² + 3/2·c3·x³ − 1/5·c5·x⁵
#[inline]
fn overlap_poly(x: f64, c: [f64; 4]) -> f64 {
    let x2 = x * x;
    1.2 * c[0] - x2 * (2.0 * c[1] - x * (1.5 * c[2] - 0.2 * c[3] * x2))
}

/// d/dx of [`overlap_poly`].
#[inline]
fn overlap_poly_prime(x: f64, c: [f64; 4]) -> f64 {
    let x2 = x * x;
    x * (-4.0 * c[1] + x * (4.5 * c[2] - c[3] * x2))
}

/// ζ·p′ + 2p = 12/5·c0 − 8·c2·x² + 15/2·c3·x³ − 7/5·c5·x⁵
#[inline]
fn overlap_poly_combo(x: f64, c: [f64; 4]) -> f64 {
    let x2 = x * x;
    2.4 * c[0] - x2 * (8.0 * c[1] - x * (7.5 * c[2] - 1.4 * c[3] * x2))
}

/// erf(√2 ζ)/(2ζ), finite at ζ = 0.
#[inline]
pub fn gauss_self(zeta: f64) -> f64 {
    if zeta < SERIES_CUTOFF {
        gauss_self_series(zeta).0
    } else {
        libm::erf(std::f64::consts::SQRT_2 * zeta) / (2.0 * zeta)
    }
}

/// d/dζ of [`gauss_self`].
#[inline]
fn gauss_self_prime(zeta: f64) -> f64 {
    if zeta < SERIES_CUTOFF {
        gauss_self_series(zeta).1
    } else {
        SQRT_2_OVER_PI * (-2.0 * zeta * zeta).exp() / zeta
            - libm::erf(std::f64::consts::SQRT_2 * zeta) / (2.0 * zeta * zeta)
    }
}

/// √(2/π) Σ_k (−2ζ²)^k / (k!(2k+1)) and its ζ-derivative.
fn gauss_self_series(zeta: f64) -> (f64, f64) {
    let w = -2.0 * zeta * zeta;
    let mut term = 1.0; // w^k / k!
    let mut value = 1.0;
    let mut deriv = 0.0;
    for k in 1..40 {
        term *= w / k as f64;
        let kf = k as f64;
        let v = term / (2.0 * kf + 1.0);
        value += v;
        // d/dζ of ζ^{2k} is 2k ζ^{2k−1}
        deriv += 2.0 * kf * v;
        if v.abs() < 1e-18 * value.abs() {
            break;
        }
    }
    let d = if zeta > 0.0 { deriv / zeta } else { 0.0 };
    (SQRT_2_OVER_PI * value, SQRT_2_OVER_PI * d)
}

/// √(2/π)e^{−2ζ²} + erf(√2 ζ)/(2ζ), i.e. ζ·s′ + 2s for the Gaussian self term s.
#[inline]
fn gauss_self_combo(zeta: f64) -> f64 {
    SQRT_2_OVER_PI * (-2.0 * zeta * zeta).exp() + gauss_self(zeta)
}

/// Dimensionless kernel `i(ζ, ϱ)` for one atomic mass profile.
///
/// The lattice part enters through β_k = N/ϱ^{k+1}. A model with
/// `varrho = ∞` and `n_atoms = 0` keeps only the single-atom self term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelModel {
    pub family: KernelFamily,
    pub n_atoms: f64,
    pub varrho: f64,
    beta: [f64; 4],
}

impl KernelModel {
    pub fn new(family: KernelFamily, n_atoms: f64, varrho: f64) -> Result<Self> {
        if !(varrho >= 1.0) {
            return domain(format!("varrho must be >= 1, got {varrho}"));
        }
        if !(n_atoms >= 0.0 && n_atoms.is_finite()) {
            return domain(format!("atom count must be finite and >= 0, got {n_atoms}"));
        }
        let beta = if n_atoms == 0.0 || varrho.is_infinite() {
            [0.0; 4]
        } else {
            [0, 2, 3, 5].map(|k| beta_k(n_atoms, varrho, k))
        };
        Ok(Self {
            family,
            n_atoms,
            varrho,
            beta,
        })
    }

    pub fn from_params(params: &CrystalParams, family: KernelFamily) -> Self {
        Self::new(family, params.n_atoms, params.varrho).expect("crystal params are validated")
    }

    /// Self term of a single atom only (N = 0, ϱ = ∞).
    pub fn atomic(family: KernelFamily) -> Self {
        Self::new(family, 0.0, f64::INFINITY).expect("valid")
    }

    /// β_k for k ∈ {0, 2, 3, 5}.
    pub fn beta(&self, k: i32) -> f64 {
        match k {
            0 => self.beta[0],
            2 => self.beta[1],
            3 => self.beta[2],
            5 => self.beta[3],
            _ => beta_k(self.n_atoms, self.varrho, k),
        }
    }

    pub fn gamma(&self, k: i32) -> f64 {
        1.0 + self.beta(k)
    }

    /// The n-independent constant 6/5·β₀ that `i` carries for ζ ≤ ϱ.
    pub fn constant_offset(&self) -> f64 {
        1.2 * self.beta[0]
    }

    /// Interior branch points of `i` (kinks), in increasing order.
    pub fn branch_points(&self) -> Vec<f64> {
        let mut pts = Vec::with_capacity(2);
        if self.family == KernelFamily::Sphere {
            pts.push(1.0);
        }
        if self.varrho.is_finite() && !pts.contains(&self.varrho) {
            pts.push(self.varrho);
        }
        pts
    }

    /// Inner coefficient arrays (γ, β); with `reduced` the 6/5·β₀ constant is
    /// left out.
    fn coeffs(&self, reduced: bool) -> ([f64; 4], [f64; 4]) {
        let mut beta = self.beta;
        if reduced {
            beta[0] = 0.0;
        }
        (beta.map(|b| 1.0 + b), beta)
    }

    /// i(ζ, ϱ) for ζ ≥ 0.
    pub fn i(&self, zeta: f64) -> f64 {
        self.i_impl(zeta, false)
    }

    /// i(ζ, ϱ) − 6/5·β₀ for ζ ≤ ϱ and i beyond, evaluated without
    /// cancellation against the large lattice constant.
    pub fn i_reduced(&self, zeta: f64) -> f64 {
        self.i_impl(zeta, true)
    }

    fn i_impl(&self, zeta: f64, reduced: bool) -> f64 {
        let outer = zeta > self.varrho;
        let (gammas, beta) = self.coeffs(reduced);
        match self.family {
            KernelFamily::Sphere => {
                if zeta <= 1.0 {
                    overlap_poly(zeta, gammas)
                } else if !outer {
                    0.5 / zeta + overlap_poly(zeta, beta)
                } else {
                    (self.n_atoms + 1.0) / (2.0 * zeta)
                }
            }
            KernelFamily::Gaussian => {
                if !outer {
                    gauss_self(zeta) + overlap_poly(zeta, beta)
                } else {
                    (self.n_atoms + libm::erf(std::f64::consts::SQRT_2 * zeta)) / (2.0 * zeta)
                }
            }
        }
    }

    /// ∂i/∂ζ; at branch points the inner one-sided derivative is returned.
    pub fn i_prime(&self, zeta: f64) -> f64 {
        let outer = zeta > self.varrho;
        let (gammas, _) = self.coeffs(false);
        match self.family {
            KernelFamily::Sphere => {
                if zeta <= 1.0 {
                    overlap_poly_prime(zeta, gammas)
                } else if !outer {
                    -0.5 / (zeta * zeta) + overlap_poly_prime(zeta, self.beta)
                } else {
                    -(self.n_atoms + 1.0) / (2.0 * zeta * zeta)
                }
            }
            KernelFamily::Gaussian => {
                if !outer {
                    gauss_self_prime(zeta) + overlap_poly_prime(zeta, self.beta)
                } else {
                    gauss_self_prime(zeta) - self.n_atoms / (2.0 * zeta * zeta)
                }
            }
        }
    }

    /// c(ζ) = ζ·i′(ζ) + 2·i(ζ), from the closed piecewise forms.
    pub fn combo(&self, zeta: f64) -> f64 {
        self.combo_impl(zeta, false)
    }

    /// `combo` minus 12/5·β₀ for ζ ≤ ϱ, without cancellation.
    pub fn combo_reduced(&self, zeta: f64) -> f64 {
        self.combo_impl(zeta, true)
    }

    fn combo_impl(&self, zeta: f64, reduced: bool) -> f64 {
        let outer = zeta > self.varrho;
        let (gammas, beta) = self.coeffs(reduced);
        match self.family {
            KernelFamily::Sphere => {
                if zeta <= 1.0 {
                    overlap_poly_combo(zeta, gammas)
                } else if !outer {
                    0.5 / zeta + overlap_poly_combo(zeta, beta)
                } else {
                    (self.n_atoms + 1.0) / (2.0 * zeta)
                }
            }
            KernelFamily::Gaussian => {
                let lattice = if !outer {
                    overlap_poly_combo(zeta, beta)
                } else {
                    self.n_atoms / (2.0 * zeta)
                };
                gauss_self_combo(zeta) + lattice
            }
        }
    }

    /// The constant 12/5·β₀ carried by `combo` for ζ ≤ ϱ.
    pub fn combo_offset(&self) -> f64 {
        2.4 * self.beta[0]
    }
}

fn check_zeta(zeta: f64) -> Result<()> {
    if zeta >= 0.0 && !zeta.is_nan() {
        Ok(())
    } else {
        domain(format!("zeta must be >= 0, got {zeta}"))
    }
}

/// Checked i(ζ, ϱ).
pub fn i_dimensionless(zeta: f64, model: &KernelModel) -> Result<f64> {
    check_zeta(zeta)?;
    Ok(model.i(zeta))
}

/// Checked ∂i/∂ζ.
pub fn i_prime_dimensionless(zeta: f64, model: &KernelModel) -> Result<f64> {
    check_zeta(zeta)?;
    Ok(model.i_prime(zeta))
}

/// Checked ζ·i′ + 2·i.
pub fn dynamics_combo(zeta: f64, model: &KernelModel) -> Result<f64> {
    check_zeta(zeta)?;
    Ok(model.combo(zeta))
}

/// Dimensional crystal kernel I_cr(d) in kg²/m.
pub fn crystal_kernel(d: f64, params: &CrystalParams, family: KernelFamily) -> Result<f64> {
    if !(d >= 0.0) {
        return domain(format!("separation must be >= 0, got {d}"));
    }
    let model = KernelModel::from_params(params, family);
    let sigma = params.material.sigma;
    let scale = params.m * params.m / (params.n_atoms * sigma);
    Ok(scale * model.i(d / (2.0 * sigma)))
}
