//! Material presets and the dimensionless parameter map of a trapped
//! crystalline sphere.

use std::f64::consts::PI;

use crate::constants::{ATOMIC_MASS_UNIT, G, HBAR, SQRT_2_OVER_PI};
use crate::error::{domain, Error, Result};
use crate::kernels::KernelFamily;
use crate::kv;

const PRESETS: &str = include_str!("../presets/materials.ini");

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    /// Atomic mass, kg.
    pub m_atom: f64,
    /// Atomic localisation length σ, m.
    pub sigma: f64,
    /// Bulk mass density, kg/m³.
    pub bulk_density: f64,
}

impl Material {
    pub fn new(name: impl Into<String>, m_atom: f64, sigma: f64, bulk_density: f64) -> Result<Self> {
        let name = name.into();
        for (label, v) in [("m_atom", m_atom), ("sigma", sigma), ("bulk_density", bulk_density)] {
            if !(v.is_finite() && v > 0.0) {
                return domain(format!("material '{name}': {label} must be positive, got {v}"));
            }
        }
        Ok(Self {
            name,
            m_atom,
            sigma,
            bulk_density,
        })
    }

    pub fn silicon() -> Self {
        Self::preset("silicon").expect("built-in preset")
    }

    pub fn osmium() -> Self {
        Self::preset("osmium").expect("built-in preset")
    }

    /// Looks up one of the built-in presets by name.
    pub fn preset(name: &str) -> Result<Self> {
        Self::from_presets_text(PRESETS)?
            .into_iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Domain(format!("unknown material preset '{name}'")))
    }

    pub fn builtin_presets() -> Vec<Self> {
        Self::from_presets_text(PRESETS).expect("built-in presets parse")
    }

    /// Parses a presets document: one section per material with keys
    /// `m_atom_u`, `sigma_m` and `density_kg_m3`.
    pub fn from_presets_text(text: &str) -> Result<Vec<Self>> {
        kv::parse(text)?
            .iter()
            .map(|s| {
                s.check_keys(&["name", "m_atom_u", "sigma_m", "density_kg_m3"])?;
                let name = s
                    .get("name")
                    .map(|e| e.value.clone())
                    .unwrap_or_else(|| s.name.clone());
                let m_atom_u: f64 = s.require("m_atom_u")?;
                Self::new(
                    name,
                    m_atom_u * ATOMIC_MASS_UNIT,
                    s.require("sigma_m")?,
                    s.require("density_kg_m3")?,
                )
            })
            .collect()
    }

    /// Squared Schrödinger–Newton frequency ω_SN² (s⁻²) of the narrow-state
    /// quadratic potential.
    pub fn sn_frequency_sq(&self, family: KernelFamily) -> f64 {
        let base = G * self.m_atom / self.sigma.powi(3);
        match family {
            KernelFamily::Sphere => base,
            KernelFamily::Gaussian => SQRT_2_OVER_PI * base / 3.0,
        }
    }

    /// Like [`Self::sn_frequency_sq`], with a selectable normalisation for the
    /// Gaussian atomic profile.
    pub fn sn_frequency_sq_with(&self, family: KernelFamily, norm: GaussNormalization) -> f64 {
        let w2 = self.sn_frequency_sq(family);
        match (family, norm) {
            (KernelFamily::Gaussian, GaussNormalization::Alternative) => 2.0 * w2,
            _ => w2,
        }
    }

    /// Pre-factor G·m_atom/(4σ³ω₀²) of the gravitational split of the
    /// transition energies, in units of ħω₀.
    pub fn spectral_prefactor(&self, omega0: f64) -> f64 {
        G * self.m_atom / (4.0 * self.sigma.powi(3) * omega0 * omega0)
    }

    /// Total mass for which the ground state of a trap with frequency
    /// `omega0` has width parameter `alpha`.
    pub fn mass_for_alpha(&self, alpha: f64, omega0: f64) -> f64 {
        alpha * alpha * HBAR / (4.0 * self.sigma * self.sigma * omega0)
    }

    /// Width parameter α = 2σ√(mω₀/ħ).
    pub fn alpha(&self, m: f64, omega0: f64) -> f64 {
        2.0 * self.sigma * (m * omega0 / HBAR).sqrt()
    }
}

/// Normalisation of ω_SN for Gaussian atoms. `Alternative` is larger by √2
/// in ω_SN (factor 2 in ω_SN²), matching an earlier published expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaussNormalization {
    #[default]
    Standard,
    Alternative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrystalParams {
    pub material: Material,
    /// Total mass, kg.
    pub m: f64,
    /// Sphere radius, m.
    pub radius: f64,
    /// Number of atoms, stored as a real number.
    pub n_atoms: f64,
    /// Mean lattice spacing, m.
    pub lattice_spacing: f64,
    /// R/σ.
    pub varrho: f64,
}

impl CrystalParams {
    pub fn new(material: Material, m: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return domain(format!("mass must be positive, got {m}"));
        }
        if m < material.m_atom {
            return domain(format!(
                "mass {m} kg is below the atomic mass {} kg",
                material.m_atom
            ));
        }
        let radius = (3.0 * m / (4.0 * PI * material.bulk_density)).cbrt();
        let lattice_spacing = (material.m_atom / material.bulk_density).cbrt();
        Ok(Self {
            n_atoms: m / material.m_atom,
            varrho: radius / material.sigma,
            radius,
            lattice_spacing,
            material,
            m,
        })
    }

    /// β_k = N (σ/R)^{k+1}, evaluated in logs so that N up to 10²⁰ is safe.
    pub fn beta(&self, k: i32) -> f64 {
        beta_k(self.n_atoms, self.varrho, k)
    }

    /// γ_k = 1 + β_k.
    pub fn gamma(&self, k: i32) -> f64 {
        1.0 + self.beta(k)
    }
}

pub(crate) fn beta_k(n_atoms: f64, varrho: f64, k: i32) -> f64 {
    (n_atoms.ln() - f64::from(k + 1) * varrho.ln()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapContext {
    /// Trap angular frequency, rad/s.
    pub omega0: f64,
    /// α = 2σ√(mω₀/ħ).
    pub alpha: f64,
    /// Transverse-to-longitudinal frequency ratio (axial problems only).
    pub mu: f64,
}

/// Builds the crystal parameters and trap context for a sphere of mass `m`
/// in a trap of angular frequency `omega0`.
pub fn derive_params(material: Material, m: f64, omega0: f64) -> Result<(CrystalParams, TrapContext)> {
    if !(omega0.is_finite() && omega0 > 0.0) {
        return domain(format!("trap frequency must be positive, got {omega0}"));
    }
    let params = CrystalParams::new(material, m)?;
    let alpha = params.material.alpha(m, omega0);
    Ok((
        params,
        TrapContext {
            omega0,
            alpha,
            mu: 1.0,
        },
    ))
}

/// Squared Schrödinger–Newton frequency for a material and atomic profile.
pub fn sn_frequency(material: &Material, family: KernelFamily) -> f64 {
    material.sn_frequency_sq(family)
}
