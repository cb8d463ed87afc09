//! Physical constants (CODATA 2018 recommended values).
//!
//! The digits below are part of the output contract: every CSV manifest
//! carries a digest of [`CONSTANTS_TEXT`], so changing a digit changes the
//! digest.

/// Newtonian constant of gravitation, m³ kg⁻¹ s⁻².
pub const G: f64 = 6.674_30e-11;

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Canonical text rendering of the constants, used for manifest digests.
pub const CONSTANTS_TEXT: &str = "G=6.67430e-11\nhbar=1.054571817e-34\nu=1.66053906660e-27\n";

/// √(2/π)
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
