//! Schrödinger–Newton self-gravity of a harmonically trapped crystalline
//! microsphere: kernels, first-order spectra, Gaussian moment dynamics, the
//! axially symmetric spectrum and a nonlinear PDE cross-check.

pub mod axial;
pub mod constants;
pub mod dynamics;
pub mod error;
pub mod kernels;
pub mod kv;
pub mod ode;
pub mod oracle;
pub mod params;
pub mod polynomials;
pub mod quadrature;
pub mod spectrum;
pub mod sweep;

pub use error::{Error, Result};
pub use kernels::{KernelFamily, KernelModel};
pub use params::{derive_params, CrystalParams, GaussNormalization, Material, TrapContext};
pub use quadrature::{McConfig, QuadResult};
pub use spectrum::{Regime, SpectrumQuery, TransitionEnergy};
pub use sweep::SweepResult;
