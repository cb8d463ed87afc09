//! Second-moment dynamics of a Gaussian state under self-gravity.
//!
//! With the width parameter α = 2σ/√u₁, a Gaussian of variance u₁ feels
//!
//! g(α)   = G m_atom/(√π σ) · α ∫₀^∞ dζ e^{−α²ζ²/4} (ζ i′ + 2 i),
//! g′(u₁) = −G m_atom α³/(16√π σ³) ∫₀^∞ dζ e^{−α²ζ²/4} (ζ i′ + 2 i)(2 − α²ζ²),
//!
//! and ⟨V_g⟩/m = −G m_atom/(√π σ) · α ∫₀^∞ dζ e^{−α²ζ²/4} i. The integrals are
//! evaluated in u = αζ.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::constants::{G, HBAR};
use crate::error::{domain, Error, Result};
use crate::kernels::{KernelFamily, KernelModel};
use crate::ode::{integrate, OdeOptions, OdeStats};
use crate::params::{CrystalParams, Material};
use crate::quadrature::{integrate_1d_breaks, QuadResult};
use crate::spectrum::Regime;
use crate::sweep::{salvage, SweepResult};

const REL_TOL: f64 = 1e-10;
/// e^{−u²/4} < 10⁻³⁹⁰ beyond this.
const U_MAX: f64 = 60.0;

/// α = 2σ/√u₁.
pub fn alpha_from_u1(u1: f64, sigma: f64) -> f64 {
    2.0 * sigma / u1.sqrt()
}

#[derive(Clone, Copy)]
enum Weight {
    /// e^{−u²/4}
    Plain,
    /// e^{−u²/4}(2 − u²)
    Derivative,
}

/// ∫ du w(u) k(u/α) over u ∈ [α·lo, α·hi], hi may be infinite.
fn weighted<K: Fn(f64) -> f64>(alpha: f64, lo: f64, hi: f64, k: K, kinks: &[f64], w: Weight) -> Result<QuadResult> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return domain(format!("alpha must be positive, got {alpha}"));
    }
    let a = alpha * lo;
    let b = (alpha * hi).min(U_MAX);
    if a >= b {
        return Ok(QuadResult {
            value: 0.0,
            error_estimate: 0.0,
            evaluations: 0,
        });
    }
    let mut pts = vec![a, b, std::f64::consts::SQRT_2, 2.0, 4.0];
    pts.extend(kinks.iter().map(|z| z * alpha));
    let first = pts
        .iter()
        .copied()
        .filter(|&u| u > 0.0)
        .fold(f64::INFINITY, f64::min);
    let mut u = first * 4.0;
    while u < 1.0 {
        pts.push(u);
        u *= 4.0;
    }
    pts.retain(|&u| u >= a && u <= b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    // ∫₀^b (2 − u²)e^{−u²/4} du = 2b e^{−b²/4}, so the value at ζ = 0 can be
    // taken out; for narrow states the rest is a small remainder
    let k0 = match w {
        Weight::Derivative if a == 0.0 => k(0.0),
        _ => 0.0,
    };
    let f = |u: f64| {
        let e = (-0.25 * u * u).exp();
        match w {
            Weight::Plain => e * k(u / alpha),
            Weight::Derivative => e * (2.0 - u * u) * (k(u / alpha) - k0),
        }
    };
    let mut r = integrate_1d_breaks(f, &pts, REL_TOL, 1e-300)?;
    r.value += k0 * 2.0 * b * (-0.25 * b * b).exp();
    Ok(r)
}

fn scaled(r: QuadResult, s: f64) -> QuadResult {
    QuadResult {
        value: s * r.value,
        error_estimate: s.abs() * r.error_estimate,
        evaluations: r.evaluations,
    }
}

/// G m_atom/(16√π σ³), the scale of g′ (s⁻²).
pub fn g_prime_scale(material: &Material) -> f64 {
    G * material.m_atom / (16.0 * PI.sqrt() * material.sigma.powi(3))
}

fn g_scale(material: &Material) -> f64 {
    G * material.m_atom / (PI.sqrt() * material.sigma)
}

/// g′ (s⁻²) at width parameter α with the full kernel of `model`.
pub fn g_prime(alpha: f64, model: &KernelModel, material: &Material) -> Result<QuadResult> {
    let off = model.combo_offset();
    let r = weighted(
        alpha,
        0.0,
        f64::INFINITY,
        |z| model.combo_reduced(z),
        &model.branch_points(),
        Weight::Derivative,
    )?;
    let k0 = if model.varrho.is_finite() {
        k0_closed(alpha, model.varrho)
    } else {
        0.0
    };
    let s = -g_prime_scale(material);
    let mut out = scaled(r, s * alpha * alpha);
    out.value += s * off * k0;
    Ok(out)
}

/// Lowest-order narrow value of g′, −4ω_SN² with the lattice curvature kept.
pub fn g_prime_narrow(model: &KernelModel, material: &Material) -> f64 {
    let c = match model.family {
        KernelFamily::Sphere => model.gamma(2),
        KernelFamily::Gaussian => crate::constants::SQRT_2_OVER_PI / 3.0 + model.beta(2),
    };
    -4.0 * G * material.m_atom / material.sigma.powi(3) * c
}

/// Wide-state asymptote −G m/(4√π) u₁^{−3/2} ln(u₁/σ²), i.e. the point-mass
/// limit N·k⁽³⁾ of g′.
pub fn g_prime_wide(u1: f64, params: &CrystalParams) -> Result<f64> {
    if !(u1 > 0.0) {
        return domain(format!("u1 must be positive, got {u1}"));
    }
    let s2 = params.material.sigma.powi(2);
    Ok(-G * params.m / (4.0 * PI.sqrt()) * u1.powf(-1.5) * (u1 / s2).ln())
}

/// True when √u₁ is below R, where [`g_prime_wide`] does not apply.
pub fn wide_regime_violated(u1: f64, params: &CrystalParams) -> bool {
    u1.sqrt() < params.radius
}

/// Antiderivative of [`g_prime_wide`] in u₁.
fn g_wide_antiderivative(u1: f64, params: &CrystalParams) -> f64 {
    let s2 = params.material.sigma.powi(2);
    let l = (u1 / s2).ln();
    -G * params.m / (4.0 * PI.sqrt()) * (-2.0 * u1.powf(-0.5) * (l + 2.0))
}

/// g(α) (m²/s²). The n-independent lattice constant is added analytically.
pub fn g_value(alpha: f64, model: &KernelModel, material: &Material) -> Result<QuadResult> {
    let off = model.combo_offset();
    let r = weighted(
        alpha,
        0.0,
        f64::INFINITY,
        |z| model.combo_reduced(z),
        &model.branch_points(),
        Weight::Plain,
    )?;
    let c = off * plain_inside(alpha, model.varrho);
    let mut out = scaled(r, g_scale(material));
    out.value += g_scale(material) * c;
    Ok(out)
}

/// ∫₀^{αϱ} e^{−u²/4} du.
fn plain_inside(alpha: f64, varrho: f64) -> f64 {
    if varrho.is_infinite() {
        PI.sqrt()
    } else {
        PI.sqrt() * libm::erf(0.5 * alpha * varrho)
    }
}

/// ⟨V_g⟩/m (m²/s²) for a Gaussian of width parameter α.
pub fn vg_mean(alpha: f64, model: &KernelModel, material: &Material) -> Result<QuadResult> {
    let off = model.constant_offset();
    let r = weighted(
        alpha,
        0.0,
        f64::INFINITY,
        |z| model.i_reduced(z),
        &model.branch_points(),
        Weight::Plain,
    )?;
    let c = off * plain_inside(alpha, model.varrho);
    let mut out = scaled(r, -g_scale(material));
    out.value -= g_scale(material) * c;
    Ok(out)
}

/// g̃ = −(2/m)⟨x ∂V_g/∂x⟩ = g + 2⟨V_g⟩/m (m²/s²).
pub fn g_tilde(alpha: f64, model: &KernelModel, material: &Material) -> Result<QuadResult> {
    let r = weighted(
        alpha,
        0.0,
        f64::INFINITY,
        |z| z * model.i_prime(z),
        &model.branch_points(),
        Weight::Plain,
    )?;
    Ok(scaled(r, g_scale(material)))
}

/// The pieces of g′ in the split used for intermediate widths; g′ is
/// −G m_atom/(16√π σ³) times [`KIntegrals::sphere_sum`] or
/// [`KIntegrals::gauss_sum`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KIntegrals {
    pub k0: f64,
    /// −8ζ² + 15/2ζ³ − 7/5ζ⁵ on ζ ≤ 1.
    pub k1: f64,
    /// The single-atom constant 12/5 on ζ ≤ 1, 24/5·α³e^{−α²/4}.
    pub k1c: f64,
    pub k1g: f64,
    /// Lattice curvature, weighted by β₂ = Nσ³/R³.
    pub k2: f64,
    /// 1/(2ζ) beyond ϱ, weighted by N.
    pub k3: f64,
    pub k4: f64,
    pub error_estimate: f64,
}

fn k0_closed(alpha: f64, varrho: f64) -> f64 {
    2.0 * alpha.powi(3) * varrho * (-0.25 * alpha * alpha * varrho * varrho).exp()
}

impl KIntegrals {
    pub fn sphere_sum(&self, model: &KernelModel) -> f64 {
        2.4 * model.beta(0) * self.k0 + self.k1 + self.k1c + model.beta(2) * self.k2 + model.n_atoms * self.k3 + self.k4
    }

    pub fn gauss_sum(&self, model: &KernelModel) -> f64 {
        2.4 * model.beta(0) * self.k0 + self.k1g + model.beta(2) * self.k2 + model.n_atoms * self.k3
    }

    /// The terms kept for ϱ → ∞ (k⁽⁰⁾, k⁽²⁾, k⁽³⁾ dropped).
    pub fn intermediate_sum(&self, family: KernelFamily) -> f64 {
        match family {
            KernelFamily::Sphere => self.k1 + self.k1c + self.k4,
            KernelFamily::Gaussian => self.k1g,
        }
    }
}

pub fn k_integrals(alpha: f64, varrho: f64) -> Result<KIntegrals> {
    if !(alpha > 0.0 && alpha.is_finite()) || !(varrho >= 1.0) {
        return domain(format!("need alpha > 0 and varrho >= 1, got {alpha}, {varrho}"));
    }
    let a2 = alpha * alpha;
    let atom = KernelModel::atomic(KernelFamily::Gaussian);
    let k1 = weighted(alpha, 0.0, 1.0, |z| z * z * (-8.0 + z * (7.5 - 1.4 * z * z)), &[], Weight::Derivative)?;
    let k1g = weighted(alpha, 0.0, f64::INFINITY, |z| atom.combo(z), &[], Weight::Derivative)?;
    let k2 = weighted(
        alpha,
        0.0,
        varrho,
        |z| z * z * (-8.0 + z * (7.5 / varrho - 1.4 * z * z / varrho.powi(3))),
        &[],
        Weight::Derivative,
    )?;
    let k3 = weighted(alpha, varrho, f64::INFINITY, |z| 0.5 / z, &[], Weight::Derivative)?;
    let k4 = weighted(alpha, 1.0, f64::INFINITY, |z| 0.5 / z, &[], Weight::Derivative)?;
    let err = a2 * (k1.error_estimate + k1g.error_estimate + k2.error_estimate + k3.error_estimate + k4.error_estimate);
    Ok(KIntegrals {
        k0: if varrho.is_finite() { k0_closed(alpha, varrho) } else { 0.0 },
        k1: a2 * k1.value,
        k1c: 4.8 * alpha.powi(3) * (-0.25 * a2).exp(),
        k1g: a2 * k1g.value,
        k2: a2 * k2.value,
        k3: a2 * k3.value,
        k4: a2 * k4.value,
        error_estimate: err,
    })
}

/// Rows (α, −g′/4) in s⁻², i.e. the effective ω_SN²(α).
pub fn sweep_omega_sn(alphas: &[f64], model: &KernelModel, material: &Material) -> Result<SweepResult> {
    if alphas.is_empty() {
        return domain("alpha grid is empty");
    }
    let rows: Vec<(Vec<f64>, Option<String>)> = alphas
        .par_iter()
        .map(|&a| match g_prime(a, model, material) {
            Ok(r) => (vec![a, -0.25 * r.value, 0.25 * r.error_estimate], None),
            Err(e) => {
                let (v, err, msg) = salvage(&e);
                (vec![a, -0.25 * v, 0.25 * err], Some(msg))
            }
        })
        .collect();
    let mut out = SweepResult::new(["alpha", "omega_sn_sq", "error_estimate"]);
    for (v, e) in rows {
        out.push(v, e);
    }
    Ok(out)
}

/// Natural cubic spline of φ(s) = −2 a ĝ′ on a uniform grid in s = ln α, with
/// exact integrals of the interpolant. Here a = u₁/ℓ² and ĝ′ = g′/ω₀².
#[derive(Debug, Clone)]
pub struct GPrimeTable {
    s0: f64,
    ds: f64,
    phi: Vec<f64>,
    m2: Vec<f64>,
    cum: Vec<f64>,
    /// a = alpha_ref²·e^{−2s}
    alpha_ref: f64,
    /// Largest relative deviation of interpolated g′ from direct evaluation
    /// at the probe points.
    pub probe_error: f64,
}

impl GPrimeTable {
    /// Tabulates `gp_hat(α)` (= g′/ω₀²) on [α_lo, α_hi]. `alpha_ref` is α at
    /// a = 1. The grid is refined until 20 probes agree to `rel_budget`.
    pub fn build<F>(gp_hat: F, alpha_lo: f64, alpha_hi: f64, alpha_ref: f64, rel_budget: f64) -> Result<Self>
    where
        F: Fn(f64) -> Result<f64>,
    {
        if !(alpha_lo > 0.0 && alpha_hi > alpha_lo) {
            return domain(format!("bad alpha range [{alpha_lo}, {alpha_hi}]"));
        }
        let (s0, s1) = (alpha_lo.ln(), alpha_hi.ln());
        let probes: Vec<f64> = (0..20).map(|i| s0 + (s1 - s0) * (i as f64 + 0.37) / 20.0).collect();
        let probe_vals: Vec<f64> = probes.iter().map(|&s| gp_hat(s.exp())).collect::<Result<_>>()?;
        let mut nodes = 33;
        loop {
            let ds = (s1 - s0) / (nodes - 1) as f64;
            let phi: Vec<f64> = (0..nodes)
                .map(|i| {
                    let s = s0 + i as f64 * ds;
                    let a = (alpha_ref / s.exp()).powi(2);
                    gp_hat(s.exp()).map(|g| -2.0 * a * g)
                })
                .collect::<Result<_>>()?;
            let mut t = Self::from_nodes(s0, ds, phi, alpha_ref);
            t.probe_error = probes
                .iter()
                .zip(&probe_vals)
                .map(|(&s, &want)| ((t.gp_hat_at_s(s) - want) / want).abs())
                .fold(0.0, f64::max);
            if t.probe_error <= rel_budget || nodes > 4000 {
                return Ok(t);
            }
            nodes = 2 * nodes - 1;
        }
    }

    fn from_nodes(s0: f64, ds: f64, phi: Vec<f64>, alpha_ref: f64) -> Self {
        let n = phi.len();
        // natural spline: M₀ = M_{n−1} = 0, uniform spacing
        let mut m2 = vec![0.0; n];
        if n > 2 {
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let rhs = 6.0 * (phi[i + 1] - 2.0 * phi[i] + phi[i - 1]) / (ds * ds);
                let denom = 4.0 - c[i - 1];
                c[i] = 1.0 / denom;
                d[i] = (rhs - d[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m2[i] = d[i] - c[i] * m2[i + 1];
            }
        }
        let mut t = Self {
            s0,
            ds,
            phi,
            m2,
            cum: vec![0.0; n],
            alpha_ref,
            probe_error: 0.0,
        };
        for i in 1..n {
            t.cum[i] = t.cum[i - 1] + t.piece_integral(i - 1, 1.0);
        }
        t
    }

    pub fn alpha_range(&self) -> (f64, f64) {
        let s1 = self.s0 + self.ds * (self.phi.len() - 1) as f64;
        (self.s0.exp(), s1.exp())
    }

    fn locate(&self, s: f64) -> Option<(usize, f64)> {
        let x = (s - self.s0) / self.ds;
        let last = self.phi.len() - 1;
        if !(x >= -1e-9 && x <= last as f64 + 1e-9) {
            return None;
        }
        let i = (x.floor() as usize).min(last - 1);
        Some((i, (x - i as f64).clamp(0.0, 1.0)))
    }

    fn phi_at(&self, i: usize, x: f64) -> f64 {
        let (b, a) = (x, 1.0 - x);
        a * self.phi[i] + b * self.phi[i + 1]
            + ((a * a * a - a) * self.m2[i] + (b * b * b - b) * self.m2[i + 1]) * self.ds * self.ds / 6.0
    }

    /// ∫ φ ds from node i to fraction x of the next interval.
    fn piece_integral(&self, i: usize, x: f64) -> f64 {
        let h = self.ds;
        let a1 = 1.0 - x;
        let int_a = (0.25 - 0.5) - (a1.powi(4) / 4.0 - a1 * a1 / 2.0);
        let int_b = x.powi(4) / 4.0 - x * x / 2.0;
        h * (self.phi[i] * (x - 0.5 * x * x)
            + self.phi[i + 1] * 0.5 * x * x
            + h * h / 6.0 * (self.m2[i] * int_a + self.m2[i + 1] * int_b))
    }

    fn gp_hat_at_s(&self, s: f64) -> f64 {
        let (i, x) = self.locate(s).expect("probe inside table");
        let a = (self.alpha_ref / s.exp()).powi(2);
        self.phi_at(i, x) / (-2.0 * a)
    }

    /// Interpolated ĝ′ at α.
    pub fn gp_hat(&self, alpha: f64) -> Option<f64> {
        let s = alpha.ln();
        self.locate(s)?;
        Some(self.gp_hat_at_s(s))
    }

    /// ∫ ĝ′ da from a₀ to a (both in units of ℓ²).
    pub fn delta_g_hat(&self, a0: f64, a: f64) -> Option<f64> {
        Some(self.primitive(a)? - self.primitive(a0)?)
    }

    fn primitive(&self, a: f64) -> Option<f64> {
        if !(a > 0.0) {
            return None;
        }
        let s = (self.alpha_ref / a.sqrt()).ln();
        let (i, x) = self.locate(s)?;
        Some(self.cum[i] + self.piece_integral(i, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTrapRun {
    pub params: CrystalParams,
    pub omega0: f64,
    pub family: KernelFamily,
    /// Full: crystal kernel; Intermediate: single-atom kernel; Narrow:
    /// constant g′; Wide: point-mass asymptote. Auto is treated as Full.
    pub regime: Regime,
    /// Initial width over the ground-state width.
    pub kappa: f64,
    pub x0: f64,
    pub p0: f64,
    pub t_end: f64,
    /// Number of equally spaced output times, including 0 and t_end.
    pub samples: usize,
    pub tolerance: f64,
    /// Multiplies G; 0 switches gravity off.
    pub gravity_scale: f64,
}

impl GaussianTrapRun {
    pub fn new(params: CrystalParams, omega0: f64, family: KernelFamily, kappa: f64) -> Self {
        Self {
            params,
            omega0,
            family,
            regime: Regime::Full,
            kappa,
            x0: 0.0,
            p0: 0.0,
            t_end: 10.0 * 2.0 * PI / omega0,
            samples: 2001,
            tolerance: 1e-9,
            gravity_scale: 1.0,
        }
    }

    /// Ground-state variance ħ/(2mω₀).
    pub fn ground_variance(&self) -> f64 {
        HBAR / (2.0 * self.params.m * self.omega0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return domain(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.omega0 > 0.0) || !(self.t_end > 0.0) {
            return domain("omega0 and t_end must be positive");
        }
        if self.samples < 2 {
            return domain("need at least two samples");
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return domain("tolerance must lie in (0, 1)");
        }
        if !(self.gravity_scale >= 0.0) {
            return domain("gravity scale must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentState {
    pub t: f64,
    pub x_mean: f64,
    pub p_mean: f64,
    pub u1: f64,
    /// Includes ⟨V_g⟩/m.
    pub u2: f64,
    pub u3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<MomentState>,
    pub omega0: f64,
    pub stats: OdeStats,
    /// Set when integration stopped before t_end; `states` then ends at the
    /// last sample reached.
    pub failure: Option<Error>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }

    pub fn to_sweep(&self) -> SweepResult {
        let mut s = SweepResult::new(["t", "x_mean", "u1", "u2", "u3"]);
        for st in &self.states {
            s.push(vec![st.t, st.x_mean, st.u1, st.u2, st.u3], None);
        }
        s
    }
}

enum Gravity {
    Off,
    /// Constant ĝ′.
    Linear(f64),
    Table(GPrimeTable),
    Wide { lambda: f64, ell2: f64, w2: f64 },
}

/// Integrates the first moments and (u₁, u₂, u₃) from a pure, unchirped
/// Gaussian of width κ·ℓ.
///
/// Internally time is ω₀t, u₁ is in units ℓ² = ħ/(2mω₀) and u₂ is shifted by
/// the constant g(u₁(0))/2 so that only differences of g enter.
pub fn evolve_moments(run: &GaussianTrapRun) -> Result<Trajectory> {
    run.validate()?;
    let mat = &run.params.material;
    let ell2 = run.ground_variance();
    let w2 = run.omega0 * run.omega0;
    let lambda = run.gravity_scale;
    let a0 = run.kappa * run.kappa;
    let alpha_ref = alpha_from_u1(ell2, mat.sigma);
    let alpha0 = alpha_ref / run.kappa;
    let model = match run.regime {
        Regime::Intermediate => KernelModel::atomic(run.family),
        _ => KernelModel::from_params(&run.params, run.family),
    };
    let mut warnings = Vec::new();

    let (gravity, gt0, vg0) = if lambda == 0.0 {
        (Gravity::Off, 0.0, 0.0)
    } else {
        let vg0 = lambda * vg_mean(alpha0, &model, mat)?.value;
        match run.regime {
            Regime::Narrow => {
                let gp = lambda * g_prime_narrow(&model, mat) / w2;
                // g̃ = g′u₁/2 for a quadratic potential
                (Gravity::Linear(gp), gp * a0 / 2.0, vg0)
            }
            Regime::Wide => {
                if wide_regime_violated(ell2 * a0, &run.params) {
                    warnings.push("initial width is below R; wide-state asymptote used anyway".to_string());
                }
                let gt = lambda * g_tilde(alpha0, &model, mat)?.value / (ell2 * w2);
                (Gravity::Wide { lambda, ell2, w2 }, gt, vg0)
            }
            _ => {
                let spread = run.kappa.max(1.0 / run.kappa);
                let lo = alpha_ref / spread / 2.0;
                let hi = alpha_ref * spread * 2.0;
                let table = GPrimeTable::build(
                    |a| g_prime(a, &model, mat).map(|r| lambda * r.value / w2),
                    lo,
                    hi,
                    alpha_ref,
                    1e-4,
                )?;
                if table.probe_error > 1e-4 {
                    warnings.push(format!("g' interpolation error {:.2e}", table.probe_error));
                }
                let gt = lambda * g_tilde(alpha0, &model, mat)?.value / (ell2 * w2);
                (Gravity::Table(table), gt, vg0)
            }
        }
    };

    let params = run.params.clone();
    let delta_g = |a: f64| -> Result<f64> {
        match &gravity {
            Gravity::Off => Ok(0.0),
            Gravity::Linear(gp) => Ok(gp * (a - a0)),
            Gravity::Table(t) => t.delta_g_hat(a0, a).ok_or_else(|| Error::Integration {
                t: f64::NAN,
                reason: format!("u1 = {a} ground variances left the tabulated range"),
            }),
            Gravity::Wide { lambda, ell2, w2 } => {
                let d = g_wide_antiderivative(a * ell2, &params) - g_wide_antiderivative(a0 * ell2, &params);
                Ok(lambda * d / (ell2 * w2))
            }
        }
    };

    let x_scale = ell2.sqrt();
    let p_scale = run.params.m * run.omega0 * x_scale;
    let y0 = [run.x0 / x_scale, run.p0 / p_scale, a0, 1.0 / a0 + gt0 / 2.0, 0.0];
    let tau_end = run.omega0 * run.t_end;
    let times: Vec<f64> = (0..run.samples)
        .map(|i| tau_end * i as f64 / (run.samples - 1) as f64)
        .collect();
    let opts = OdeOptions {
        rel_tol: run.tolerance,
        abs_tol: run.tolerance * 1e-3,
        ..Default::default()
    };
    let sol = integrate(
        |tau, y: &[f64], d: &mut [f64]| {
            if !(y[2] > 0.0) {
                return Err(Error::Integration {
                    t: tau / run.omega0,
                    reason: "width collapsed".into(),
                });
            }
            let dg = delta_g(y[2]).map_err(|e| match e {
                Error::Integration { reason, .. } => Error::Integration {
                    t: tau / run.omega0,
                    reason,
                },
                other => other,
            })?;
            d[0] = y[1];
            d[1] = -y[0];
            d[2] = y[4];
            d[3] = -y[4];
            d[4] = -2.0 * y[2] + 2.0 * y[3] + dg;
            Ok(())
        },
        0.0,
        &y0,
        &times,
        &opts,
    )?;
    let u2_shift = ell2 * w2;
    let states = sol
        .times
        .iter()
        .zip(&sol.states)
        .map(|(&tau, y)| MomentState {
            t: tau / run.omega0,
            x_mean: x_scale * y[0],
            p_mean: p_scale * y[1],
            u1: ell2 * y[2],
            u2: u2_shift * (y[3] - gt0 / 2.0) + vg0,
            u3: ell2 * run.omega0 * y[4],
        })
        .collect();
    Ok(Trajectory {
        states,
        omega0: run.omega0,
        stats: sol.stats,
        failure: sol.failure,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dephasing {
    /// Frequency ω of the internal oscillation, u₁ ∝ cos²(ωt) (rad/s).
    pub omega_internal: f64,
    /// (ω − ω₀)·t_end (rad).
    pub phase_lag: f64,
    pub crossings: usize,
}

/// Internal frequency from the zero crossings of u₁ − (max + min)/2.
pub fn extract_dephasing(traj: &Trajectory, omega0: f64) -> Result<Dephasing> {
    let st = &traj.states;
    if st.len() < 8 {
        return domain("trajectory too short");
    }
    let (lo, hi) = st
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), s| (l.min(s.u1), h.max(s.u1)));
    if !(hi > lo) {
        return domain("u1 does not oscillate");
    }
    let mid = 0.5 * (hi + lo);
    let v: Vec<f64> = st.iter().map(|s| s.u1 - mid).collect();
    let t: Vec<f64> = st.iter().map(|s| s.t).collect();
    let mut crossings = Vec::new();
    for i in 0..v.len() - 1 {
        if v[i] == 0.0 || v[i].signum() == v[i + 1].signum() {
            continue;
        }
        crossings.push(quadratic_root(&t, &v, i));
    }
    // u₁ oscillates at 2ω: two crossings per period π/ω
    if crossings.len() < 6 {
        return domain(format!(
            "trajectory spans fewer than three internal periods ({} crossings)",
            crossings.len()
        ));
    }
    let n = crossings.len() as f64;
    let kbar = (n - 1.0) / 2.0;
    let tbar = crossings.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, &tc) in crossings.iter().enumerate() {
        let dk = k as f64 - kbar;
        sxy += dk * (tc - tbar);
        sxx += dk * dk;
    }
    let spacing = sxy / sxx;
    let omega = PI / (2.0 * spacing);
    let t_end = t[t.len() - 1];
    Ok(Dephasing {
        omega_internal: omega,
        phase_lag: (omega - omega0) * t_end,
        crossings: crossings.len(),
    })
}

/// Root in [t_i, t_{i+1}] of the parabola through three neighbouring samples.
fn quadratic_root(t: &[f64], v: &[f64], i: usize) -> f64 {
    let linear = t[i] - v[i] * (t[i + 1] - t[i]) / (v[i + 1] - v[i]);
    let j = if i + 2 < v.len() { i } else if i > 0 { i - 1 } else { return linear };
    let (x0, x1, x2) = (t[j], t[j + 1], t[j + 2]);
    let (y0, y1, y2) = (v[j], v[j + 1], v[j + 2]);
    // Newton form
    let d1 = (y1 - y0) / (x1 - x0);
    let d2 = ((y2 - y1) / (x2 - x1) - d1) / (x2 - x0);
    let mut x = linear;
    for _ in 0..20 {
        let f = y0 + d1 * (x - x0) + d2 * (x - x0) * (x - x1);
        let fp = d1 + d2 * (2.0 * x - x0 - x1);
        if fp == 0.0 {
            break;
        }
        let step = f / fp;
        x -= step;
        if step.abs() < 1e-15 * x.abs().max(1e-300) {
            break;
        }
    }
    if x >= t[i] && x <= t[i + 1] {
        x
    } else {
        linear
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{ATOMIC_MASS_UNIT, SQRT_2_OVER_PI};
    use approx::assert_relative_eq;

    fn silicon_params(m_u: f64) -> CrystalParams {
        CrystalParams::new(Material::silicon(), m_u * ATOMIC_MASS_UNIT).unwrap()
    }

    #[test]
    fn narrow_limit_of_g_prime() {
        let si = Material::silicon();
        for family in [KernelFamily::Sphere, KernelFamily::Gaussian] {
            let model = KernelModel::atomic(family);
            let gp = g_prime(400.0, &model, &si).unwrap().value;
            let want = -4.0 * si.sn_frequency_sq(family);
            assert!((gp / want - 1.0).abs() < 0.01, "{family}: {gp} vs {want}");
        }
    }

    #[test]
    fn gaussian_g_prime_at_fifty() {
        let si = Material::silicon();
        let gp = g_prime(50.0, &KernelModel::atomic(KernelFamily::Gaussian), &si).unwrap().value;
        let want = -4.0 * si.sn_frequency_sq(KernelFamily::Gaussian);
        assert!((gp / want - 1.0).abs() < 0.01);
    }

    #[test]
    fn finite_alpha_weakens_g_prime() {
        let si = Material::silicon();
        for family in [KernelFamily::Sphere, KernelFamily::Gaussian] {
            let model = KernelModel::atomic(family);
            let gp = g_prime(3.0, &model, &si).unwrap().value;
            assert!(gp < 0.0);
            assert!(gp.abs() < 4.0 * si.sn_frequency_sq(family));
        }
    }

    #[test]
    fn k_integral_examples() {
        let k = k_integrals(1.0, 10.0).unwrap();
        assert_relative_eq!(k.k0, 20.0 * (-25.0f64).exp(), max_relative = 1e-14);
        let k = k_integrals(1.0, 1e3).unwrap();
        assert!((k.k2 / (64.0 * PI.sqrt()) - 1.0).abs() < 0.01, "{}", k.k2);
        let k = k_integrals(5.0, 10.0).unwrap();
        assert!(k.k3.abs() < 1e-8 * k.k1.abs());
        assert!(k_integrals(0.0, 10.0).is_err());
        assert!(k_integrals(1.0, 0.5).is_err());
    }

    #[test]
    fn k_split_reassembles_full_kernel() {
        let si = Material::silicon();
        for family in [KernelFamily::Sphere, KernelFamily::Gaussian] {
            let model = KernelModel::new(family, 3.0e4, 50.0).unwrap();
            for alpha in [0.05, 0.5, 2.0, 8.0] {
                let k = k_integrals(alpha, model.varrho).unwrap();
                let sum = match family {
                    KernelFamily::Sphere => k.sphere_sum(&model),
                    KernelFamily::Gaussian => k.gauss_sum(&model),
                };
                let direct = g_prime(alpha, &model, &si).unwrap().value / -g_prime_scale(&si);
                assert_relative_eq!(sum, direct, max_relative = 1e-8, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn intermediate_form_matches_full_kernel() {
        let si = Material::silicon();
        let a = (si.m_atom / si.bulk_density).cbrt();
        let frac = 4.0 * PI / 3.0 * (si.sigma / a).powi(3);
        for family in [KernelFamily::Sphere, KernelFamily::Gaussian] {
            let varrho: f64 = 1e3;
            let model = KernelModel::new(family, frac * varrho.powi(3), varrho).unwrap();
            for alpha in [1.0, 2.0, 5.0, 10.0] {
                let full = g_prime(alpha, &model, &si).unwrap().value;
                let k = k_integrals(alpha, varrho).unwrap();
                // the lattice curvature β₂k⁽²⁾ stays at the 10⁻³ level for silicon
                let lattice = model.beta(2) * k.k2;
                let int = -g_prime_scale(&si) * (k.intermediate_sum(family) + lattice);
                assert!((full / int - 1.0).abs() < 1e-6, "{family} {alpha}: {full} {int}");
                let bare = -g_prime_scale(&si) * k.intermediate_sum(family);
                assert!((full / bare - 1.0).abs() < 5e-3);
            }
        }
    }

    #[test]
    fn g_functions_are_consistent() {
        let si = Material::silicon();
        let model = KernelModel::new(KernelFamily::Sphere, 2.0e4, 40.0).unwrap();
        for alpha in [0.3, 2.0, 12.0] {
            let g = g_value(alpha, &model, &si).unwrap().value;
            let v = vg_mean(alpha, &model, &si).unwrap().value;
            let gt = g_tilde(alpha, &model, &si).unwrap().value;
            assert_relative_eq!(gt, g + 2.0 * v, max_relative = 1e-7);
            // dg/du₁ by central difference in α
            let h = 1e-4 * alpha;
            let dg = (g_value(alpha + h, &model, &si).unwrap().value - g_value(alpha - h, &model, &si).unwrap().value)
                / (2.0 * h);
            let gp = g_prime(alpha, &model, &si).unwrap().value;
            assert_relative_eq!(-alpha.powi(3) / (8.0 * si.sigma * si.sigma) * dg, gp, max_relative = 1e-5);
        }
    }

    #[test]
    fn vg_mean_matches_ground_state_shift() {
        let si = Material::silicon();
        let params = silicon_params(1e15);
        let w0 = 62.83;
        let alpha_s = si.alpha(params.m, w0);
        for family in [KernelFamily::Sphere, KernelFamily::Gaussian] {
            let model = KernelModel::from_params(&params, family);
            let f0 = crate::spectrum::f_n_full(0, alpha_s, &model).unwrap().total();
            let de = -G * HBAR * si.m_atom / (4.0 * si.sigma.powi(3) * w0) * f0;
            let v = vg_mean(alpha_s * std::f64::consts::SQRT_2, &model, &si).unwrap().value;
            assert_relative_eq!(params.m * v, de, max_relative = 1e-9);
        }
    }

    #[test]
    fn wide_asymptote_properties() {
        let p = silicon_params(1e10);
        let u1 = 1e-14;
        let r = g_prime_wide(2.0 * u1, &p).unwrap() / g_prime_wide(u1, &p).unwrap();
        let s2 = p.material.sigma.powi(2);
        let want = 2f64.powf(-1.5) * (2.0 * u1 / s2).ln() / (u1 / s2).ln();
        assert_relative_eq!(r, want, max_relative = 1e-12);
        assert!(g_prime_wide(u1, &p).unwrap() < 0.0);
        assert!(g_prime_wide(-1.0, &p).is_err());
    }

    #[test]
    fn wide_full_kernel_is_point_mass() {
        // for √u₁ ≫ R the kernel is (N+1)/(2ζ) and −g′/(α³/2) → N·E₁-type log
        // growth; compare successive decades against d/d ln α of the
        // point-mass form, −pref·N·α³(−1 − 3 ln α + …)
        let p = silicon_params(1e10);
        let model = KernelModel::from_params(&p, KernelFamily::Sphere);
        let f = |u1: f64| {
            let a = alpha_from_u1(u1, p.material.sigma);
            g_prime(a, &model, &p.material).unwrap().value / (G * p.m * u1.powf(-1.5))
        };
        let r = p.radius;
        let step = f((1e4 * r).powi(2)) - f((1e3 * r).powi(2));
        // −ln(u₁)/(4√π) per unit ln u₁
        let want = -(100f64).ln() / (4.0 * PI.sqrt());
        assert_relative_eq!(step, want, max_relative = 1e-3);
    }

    #[test]
    fn wide_crossover_order_of_magnitude() {
        let p = silicon_params(1e10);
        let model = KernelModel::from_params(&p, KernelFamily::Sphere);
        let u1 = p.radius * p.radius;
        let full = g_prime(alpha_from_u1(u1, p.material.sigma), &model, &p.material).unwrap().value;
        let asym = g_prime_wide(u1, &p).unwrap();
        // the asymptote's log runs from σ rather than R and overshoots here
        let ratio = full / asym;
        assert!(ratio > 0.1 && ratio < 1.0, "{ratio}");
    }

    #[test]
    fn spline_table_accuracy() {
        let si = Material::silicon();
        let model = KernelModel::atomic(KernelFamily::Sphere);
        let w2 = 100.0;
        let t = GPrimeTable::build(|a| g_prime(a, &model, &si).map(|r| r.value / w2), 1.0, 40.0, 10.0, 1e-4).unwrap();
        assert!(t.probe_error < 1e-4);
        // integral of the interpolant against direct quadrature of ĝ′ in a
        let (a0, a1) = (0.5, 2.0);
        let direct = crate::quadrature::integrate_1d(
            |a| g_prime(10.0 / a.sqrt(), &model, &si).unwrap().value / w2,
            a0,
            a1,
            1e-9,
            0.0,
        )
        .unwrap()
        .value;
        assert_relative_eq!(t.delta_g_hat(a0, a1).unwrap(), direct, max_relative = 1e-5);
        assert!(t.gp_hat(1000.0).is_none());
        assert!(t.delta_g_hat(1.0, 1e-6).is_none());
    }

    #[test]
    fn sweep_plateau_and_monotone() {
        let si = Material::silicon();
        let alphas: Vec<f64> = (0..=20).map(|i| 10f64.powf(i as f64 / 10.0)).collect();
        let g = sweep_omega_sn(&alphas, &KernelModel::atomic(KernelFamily::Gaussian), &si).unwrap();
        let w = g.column("omega_sn_sq").unwrap();
        assert!(w.windows(2).all(|p| p[1] > p[0]));
        assert!((w[20] / 2.4e-3 - 1.0).abs() < 0.01, "{}", w[20]);
        let s = sweep_omega_sn(&alphas, &KernelModel::atomic(KernelFamily::Sphere), &si).unwrap();
        let w = s.column("omega_sn_sq").unwrap();
        assert!(w.windows(2).all(|p| p[1] > p[0]));
        assert!(sweep_omega_sn(&[], &KernelModel::atomic(KernelFamily::Sphere), &si).is_err());
    }

    fn free_run(kappa: f64) -> GaussianTrapRun {
        let mut run = GaussianTrapRun::new(silicon_params(1e15), 2.0 * PI * 10.0, KernelFamily::Sphere, kappa);
        run.gravity_scale = 0.0;
        run
    }

    #[test]
    fn gravity_free_closed_form() {
        let run = free_run(2.0);
        let traj = evolve_moments(&run).unwrap().into_result().unwrap();
        let ell2 = run.ground_variance();
        let k2 = run.kappa * run.kappa;
        let mut worst: f64 = 0.0;
        for s in &traj.states {
            let wt = run.omega0 * s.t;
            let want = ell2 * (k2 * wt.cos().powi(2) + wt.sin().powi(2) / k2);
            worst = worst.max((s.u1 / want - 1.0).abs());
            // Robertson equality for a pure Gaussian
            let det = s.u1 * s.u2 - s.u3 * s.u3 / 4.0;
            let bound = HBAR * HBAR / (4.0 * run.params.m.powi(2));
            assert!((det / bound - 1.0).abs() < 1e-6);
        }
        assert!(worst < 1e-6, "{worst}");
        assert_eq!(traj.states.len(), run.samples);
    }

    #[test]
    fn first_moments_ignore_gravity() {
        let mut run = GaussianTrapRun::new(silicon_params(1e15), 2.0 * PI * 10.0, KernelFamily::Sphere, 1.3);
        run.gravity_scale = 1e4;
        run.samples = 401;
        run.x0 = 3e-13;
        run.p0 = 2e-24;
        let with = evolve_moments(&run).unwrap().into_result().unwrap();
        let m = run.params.m;
        for s in &with.states {
            let wt = run.omega0 * s.t;
            let want = run.x0 * wt.cos() + run.p0 / (m * run.omega0) * wt.sin();
            assert!((s.x_mean - want).abs() < 1e-7 * run.x0, "{} {}", s.x_mean, want);
        }
    }

    #[test]
    fn narrow_frequency_shift() {
        // α ≈ 50 with the shift boosted so it is resolvable
        let si = Material::silicon();
        let w0 = 2.0 * PI * 10.0;
        let m = si.mass_for_alpha(50.0, w0);
        let mut run = GaussianTrapRun::new(CrystalParams::new(si.clone(), m).unwrap(), w0, KernelFamily::Sphere, 1.2);
        run.regime = Regime::Narrow;
        run.gravity_scale = 1e4;
        let model = KernelModel::from_params(&run.params, KernelFamily::Sphere);
        let wsn2 = -run.gravity_scale * g_prime_narrow(&model, &si) / 4.0;
        let traj = evolve_moments(&run).unwrap().into_result().unwrap();
        let d = extract_dephasing(&traj, w0).unwrap();
        let want = (w0 * w0 + wsn2).sqrt();
        assert_relative_eq!(d.omega_internal, want, max_relative = 1e-6);
        let first_order = wsn2 * run.t_end / (2.0 * w0);
        assert!((d.phase_lag / first_order - 1.0).abs() < 0.01);
    }

    #[test]
    fn full_kernel_run_tracks_narrow_value() {
        let si = Material::silicon();
        let w0 = 2.0 * PI * 10.0;
        let m = si.mass_for_alpha(100.0, w0);
        let mut run = GaussianTrapRun::new(CrystalParams::new(si.clone(), m).unwrap(), w0, KernelFamily::Gaussian, 1.05);
        run.gravity_scale = 1e4;
        let traj = evolve_moments(&run).unwrap().into_result().unwrap();
        assert!(traj.warnings.is_empty(), "{:?}", traj.warnings);
        let d = extract_dephasing(&traj, w0).unwrap();
        // dynamic α = √2·100; the Gaussian plateau is reached to < 0.1 %
        let alpha_dyn = 100.0 * std::f64::consts::SQRT_2;
        let model = KernelModel::from_params(&run.params, KernelFamily::Gaussian);
        let gp = run.gravity_scale * g_prime(alpha_dyn, &model, &si).unwrap().value;
        let want = (w0 * w0 - gp / 4.0).sqrt();
        assert_relative_eq!(d.omega_internal, want, max_relative = 1e-4);
    }

    #[test]
    fn dephasing_grows_with_alpha() {
        let si = Material::silicon();
        let w0 = 2.0 * PI * 10.0;
        let lag = |alpha: f64| {
            let m = si.mass_for_alpha(alpha, w0);
            let mut run =
                GaussianTrapRun::new(CrystalParams::new(si.clone(), m).unwrap(), w0, KernelFamily::Sphere, 1.2);
            run.regime = Regime::Intermediate;
            run.gravity_scale = 1e4;
            let traj = evolve_moments(&run).unwrap().into_result().unwrap();
            extract_dephasing(&traj, w0).unwrap().phase_lag
        };
        let (small, large) = (lag(3.0), lag(50.0));
        assert!(small > 0.0 && small < large, "{small} {large}");
    }

    #[test]
    fn no_gravity_no_dephasing() {
        let run = free_run(1.5);
        let traj = evolve_moments(&run).unwrap();
        let d = extract_dephasing(&traj, run.omega0).unwrap();
        assert!(d.phase_lag.abs() < 1e-6, "{}", d.phase_lag);
        assert!(d.crossings >= 38);
    }

    #[test]
    fn short_trajectory_rejected() {
        let mut run = free_run(1.5);
        run.t_end = 0.5 * 2.0 * PI / run.omega0;
        let traj = evolve_moments(&run).unwrap();
        assert!(extract_dephasing(&traj, run.omega0).is_err());
    }

    #[test]
    fn invalid_runs() {
        let mut run = free_run(0.0);
        assert!(evolve_moments(&run).is_err());
        run.kappa = 1.0;
        run.samples = 1;
        assert!(evolve_moments(&run).is_err());
    }

    #[test]
    fn gaussian_narrow_coefficient() {
        let si = Material::silicon();
        let gp = g_prime_narrow(&KernelModel::atomic(KernelFamily::Gaussian), &si);
        assert_relative_eq!(gp, -4.0 * G * si.m_atom / si.sigma.powi(3) * SQRT_2_OVER_PI / 3.0);
    }
}
