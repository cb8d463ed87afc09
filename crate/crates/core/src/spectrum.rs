//! First-order gravitational shifts of the trap levels.
//!
//! The shift of level n is ΔE_n = −(G ħ m_atom)/(4σ³ω₀) f_n(α, ϱ) with
//!
//! f_n(α, ϱ) = α³√(2/π) ∫₀^∞ dζ e^{−α²ζ²/2} P_n(αζ) i(ζ, ϱ)
//!           = α²√(2/π) ∫₀^∞ du e^{−u²/2} P_n(u) i(u/α, ϱ).
//!
//! All integrals here are done in the u = αζ variable.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num::BigRational;
use rayon::prelude::*;

use crate::constants::{G, HBAR, SQRT_2_OVER_PI};
use crate::error::{domain, Error, Result};
use crate::kernels::{gauss_self, KernelFamily, KernelModel};
use crate::params::{CrystalParams, Material};
use crate::polynomials::{p_polynomial, p_stationary_points, p_value, MAX_P_DEGREE};
use crate::quadrature::{integrate_1d_breaks, QuadResult};
use crate::sweep::{salvage, SweepResult};

/// Relative tolerance of the spectral integrals.
pub const SPECTRUM_REL_TOL: f64 = 1e-10;

/// Past this u the weight e^{−u²/2}P_n(u) is below 10⁻²⁸⁰ for every n ≤ 14.
const U_MAX: f64 = 40.0;

/// Narrow-regime threshold on α used for classification and warnings.
pub const NARROW_ALPHA: f64 = 20.0;
/// Smallest α for which the intermediate forms are trusted.
pub const INTERMEDIATE_MIN_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Full kernel with the lattice terms.
    Full,
    /// Quadratic expansion of the kernel, α ≫ 1.
    Narrow,
    /// ϱ-independent self-term approximation, α of order one.
    Intermediate,
    /// Logarithmic wide-state limit, width ≫ R.
    Wide,
    /// Chosen from α and ϱ by [`classify_regime`].
    Auto,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Full => "full",
            Regime::Narrow => "narrow",
            Regime::Intermediate => "intermediate",
            Regime::Wide => "wide",
            Regime::Auto => "auto",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Regime::Full),
            "narrow" => Ok(Regime::Narrow),
            "intermediate" => Ok(Regime::Intermediate),
            "wide" => Ok(Regime::Wide),
            "auto" => Ok(Regime::Auto),
            other => Err(Error::Domain(format!("unknown regime '{other}'"))),
        }
    }
}

/// Picks the regime from the ground-state width ℓ = 2σ/α.
///
/// Widths between σ and R ("semi-wide") have no reduced form and are
/// reported as unsupported.
pub fn classify_regime(alpha: f64, varrho: f64) -> Result<Regime> {
    if !(alpha > 0.0) || !(varrho >= 1.0) {
        return domain(format!("need alpha > 0 and varrho >= 1, got {alpha}, {varrho}"));
    }
    if alpha >= NARROW_ALPHA {
        Ok(Regime::Narrow)
    } else if alpha >= INTERMEDIATE_MIN_ALPHA {
        Ok(Regime::Intermediate)
    } else if alpha * varrho < 2.0 {
        Ok(Regime::Wide)
    } else {
        Err(Error::Unsupported(format!(
            "semi-wide regime (sigma < width < R) at alpha = {alpha}, varrho = {varrho}"
        )))
    }
}

fn check_level(n: usize) -> Result<()> {
    if n > MAX_P_DEGREE {
        return Err(Error::Unsupported(format!("level {n} exceeds {MAX_P_DEGREE}")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        domain(format!("alpha must be positive, got {alpha}"))
    }
}

fn stationary_points(n: usize) -> &'static [f64] {
    static CACHE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    &CACHE.get_or_init(|| (0..=MAX_P_DEGREE).into_par_iter().map(p_stationary_points).collect())[n]
}

/// α²√(2/π) ∫₀^∞ du e^{−u²/2} P_n(u) k(u/α).
///
/// `kinks` lists ζ values where `k` is not smooth. Panels are also split at
/// the stationary points of P_n and, below u = 1, on a geometric ladder so
/// that 1/ζ-type kernels are resolved for small α.
pub fn f_n_with_kernel<K>(n: usize, alpha: f64, kernel: K, kinks: &[f64]) -> Result<QuadResult>
where
    K: Fn(f64) -> f64,
{
    check_level(n)?;
    check_alpha(alpha)?;
    let mut pts: Vec<f64> = vec![0.0, U_MAX];
    pts.extend(kinks.iter().map(|z| z * alpha));
    pts.extend_from_slice(stationary_points(n));
    if let Some(&lo) = pts.iter().filter(|&&u| u > 0.0).min_by(|a, b| a.total_cmp(b)) {
        let mut u = lo * 4.0;
        while u < 1.0 {
            pts.push(u);
            u *= 4.0;
        }
    }
    pts.retain(|&u| (0.0..=U_MAX).contains(&u));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let scale = alpha * alpha * SQRT_2_OVER_PI;
    let integrand = |u: f64| (-0.5 * u * u).exp() * p_value(n, u) * kernel(u / alpha);
    let abs_tol = 1e-15;
    let r = integrate_1d_breaks(integrand, &pts, SPECTRUM_REL_TOL, abs_tol).map_err(|e| match e {
        Error::Convergence { best } => Error::Convergence {
            best: QuadResult {
                value: scale * best.value,
                error_estimate: scale * best.error_estimate,
                ..best
            },
        },
        other => other,
    })?;
    Ok(QuadResult {
        value: scale * r.value,
        error_estimate: scale * r.error_estimate,
        evaluations: r.evaluations,
    })
}

/// f_n split into the analytic n-independent constant and the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FnValue {
    /// 6/5·β₀·α², identical for all n.
    pub constant: f64,
    /// Remaining part by quadrature.
    pub variable: QuadResult,
}

impl FnValue {
    pub fn total(&self) -> f64 {
        self.constant + self.variable.value
    }
}

/// f_n(α, ϱ) with the full crystalline kernel.
///
/// The constant 6/5·β₀ that the kernel carries for ζ ≤ ϱ integrates to
/// 6/5·β₀·α² exactly (the P_n are normalised), so it is returned separately
/// and subtracted from the integrand everywhere; level differences then
/// never cancel two large numbers.
pub fn f_n_full(n: usize, alpha: f64, model: &KernelModel) -> Result<FnValue> {
    let c = model.constant_offset();
    // i − c everywhere; i_reduced already drops c inside ϱ
    let kernel = |z: f64| model.i_reduced(z) - if z > model.varrho { c } else { 0.0 };
    let variable = f_n_with_kernel(n, alpha, kernel, &model.branch_points())?;
    Ok(FnValue {
        constant: c * alpha * alpha,
        variable,
    })
}

/// The pieces of the ϱ → ∞ split of f_n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitTerms {
    /// f⁽⁰⁾ = α².
    pub f0: f64,
    /// Sphere: polynomial part −2ζ² + 3/2ζ³ − 1/5ζ⁵ on ζ ≤ 1.
    pub f1: f64,
    /// Sphere: 6/5 times the weight on ζ ≤ 1.
    pub f1c: f64,
    /// Lattice curvature term, −2(2n+1) in the limit; enters with Nσ³/R³.
    pub f2: f64,
    /// Sphere: 1/(2ζ) tail on ζ ≥ 1.
    pub f4: f64,
    /// Gaussian: erf(√2ζ)/(2ζ) − √(2/π) over the whole line.
    pub f1g: f64,
    pub error_estimate: f64,
}

/// Evaluates every term of the split for the given atomic profile; terms
/// belonging to the other profile are zero.
pub fn split_terms(n: usize, alpha: f64, family: KernelFamily) -> Result<SplitTerms> {
    let mut t = SplitTerms {
        f0: alpha * alpha,
        f1: 0.0,
        f1c: 0.0,
        f2: -2.0 * (2 * n + 1) as f64,
        f4: 0.0,
        f1g: 0.0,
        error_estimate: 0.0,
    };
    match family {
        KernelFamily::Sphere => {
            let poly = |z: f64| {
                if z <= 1.0 {
                    let z2 = z * z;
                    -z2 * (2.0 - z * (1.5 - 0.2 * z2))
                } else {
                    0.0
                }
            };
            let inner = |z: f64| if z <= 1.0 { 1.2 } else { 0.0 };
            let tail = |z: f64| if z > 1.0 { 0.5 / z } else { 0.0 };
            let a = f_n_with_kernel(n, alpha, poly, &[1.0])?;
            let b = f_n_with_kernel(n, alpha, inner, &[1.0])?;
            let c = f_n_with_kernel(n, alpha, tail, &[1.0])?;
            t.f1 = a.value;
            t.f1c = b.value;
            t.f4 = c.value;
            t.error_estimate = a.error_estimate + b.error_estimate + c.error_estimate;
        }
        KernelFamily::Gaussian => {
            let r = f_n_with_kernel(n, alpha, |z| gauss_self(z) - SQRT_2_OVER_PI, &[])?;
            t.f1g = r.value;
            t.error_estimate = r.error_estimate;
        }
    }
    Ok(t)
}

/// ϱ-independent approximation of f_n without its n-independent constant.
///
/// Sphere: the single-atom kernel 6/5 − 2ζ² + 3/2ζ³ − 1/5ζ⁵ on ζ ≤ 1 and
/// 1/(2ζ) beyond, i.e. f⁽¹⁾ + f⁽⁴⁾ plus the 6/5 weight on ζ ≤ 1, which is
/// n-dependent for α of order one. Gaussian: f⁽¹ᵍ⁾.
pub fn f_n_intermediate(n: usize, alpha: f64, family: KernelFamily) -> Result<QuadResult> {
    let model = KernelModel::atomic(family);
    match family {
        KernelFamily::Sphere => f_n_with_kernel(n, alpha, |z| model.i(z), &[1.0]),
        KernelFamily::Gaussian => {
            f_n_with_kernel(n, alpha, |z| model.i(z) - SQRT_2_OVER_PI, &[])
        }
    }
}

/// Quadratic-kernel asymptote of f_n for α ≫ 1.
pub fn f_n_narrow(n: usize, alpha: f64, model: &KernelModel) -> f64 {
    let a2 = alpha * alpha;
    let l = (2 * n + 1) as f64;
    match model.family {
        KernelFamily::Sphere => 1.2 * model.gamma(0) * a2 - 2.0 * model.gamma(2) * l,
        KernelFamily::Gaussian => {
            1.2 * model.beta(0) * a2 - 2.0 * model.beta(2) * l
                + SQRT_2_OVER_PI * (a2 - (2.0 + 4.0 * n as f64) / 3.0)
        }
    }
}

/// Level difference of [`f_n_narrow`], without the α² terms that cancel.
pub fn f_tilde_narrow(n1: usize, n2: usize, model: &KernelModel) -> f64 {
    let dn = n2 as f64 - n1 as f64;
    match model.family {
        KernelFamily::Sphere => -4.0 * model.gamma(2) * dn,
        KernelFamily::Gaussian => -(4.0 * model.beta(2) + 4.0 / 3.0 * SQRT_2_OVER_PI) * dn,
    }
}

/// Wide-state asymptote f_n ≈ −N/√(2π) F_n α³ ln α.
pub fn f_n_wide(n: usize, alpha: f64, n_atoms: f64) -> Result<f64> {
    let f = wide_coefficient_f64(n)?;
    Ok(-n_atoms / (2.0 * std::f64::consts::PI).sqrt() * f * alpha.powi(3) * alpha.ln())
}

/// F_n = P_n(0), the level weights of the wide-state logarithm.
pub fn wide_coefficients(n: usize) -> Result<BigRational> {
    Ok(p_polynomial(n)?.at_zero())
}

fn wide_coefficient_f64(n: usize) -> Result<f64> {
    use num::ToPrimitive;
    Ok(wide_coefficients(n)?.to_f64().expect("finite rational"))
}

/// f̃_{n1 n2} = f_{n2} − f_{n1} in the requested regime. Constants common to
/// all levels are left out.
pub fn f_tilde(n1: usize, n2: usize, alpha: f64, model: &KernelModel, regime: Regime) -> Result<QuadResult> {
    check_level(n1)?;
    check_level(n2)?;
    check_alpha(alpha)?;
    let regime = match regime {
        Regime::Auto => classify_regime(alpha, model.varrho)?,
        r => r,
    };
    let pair = |a: QuadResult, b: QuadResult| QuadResult {
        value: b.value - a.value,
        error_estimate: a.error_estimate + b.error_estimate,
        evaluations: a.evaluations + b.evaluations,
    };
    let exact = |v: f64| QuadResult {
        value: v,
        error_estimate: 0.0,
        evaluations: 1,
    };
    match regime {
        Regime::Full => Ok(pair(
            f_n_full(n1, alpha, model)?.variable,
            f_n_full(n2, alpha, model)?.variable,
        )),
        Regime::Intermediate => Ok(pair(
            f_n_intermediate(n1, alpha, model.family)?,
            f_n_intermediate(n2, alpha, model.family)?,
        )),
        Regime::Narrow => Ok(exact(f_tilde_narrow(n1, n2, model))),
        Regime::Wide => Ok(exact(
            f_n_wide(n2, alpha, model.n_atoms)? - f_n_wide(n1, alpha, model.n_atoms)?,
        )),
        Regime::Auto => unreachable!(),
    }
}

/// ΔE_n in joules for a narrow state, from the quadratic potential.
pub fn energy_shift_narrow(n: usize, params: &CrystalParams, omega0: f64, family: KernelFamily) -> f64 {
    let mat = &params.material;
    let w2 = mat.sn_frequency_sq(family);
    let gamma0 = match family {
        KernelFamily::Sphere => params.gamma(0),
        KernelFamily::Gaussian => {
            2.5 + 1.5 * (2.0 * std::f64::consts::PI).sqrt() * params.beta(0)
        }
    };
    let level = (n as f64 + 0.5) * HBAR / (params.m * omega0);
    params.m * w2 * (-1.2 * gamma0 * mat.sigma * mat.sigma + level)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumQuery {
    pub params: CrystalParams,
    pub omega0: f64,
    pub family: KernelFamily,
    pub regime: Regime,
    /// Multiplies G; 0 switches gravity off.
    pub gravity_scale: f64,
}

impl SpectrumQuery {
    pub fn new(params: CrystalParams, omega0: f64, family: KernelFamily, regime: Regime) -> Self {
        Self {
            params,
            omega0,
            family,
            regime,
            gravity_scale: 1.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.params.material.alpha(self.params.m, self.omega0)
    }

    pub fn model(&self) -> KernelModel {
        KernelModel::from_params(&self.params, self.family)
    }

    /// mω₀R²/ħ, which must be small for the wide-state limit.
    pub fn wide_parameter(&self) -> f64 {
        self.params.m * self.omega0 * self.params.radius.powi(2) / HBAR
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEnergy {
    /// E/(ħω₀).
    pub value: f64,
    /// The gravitational part of `value`.
    pub gravitational_part: f64,
    pub regime: Regime,
    pub warnings: Vec<String>,
}

/// Transition energy between levels n1 and n2 in units of ħω₀.
pub fn transition_energy(n1: usize, n2: usize, q: &SpectrumQuery) -> Result<TransitionEnergy> {
    if n1 >= n2 {
        return domain(format!("transition needs n1 < n2, got {n1}, {n2}"));
    }
    if !(q.omega0 > 0.0) {
        return domain("trap frequency must be positive");
    }
    let alpha = q.alpha();
    let model = q.model();
    let regime = match q.regime {
        Regime::Auto => classify_regime(alpha, model.varrho)?,
        r => r,
    };
    let mut warnings = Vec::new();
    let dn = (n2 - n1) as f64;
    let g = G * q.gravity_scale;
    let gravitational_part = match regime {
        Regime::Wide => {
            let wp = q.wide_parameter();
            if wp >= 1.0 {
                warnings.push(format!(
                    "wide-state formula used with m*omega0*R^2/hbar = {wp:.3e} >= 1 (width below R)"
                ));
            }
            let m = q.params.m;
            let pre = g * (2.0 * m.powi(5) / (std::f64::consts::PI * HBAR.powi(3) * q.omega0)).sqrt();
            pre * alpha.ln() * (wide_coefficient_f64(n2)? - wide_coefficient_f64(n1)?)
        }
        _ => {
            if regime == Regime::Narrow && alpha < NARROW_ALPHA {
                warnings.push(format!("narrow-state formula used at alpha = {alpha:.4}"));
            }
            if regime == Regime::Intermediate && !(INTERMEDIATE_MIN_ALPHA..=100.0).contains(&alpha) {
                warnings.push(format!("intermediate formula used at alpha = {alpha:.4}"));
            }
            let mat = &q.params.material;
            let pre = g * mat.m_atom / (4.0 * mat.sigma.powi(3) * q.omega0 * q.omega0);
            if pre == 0.0 {
                0.0
            } else {
                -pre * f_tilde(n1, n2, alpha, &model, regime)?.value
            }
        }
    };
    Ok(TransitionEnergy {
        value: dn + gravitational_part,
        gravitational_part,
        regime,
        warnings,
    })
}

/// Rows (α, f̃_{01}, …, f̃_{n_max−1, n_max}) with their summed error
/// estimates.
pub fn sweep_spectrum(alphas: &[f64], n_max: usize, model: &KernelModel, regime: Regime) -> Result<SweepResult> {
    if alphas.is_empty() {
        return domain("alpha grid is empty");
    }
    if n_max == 0 {
        return domain("need at least two levels");
    }
    check_level(n_max)?;
    let mut columns = vec!["alpha".to_string()];
    for n in 0..n_max {
        columns.push(format!("f{}{}", n, n + 1));
    }
    for n in 0..n_max {
        columns.push(format!("err{}{}", n, n + 1));
    }
    let rows: Vec<(Vec<f64>, Option<String>)> = alphas
        .par_iter()
        .map(|&alpha| {
            let mut vals = vec![alpha];
            let mut errs = Vec::new();
            let mut msgs = Vec::new();
            for n in 0..n_max {
                match f_tilde(n, n + 1, alpha, model, regime) {
                    Ok(r) => {
                        vals.push(r.value);
                        errs.push(r.error_estimate);
                    }
                    Err(e) => {
                        let (v, err, msg) = salvage(&e);
                        vals.push(v);
                        errs.push(err);
                        msgs.push(format!("f{}{}: {msg}", n, n + 1));
                    }
                }
            }
            vals.extend(errs);
            let msg = if msgs.is_empty() { None } else { Some(msgs.join(" | ")) };
            (vals, msg)
        })
        .collect();
    let mut out = SweepResult::new(columns);
    for (v, e) in rows {
        out.push(v, e);
    }
    Ok(out)
}

/// Spectral pre-factor and the masses needed for given α values, on a grid
/// of trap frequencies.
pub fn mass_frequency_table(materials: &[Material], omegas: &[f64], alphas: &[f64]) -> Result<SweepResult> {
    if materials.is_empty() || omegas.is_empty() {
        return domain("need at least one material and one frequency");
    }
    let mut columns = vec!["omega0".to_string()];
    for mat in materials {
        columns.push(format!("prefactor_{}", mat.name));
        for a in alphas {
            columns.push(format!("mass_kg_{}_alpha{}", mat.name, a));
        }
    }
    let mut out = SweepResult::new(columns);
    for &w in omegas {
        if !(w > 0.0) {
            return domain(format!("trap frequency must be positive, got {w}"));
        }
        let mut row = vec![w];
        for mat in materials {
            row.push(mat.spectral_prefactor(w));
            for &a in alphas {
                row.push(mat.mass_for_alpha(a, w));
            }
        }
        out.push(row, None);
    }
    Ok(out)
}

/// Wide-state pre-factor G√(2m⁵/(πħ³ω₀))·ln α and transition energies
/// between the lowest `n_max + 1` levels over a mass grid. Rows stop at the
/// mass where the ground-state width reaches R.
pub fn wide_table(material: &Material, omega0: f64, masses: &[f64], n_max: usize) -> Result<SweepResult> {
    if masses.is_empty() {
        return domain("mass grid is empty");
    }
    check_level(n_max)?;
    let mut columns = vec!["mass_kg".to_string(), "alpha".into(), "prefactor".into()];
    for n in 0..n_max {
        columns.push(format!("e{}{}", n, n + 1));
    }
    let mut out = SweepResult::new(columns);
    for &m in masses {
        let params = CrystalParams::new(material.clone(), m)?;
        let q = SpectrumQuery::new(params, omega0, KernelFamily::Sphere, Regime::Wide);
        if q.wide_parameter() >= 1.0 {
            break;
        }
        let alpha = q.alpha();
        let pre = G * (2.0 * m.powi(5) / (std::f64::consts::PI * HBAR.powi(3) * omega0)).sqrt() * alpha.ln();
        let mut row = vec![m, alpha, pre];
        for n in 0..n_max {
            row.push(transition_energy(n, n + 1, &q)?.gravitational_part);
        }
        out.push(row, None);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::ATOMIC_MASS_UNIT;
    use approx::assert_relative_eq;
    use num::ToPrimitive;

    fn realistic(varrho: f64, family: KernelFamily) -> KernelModel {
        // silicon-like lattice fraction N σ³/R³ = (4π/3)(σ/a)³
        let si = Material::silicon();
        let a = (si.m_atom / si.bulk_density).cbrt();
        let frac = 4.0 * std::f64::consts::PI / 3.0 * (si.sigma / a).powi(3);
        KernelModel::new(family, frac * varrho.powi(3), varrho).unwrap()
    }

    #[test]
    fn unit_kernel_gives_alpha_squared() {
        for n in 0..=6 {
            for alpha in [0.5, 3.0, 40.0] {
                let r = f_n_with_kernel(n, alpha, |_| 1.0, &[]).unwrap();
                assert_relative_eq!(r.value, alpha * alpha, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn full_matches_narrow_asymptote_at_large_alpha() {
        for family in [KernelFamily::Sphere, KernelFamily::Gaussian] {
            let model = realistic(1e4, family);
            let alpha = 200.0;
            let full = f_n_full(0, alpha, &model).unwrap().total();
            let narrow = f_n_narrow(0, alpha, &model);
            assert_relative_eq!(full, narrow, max_relative = 1e-3);
        }
    }

    #[test]
    fn gaussian_narrow_difference() {
        let model = realistic(1e4, KernelFamily::Gaussian);
        let r = f_tilde(0, 1, 50.0, &model, Regime::Full).unwrap();
        let limit = -4.0 / 3.0 * SQRT_2_OVER_PI;
        assert!((r.value - limit).abs() < 0.02 * limit.abs(), "{}", r.value);
    }

    #[test]
    fn intermediate_matches_full_differences() {
        for family in [KernelFamily::Sphere, KernelFamily::Gaussian] {
            let model = realistic(1e4, family);
            for alpha in [1.0, 2.0, 5.0, 10.0] {
                for n in 1..=3 {
                    let full = f_tilde(0, n, alpha, &model, Regime::Full).unwrap().value;
                    let int = f_tilde(0, n, alpha, &model, Regime::Intermediate).unwrap().value;
                    // the lattice adds −2β₂ζ² inside the sphere, plus β₃ζ³ terms of order 1e-5
                    let lattice = -4.0 * model.beta(2) * n as f64;
                    assert!(
                        (full - int - lattice).abs() <= 2e-5,
                        "{family} alpha={alpha} n={n}: {full} vs {int}"
                    );
                }
            }
        }
    }

    #[test]
    fn split_terms_reassemble() {
        for n in 0..3 {
            let alpha = 2.0;
            let t = split_terms(n, alpha, KernelFamily::Sphere).unwrap();
            let direct = f_n_intermediate(n, alpha, KernelFamily::Sphere).unwrap().value;
            assert_relative_eq!(t.f1 + t.f1c + t.f4, direct, max_relative = 1e-9);
            assert_eq!(t.f0, 4.0);
            let g = split_terms(n, alpha, KernelFamily::Gaussian).unwrap();
            let direct = f_n_intermediate(n, alpha, KernelFamily::Gaussian).unwrap().value;
            assert_relative_eq!(g.f1g, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn intermediate_reference_values() {
        // independent scipy evaluation of the sphere and Gaussian forms
        let s = |n| f_n_intermediate(n, 2.0, KernelFamily::Sphere).unwrap().value;
        assert!((s(1) - s(0) - -0.759_202_494_186_426_2).abs() < 1e-8);
        assert!((s(2) - s(1) - -0.343_727_415_829_545_8).abs() < 1e-8);
        assert!((s(4) - s(3) - -0.156_566_266_178_259_2).abs() < 1e-8);
        let g = |n| f_n_intermediate(n, 2.0, KernelFamily::Gaussian).unwrap().value;
        assert!((g(1) - g(0) - -0.421_139_585_608_456_1).abs() < 1e-8);
        assert!((g(4) - g(3) - -0.110_734_369_782_167_9).abs() < 1e-8);
    }

    #[test]
    fn regime_consistency_in_alpha() {
        for family in [KernelFamily::Sphere, KernelFamily::Gaussian] {
            let model = KernelModel::atomic(family);
            for n in 0..3 {
                let gaps: Vec<f64> = [20.0, 50.0, 100.0]
                    .iter()
                    .map(|&a| {
                        let int = f_tilde(n, n + 1, a, &model, Regime::Intermediate).unwrap().value;
                        let nar = f_tilde(n, n + 1, a, &model, Regime::Narrow).unwrap().value;
                        (int - nar).abs()
                    })
                    .collect();
                assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{family} n={n} {gaps:?}");
            }
        }
    }

    #[test]
    fn degeneracy_is_lifted() {
        let model = KernelModel::atomic(KernelFamily::Sphere);
        let t: Vec<QuadResult> = (0..3)
            .map(|n| f_tilde(n, n + 1, 2.0, &model, Regime::Intermediate).unwrap())
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                let gap = (t[i].value - t[j].value).abs();
                assert!(gap > 10.0 * (t[i].error_estimate + t[j].error_estimate));
            }
        }
    }

    #[test]
    fn wide_level_ratios() {
        let model = KernelModel::new(KernelFamily::Sphere, 1.0, 1.0).unwrap();
        for alpha in [1e-3, 1e-2] {
            let f0 = f_n_full(0, alpha, &model).unwrap().total();
            for n in 1..=3 {
                let fnv = f_n_full(n, alpha, &model).unwrap().total();
                let want = wide_coefficients(n).unwrap().to_f64().unwrap();
                assert!((fnv / f0 - want).abs() < 0.02 * want, "alpha={alpha} n={n}");
            }
        }
    }

    #[test]
    fn wide_coefficients_exact() {
        assert_eq!(wide_coefficients(3).unwrap(), BigRational::new(147.into(), 256.into()));
        assert!(wide_coefficients(15).is_err());
    }

    #[test]
    fn narrow_shift_level_spacing() {
        let si = Material::silicon();
        let params = CrystalParams::new(si.clone(), 1e15 * ATOMIC_MASS_UNIT).unwrap();
        let w0 = 2.0 * std::f64::consts::PI * 10.0;
        for family in [KernelFamily::Sphere, KernelFamily::Gaussian] {
            for n in 0..4 {
                let d = energy_shift_narrow(n + 1, &params, w0, family) - energy_shift_narrow(n, &params, w0, family);
                assert_relative_eq!(d, HBAR * si.sn_frequency_sq(family) / w0, max_relative = 1e-6);
            }
        }
        let ratio = si.sn_frequency_sq(KernelFamily::Sphere) / (w0 * w0);
        assert!((ratio - 2.3e-6).abs() < 0.05e-6);
    }

    #[test]
    fn narrow_shift_matches_spectral_form() {
        // ΔE = −(G ħ m_atom)/(4σ³ω₀) f_n; the direct form drops β₂
        let si = Material::silicon();
        let params = CrystalParams::new(si.clone(), 1e15 * ATOMIC_MASS_UNIT).unwrap();
        let w0 = 2.0 * std::f64::consts::PI * 10.0;
        let alpha = si.alpha(params.m, w0);
        let pre = G * HBAR * si.m_atom / (4.0 * si.sigma.powi(3) * w0);
        for family in [KernelFamily::Sphere, KernelFamily::Gaussian] {
            let model = KernelModel::from_params(&params, family);
            for n in 0..3 {
                let de = -pre * f_n_narrow(n, alpha, &model);
                let beta2 = pre * 2.0 * model.beta(2) * (2 * n + 1) as f64;
                let direct = energy_shift_narrow(n, &params, w0, family);
                assert_relative_eq!(de - beta2, direct, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn prefactors_and_gravity_switch() {
        let si = Material::silicon();
        let os = Material::osmium();
        let p_si = si.spectral_prefactor(1.0);
        assert!((p_si - 0.0023).abs() < 0.00005, "{p_si}");
        let ratio = os.spectral_prefactor(1.0) / p_si;
        assert!((50.0..500.0).contains(&ratio));
        let params = CrystalParams::new(si, 1e15 * ATOMIC_MASS_UNIT).unwrap();
        let mut q = SpectrumQuery::new(params, 62.83, KernelFamily::Sphere, Regime::Narrow);
        q.gravity_scale = 0.0;
        let e = transition_energy(1, 3, &q).unwrap();
        assert_eq!(e.value, 2.0);
        assert_eq!(e.gravitational_part, 0.0);
    }

    #[test]
    fn narrow_transition_energy() {
        let si = Material::silicon();
        let params = CrystalParams::new(si.clone(), 1e15 * ATOMIC_MASS_UNIT).unwrap();
        let w0 = 62.83;
        let q = SpectrumQuery::new(params.clone(), w0, KernelFamily::Sphere, Regime::Narrow);
        let e = transition_energy(0, 1, &q).unwrap();
        let expect = 4.0 * params.gamma(2) * si.spectral_prefactor(w0);
        assert_relative_eq!(e.gravitational_part, expect, max_relative = 1e-12);
        // α ≈ 10 is below the narrow threshold
        assert_eq!(e.warnings.len(), 1);
        assert!(transition_energy(1, 1, &q).is_err());
    }

    #[test]
    fn wide_transition_matches_f_form() {
        let si = Material::silicon();
        let w0 = 1.0;
        let m = 1e-20;
        let params = CrystalParams::new(si.clone(), m).unwrap();
        let q = SpectrumQuery::new(params.clone(), w0, KernelFamily::Sphere, Regime::Wide);
        assert!(q.wide_parameter() < 1.0);
        let e = transition_energy(0, 2, &q).unwrap();
        let alpha = q.alpha();
        let model = q.model();
        let ft = f_n_wide(2, alpha, model.n_atoms).unwrap() - f_n_wide(0, alpha, model.n_atoms).unwrap();
        assert_relative_eq!(e.gravitational_part, -si.spectral_prefactor(w0) * ft, max_relative = 1e-10);
        assert!(e.warnings.is_empty());
        let heavy = SpectrumQuery::new(CrystalParams::new(si, 1e-12).unwrap(), w0, KernelFamily::Sphere, Regime::Wide);
        assert!(!transition_energy(0, 1, &heavy).unwrap().warnings.is_empty());
    }

    #[test]
    fn regime_classification() {
        assert_eq!(classify_regime(50.0, 1e5).unwrap(), Regime::Narrow);
        assert_eq!(classify_regime(2.0, 1e5).unwrap(), Regime::Intermediate);
        assert_eq!(classify_regime(1e-3, 10.0).unwrap(), Regime::Wide);
        assert!(matches!(classify_regime(1e-2, 1e5), Err(Error::Unsupported(_))));
        assert!(classify_regime(-1.0, 10.0).is_err());
        assert_eq!("wide".parse::<Regime>().unwrap(), Regime::Wide);
    }

    #[test]
    fn sweep_rows_and_single_point() {
        let model = KernelModel::atomic(KernelFamily::Gaussian);
        let s = sweep_spectrum(&[2.0], 4, &model, Regime::Intermediate).unwrap();
        assert_eq!(s.columns[..5], ["alpha", "f01", "f12", "f23", "f34"]);
        assert_eq!(s.rows.len(), 1);
        let want = f_tilde(1, 2, 2.0, &model, Regime::Intermediate).unwrap().value;
        assert_eq!(s.rows[0].values[2], want);
        assert!(sweep_spectrum(&[], 4, &model, Regime::Intermediate).is_err());
    }

    #[test]
    fn companion_tables() {
        let mats = [Material::silicon(), Material::osmium()];
        let t = mass_frequency_table(&mats, &[1.0, 10.0], &[1.0, 5.0, 10.0]).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.columns.len(), 1 + 2 * 4);
        let w = wide_table(&mats[0], 1.0, &[1e-22, 1e-21, 1e-20, 1e-10], 3).unwrap();
        assert_eq!(w.rows.len(), 3);
    }
}
