//! First-order shifts for a trap that is softer (or stiffer) by a factor μ
//! in the two transverse directions, with the state excited along x only.
//!
//! f_n(α, μ) = ½(α/(2ⁿn!π))² ∫dξ dξ′ ∫₀¹du du′ ∫₀^{2π}dφ
//!             H_n(ξ)²H_n(ξ′)² e^{−ξ²−ξ′²} erf(√2ζ)/(2ζ),
//!
//! with u = e^{−μs²} for the transverse radii s, s′.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{domain, Error, Result};
use crate::kernels::{gauss_self, KernelFamily};
use crate::polynomials::hermite_normalized;
use crate::quadrature::{integrate_1d_breaks, integrate_mc, McConfig, QuadResult};
use crate::spectrum::f_n_intermediate;
use crate::sweep::SweepResult;

pub const MAX_AXIAL_LEVEL: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialQuery {
    pub n: usize,
    pub alpha: f64,
    pub mu: f64,
    pub mc: McConfig,
}

impl AxialQuery {
    pub fn new(n: usize, alpha: f64, mu: f64) -> Self {
        Self {
            n,
            alpha,
            mu,
            mc: McConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n > MAX_AXIAL_LEVEL {
            return Err(Error::Unsupported(format!(
                "axial level {} exceeds {MAX_AXIAL_LEVEL}",
                self.n
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return domain(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return domain(format!("mu must be positive, got {}", self.mu));
        }
        Ok(())
    }
}

/// Monte-Carlo estimate plus the number of samples whose radicand came out
/// below −10⁻¹⁴ (and was clamped to zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialEstimate {
    pub result: QuadResult,
    pub negative_radicands: u64,
}

/// Half-width of the ξ box: |ψ_n|² < 10⁻³⁰ beyond it.
fn xi_extent(n: usize) -> f64 {
    (2.0 * n as f64 + 1.0).sqrt() + 8.5
}

/// f_n(α, μ) by stratified Monte Carlo over (ξ, ξ′, u, u′, φ ∈ [0, π]).
pub fn f_n_axial(q: &AxialQuery) -> Result<QuadResult> {
    let est = f_n_axial_detailed(q)?;
    if est.negative_radicands > 0 {
        return domain(format!(
            "{} samples had a negative radicand beyond round-off",
            est.negative_radicands
        ));
    }
    Ok(est.result)
}

pub fn f_n_axial_detailed(q: &AxialQuery) -> Result<AxialEstimate> {
    q.validate()?;
    let (n, alpha, mu) = (q.n, q.alpha, q.mu);
    let l = xi_extent(n);
    let bad = AtomicU64::new(0);
    // ψ_n² = H̃_n(ξ)² e^{−ξ²}/√π with H̃ normalised, so the Hermite prefactor
    // (2ⁿn!)² is absorbed; the φ range is halved by symmetry
    let pre = alpha * alpha / (PI * PI);
    let integrand = |x: &[f64]| {
        let (xi, xi2) = (x[0], x[1]);
        let lu = -x[2].max(f64::MIN_POSITIVE).ln();
        let lu2 = -x[3].max(f64::MIN_POSITIVE).ln();
        let phi = x[4];
        let h = hermite_normalized(n, xi) * hermite_normalized(n, xi2);
        let w = h * h * (-xi * xi - xi2 * xi2).exp();
        let d = xi - xi2;
        let mut rad = d * d + lu / mu + lu2 / mu - 2.0 / mu * (lu * lu2).sqrt() * phi.cos();
        if rad < 0.0 {
            if rad < -1e-14 {
                bad.fetch_add(1, Ordering::Relaxed);
            }
            rad = 0.0;
        }
        let zeta = rad.sqrt() / alpha;
        pre * w * gauss_self(zeta)
    };
    let bounds = [(-l, l), (-l, l), (0.0, 1.0), (0.0, 1.0), (0.0, PI)];
    let result = integrate_mc(integrand, &bounds, &q.mc)?;
    Ok(AxialEstimate {
        result,
        negative_radicands: bad.load(Ordering::Relaxed),
    })
}

/// eˣE₁(x) for x > 0.
pub fn exp_e1_scaled(x: f64) -> f64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    if x < 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..60 {
            term *= -x / k as f64;
            let t = -term / k as f64;
            sum += t;
            if t.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        (-EULER - x.ln() + sum) * x.exp()
    } else {
        // modified Lentz on the continued fraction 1/(x+1− 1/(x+3− 4/(x+5− …)))
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h
    }
}

/// Laguerre L_n(x) by recurrence.
fn laguerre(n: usize, x: f64) -> f64 {
    let (mut l0, mut l1) = (1.0, 1.0 - x);
    if n == 0 {
        return l0;
    }
    for k in 1..n {
        let kf = k as f64;
        let l2 = ((2.0 * kf + 1.0 - x) * l1 - kf * l0) / (kf + 1.0);
        l0 = l1;
        l1 = l2;
    }
    l1
}

/// Deterministic reduction of the same integral in Fourier space,
///
/// f_n = α³/(2π) ∫₀^∞ dk e^{−k²/2 − α²k²/8} L_n(k²/2)² eˣE₁(x),
/// x = (α²/8 + 1/(2μ))k².
pub fn f_n_axial_fourier(n: usize, alpha: f64, mu: f64) -> Result<QuadResult> {
    AxialQuery::new(n, alpha, mu).validate()?;
    let a = alpha * alpha / 8.0 + 0.5 / mu;
    let f = |k: f64| {
        let k2 = k * k;
        if k2 == 0.0 {
            return 0.0;
        }
        let l = laguerre(n, 0.5 * k2);
        (-0.5 * k2 - alpha * alpha * k2 / 8.0).exp() * l * l * exp_e1_scaled(a * k2)
    };
    // the weight decays like e^{−(1/2 + α²/8)k²}
    let k_max = (80.0 / (0.5 + alpha * alpha / 8.0)).sqrt();
    let mut pts = vec![0.0];
    let mut k = 1e-8;
    while k < k_max {
        pts.push(k);
        k *= if k < 0.1 { 10.0 } else { 1.5 };
    }
    pts.push(k_max);
    let r = integrate_1d_breaks(f, &pts, 1e-11, 1e-300)?;
    let s = alpha.powi(3) / (2.0 * PI);
    Ok(QuadResult {
        value: s * r.value,
        error_estimate: s * r.error_estimate,
        evaluations: r.evaluations,
    })
}

/// Rows for the level pairs (n, n+1), n in `levels`: the Monte-Carlo f_n
/// and f_n − f_{n+1} with standard errors, and the one-dimensional
/// differences f_n − f_{n+1} and f_{n+1} − f_{n+2} for comparison.
pub fn sweep_axial(levels: std::ops::RangeInclusive<usize>, alphas: &[f64], mu: f64, mc: &McConfig) -> Result<SweepResult> {
    if alphas.is_empty() {
        return domain("alpha grid is empty");
    }
    if levels.is_empty() {
        return domain("level range is empty");
    }
    let top = *levels.end();
    if top + 1 > MAX_AXIAL_LEVEL {
        return Err(Error::Unsupported(format!("level pairs up to {top} need n <= {MAX_AXIAL_LEVEL}")));
    }
    let mut out = SweepResult::new([
        "alpha",
        "n",
        "value",
        "std_error",
        "diff",
        "diff_std_error",
        "reference_1d",
        "reference_1d_shifted",
    ]);
    for &alpha in alphas {
        let mut vals = Vec::new();
        for n in *levels.start()..=top + 1 {
            // independent streams per level so that the difference errors add
            // in quadrature
            let q = AxialQuery {
                n,
                alpha,
                mu,
                mc: McConfig {
                    seed: mc.seed.wrapping_add(n as u64),
                    ..*mc
                },
            };
            vals.push(match f_n_axial(&q) {
                Ok(r) => (r.value, r.error_estimate, None),
                Err(Error::Convergence { best }) => (best.value, best.error_estimate, Some(format!("n={n}: MC target not met"))),
                Err(e) => (f64::NAN, f64::NAN, Some(format!("n={n}: {e}"))),
            });
        }
        let one_d: Vec<f64> = (*levels.start()..=top + 2)
            .map(|n| {
                if n <= crate::polynomials::MAX_P_DEGREE {
                    f_n_intermediate(n, alpha, KernelFamily::Gaussian).map(|r| r.value).unwrap_or(f64::NAN)
                } else {
                    f64::NAN
                }
            })
            .collect();
        for (i, n) in levels.clone().enumerate() {
            let (v, e, ref msg) = vals[i];
            let (v1, e1, ref msg1) = vals[i + 1];
            let err = match (msg, msg1) {
                (None, None) => None,
                (a, b) => Some([a.clone(), b.clone()].into_iter().flatten().collect::<Vec<_>>().join(" | ")),
            };
            out.push(
                vec![
                    alpha,
                    n as f64,
                    v,
                    e,
                    v - v1,
                    e.hypot(e1),
                    one_d[i] - one_d[i + 1],
                    one_d[i + 1] - one_d[i + 2],
                ],
                err,
            );
        }
    }
    Ok(out)
}
