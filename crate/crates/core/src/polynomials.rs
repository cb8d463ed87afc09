//! Exact Hermite polynomials and the even polynomials P_n(z).
//!
//! P_n(z) = 1/(√(2π)(2ⁿn!)²) e^{−z²/2} ∫ dξ e^{−2ξ²} H_n(ξ)²
//!          × [e^{2zξ} H_n(ξ−z)² + e^{−2zξ} H_n(ξ+z)²].
//!
//! Completing the square with η = ξ ∓ z/2 removes the exponentials, so that
//! P_n(z) = E[(H_n(η+z/2) H_n(η−z/2))²] / (2ⁿn!)² where η is normal with
//! variance 1/4. The expectation is taken exactly with
//! E[η^{2k}] = (2k−1)!!/4^k.

use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};

use crate::error::{domain, Error, Result};

pub const MAX_HERMITE_DEGREE: usize = 30;
pub const MAX_P_DEGREE: usize = 14;

/// H_n(x) with exact integer coefficients, `coeffs[k]` multiplying xᵏ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HermitePolynomial {
    pub coeffs: Vec<BigInt>,
}

impl HermitePolynomial {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + c.to_f64().unwrap_or(f64::NAN))
    }
}

fn hermite_table() -> &'static Vec<HermitePolynomial> {
    static TABLE: OnceLock<Vec<HermitePolynomial>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut h = vec![
            HermitePolynomial {
                coeffs: vec![BigInt::one()],
            },
            HermitePolynomial {
                coeffs: vec![BigInt::zero(), BigInt::from(2)],
            },
        ];
        for k in 1..MAX_HERMITE_DEGREE {
            let mut next = vec![BigInt::zero(); k + 2];
            for (i, c) in h[k].coeffs.iter().enumerate() {
                next[i + 1] += c * 2;
            }
            for (i, c) in h[k - 1].coeffs.iter().enumerate() {
                next[i] -= c * (2 * k as i64);
            }
            h.push(HermitePolynomial { coeffs: next });
        }
        h
    })
}

/// Physicists' Hermite polynomial H_n for n ≤ 30.
pub fn hermite(n: usize) -> Result<HermitePolynomial> {
    if n > MAX_HERMITE_DEGREE {
        return Err(Error::Unsupported(format!(
            "Hermite degree {n} exceeds {MAX_HERMITE_DEGREE}"
        )));
    }
    Ok(hermite_table()[n].clone())
}

/// Σ c_k z^{2k} with exact rational coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvenPolynomial {
    /// `coeffs[k]` multiplies z^{2k}.
    pub coeffs: Vec<BigRational>,
}

impl EvenPolynomial {
    /// Degree in z.
    pub fn degree(&self) -> usize {
        2 * (self.coeffs.len() - 1)
    }

    pub fn at_zero(&self) -> BigRational {
        self.coeffs[0].clone()
    }

    pub fn eval_exact(&self, z: &BigRational) -> BigRational {
        let w = z * z;
        self.coeffs
            .iter()
            .rev()
            .fold(BigRational::zero(), |acc, c| acc * &w + c)
    }

    /// Horner evaluation in floating point. Loses accuracy to cancellation
    /// for large n at moderate z; see [`p_value`] for a stable evaluator.
    pub fn eval(&self, z: f64) -> f64 {
        let w = z * z;
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * w + c.to_f64().unwrap_or(f64::NAN))
    }
}

impl fmt::Display for EvenPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let sign = if c.is_negative() { "-" } else { "+" };
            if first {
                if c.is_negative() {
                    f.write_str("-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let a = c.abs();
            match k {
                0 => write!(f, "{a}")?,
                1 => write!(f, "({a}) z^2")?,
                _ => write!(f, "({a}) z^{}", 2 * k)?,
            }
        }
        if first {
            f.write_str("0")?;
        }
        Ok(())
    }
}

/// Bivariate integer polynomial, `c[i][j]` multiplying ηⁱ zʲ.
type Bivariate = Vec<Vec<BigInt>>;

fn bi_mul(a: &Bivariate, b: &Bivariate) -> Bivariate {
    let ni = a.len() + b.len() - 1;
    let nj = a[0].len() + b[0].len() - 1;
    let mut r = vec![vec![BigInt::zero(); nj]; ni];
    for (i1, row1) in a.iter().enumerate() {
        for (j1, c1) in row1.iter().enumerate() {
            if c1.is_zero() {
                continue;
            }
            for (i2, row2) in b.iter().enumerate() {
                for (j2, c2) in row2.iter().enumerate() {
                    if !c2.is_zero() {
                        r[i1 + i2][j1 + j2] += c1 * c2;
                    }
                }
            }
        }
    }
    r
}

fn binomial(n: usize, k: usize) -> BigInt {
    let mut r = BigInt::one();
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

fn double_factorial_odd(k: usize) -> BigInt {
    // (k−1)!! for even k
    let mut r = BigInt::one();
    let mut t = k as i64 - 1;
    while t > 1 {
        r *= t;
        t -= 2;
    }
    r
}

/// 2ⁿ H_n(η + s z/2) with s = ±1, expanded with the binomial theorem.
fn shifted_binomial(n: usize, s: i64) -> Bivariate {
    let h = &hermite_table()[n];
    let mut r = vec![vec![BigInt::zero(); n + 1]; n + 1];
    for (j, cj) in h.coeffs.iter().enumerate() {
        if cj.is_zero() {
            continue;
        }
        // (η + s z/2)^j · 2^n = Σ_i C(j,i) ηⁱ (s z)^{j−i} 2^{n−j+i}
        for i in 0..=j {
            let zp = j - i;
            let sign = if s < 0 && zp % 2 == 1 { -1 } else { 1 };
            let term = cj * binomial(j, i) * (BigInt::one() << (n - j + i)) * sign;
            r[i][zp] += term;
        }
    }
    r
}

/// 2ⁿ H_n(η + s z/2) from the addition theorem
/// H_n(x + y) = Σ_k C(n,k) H_k(x) (2y)^{n−k}.
fn shifted_addition(n: usize, s: i64) -> Bivariate {
    let table = hermite_table();
    let mut r = vec![vec![BigInt::zero(); n + 1]; n + 1];
    for k in 0..=n {
        let zp = n - k;
        let sign = if s < 0 && zp % 2 == 1 { -1 } else { 1 };
        let pre = binomial(n, k) * (BigInt::one() << n) * sign;
        for (i, c) in table[k].coeffs.iter().enumerate() {
            if !c.is_zero() {
                r[i][zp] += &pre * c;
            }
        }
    }
    r
}

fn p_from_shifts(n: usize, plus: Bivariate, minus: Bivariate) -> EvenPolynomial {
    let prod = bi_mul(&plus, &minus);
    let sq = bi_mul(&prod, &prod);
    let nz = sq[0].len();
    let mut num = vec![BigRational::zero(); nz];
    for (i, row) in sq.iter().enumerate() {
        if i % 2 == 1 {
            continue;
        }
        let moment = BigRational::new(double_factorial_odd(i), BigInt::one() << i);
        for (j, c) in row.iter().enumerate() {
            if !c.is_zero() {
                num[j] += BigRational::from_integer(c.clone()) * &moment;
            }
        }
    }
    // each shifted factor carried 2ⁿ, the square has four of them
    let mut fact = BigInt::one();
    for k in 2..=n {
        fact *= k;
    }
    let norm = BigInt::one() << (4 * n);
    let two_n_fact = (BigInt::one() << n) * fact;
    let denom = BigRational::from_integer(norm * &two_n_fact * &two_n_fact);
    let coeffs = num
        .into_iter()
        .step_by(2)
        .map(|c| c / &denom)
        .collect::<Vec<_>>();
    debug_assert!(sq.iter().all(|row| row.iter().skip(1).step_by(2).all(Zero::is_zero)));
    EvenPolynomial { coeffs }
}

fn check_p_degree(n: usize) -> Result<()> {
    if n > MAX_P_DEGREE {
        return Err(Error::Unsupported(format!(
            "P_n is available for n <= {MAX_P_DEGREE}, got {n}"
        )));
    }
    Ok(())
}

/// P_n(z) in exact arithmetic, computed once per n and cached.
pub fn p_polynomial(n: usize) -> Result<Arc<EvenPolynomial>> {
    check_p_degree(n)?;
    static CACHE: OnceLock<Mutex<Vec<Option<Arc<EvenPolynomial>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(vec![None; MAX_P_DEGREE + 1]));
    if let Some(p) = &cache.lock().expect("cache poisoned")[n] {
        return Ok(p.clone());
    }
    let p = Arc::new(p_from_shifts(n, shifted_binomial(n, 1), shifted_binomial(n, -1)));
    let mut guard = cache.lock().expect("cache poisoned");
    Ok(guard[n].get_or_insert(p).clone())
}

/// P_n(z) built from the Hermite addition theorem instead of the binomial
/// expansion; used to cross-check [`p_polynomial`].
pub fn p_polynomial_addition(n: usize) -> Result<EvenPolynomial> {
    check_p_degree(n)?;
    Ok(p_from_shifts(n, shifted_addition(n, 1), shifted_addition(n, -1)))
}

/// r such that ∫₀^∞ u^k e^{−u²/2} P(u) du = r·√(π/2), for even k.
pub fn gaussian_moment(poly: &EvenPolynomial, k: usize) -> Result<BigRational> {
    if k % 2 == 1 {
        return domain(format!("moment weight u^{k} must have an even power"));
    }
    let mut total = BigRational::zero();
    for (j, c) in poly.coeffs.iter().enumerate() {
        // ∫₀^∞ u^{2m} e^{−u²/2} du = (2m−1)!! √(π/2)
        let m2 = k + 2 * j;
        total += c * BigRational::from_integer(double_factorial_odd(m2));
    }
    Ok(total)
}

/// Gauss–Hermite rule for the weight e^{−x²}, nodes in decreasing order.
fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mf = m as f64;
    let mut z = 0.0;
    for i in 0..m.div_ceil(2) {
        z = match i {
            0 => (2.0 * mf + 1.0).sqrt() - 1.85575 * (2.0 * mf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * mf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=m {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * mf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[m - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

struct StableRule {
    eta: Vec<f64>,
    weight: Vec<f64>,
}

fn stable_rule() -> &'static StableRule {
    static RULE: OnceLock<StableRule> = OnceLock::new();
    RULE.get_or_init(|| {
        // 30 nodes integrate polynomials of degree ≤ 59 ≥ 4·14 exactly
        let (x, w) = gauss_hermite(2 * MAX_P_DEGREE + 2);
        let s = std::f64::consts::PI.sqrt();
        StableRule {
            eta: x.iter().map(|v| v / std::f64::consts::SQRT_2).collect(),
            weight: w.iter().map(|v| v / s).collect(),
        }
    })
}

/// Normalised Hermite value H_n(x)/√(2ⁿn!).
pub fn hermite_normalized(n: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// P_n(z) in floating point as a sum of non-negative squares, accurate to
/// a few ulp for every n ≤ 14.
pub fn p_value(n: usize, z: f64) -> f64 {
    let rule = stable_rule();
    let half = 0.5 * z;
    rule.eta
        .iter()
        .zip(&rule.weight)
        .map(|(&eta, &w)| {
            let v = hermite_normalized(n, eta + half) * hermite_normalized(n, eta - half);
            w * v * v
        })
        .sum()
}

/// Positive stationary points of P_n, located on a fine grid and refined
/// by bisection on the derivative. The range covers the part of the half
/// line where e^{−z²/2}P_n(z) is not negligible.
pub fn p_stationary_points(n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let upper = 2.0 * (4.0 * n as f64 + 1.0).sqrt() + 12.0;
    let deriv = |z: f64| {
        let h = 1e-6 * z.max(1.0);
        (p_value(n, z + h) - p_value(n, z - h)) / (2.0 * h)
    };
    let steps = 4000;
    let mut out = Vec::new();
    let mut z0 = upper / steps as f64;
    let mut d0 = deriv(z0);
    for k in 2..=steps {
        let z1 = upper * k as f64 / steps as f64;
        let d1 = deriv(z1);
        if d0 == 0.0 || d0.signum() != d1.signum() {
            let (mut lo, mut hi, mut dlo) = (z0, z1, d0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let dm = deriv(mid);
                if dm.signum() == dlo.signum() {
                    lo = mid;
                    dlo = dm;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        z0 = z1;
        d0 = d1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_1d;
    use num::FromPrimitive;
    use proptest::prelude::*;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn low_hermite() {
        let c = |n: usize| hermite(n).unwrap().coeffs;
        assert_eq!(c(0), vec![BigInt::from(1)]);
        assert_eq!(c(1), vec![BigInt::from(0), BigInt::from(2)]);
        assert_eq!(c(2), vec![BigInt::from(-2), BigInt::from(0), BigInt::from(4)]);
        assert!(hermite(31).is_err());
        assert_eq!(hermite(30).unwrap().degree(), 30);
    }

    #[test]
    fn hermite_structure() {
        for n in 0..=MAX_HERMITE_DEGREE {
            let h = hermite(n).unwrap();
            assert_eq!(h.coeffs[n], BigInt::one() << n);
            for (k, c) in h.coeffs.iter().enumerate() {
                if (k + n) % 2 == 1 {
                    assert!(c.is_zero(), "H_{n} has x^{k}");
                }
            }
        }
        for n in 1..10 {
            for x in [-1.3, 0.2, 2.7] {
                let lhs = hermite(n + 1).unwrap().eval(x);
                let rhs = 2.0 * x * hermite(n).unwrap().eval(x) - 2.0 * n as f64 * hermite(n - 1).unwrap().eval(x);
                assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn low_p_polynomials() {
        assert_eq!(p_polynomial(0).unwrap().coeffs, vec![rat(1, 1)]);
        assert_eq!(p_polynomial(1).unwrap().coeffs, vec![rat(3, 4), rat(-1, 2), rat(1, 4)]);
        assert_eq!(p_polynomial(2).unwrap().at_zero(), rat(41, 64));
        assert_eq!(p_polynomial(1).unwrap().degree(), 4);
        assert!(p_polynomial(15).is_err());
        assert!(p_polynomial_addition(15).is_err());
    }

    #[test]
    fn wide_coefficients_table() {
        let expect = [(1, 1), (3, 4), (41, 64), (147, 256), (8649, 16384), (32307, 65536)];
        for (n, (a, b)) in expect.into_iter().enumerate() {
            assert_eq!(p_polynomial(n).unwrap().at_zero(), rat(a, b));
        }
    }

    #[test]
    fn two_routes_agree() {
        for n in 0..=4 {
            assert_eq!(*p_polynomial(n).unwrap(), p_polynomial_addition(n).unwrap(), "n = {n}");
        }
    }

    #[test]
    fn moment_identities_exact() {
        for n in 0..=10 {
            let p = p_polynomial(n).unwrap();
            assert_eq!(gaussian_moment(&p, 0).unwrap(), rat(1, 1), "n = {n}");
            assert_eq!(gaussian_moment(&p, 2).unwrap(), rat(2 * n as i64 + 1, 1), "n = {n}");
        }
        assert!(gaussian_moment(&p_polynomial(0).unwrap(), 1).is_err());
        assert_eq!(gaussian_moment(&p_polynomial(0).unwrap(), 4).unwrap(), rat(3, 1));
    }

    #[test]
    fn display_is_readable() {
        assert_eq!(p_polynomial(1).unwrap().to_string(), "3/4 - (1/2) z^2 + (1/4) z^4");
    }

    #[test]
    fn gauss_hermite_rule() {
        let (x, w) = gauss_hermite(5);
        let total: f64 = w.iter().sum();
        assert!((total - std::f64::consts::PI.sqrt()).abs() < 1e-14);
        let second: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((second - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn stable_and_exact_evaluation_agree() {
        for n in 0..=MAX_P_DEGREE {
            let p = p_polynomial(n).unwrap();
            for z in [0.0, 0.5, 1.7, 3.0] {
                let exact = p
                    .eval_exact(&BigRational::from_f64(z).unwrap())
                    .to_f64()
                    .unwrap();
                let v = p_value(n, z);
                assert!((v - exact).abs() <= 1e-12 * exact, "n={n} z={z}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn stationary_points_of_p1() {
        // P₁′(z) = −z + z³ vanishes at z = 1
        let pts = p_stationary_points(1);
        assert_eq!(pts.len(), 1);
        assert!((pts[0] - 1.0).abs() < 1e-6);
        assert!(p_stationary_points(0).is_empty());
        let p4 = p_stationary_points(4);
        assert_eq!(p4.len(), 1);
        assert!((p4[0] - 0.640_696_6).abs() < 1e-5);
        assert_eq!(p_stationary_points(6).len(), 3);
    }

    /// The defining integral over ξ, folded onto the half line.
    fn p_by_quadrature(n: usize, z: f64) -> f64 {
        let h = |x: f64| hermite_normalized(n, x);
        let g = |xi: f64| {
            let a = (-2.0 * xi * xi + 2.0 * z * xi - 0.5 * z * z).exp() * (h(xi) * h(xi - z)).powi(2);
            let b = (-2.0 * xi * xi - 2.0 * z * xi - 0.5 * z * z).exp() * (h(xi) * h(xi + z)).powi(2);
            a + b
        };
        let both = |xi: f64| g(xi) + g(-xi);
        let r = integrate_1d(both, 0.0, f64::INFINITY, 1e-13, 0.0).unwrap();
        r.value / (2.0 * std::f64::consts::PI).sqrt()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(5))]

        #[test]
        fn closed_form_matches_defining_integral(z in 0.0f64..4.0, n in 0usize..=6) {
            let q = p_by_quadrature(n, z);
            let c = p_polynomial(n).unwrap().eval(z);
            prop_assert!((q - c).abs() <= 1e-10 * c, "n={} z={}: {} vs {}", n, z, q, c);
        }

        #[test]
        fn p_is_positive(z in 0.0f64..20.0, n in 0usize..=MAX_P_DEGREE) {
            prop_assert!(p_value(n, z) > 0.0);
        }
    }
}
