//! Dormand–Prince 5(4) with the 4th-order continuous extension.

use crate::error::{domain, Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Initial step; 0 picks one from the tolerances.
    pub h0: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            h0: 0.0,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Output of [`integrate`]: states at the requested times, plus the failure
/// if integration stopped early (then `states` holds the times reached).
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: OdeStats,
    pub failure: Option<Error>,
}

/// Integrates y′ = f(t, y) from `t0` and reports y at each of `sample_times`
/// (non-decreasing, ≥ t0) by dense output. `f` may return an error, which
/// stops the integration.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], sample_times: &[f64], opts: &OdeOptions) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if sample_times.windows(2).any(|w| w[1] < w[0]) || sample_times.first().is_some_and(|&s| s < t0) {
        return domain("sample times must be non-decreasing and not before t0");
    }
    if !(opts.rel_tol > 0.0 && opts.abs_tol >= 0.0) {
        return domain("tolerances must be positive");
    }
    let n = y0.len();
    let mut sol = OdeSolution {
        times: Vec::with_capacity(sample_times.len()),
        states: Vec::with_capacity(sample_times.len()),
        stats: OdeStats::default(),
        failure: None,
    };
    let mut samples = sample_times.iter().copied().peekable();
    while let Some(&s) = samples.peek() {
        if s > t0 {
            break;
        }
        sol.times.push(s);
        sol.states.push(y0.to_vec());
        samples.next();
    }
    let t_end = match sample_times.last() {
        Some(&t) if t > t0 => t,
        _ => return Ok(sol),
    };

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut cont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);

    macro_rules! eval {
        ($t:expr, $y:expr, $out:expr) => {{
            sol.stats.evaluations += 1;
            if let Err(e) = f($t, $y, $out) {
                sol.failure = Some(e);
                return Ok(sol);
            }
        }};
    }

    {
        let (first, _) = k.split_at_mut(1);
        eval!(t, &y, &mut first[0]);
    }
    let scale = |y: &[f64], i: usize| opts.abs_tol + opts.rel_tol * y[i].abs();
    let mut h = if opts.h0 > 0.0 {
        opts.h0
    } else {
        let d0 = rms((0..n).map(|i| y[i] / scale(&y, i)));
        let d1 = rms((0..n).map(|i| k[0][i] / scale(&y, i)));
        let guess = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        guess.min(t_end - t0)
    };
    let mut last_rejected = false;

    loop {
        if sol.stats.accepted + sol.stats.rejected >= opts.max_steps {
            sol.failure = Some(Error::Integration {
                t,
                reason: format!("step limit {} reached", opts.max_steps),
            });
            return Ok(sol);
        }
        if h < 1e-14 * t.abs().max(t_end - t0) {
            sol.failure = Some(Error::Integration {
                t,
                reason: format!("step size collapsed to {h:e}"),
            });
            return Ok(sol);
        }
        let h_step = h.min(t_end - t);
        let stage = |acc: &mut Vec<f64>, coeffs: &[(usize, f64)], k: &[Vec<f64>; 7], y: &[f64]| {
            for i in 0..n {
                acc[i] = y[i] + h_step * coeffs.iter().map(|&(j, a)| a * k[j][i]).sum::<f64>();
            }
        };
        stage(&mut tmp, &[(0, A21)], &k, &y);
        eval!(t + C2 * h_step, &tmp, &mut k[1]);
        stage(&mut tmp, &[(0, A31), (1, A32)], &k, &y);
        eval!(t + C3 * h_step, &tmp, &mut k[2]);
        stage(&mut tmp, &[(0, A41), (1, A42), (2, A43)], &k, &y);
        eval!(t + C4 * h_step, &tmp, &mut k[3]);
        stage(&mut tmp, &[(0, A51), (1, A52), (2, A53), (3, A54)], &k, &y);
        eval!(t + C5 * h_step, &tmp, &mut k[4]);
        stage(&mut tmp, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &k, &y);
        eval!(t + h_step, &tmp, &mut k[5]);
        stage(&mut y1, &[(0, A71), (2, A73), (3, A74), (4, A75), (5, A76)], &k, &y);
        eval!(t + h_step, &y1, &mut k[6]);

        let err = rms((0..n).map(|i| {
            let e = h_step
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            e / (opts.abs_tol + opts.rel_tol * y[i].abs().max(y1[i].abs()))
        }));
        if !err.is_finite() {
            sol.stats.rejected += 1;
            h = 0.1 * h_step;
            last_rejected = true;
            continue;
        }
        if err > 1.0 {
            sol.stats.rejected += 1;
            h = h_step * (0.9 * err.powf(-0.2)).max(0.2);
            last_rejected = true;
            continue;
        }
        sol.stats.accepted += 1;
        for i in 0..n {
            let dy = y1[i] - y[i];
            let bspl = h_step * k[0][i] - dy;
            cont[0][i] = y[i];
            cont[1][i] = dy;
            cont[2][i] = bspl;
            cont[3][i] = dy - h_step * k[6][i] - bspl;
            cont[4][i] = h_step
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
        }
        let t_new = if t_end - t <= h_step { t_end } else { t + h_step };
        while let Some(&s) = samples.peek() {
            if s > t_new {
                break;
            }
            let theta = ((s - t) / h_step).clamp(0.0, 1.0);
            let th1 = 1.0 - theta;
            let state: Vec<f64> = (0..n)
                .map(|i| {
                    cont[0][i]
                        + theta * (cont[1][i] + th1 * (cont[2][i] + theta * (cont[3][i] + th1 * cont[4][i])))
                })
                .collect();
            sol.times.push(s);
            sol.states.push(state);
            samples.next();
        }
        t = t_new;
        std::mem::swap(&mut y, &mut y1);
        k.swap(0, 6);
        if t >= t_end {
            return Ok(sol);
        }
        let grow = (0.9 * err.max(1e-10).powf(-0.2)).min(5.0);
        h = if last_rejected { h_step * grow.min(1.0) } else { h_step * grow };
        last_rejected = false;
    }
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = it.fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    if c == 0 {
        0.0
    } else {
        (s / c as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_t: f64, y: &[f64], d: &mut [f64]) -> Result<()> {
        d[0] = y[1];
        d[1] = -y[0];
        Ok(())
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * 0.3).collect();
        let opts = OdeOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let sol = integrate(oscillator, 0.0, &[1.0, 0.0], &times, &opts).unwrap();
        assert!(sol.failure.is_none());
        assert_eq!(sol.states.len(), times.len());
        for (t, s) in sol.times.iter().zip(&sol.states) {
            assert!((s[0] - t.cos()).abs() < 1e-8, "t = {t}");
            assert!((s[1] + t.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn exponential_growth_order() {
        let run = |tol: f64| {
            let opts = OdeOptions {
                rel_tol: tol,
                abs_tol: tol,
                ..Default::default()
            };
            let sol = integrate(
                |_t, y: &[f64], d: &mut [f64]| {
                    d[0] = y[0];
                    Ok(())
                },
                0.0,
                &[1.0],
                &[2.0],
                &opts,
            )
            .unwrap();
            (sol.states[0][0] - 2f64.exp()).abs()
        };
        assert!(run(1e-10) < run(1e-6));
        assert!(run(1e-10) < 1e-8);
    }

    #[test]
    fn blow_up_reports_partial_result() {
        // y′ = y², y(0) = 1 blows up at t = 1
        let times = [0.5, 0.9, 1.5];
        let sol = integrate(
            |_t, y: &[f64], d: &mut [f64]| {
                d[0] = y[0] * y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            &times,
            &OdeOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.states.len(), 2);
        assert!((sol.states[0][0] - 2.0).abs() < 1e-6);
        match sol.failure {
            Some(Error::Integration { t, .. }) => assert!((t - 1.0).abs() < 1e-2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rhs_error_stops_integration() {
        let sol = integrate(
            |t, _y: &[f64], d: &mut [f64]| {
                d[0] = 1.0;
                if t > 0.5 {
                    Err(Error::Domain("left table".into()))
                } else {
                    Ok(())
                }
            },
            0.0,
            &[0.0],
            &[0.25, 1.0],
            &OdeOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.states.len(), 1);
        assert!(matches!(sol.failure, Some(Error::Domain(_))));
    }

    #[test]
    fn sample_at_start_and_bad_input() {
        let sol = integrate(oscillator, 0.0, &[1.0, 0.0], &[0.0], &OdeOptions::default()).unwrap();
        assert_eq!(sol.states, vec![vec![1.0, 0.0]]);
        assert!(integrate(oscillator, 0.0, &[1.0, 0.0], &[1.0, 0.5], &OdeOptions::default()).is_err());
    }
}
