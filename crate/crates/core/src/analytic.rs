//! Closed-form and semi-analytic references: PFA, derivative expansion and
//! small-amplitude perturbation theory.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::engine::PolPair;
use crate::error::{domain, Result};
use crate::quad::gl_interval;
use crate::spectral::{modified_rayleigh_sq, GratingProfile, Polarization, SpectralPoint};

/// Relative tolerance of the oracle quadratures.
pub const ORACLE_TOL: f64 = 1e-8;

pub const BETA_TM: f64 = 2.0 / 3.0;

pub fn beta_te() -> f64 {
    2.0 / 3.0 * (1.0 - 30.0 / (PI * PI))
}

pub fn beta(pol: Polarization) -> f64 {
    match pol {
        Polarization::TM => BETA_TM,
        Polarization::TE => beta_te(),
    }
}

fn check_gap(a: f64, d: f64) -> Result<()> {
    if !(a >= 0.0) || !(d > a) {
        return domain(format!("need 0 <= a < d, got a={a}, d={d}"));
    }
    Ok(())
}

/// Proximity-force energy per area of a sinusoid of amplitude `a` facing a plate,
/// both polarizations.
pub fn pfa_energy(a: f64, d: f64) -> Result<f64> {
    check_gap(a, d)?;
    let g = d * d - a * a;
    Ok(-PI * PI / 720.0 * (2.0 * d * d + a * a) / (2.0 * g.powf(2.5)))
}

/// Leading derivative-expansion correction for one polarization.
pub fn de_correction(pol: Polarization, a: f64, d: f64, lx: f64) -> Result<f64> {
    check_gap(a, d)?;
    if !(lx > 0.0) {
        return domain("period must be positive");
    }
    Ok(-beta(pol) * PI.powi(4) / (360.0 * lx * lx) * a * a / (d * d - a * a).powf(1.5))
}

/// Orders 0, 1 and 2 of the reflection matrix on the modes of `point`.
#[derive(Debug, Clone)]
pub struct PerturbativeRayleigh {
    pub pol: Polarization,
    pub order0: Mat<C64>,
    pub order1: Mat<C64>,
    pub order2: Mat<C64>,
}

impl PerturbativeRayleigh {
    pub fn sum(&self) -> Mat<C64> {
        &(&self.order0 + &self.order1) + &self.order2
    }
}

pub fn perturbative_rayleigh(pol: Polarization, profile: &GratingProfile, point: &SpectralPoint) -> PerturbativeRayleigh {
    let n = point.n();
    let kap2 = point.kappa() * point.kappa();
    let lt = |m: i64| (kap2 + (point.kx() + point.g(m)).powi(2)).sqrt();
    let lt2 = |m: i64, mp: i64| modified_rayleigh_sq(point, m, mp);
    let support: Vec<i64> = profile.coeffs().map(|(n, _)| n).collect();
    let h = |n: i64| profile.coeff(n);
    let s = pol.flat_sign();
    let order0 = Mat::from_fn(n, n, |i, j| if i == j { C64::new(s, 0.0) } else { C64::new(0.0, 0.0) });
    let order1 = Mat::from_fn(n, n, |i, j| {
        let (m, mp) = (point.mode(i), point.mode(j));
        match pol {
            Polarization::TM => -2.0 * lt(m) * h(mp - m),
            Polarization::TE => 2.0 * lt2(m, mp) / lt(mp) * h(mp - m),
        }
    });
    let order2 = Mat::from_fn(n, n, |i, j| {
        let (m, mp) = (point.mode(i), point.mode(j));
        support
            .iter()
            .map(|&k| {
                let mpp = m + k;
                let hh = h(mp - mpp) * h(k);
                match pol {
                    Polarization::TM => -2.0 * lt(m) * lt(mpp) * hh,
                    Polarization::TE => 2.0 * lt2(m, mpp) * lt2(mp, mpp) / (lt(mpp) * lt(mp)) * hh,
                }
            })
            .sum()
    });
    PerturbativeRayleigh { pol, order0, order1, order2 }
}

/// First-order energy per area from the mean height `h0`.
pub fn perturbative_energy_first(h0: f64, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return domain("separation must be positive");
    }
    Ok(-PI * PI / 240.0 * h0 / d.powi(4))
}

/// Second-order energy per area, TM and TE, from the mode-sum double integrals
///
/// `E_TM = -1/(4 pi^2) int kappa dkappa int dk sum_n |h_n|^2 l p/(1-p) l'/(1-p')`
/// `E_TE = -1/(4 pi^2) int kappa dkappa int dk sum_n |h_n|^2 (kappa^2+k k')^2/(l l') p/(1-p) 1/(1-p')`
///
/// with `l = sqrt(kappa^2+k^2)`, `k' = k - G_n`, `p = exp(-2 l d)`.
pub fn perturbative_energy_second(profile: &GratingProfile, d: f64) -> Result<PolPair> {
    if !(d > 0.0) {
        return domain("separation must be positive");
    }
    let lx = profile.period();
    let mut tm = 0.0;
    let mut te = 0.0;
    for (n, h) in profile.coeffs() {
        let g = 2.0 * PI * n as f64 / lx;
        let w = h.norm_sqr();
        let pair = mode_pair_integral(g, d)?;
        tm += w * pair[0];
        te += w * pair[1];
    }
    let pref = -1.0 / (4.0 * PI * PI);
    Ok(PolPair { tm: pref * tm, te: pref * te })
}

/// `int_0^inf kappa dkappa int_R dk` of the TM and TE kernels for one harmonic.
fn mode_pair_integral(g: f64, d: f64) -> Result<[f64; 2]> {
    let kernel = |kappa: f64, k: f64| -> [f64; 2] {
        let kp = k - g;
        let l = kappa.hypot(k);
        let lp = kappa.hypot(kp);
        let p = (-2.0 * l * d).exp();
        let f = p / -(-2.0 * l * d).exp_m1();
        let fp = 1.0 / -(-2.0 * lp * d).exp_m1();
        let tm = l * f * lp * fp;
        let r = kappa * kappa + k * kp;
        let te = if l == 0.0 || lp == 0.0 { 0.0 } else { r * r / (l * lp) * f * fp };
        [kappa * tm, kappa * te]
    };
    let (lo, hi) = (g.min(0.0), g.max(0.0));
    let s = 1.0 / (2.0 * d);
    let rule = |n: usize| -> [f64; 2] {
        // kappa graded toward 0; k split at the kinks k = 0 and k = G_n.
        let kappas: Vec<(f64, f64)> = gl_interval(n, 0.0, 1.0)
            .into_iter()
            .map(|(t, w)| {
                let u = t * t;
                (s * u / (1.0 - u), w * 2.0 * t * s / ((1.0 - u) * (1.0 - u)))
            })
            .collect();
        let mut ks: Vec<(f64, f64)> = Vec::new();
        let tail = |from: f64, dir: f64| -> Vec<(f64, f64)> {
            gl_interval(n, 0.0, 1.0)
                .into_iter()
                .map(|(t, w)| {
                    let u = t * t;
                    (from + dir * s * u / (1.0 - u), w * 2.0 * t * s / ((1.0 - u) * (1.0 - u)))
                })
                .collect()
        };
        ks.extend(tail(lo, -1.0));
        ks.extend(tail(hi, 1.0));
        if hi > lo {
            let half = 0.5 * (hi - lo);
            for (t, w) in gl_interval(n, 0.0, 1.0) {
                ks.push((lo + half * t * t, w * 2.0 * t * half));
                ks.push((hi - half * t * t, w * 2.0 * t * half));
            }
        }
        let mut acc = [0.0; 2];
        for &(kappa, wk) in &kappas {
            for &(k, wx) in &ks {
                let v = kernel(kappa, k);
                acc[0] += wk * wx * v[0];
                acc[1] += wk * wx * v[1];
            }
        }
        acc
    };
    refine(rule, 24, 768, ORACLE_TOL)
}

/// Node doubling until both components agree to `tol`.
fn refine<const K: usize>(rule: impl Fn(usize) -> [f64; K], n0: usize, n_max: usize, tol: f64) -> Result<[f64; K]> {
    let mut n = n0;
    let mut prev = rule(n);
    while n < n_max {
        n *= 2;
        let cur = rule(n);
        if cur.iter().zip(&prev).all(|(c, p)| (c - p).abs() <= tol * c.abs().max(1e-300)) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(crate::error::Error::Quadrature(format!("oracle integral not converged to {tol:e} with {n_max} nodes")))
}

/// Compact second-order energy using the g functions, argument `4 pi m d / lx`.
pub fn perturbative_energy_second_g(profile: &GratingProfile, d: f64) -> Result<PolPair> {
    if !(d > 0.0) {
        return domain("separation must be positive");
    }
    let lx = profile.period();
    let mut out = [0.0; 2];
    for (m, h) in profile.coeffs() {
        let arg = 4.0 * PI * (m.abs() as f64) * d / lx;
        for (o, pol) in out.iter_mut().zip(Polarization::BOTH) {
            *o += h.norm_sqr() * g_function(pol, arg);
        }
    }
    let pref = -PI * PI / (240.0 * d.powi(5));
    Ok(PolPair { tm: pref * out[0], te: pref * out[1] })
}

/// `int_0^inf dz w(z) int_{-1}^{1} dx phi(z, z')`, `z' = sqrt(z^2 + A^2 + 2 z A x)`,
/// evaluated in the variable `z'` where the inner integrand is smooth.
/// `inner(z, z')` must already include the Jacobian `z'/(z A)`.
fn shell_integral(a: f64, outer: &dyn Fn(f64) -> f64, inner: &dyn Fn(f64, f64) -> f64, inner_a0: &dyn Fn(f64) -> f64) -> f64 {
    let rule = |n: usize| -> [f64; 1] {
        let mut total = 0.0;
        // z in (0, A] and [A, inf), both graded toward the break.
        let mut zs: Vec<(f64, f64)> = Vec::new();
        if a > 0.0 {
            for (t, w) in gl_interval(n, 0.0, 1.0) {
                zs.push((a * (1.0 - (1.0 - t) * (1.0 - t)), w * 2.0 * a * (1.0 - t)));
            }
        }
        let scale = 4.0;
        for (t, w) in gl_interval(n, 0.0, 1.0) {
            let u = t * t;
            zs.push((a + scale * u / (1.0 - u), w * 2.0 * t * scale / ((1.0 - u) * (1.0 - u))));
        }
        let inner_rule = gl_interval(n, 0.0, 1.0);
        for (z, wz) in zs {
            if !(z > 0.0) || !z.is_finite() || wz == 0.0 {
                continue;
            }
            let o = outer(z);
            if o == 0.0 {
                continue;
            }
            let x = if a == 0.0 {
                inner_a0(z)
            } else {
                let (lo, hi) = ((z - a).abs(), z + a);
                let span = hi - lo;
                inner_rule.iter().map(|&(t, w)| w * 2.0 * t * span * inner(z, lo + span * t * t)).sum()
            };
            total += wz * o * x;
        }
        [total]
    };
    refine(rule, 32, 4096, ORACLE_TOL * 0.1).map(|v| v[0]).unwrap_or_else(|_| rule(4096)[0])
}

/// `g_p(A)`, normalised so that `g_p(0) = 1`.
pub fn g_function(pol: Polarization, a: f64) -> f64 {
    assert!(a >= 0.0, "g_p needs A >= 0");
    let outer = |z: f64| z.powi(3) * (-z).exp() / -(-z).exp_m1();
    let bose = |z: f64| 1.0 / -(-z).exp_m1();
    let val = match pol {
        Polarization::TM => shell_integral(
            a,
            &outer,
            &|z, zp| zp * zp * bose(zp) / (z * a),
            &|z| 2.0 * z * bose(z),
        ),
        Polarization::TE => shell_integral(
            a,
            &outer,
            &|z, zp| {
                let q = (zp * zp + z * z - a * a) / (2.0 * z);
                q * q * bose(zp) / (z * a)
            },
            &|z| 2.0 * z * bose(z),
        ),
    };
    15.0 / (8.0 * PI.powi(4)) * val
}

/// `j_p(A)` with `j_p(0) = 4`.
pub fn j_function(pol: Polarization, a: f64) -> f64 {
    assert!(a >= 0.0, "j_p needs A >= 0");
    let csch = |z: f64| 1.0 / z.sinh();
    let val = match pol {
        Polarization::TM => shell_integral(
            a,
            &|z| z.powi(3) * csch(z),
            &|z, zp| zp * zp * csch(zp) / (z * a),
            &|z| 2.0 * z * csch(z),
        ),
        Polarization::TE => shell_integral(
            a,
            &|z| z * csch(z),
            &|z, zp| {
                let q = 0.5 * (zp * zp + z * z - a * a);
                q * q * csch(zp) / (z * a)
            },
            &|z| 2.0 * z.powi(3) * csch(z),
        ),
    };
    60.0 / PI.powi(4) * val
}

/// Second-order lateral force per area, `F = -dE/db`, for profile 2 shifted by `b`.
pub fn perturbative_lateral_force(p1: &GratingProfile, p2: &GratingProfile, d: f64, b: f64) -> Result<PolPair> {
    if !(d > 0.0) {
        return domain("separation must be positive");
    }
    let lx = p1.period();
    let top = p1.max_harmonic().min(p2.max_harmonic());
    let mut out = [0.0; 2];
    let mut lead: f64 = 0.0;
    for m in 1..=top {
        let hh = p1.coeff(m) * p2.coeff(-m);
        if hh == C64::new(0.0, 0.0) {
            continue;
        }
        let arg = 2.0 * PI * m as f64 / lx;
        let phase = hh.re * (arg * b).sin() + hh.im * (arg * b).cos();
        let mut small = true;
        for (o, pol) in out.iter_mut().zip(Polarization::BOTH) {
            let term = j_function(pol, arg * d) * arg * phase;
            lead = lead.max(term.abs());
            small &= term.abs() < 1e-12 * lead;
            *o += term;
        }
        if small && lead > 0.0 {
            break;
        }
    }
    let pref = -PI * PI / (240.0 * d.powi(5));
    Ok(PolPair { tm: pref * out[0], te: pref * out[1] })
}
