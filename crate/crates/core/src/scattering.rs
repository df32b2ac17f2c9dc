//! Boundary conditions, c coefficients and Rayleigh reflection matrices.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::qep::{modal_analysis, CMethodMatrices, Matching, ModalSolution};
use crate::spectral::{GratingProfile, Polarization, SpectralPoint};

/// Samples per period for the trapezoid evaluation of L on general profiles.
pub const DEFAULT_L_SAMPLES: usize = 4096;
/// Largest acceptable condition number of the boundary matrix F.
pub const MAX_CONDITION: f64 = 1e12;

/// `e^{-x} I_n(x)` for `n = 0..=n_max`, `x >= 0`, by Miller's backward recurrence
/// normalised with `sum_n e^{-x} I_n(x) = 1`.
pub fn bessel_i_scaled(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if x < 1e-6 {
        // Two series terms; the backward recurrence would overflow in its first step.
        let (h, q) = (0.5 * x, 0.25 * x * x);
        let mut lead = (-x).exp();
        for (n, v) in out.iter_mut().enumerate() {
            if n > 0 {
                lead *= h / n as f64;
            }
            *v = lead * (1.0 + q / (n as f64 + 1.0));
        }
        return out;
    }
    let start = n_max + 30 + (12.0 * x.sqrt()).ceil() as usize;
    let (mut above, mut cur) = (0.0_f64, 1e-280_f64);
    let mut sum = 0.0;
    for k in (1..=start).rev() {
        let below = above + 2.0 * k as f64 / x * cur;
        above = cur;
        cur = below;
        // `cur` now holds I_{k-1}; `above` holds I_k.
        if k <= n_max + 1 {
            out[k - 1] = cur;
        }
        sum += 2.0 * above;
        if cur > 1e250 {
            let s = 1e-250;
            cur *= s;
            above *= s;
            sum *= s;
            out.iter_mut().for_each(|v| *v *= s);
        }
    }
    sum += cur;
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// `L(+-)_{mm'} = (1/Lx) int du exp(-i G_{m'-m} u +- lambda~_m h(u))`, stored with each
/// row divided by `exp(scale_m)` so that large `lambda~_m h` cannot overflow.
#[derive(Debug, Clone)]
pub struct LCoefficients {
    pub plus: Mat<C64>,
    pub minus: Mat<C64>,
    pub log_scale_plus: Vec<f64>,
    pub log_scale_minus: Vec<f64>,
}

impl LCoefficients {
    pub fn plus_unscaled(&self, i: usize, j: usize) -> C64 {
        self.plus[(i, j)] * self.log_scale_plus[i].exp()
    }
    pub fn minus_unscaled(&self, i: usize, j: usize) -> C64 {
        self.minus[(i, j)] * self.log_scale_minus[i].exp()
    }
}

pub fn l_coefficients(profile: &GratingProfile, point: &SpectralPoint) -> LCoefficients {
    l_coefficients_with(profile, point, DEFAULT_L_SAMPLES)
}

pub fn l_coefficients_with(profile: &GratingProfile, point: &SpectralPoint, samples: usize) -> LCoefficients {
    match profile.sinusoid_amplitude() {
        Some(a) => l_sinusoid(a, point),
        None => l_trapezoid(profile, point, samples),
    }
}

fn l_sinusoid(a: f64, point: &SpectralPoint) -> LCoefficients {
    let n = point.n();
    let lt = point.lambda_tilde();
    let mut plus = Mat::<C64>::zeros(n, n);
    let mut minus = Mat::<C64>::zeros(n, n);
    let ipow = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)];
    for i in 0..n {
        let bessel = bessel_i_scaled(n - 1, lt[i] * a);
        for j in 0..n {
            let d = point.mode(i) - point.mode(j);
            let mag = bessel[d.unsigned_abs() as usize];
            plus[(i, j)] = ipow[d.rem_euclid(4) as usize] * mag;
            minus[(i, j)] = ipow[(-d).rem_euclid(4) as usize] * mag;
        }
    }
    let scale: Vec<f64> = lt.iter().map(|&l| l * a).collect();
    LCoefficients { plus, minus, log_scale_plus: scale.clone(), log_scale_minus: scale }
}

fn l_trapezoid(profile: &GratingProfile, point: &SpectralPoint, samples: usize) -> LCoefficients {
    let n = point.n();
    assert!(samples > 2 * n, "too few samples for the requested mode window");
    let lx = profile.period();
    let h: Vec<f64> = (0..samples).map(|j| profile.height(lx * j as f64 / samples as f64)).collect();
    let (lo, hi) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(samples);
    let lt = point.lambda_tilde();
    let mut buf = vec![C64::new(0.0, 0.0); samples];
    let mut build = |sign: f64, shift: f64| {
        let mut mat = Mat::<C64>::zeros(n, n);
        let mut scales = Vec::with_capacity(n);
        for i in 0..n {
            let s = lt[i] * shift;
            for (b, &hj) in buf.iter_mut().zip(&h) {
                *b = C64::new((sign * lt[i] * hj - s).exp() / samples as f64, 0.0);
            }
            fft.process(&mut buf);
            for j in 0..n {
                let d = point.mode(j) - point.mode(i);
                mat[(i, j)] = buf[d.rem_euclid(samples as i64) as usize];
            }
            scales.push(s);
        }
        (mat, scales)
    };
    let (plus, log_scale_plus) = build(1.0, hi);
    let (minus, log_scale_minus) = build(-1.0, -lo);
    LCoefficients { plus, minus, log_scale_plus, log_scale_minus }
}

/// Linear system `F c^T = B` (columns of B indexed by the incident mode).
#[derive(Debug, Clone)]
pub struct BoundarySystem {
    pub f: Mat<C64>,
    pub b: Mat<C64>,
}

pub fn build_boundary_system(
    pol: Polarization,
    sol: &ModalSolution,
    mats: &CMethodMatrices,
    l: &LCoefficients,
    point: &SpectralPoint,
) -> BoundarySystem {
    let n = point.n();
    let lt = point.lambda_tilde();
    match pol {
        Polarization::TM => BoundarySystem {
            f: sol.v.clone(),
            b: Mat::from_fn(n, n, |mp, m| -l.plus[(m, mp)]),
        },
        Polarization::TE => {
            let ghk = Mat::from_fn(n, n, |i, j| mats.gh[(i, j)] * mats.k[j]);
            let p = Mat::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) } - mats.a2[(i, j)]);
            let ghk_v = &ghk * &sol.v;
            let p_v = &p * &sol.v;
            let f = Mat::from_fn(n, n, |i, q| ghk_v[(i, q)] + sol.lambda[q] * p_v[(i, q)]);
            let lt_plus = l.plus.transpose().to_owned();
            let ghk_l = &ghk * &lt_plus;
            let p_l = &p * &lt_plus;
            let b = Mat::from_fn(n, n, |mp, m| -(ghk_l[(mp, m)] + lt[m] * p_l[(mp, m)]));
            BoundarySystem { f, b }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CCoefficients {
    /// `c[(m, q)]` in storage order for `m`.
    pub c: Mat<C64>,
    /// `max |F c^T - B| / max |B|`.
    pub residual: f64,
    /// 2-norm condition number of F.
    pub condition: f64,
}

pub fn solve_c_coefficients(sys: &BoundarySystem, point: &SpectralPoint) -> Result<CCoefficients> {
    let sv = sys.f.singular_values().map_err(|e| Error::Solver {
        kappa: point.kappa(),
        kx: point.kx(),
        m: point.m_max(),
        reason: format!("svd of boundary matrix: {e:?}"),
    })?;
    let condition = sv[0] / sv[sv.len() - 1];
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond: condition, kappa: point.kappa(), kx: point.kx() });
    }
    let x = sys.f.partial_piv_lu().solve(&sys.b);
    let r = &sys.f * &x - &sys.b;
    let residual = r.norm_max() / sys.b.norm_max();
    Ok(CCoefficients { c: x.transpose().to_owned(), residual, condition })
}

/// Reflection matrix on the matched window `|m|, |m'| <= m_keep`.
#[derive(Debug, Clone)]
pub struct RayleighMatrix {
    pub pol: Polarization,
    pub m_keep: usize,
    pub entries: Mat<C64>,
    pub kappa: f64,
    pub kx: f64,
    /// `K_m` on the window.
    pub bloch: Vec<f64>,
    /// `lambda~_m` on the window.
    pub lambda_tilde: Vec<f64>,
}

impl RayleighMatrix {
    pub fn dim(&self) -> usize {
        2 * self.m_keep + 1
    }

    /// `R(m, m')` by mode label.
    pub fn get(&self, m: i64, mp: i64) -> C64 {
        let o = self.m_keep as i64;
        self.entries[((m + o) as usize, (mp + o) as usize)]
    }

    /// Flat mirror on `|m| <= m_keep`.
    pub fn flat(pol: Polarization, point: &SpectralPoint, m_keep: usize) -> Self {
        let n = 2 * m_keep + 1;
        let lo = point.index(-(m_keep as i64));
        let s = C64::new(pol.flat_sign(), 0.0);
        RayleighMatrix {
            pol,
            m_keep,
            entries: Mat::from_fn(n, n, |i, j| if i == j { s } else { C64::new(0.0, 0.0) }),
            kappa: point.kappa(),
            kx: point.kx(),
            bloch: point.bloch()[lo..lo + n].to_vec(),
            lambda_tilde: point.lambda_tilde()[lo..lo + n].to_vec(),
        }
    }

    /// Central `(2k+1)^2` block.
    pub fn truncated(&self, k: usize) -> Self {
        assert!(k <= self.m_keep);
        let off = self.m_keep - k;
        let n = 2 * k + 1;
        RayleighMatrix {
            pol: self.pol,
            m_keep: k,
            entries: self.entries.as_ref().submatrix(off, off, n, n).to_owned(),
            kappa: self.kappa,
            kx: self.kx,
            bloch: self.bloch[off..off + n].to_vec(),
            lambda_tilde: self.lambda_tilde[off..off + n].to_vec(),
        }
    }
}

/// Largest relative violation of reciprocity,
/// `lambda~_{m'} R_{mm'}(kx) = lambda~_m R_{-m',-m}(-kx)`, over `|m|, |m'| <= window`.
/// `mirror` must be computed for the same profile and kappa at `-kx`.
pub fn reciprocity_defect(r: &RayleighMatrix, mirror: &RayleighMatrix, window: usize) -> f64 {
    assert!(window <= r.m_keep.min(mirror.m_keep), "window exceeds the matched modes");
    let o = r.m_keep as i64;
    let lt = |m: i64| r.lambda_tilde[(m + o) as usize];
    let w = window as i64;
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for m in -w..=w {
        for mp in -w..=w {
            let lhs = r.get(m, mp) * lt(mp);
            worst = worst.max((lhs - mirror.get(-mp, -m) * lt(m)).norm());
            scale = scale.max(lhs.norm());
        }
    }
    worst / scale
}

/// `R_{mm'} = c_{m,q(m')} (V_{q(m')})_{m'} / L(-)_{m'm'}` on the matched window.
pub fn rayleigh_matrix(
    pol: Polarization,
    c: &CCoefficients,
    sol: &ModalSolution,
    matching: &Matching,
    l: &LCoefficients,
    point: &SpectralPoint,
) -> Result<RayleighMatrix> {
    let k = matching.m_keep;
    let n = 2 * k + 1;
    let lo = point.index(-(k as i64));
    let mut denom = Vec::with_capacity(n);
    for jw in 0..n {
        let j = lo + jw;
        let q = matching.q_of[j].expect("window is fully matched");
        let lm = l.minus[(j, j)];
        if lm.norm() < 1e-12 {
            return Err(Error::SingularNormalization { m: point.mode(j) });
        }
        denom.push((q, sol.v[(j, q)] / lm, l.log_scale_minus[j]));
    }
    let entries = Mat::from_fn(n, n, |iw, jw| {
        let i = lo + iw;
        let (q, ratio, s_minus) = denom[jw];
        c.c[(i, q)] * ratio * (l.log_scale_plus[i] - s_minus).exp()
    });
    Ok(RayleighMatrix {
        pol,
        m_keep: k,
        entries,
        kappa: point.kappa(),
        kx: point.kx(),
        bloch: point.bloch()[lo..lo + n].to_vec(),
        lambda_tilde: point.lambda_tilde()[lo..lo + n].to_vec(),
    })
}

/// Diagnostics gathered while computing a reflection matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScatterDiagnostics {
    pub qep_residual: f64,
    pub condition: f64,
    pub c_residual: f64,
}

/// Both polarizations from a single modal solution. Flat profiles short-circuit to `-+I`.
pub fn reflection_matrices(
    profile: &GratingProfile,
    point: &SpectralPoint,
    match_tol: f64,
) -> Result<([RayleighMatrix; 2], ScatterDiagnostics)> {
    if profile.is_flat() {
        let shift = profile.mean();
        let mut out = Polarization::BOTH.map(|p| RayleighMatrix::flat(p, point, point.m_max()));
        if shift != 0.0 {
            // A raised plane reflects with an extra exp(2 lambda~ h0).
            for r in &mut out {
                for i in 0..r.dim() {
                    r.entries[(i, i)] *= (2.0 * r.lambda_tilde[i] * shift).exp();
                }
            }
        }
        return Ok((out, ScatterDiagnostics::default()));
    }
    let (mats, sol, matching) = modal_analysis(profile, point, match_tol)?;
    let l = l_coefficients(profile, point);
    let mut diag = ScatterDiagnostics { qep_residual: sol.residual, ..Default::default() };
    let mut build = |pol| -> Result<RayleighMatrix> {
        let sys = build_boundary_system(pol, &sol, &mats, &l, point);
        let c = solve_c_coefficients(&sys, point)?;
        diag.condition = diag.condition.max(c.condition);
        diag.c_residual = diag.c_residual.max(c.residual);
        rayleigh_matrix(pol, &c, &sol, &matching, &l, point)
    };
    let tm = build(Polarization::TM)?;
    let te = build(Polarization::TE)?;
    Ok(([tm, te], diag))
}

pub fn reflection_matrix(profile: &GratingProfile, point: &SpectralPoint, pol: Polarization, match_tol: f64) -> Result<RayleighMatrix> {
    let ([tm, te], _) = reflection_matrices(profile, point, match_tol)?;
    Ok(match pol {
        Polarization::TM => tm,
        Polarization::TE => te,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qep::{assemble_matrices, match_eigenvalues, solve_qep, DEFAULT_MATCH_TOL};

    #[test]
    fn bessel_values() {
        // Reference values of e^{-x} I_n(x).
        let b = bessel_i_scaled(3, 0.2);
        assert!((b[1] * 0.2f64.exp() - 0.100_500_834_028_125_11).abs() < 1e-14);
        assert!((b[0] * 0.2f64.exp() - 1.010_025_027_795_145_7).abs() < 1e-14);
        let b = bessel_i_scaled(2, 1.0);
        assert!((b[0] - 0.465_759_607_593_640_8).abs() < 1e-14);
        assert!((b[2] - 0.049_938_776_894_223_56).abs() < 1e-14);
        let b = bessel_i_scaled(5, 700.0);
        assert!((b[0] - 0.015_081_295_651_531_358).abs() < 1e-14, "{}", b[0]);
        assert!((b[5] - 0.014_814_188_973_601_688).abs() < 1e-14);
        assert!(bessel_i_scaled(60, 1e-3).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sinusoid_l_entry() {
        let p = GratingProfile::sinusoid(0.1, 1.0).unwrap();
        let pt = SpectralPoint::new(2.0, 0.0, 1, 1.0).unwrap();
        let l = l_coefficients(&p, &pt);
        // lambda~_0 = 2, m - m' = 1  ->  i I_1(0.2)
        let v = l.plus_unscaled(pt.index(0), pt.index(-1));
        assert!((v - C64::new(0.0, 0.100_500_834_028_125_11)).norm() < 1e-13);
    }

    #[test]
    fn flat_l_is_identity() {
        let p = GratingProfile::flat(1.0).unwrap();
        let pt = SpectralPoint::new(1.3, 0.2, 3, 1.0).unwrap();
        let l = l_coefficients(&p, &pt);
        for i in 0..pt.n() {
            for j in 0..pt.n() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((l.plus_unscaled(i, j) - e).norm() < 1e-15);
                assert!((l.minus_unscaled(i, j) - e).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn trapezoid_matches_bessel_for_sinusoid() {
        let a = 0.3;
        let pt = SpectralPoint::new(0.8, -0.6, 6, 1.0).unwrap();
        let exact = l_coefficients(&GratingProfile::sinusoid(a, 1.0).unwrap(), &pt);
        let general = GratingProfile::from_real_series(1.0, 0.0, &[(1, 0.0, a)]).unwrap();
        let quad = l_coefficients(&general, &pt);
        for i in 0..pt.n() {
            for j in 0..pt.n() {
                let (e, q) = (exact.plus_unscaled(i, j), quad.plus_unscaled(i, j));
                assert!((e - q).norm() <= 1e-12 * e.norm().max(1.0), "plus {i} {j}: {e} {q}");
                let (e, q) = (exact.minus_unscaled(i, j), quad.minus_unscaled(i, j));
                assert!((e - q).norm() <= 1e-12 * e.norm().max(1.0), "minus {i} {j}: {e} {q}");
            }
        }
    }

    #[test]
    fn trapezoid_matches_second_order_expansion() {
        // L(+-)_{mm'} = d_{mm'} +- lt_m h_{m'-m} + lt_m^2/2 sum_n h_n h_{m'-m-n} + O(h^3)
        let p = GratingProfile::from_real_series(1.0, 0.0, &[(1, 0.0, 0.05), (2, 0.0, 0.02)]).unwrap();
        let pt = SpectralPoint::new(1.0, 0.4, 3, 1.0).unwrap();
        let l = l_coefficients(&p, &pt);
        let lt = pt.lambda_tilde();
        let mut worst: f64 = 0.0;
        for i in 0..pt.n() {
            for j in 0..pt.n() {
                let d = pt.mode(j) - pt.mode(i);
                let sq: C64 = (-4..=4).map(|k| p.coeff(k) * p.coeff(d - k)).sum();
                for (sign, got) in [(1.0, l.plus_unscaled(i, j)), (-1.0, l.minus_unscaled(i, j))] {
                    let e = if i == j { 1.0 } else { 0.0 };
                    let approx = e + sign * lt[i] * p.coeff(d) + 0.5 * lt[i] * lt[i] * sq;
                    worst = worst.max((got - approx).norm() / (lt[i] * 0.07).powi(3));
                }
            }
        }
        assert!(worst < 1.0, "third-order remainder too large: {worst}");
    }

    #[test]
    fn tiny_argument_bessel() {
        let v = bessel_i_scaled(3, 1e-7);
        assert!((v[0] - (-1e-7f64).exp() * (1.0 + 2.5e-15)).abs() < 1e-16);
        assert!((v[1] / 5e-8 - 1.0).abs() < 1e-6);
        assert!(bessel_i_scaled(4, 1e-300).iter().all(|v| v.is_finite()));
        let (lo, hi) = (bessel_i_scaled(4, 0.999_999e-6), bessel_i_scaled(4, 1.000_001e-6));
        assert!(lo.iter().zip(&hi).all(|(a, b)| (a - b).abs() <= 1e-5 * b.abs()));
    }

    #[test]
    fn flat_boundary_systems() {
        let p = GratingProfile::sinusoid(1e-300, 1.0).unwrap();
        let pt = SpectralPoint::new(1.0, 0.3, 2, 1.0).unwrap();
        let mats = assemble_matrices(&p, &pt);
        let sol = solve_qep(&mats, &pt).unwrap();
        let matching = match_eigenvalues(&sol, &pt, DEFAULT_MATCH_TOL).unwrap();
        let l = l_coefficients(&p, &pt);
        for pol in Polarization::BOTH {
            let sys = build_boundary_system(pol, &sol, &mats, &l, &pt);
            let c = solve_c_coefficients(&sys, &pt).unwrap();
            let r = rayleigh_matrix(pol, &c, &sol, &matching, &l, &pt).unwrap();
            for i in 0..pt.n() {
                for j in 0..pt.n() {
                    let e = if i == j { pol.flat_sign() } else { 0.0 };
                    assert!((r.entries[(i, j)] - e).norm() < 1e-12, "{pol:?} {i} {j}: {}", r.entries[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn c_is_first_order_rayleigh_for_tm() {
        let a = 1e-3;
        let p = GratingProfile::sinusoid(a, 1.0).unwrap();
        let pt = SpectralPoint::new(1.0, 0.5, 4, 1.0).unwrap();
        let (mats, sol, matching) = modal_analysis(&p, &pt, DEFAULT_MATCH_TOL).unwrap();
        let l = l_coefficients(&p, &pt);
        let c = solve_c_coefficients(&build_boundary_system(Polarization::TM, &sol, &mats, &l, &pt), &pt).unwrap();
        let lt = pt.lambda_tilde();
        // Second-order terms grow like (lambda_tilde a)^2 with the outer neighbours.
        let bound = 10.0 * (lt[pt.index(-3)] * a).powi(2);
        for m in -2..=2i64 {
            for mp in -2..=2i64 {
                let q = matching.q(&pt, mp).unwrap();
                let i = pt.index(m);
                let got = c.c[(i, q)] * l.log_scale_plus[i].exp() * sol.v[(pt.index(mp), q)];
                let want = -(if m == mp { 1.0 } else { 0.0 }) - 2.0 * lt[i] * p.coeff(mp - m);
                assert!((got - want).norm() < bound, "{m} {mp}: {got} vs {want}");
            }
        }
    }
}
