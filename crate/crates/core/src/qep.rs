//! C-method matrices and the quadratic eigenvalue problem
//! `lambda^2 (A2 - I) V - lambda A1 V + A0 V = 0`.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::spectral::{GratingProfile, SpectralPoint};

/// Default relative tolerance for eigenvalue / Rayleigh wave number matching.
pub const DEFAULT_MATCH_TOL: f64 = 1e-3;

const GRAZING_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct CMethodMatrices {
    /// `(Gh)_{mm'} = G_{m-m'} h_{m-m'}`.
    pub gh: Mat<C64>,
    /// Diagonal of `K`.
    pub k: Vec<f64>,
    pub a0: Mat<C64>,
    pub a1: Mat<C64>,
    pub a2: Mat<C64>,
    flat: bool,
}

impl CMethodMatrices {
    pub fn n(&self) -> usize {
        self.k.len()
    }
    /// True when the profile has no corrugation (Gh = 0).
    pub fn is_flat(&self) -> bool {
        self.flat
    }
}

pub fn assemble_matrices(profile: &GratingProfile, point: &SpectralPoint) -> CMethodMatrices {
    let n = point.n();
    let k = point.bloch().to_vec();
    let gh = Mat::from_fn(n, n, |i, j| {
        let d = point.mode(i) - point.mode(j);
        profile.coeff(d) * point.g(d)
    });
    let flat = (0..n).all(|i| (0..n).all(|j| gh[(i, j)] == C64::new(0.0, 0.0)));
    let a2 = &gh * &gh;
    let a1 = Mat::from_fn(n, n, |i, j| gh[(i, j)] * (k[i] + k[j]));
    let kap2 = point.kappa() * point.kappa();
    let a0 = Mat::from_fn(n, n, |i, j| if i == j { C64::new(kap2 + k[i] * k[i], 0.0) } else { C64::new(0.0, 0.0) });
    CMethodMatrices { gh, k, a0, a1, a2, flat }
}

/// Eigenpairs of the QEP split by the sign of `Re(lambda)`.
#[derive(Debug, Clone)]
pub struct ModalSolution {
    /// Eigenvalues with `Re < 0`, sorted by `|Im|` then `|lambda|`.
    pub lambda: Vec<C64>,
    /// Column `q` is `V_q`, scaled so its largest component is exactly 1.
    pub v: Mat<C64>,
    /// Eigenvalues with `Re > 0` (diagnostics only).
    pub positive: Vec<C64>,
    /// `max_q |lambda^2 (A2-I)V - lambda A1 V + A0 V| / |V|`, relative to `max |A0|`.
    pub residual: f64,
}

impl ModalSolution {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }
}

/// How the linearized pencil `[[0, I], [-A0, A1]] - mu diag(I, A2 - I)` is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PencilRoute {
    /// Reduce to `B^-1 A` and use a standard eigensolver. For a real profile `Gh` is
    /// anti-Hermitian, so `A2 - I = -(H^2 + I)` has all singular values >= 1.
    #[default]
    Standard,
    /// QZ on the pencil directly. Much slower on the nearly degenerate clusters met
    /// at large kappa; kept as an independent route.
    Qz,
}

pub fn solve_qep(mats: &CMethodMatrices, point: &SpectralPoint) -> Result<ModalSolution> {
    solve_qep_with(mats, point, PencilRoute::Standard)
}

pub fn solve_qep_with(mats: &CMethodMatrices, point: &SpectralPoint, route: PencilRoute) -> Result<ModalSolution> {
    let n = mats.n();
    if mats.flat {
        let lt = point.lambda_tilde();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| lt[i].total_cmp(&lt[j]));
        let lambda = order.iter().map(|&i| C64::new(-lt[i], 0.0)).collect();
        let v = Mat::from_fn(n, n, |i, q| if i == order[q] { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        let mut positive: Vec<C64> = order.iter().map(|&i| C64::new(lt[i], 0.0)).collect();
        positive.reverse();
        return Ok(ModalSolution { lambda, v, positive, residual: 0.0 });
    }

    // Solve for mu = lambda / sigma so the pencil blocks are all O(1).
    let lt_max = point.lambda_tilde().iter().copied().fold(0.0, f64::max);
    let sigma = lt_max.max(f64::MIN_POSITIVE);
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let a = Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => zero,
        (true, false) => if j - n == i { one } else { zero },
        (false, true) => -mats.a0[(i - n, j)] / (sigma * sigma),
        (false, false) => mats.a1[(i - n, j - n)] / sigma,
    });
    let b_lower = Mat::from_fn(n, n, |i, j| mats.a2[(i, j)] - if i == j { one } else { zero });
    let solver_err = |reason: String| Error::Solver { kappa: point.kappa(), kx: point.kx(), m: point.m_max(), reason };

    let (pairs, u): (Vec<(C64, C64)>, Mat<C64>) = match route {
        PencilRoute::Standard => {
            let bottom = b_lower.partial_piv_lu().solve(Mat::from_fn(n, 2 * n, |i, j| a[(n + i, j)]));
            let c = Mat::from_fn(2 * n, 2 * n, |i, j| if i < n { a[(i, j)] } else { bottom[(i - n, j)] });
            let ev = c.eigen().map_err(|e| solver_err(format!("{e:?}")))?;
            ((0..2 * n).map(|q| (ev.S()[q], one)).collect(), ev.U().to_owned())
        }
        PencilRoute::Qz => {
            let b = Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
                (true, true) => if i == j { one } else { zero },
                (false, false) => b_lower[(i - n, j - n)],
                _ => zero,
            });
            let gevd = a.generalized_eigen(&b).map_err(|e| solver_err(format!("{e:?}")))?;
            let pairs: Vec<(C64, C64)> = (0..2 * n).map(|q| (gevd.S_a()[q], gevd.S_b()[q])).collect();
            if pairs.iter().any(|&(al, be)| al == zero && be == zero) {
                return Err(solver_err("QZ returned an undetermined eigenvalue pair".into()));
            }
            (pairs, gevd.U().to_owned())
        }
    };

    let mut neg = Vec::with_capacity(n);
    let mut positive = Vec::with_capacity(n);
    for (q, &(alpha, beta)) in pairs.iter().enumerate() {
        if beta.norm() <= f64::EPSILON * alpha.norm() {
            return Err(solver_err("infinite eigenvalue in a regular pencil".into()));
        }
        let lam = alpha / beta * sigma;
        if !(lam.re.is_finite() && lam.im.is_finite()) {
            return Err(solver_err("non-finite eigenvalue".into()));
        }
        if lam.re.abs() < GRAZING_TOL * lt_max {
            return Err(Error::Grazing { re: lam.re, im: lam.im, kappa: point.kappa(), kx: point.kx() });
        }
        if lam.re < 0.0 {
            neg.push((lam, q));
        } else {
            positive.push(lam);
        }
    }
    if neg.len() != n {
        return Err(Error::Split { expected: n, found: neg.len(), kappa: point.kappa(), kx: point.kx() });
    }
    // Keys are snapped to a grid of 1e-10 max|lambda| so that real eigenvalues and conjugate
    // partners are not ordered by roundoff; the grid keeps the order total.
    let grid = 1e-10 * neg.iter().map(|(l, _)| l.norm()).fold(f64::MIN_POSITIVE, f64::max);
    let snap = |v: f64| (v / grid).round();
    neg.sort_by(|(x, _), (y, _)| {
        snap(x.im.abs())
            .total_cmp(&snap(y.im.abs()))
            .then(snap(x.norm()).total_cmp(&snap(y.norm())))
            .then(x.im.total_cmp(&y.im))
    });

    let mut v = Mat::<C64>::zeros(n, n);
    for (col, &(_, q)) in neg.iter().enumerate() {
        let pivot = (0..n)
            .max_by(|&i, &j| u[(i, q)].norm().total_cmp(&u[(j, q)].norm()))
            .expect("nonempty");
        let s = u[(pivot, q)];
        if s.norm() == 0.0 {
            return Err(solver_err("eigenvector with vanishing displacement block".into()));
        }
        for i in 0..n {
            v[(i, col)] = u[(i, q)] / s;
        }
        v[(pivot, col)] = C64::new(1.0, 0.0);
    }
    let lambda: Vec<C64> = neg.iter().map(|x| x.0).collect();
    let residual = qep_residual(mats, &lambda, &v);
    Ok(ModalSolution { lambda, v, positive, residual })
}

fn qep_residual(mats: &CMethodMatrices, lambda: &[C64], v: &Mat<C64>) -> f64 {
    let n = mats.n();
    let a0_norm = (0..n).map(|i| mats.a0[(i, i)].norm()).fold(0.0, f64::max);
    let a1v = &mats.a1 * v;
    let a2v = &mats.a2 * v;
    let mut worst: f64 = 0.0;
    for (q, &lam) in lambda.iter().enumerate() {
        let mut r2 = 0.0;
        let mut v2 = 0.0;
        for i in 0..n {
            let vi = v[(i, q)];
            let r = lam * lam * (a2v[(i, q)] - vi) - lam * a1v[(i, q)] + mats.a0[(i, i)] * vi;
            r2 += r.norm_sqr();
            v2 += vi.norm_sqr();
        }
        worst = worst.max((r2 / v2).sqrt() / a0_norm);
    }
    worst
}

/// Assignment of negative-set eigenvalues to Bloch orders.
#[derive(Debug, Clone)]
pub struct Matching {
    /// `q_of[index(m)]` is the eigenvalue index assigned to mode `m`.
    pub q_of: Vec<Option<usize>>,
    /// Largest `k` with every `|m| <= k` matched.
    pub m_keep: usize,
    /// Modes whose nearest eigenvalue had already been claimed by a smaller `|m|`.
    pub ambiguous: Vec<i64>,
}

impl Matching {
    pub fn q(&self, point: &SpectralPoint, m: i64) -> Option<usize> {
        self.q_of[point.index(m)]
    }
    pub fn matched_modes(&self, point: &SpectralPoint) -> Vec<i64> {
        point.modes().filter(|&m| self.q(point, m).is_some()).collect()
    }
}

/// `|lambda + lambda~| / lambda~`.
pub fn relative_mismatch(lambda: C64, lambda_tilde: f64) -> f64 {
    (lambda + lambda_tilde).norm() / lambda_tilde
}

/// Greedy matching in the order `0, -1, +1, -2, +2, ...`, stopping at the first failure.
pub fn match_eigenvalues(sol: &ModalSolution, point: &SpectralPoint, match_tol: f64) -> Result<Matching> {
    let lt = point.lambda_tilde();
    let mut used = vec![false; sol.n()];
    let mut q_of = vec![None; point.n()];
    let mut ambiguous = Vec::new();
    let order = std::iter::once(0).chain((1..=point.m_max() as i64).flat_map(|k| [-k, k]));
    for m in order {
        let ltm = lt[point.index(m)];
        let rel: Vec<f64> = sol.lambda.iter().map(|&l| relative_mismatch(l, ltm)).collect();
        let best_any = (0..rel.len()).min_by(|&a, &b| rel[a].total_cmp(&rel[b]));
        let best_free = (0..rel.len()).filter(|&q| !used[q]).min_by(|&a, &b| rel[a].total_cmp(&rel[b]));
        if let Some(q) = best_any {
            if used[q] && rel[q] < match_tol {
                log::warn!("mode {m} competes for an eigenvalue already matched to a smaller |m|");
                ambiguous.push(m);
            }
        }
        match best_free {
            Some(q) if rel[q] < match_tol => {
                used[q] = true;
                q_of[point.index(m)] = Some(q);
            }
            other => {
                if m == 0 {
                    let best = other.map_or(f64::INFINITY, |q| rel[q]);
                    return Err(Error::NoFundamentalMatch { kappa: point.kappa(), kx: point.kx(), best });
                }
                break;
            }
        }
    }
    let mut m_keep = 0;
    while m_keep < point.m_max() {
        let k = m_keep as i64 + 1;
        if q_of[point.index(k)].is_some() && q_of[point.index(-k)].is_some() {
            m_keep += 1;
        } else {
            break;
        }
    }
    Ok(Matching { q_of, m_keep, ambiguous })
}

/// One row of the eigenvalue diagnostic table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EigenRow {
    pub q: usize,
    pub re: f64,
    pub im: f64,
    /// Bloch order whose `-lambda~_m` is nearest.
    pub nearest_m: i64,
    pub nearest_neg_lambda_tilde: f64,
    pub rel_mismatch: f64,
    /// Within tolerance of some `-lambda~_m`.
    pub within_tol: bool,
    /// Assigned by the greedy matching.
    pub matched: bool,
}

pub fn eigen_table(sol: &ModalSolution, point: &SpectralPoint, matching: &Matching, match_tol: f64) -> Vec<EigenRow> {
    let lt = point.lambda_tilde();
    sol.lambda
        .iter()
        .enumerate()
        .map(|(q, &l)| {
            let (idx, rel) = (0..point.n())
                .map(|i| (i, relative_mismatch(l, lt[i])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty");
            EigenRow {
                q,
                re: l.re,
                im: l.im,
                nearest_m: point.mode(idx),
                nearest_neg_lambda_tilde: -lt[idx],
                rel_mismatch: rel,
                within_tol: rel < match_tol,
                matched: matching.q_of.contains(&Some(q)),
            }
        })
        .collect()
}

/// Assemble, solve and match in one call.
pub fn modal_analysis(profile: &GratingProfile, point: &SpectralPoint, match_tol: f64) -> Result<(CMethodMatrices, ModalSolution, Matching)> {
    let mats = assemble_matrices(profile, point);
    let sol = solve_qep(&mats, point)?;
    let matching = match_eigenvalues(&sol, point, match_tol)?;
    Ok((mats, sol, matching))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn sinusoid_matrices() {
        let p = GratingProfile::sinusoid(0.1, 1.0).unwrap();
        let pt = SpectralPoint::new(1.0, 1.0, 1, 1.0).unwrap();
        let m = assemble_matrices(&p, &pt);
        let off = c(0.0, -0.1 * PI);
        let expect = [[c(0.0, 0.0), off, c(0.0, 0.0)], [off, c(0.0, 0.0), off], [c(0.0, 0.0), off, c(0.0, 0.0)]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.gh[(i, j)] - expect[i][j]).norm() < 1e-15);
            }
            assert_eq!(m.a1[(i, i)], c(0.0, 0.0));
        }
        // (A1)_{0,1} = -2 i pi a (kx + pi (m + m'))
        let a01 = m.a1[(pt.index(0), pt.index(1))];
        assert!((a01 - c(0.0, -2.0 * PI * 0.1 * (1.0 + PI))).norm() < 1e-14);
        assert!((m.a0[(1, 1)] - c(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn flat_eigenpairs() {
        let p = GratingProfile::flat(1.0).unwrap();
        let pt = SpectralPoint::new(0.7, -0.4, 3, 1.0).unwrap();
        let (mats, sol, m) = modal_analysis(&p, &pt, DEFAULT_MATCH_TOL).unwrap();
        assert!(mats.a1.norm_max() == 0.0 && mats.a2.norm_max() == 0.0);
        assert_eq!(m.m_keep, 3);
        for mode in pt.modes() {
            let q = m.q(&pt, mode).unwrap();
            assert_eq!(sol.lambda[q], c(-pt.lambda_tilde()[pt.index(mode)], 0.0));
            assert_eq!(sol.v[(pt.index(mode), q)], c(1.0, 0.0));
        }
    }

    #[test]
    fn pencil_route_on_flat_profile_agrees() {
        // Force the dense route with a vanishing but nonzero corrugation.
        let p = GratingProfile::sinusoid(1e-300, 1.0).unwrap();
        let pt = SpectralPoint::new(1.0, 0.5, 3, 1.0).unwrap();
        let mats = assemble_matrices(&p, &pt);
        assert!(!mats.is_flat());
        let sol = solve_qep(&mats, &pt).unwrap();
        let mut got: Vec<f64> = sol.lambda.iter().map(|l| -l.re).collect();
        let mut want = pt.lambda_tilde().to_vec();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12 * w);
        }
    }

    #[test]
    fn standard_and_qz_routes_agree() {
        let p = GratingProfile::sinusoid(0.1, 1.0).unwrap();
        for (kappa, kx) in [(1.0, 1.0), (0.3, -2.0), (4.0, 0.1)] {
            let pt = SpectralPoint::new(kappa, kx, 6, 1.0).unwrap();
            let mats = assemble_matrices(&p, &pt);
            let s = solve_qep_with(&mats, &pt, PencilRoute::Standard).unwrap();
            let q = solve_qep_with(&mats, &pt, PencilRoute::Qz).unwrap();
            for (x, y) in s.lambda.iter().zip(&q.lambda) {
                assert!((x - y).norm() < 1e-9 * x.norm(), "{x} vs {y}");
            }
            // Same columns up to the max-component normalization.
            for c in 0..s.n() {
                let d = (0..s.n()).map(|i| (s.v[(i, c)] - q.v[(i, c)]).norm()).fold(0.0, f64::max);
                assert!(d < 1e-8, "column {c}: {d:e}");
            }
        }
    }

    #[test]
    fn residual_and_conjugate_pairs() {
        let p = GratingProfile::sinusoid(0.1, 1.0).unwrap();
        let pt = SpectralPoint::new(1.0, 1.0, 10, 1.0).unwrap();
        let (_, sol, _) = modal_analysis(&p, &pt, DEFAULT_MATCH_TOL).unwrap();
        assert_eq!(sol.n(), 21);
        assert_eq!(sol.positive.len(), 21);
        assert!(sol.residual < 1e-8, "residual {}", sol.residual);
        for &l in &sol.lambda {
            let partner = sol.lambda.iter().map(|&x| (x - l.conj()).norm()).fold(f64::INFINITY, f64::min);
            assert!(partner < 1e-8 * l.norm());
        }
    }

    #[test]
    fn interior_defect_is_far_below_edge_defect() {
        // Truncation only perturbs the outermost modes at small amplitude.
        let p = GratingProfile::sinusoid(0.002, 1.0).unwrap();
        let pt = SpectralPoint::new(1.0, 0.5, 5, 1.0).unwrap();
        let (_, sol, m) = modal_analysis(&p, &pt, DEFAULT_MATCH_TOL).unwrap();
        let d = |k: i64| relative_mismatch(sol.lambda[m.q(&pt, k).unwrap()], pt.lambda_tilde()[pt.index(k)]);
        assert!(d(0) < 1e-12, "m=0 defect {:e}", d(0));
        assert!(d(5) > 1e-4 && d(-5) > 1e-4, "edge defects {:e} {:e}", d(5), d(-5));
    }

    #[test]
    fn edge_defect_is_second_order() {
        let pt = SpectralPoint::new(1.0, 0.5, 5, 1.0).unwrap();
        let defect = |a: f64| {
            let p = GratingProfile::sinusoid(a, 1.0).unwrap();
            let (_, sol, m) = modal_analysis(&p, &pt, DEFAULT_MATCH_TOL).unwrap();
            relative_mismatch(sol.lambda[m.q(&pt, 5).unwrap()], pt.lambda_tilde()[pt.index(5)])
        };
        let ratio = defect(2e-3) / defect(1e-3);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn large_kappa_cluster_is_resolved() {
        // QZ returns an undetermined pair on this node.
        let p = GratingProfile::sinusoid(0.01, 1.0).unwrap();
        let pt = SpectralPoint::new(909.109_203_937_844_5, -8.823_177_030_257_708e-5, 5, 1.0).unwrap();
        let (_, sol, m) = modal_analysis(&p, &pt, DEFAULT_MATCH_TOL).unwrap();
        assert!(sol.residual < 1e-12);
        // The lambda~_m are degenerate to ~1e-5 here, so only the low orders match.
        assert!(m.q(&pt, 0).is_some());
    }

    #[test]
    fn match_degrades_with_amplitude() {
        let pt = SpectralPoint::new(1.0, 1.0, 10, 1.0).unwrap();
        let keep = |a: f64| {
            let p = GratingProfile::sinusoid(a, 1.0).unwrap();
            modal_analysis(&p, &pt, DEFAULT_MATCH_TOL).unwrap().2.m_keep
        };
        let ks: Vec<usize> = [0.0, 0.1, 0.2, 0.3].iter().map(|&a| keep(a)).collect();
        assert_eq!(ks[0], 10);
        assert!(ks.windows(2).all(|w| w[1] <= w[0]), "{ks:?}");
        assert!(ks[3] < ks[1]);
    }
}
