//! Log-det integrand, (kappa, kx) quadrature, energies and forces.
//!
//! Energy per unit area:
//! `E = 1/(8 pi^2) int_0^inf kappa dkappa int_BZ dkx sum_p ln det(1 - R1 U R2 U^+)`
//! with `U = diag(exp(i K_m b - lambda~_m d))`.

use std::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::qep::DEFAULT_MATCH_TOL;
use crate::quad::{brillouin_zone, semi_infinite};
use crate::scattering::{reflection_matrices, RayleighMatrix};
use crate::spectral::{GratingProfile, Polarization, SpectralPoint};

const NEGLIGIBLE_EXPONENT: f64 = 50.0;

/// Geometry of the two mirrors. The second grating is described in its own frame,
/// heights measured toward the first one: its surface is `z = d - h2(x - b)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    PlateGrating { profile: GratingProfile, d: f64 },
    GratingGrating { profile1: GratingProfile, profile2: GratingProfile, d: f64, b: f64 },
}

impl Geometry {
    pub fn plate_grating(profile: GratingProfile, d: f64) -> Result<Self> {
        let g = Geometry::PlateGrating { profile, d };
        g.validate()?;
        Ok(g)
    }

    pub fn grating_grating(profile1: GratingProfile, profile2: GratingProfile, d: f64, b: f64) -> Result<Self> {
        let g = Geometry::GratingGrating { profile1, profile2, d, b };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let (p1, p2, d, b) = self.parts();
        if !(d > 0.0) || !d.is_finite() {
            return domain(format!("separation must be positive, got {d}"));
        }
        if !b.is_finite() {
            return domain("lateral displacement must be finite");
        }
        if let Some(p2) = p2 {
            if (p1.period() - p2.period()).abs() > 1e-12 * p1.period() {
                return domain("gratings must share the same period");
            }
        }
        let reach = p1.extrema().1 + p2.map_or(0.0, |p| p.extrema().1);
        if !(d > reach) {
            return domain(format!("surfaces intersect: d={d} must exceed the combined peak height {reach}"));
        }
        Ok(())
    }

    fn parts(&self) -> (&GratingProfile, Option<&GratingProfile>, f64, f64) {
        match self {
            Geometry::PlateGrating { profile, d } => (profile, None, *d, 0.0),
            Geometry::GratingGrating { profile1, profile2, d, b } => (profile1, Some(profile2), *d, *b),
        }
    }

    pub fn d(&self) -> f64 {
        self.parts().2
    }
    pub fn b(&self) -> f64 {
        self.parts().3
    }
    pub fn period(&self) -> f64 {
        self.parts().0.period()
    }

    /// Same mirrors, different placement.
    pub fn placed(&self, d: f64, b: f64) -> Self {
        match self {
            Geometry::PlateGrating { profile, .. } => Geometry::PlateGrating { profile: profile.clone(), d },
            Geometry::GratingGrating { profile1, profile2, .. } => {
                Geometry::GratingGrating { profile1: profile1.clone(), profile2: profile2.clone(), d, b }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureSpec {
    pub n_kappa: usize,
    pub n_kx: usize,
    /// Scale of the kappa map in units of `1/(2d)`.
    pub kappa_scale: f64,
    pub rel_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { n_kappa: 64, n_kx: 32, kappa_scale: 1.0, rel_tol: 1e-6 }
    }
}

impl QuadratureSpec {
    fn validate(&self) -> Result<()> {
        if self.n_kappa < 2 || self.n_kx < 4 || !(self.kappa_scale > 0.0) || !(self.rel_tol > 0.0) {
            return domain(format!("invalid quadrature specification {self:?}"));
        }
        Ok(())
    }

    fn halved(&self) -> Self {
        Self { n_kappa: self.n_kappa / 2, n_kx: (self.n_kx / 2).max(4), ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolPair {
    pub tm: f64,
    pub te: f64,
}

impl PolPair {
    pub fn total(&self) -> f64 {
        self.tm + self.te
    }
    pub fn get(&self, pol: Polarization) -> f64 {
        match pol {
            Polarization::TM => self.tm,
            Polarization::TE => self.te,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CasimirResult {
    /// Energy per area (hbar c / L^3) or force per area (hbar c / L^4).
    pub value: f64,
    pub per_polarization: PolPair,
    pub m_used: usize,
    /// Smallest matched half-width encountered over the nodes.
    pub m_keep_min: usize,
    pub converged: bool,
    /// `|fine - coarse|` between the full rule and the half-size rule.
    pub quad_error_estimate: f64,
}

/// Settings shared by every engine computation.
#[derive(Debug, Clone, Copy)]
pub struct Engine {
    pub quad: QuadratureSpec,
    pub match_tol: f64,
    /// Largest tolerated `|Im ln det| / max(1, |Re ln det|)` per node, loosened by
    /// `1 / (2 lambda~_min d)` where `1 - M` becomes nearly singular (`kappa, kx -> 0`).
    pub imag_tol: f64,
    /// Evaluate quadrature nodes on the rayon pool.
    pub parallel: bool,
}

impl Default for Engine {
    fn default() -> Self {
        Self { quad: QuadratureSpec::default(), match_tol: DEFAULT_MATCH_TOL, imag_tol: 1e-6, parallel: true }
    }
}

/// `(d, b)` at which to evaluate a mirror pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub d: f64,
    pub b: f64,
}

/// Per-node, per-placement output: ln det and its derivatives in b and d.
#[derive(Debug, Clone, Copy, Default)]
struct NodeTerms {
    logdet: [f64; 2],
    d_db: [f64; 2],
    d_dd: [f64; 2],
}

/// `ln det(1 - R1 U R2 U^+)` and, on request, its b- and d-derivatives.
fn pair_terms(r1: &RayleighMatrix, r2: &RayleighMatrix, d: f64, b: f64, derivs: bool) -> (C64, C64, C64) {
    let n = r1.dim();
    let u: Vec<C64> = (0..n)
        .map(|i| C64::from_polar((-r1.lambda_tilde[i] * d).exp(), r1.bloch[i] * b))
        .collect();
    // X = U R2 U^+
    let x = Mat::from_fn(n, n, |i, j| u[i] * r2.entries[(i, j)] * u[j].conj());
    let m = &r1.entries * &x;
    let a = Mat::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) } - m[(i, j)]);
    let lu = a.partial_piv_lu();
    let logdet = log_det(&a);
    if !derivs {
        return (logdet, C64::default(), C64::default());
    }
    let i_unit = C64::new(0.0, 1.0);
    let dx_db = Mat::from_fn(n, n, |i, j| i_unit * (r1.bloch[i] - r1.bloch[j]) * x[(i, j)]);
    let dx_dd = Mat::from_fn(n, n, |i, j| -(r1.lambda_tilde[i] + r1.lambda_tilde[j]) * x[(i, j)]);
    let trace = |dx: &Mat<C64>| -> C64 {
        let dm = &r1.entries * dx;
        let s = lu.solve(&dm);
        -(0..n).map(|i| s[(i, i)]).sum::<C64>()
    };
    (logdet, trace(&dx_db), trace(&dx_dd))
}

fn log_det(a: &Mat<C64>) -> C64 {
    a.determinant().ln()
}

/// Reflection matrices for a mirror pair at one node, on a common window.
fn node_reflections(p1: &GratingProfile, p2: Option<&GratingProfile>, point: &SpectralPoint, match_tol: f64) -> Result<[[RayleighMatrix; 2]; 2]> {
    let (r1, _) = reflection_matrices(p1, point, match_tol)?;
    let r2 = match p2 {
        None => Polarization::BOTH.map(|p| RayleighMatrix::flat(p, point, r1[0].m_keep)),
        Some(p2) if p2 == p1 => r1.clone(),
        Some(p2) => reflection_matrices(p2, point, match_tol)?.0,
    };
    let k = r1[0].m_keep.min(r2[0].m_keep);
    let cut = |r: [RayleighMatrix; 2]| r.map(|x| if x.m_keep == k { x } else { x.truncated(k) });
    Ok([cut(r1), cut(r2)])
}

/// Real per-polarization `ln det(1 - M)` at a single node (the integrand before weights).
pub fn logdet_integrand(geom: &Geometry, point: &SpectralPoint, match_tol: f64) -> Result<PolPair> {
    geom.validate()?;
    let (p1, p2, d, b) = geom.parts();
    let [r1, r2] = node_reflections(p1, p2, point, match_tol)?;
    let mut out = [0.0; 2];
    for p in 0..2 {
        let (ld, _, _) = pair_terms(&r1[p], &r2[p], d, b, false);
        if ld.im.abs() > 1e-9 {
            return Err(Error::ComplexLogDet { im: ld.im, kappa: point.kappa(), kx: point.kx() });
        }
        out[p] = ld.re;
    }
    Ok(PolPair { tm: out[0], te: out[1] })
}

/// Results of one pass over a set of placements sharing quadrature nodes.
#[derive(Debug, Clone, Copy)]
pub struct Observables {
    pub energy: CasimirResult,
    pub lateral_force: CasimirResult,
    pub normal_force: CasimirResult,
}

impl Engine {
    pub fn with_quad(quad: QuadratureSpec) -> Self {
        Self { quad, ..Self::default() }
    }

    pub fn serial(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn energy(&self, geom: &Geometry, m: usize) -> Result<CasimirResult> {
        Ok(self.evaluate(geom, &[Placement { d: geom.d(), b: geom.b() }], m, false)?[0].energy)
    }

    pub fn lateral_force(&self, geom: &Geometry, m: usize) -> Result<CasimirResult> {
        if !matches!(geom, Geometry::GratingGrating { .. }) {
            return domain("lateral force needs two gratings");
        }
        Ok(self.evaluate(geom, &[Placement { d: geom.d(), b: geom.b() }], m, true)?[0].lateral_force)
    }

    pub fn normal_force(&self, geom: &Geometry, m: usize) -> Result<CasimirResult> {
        Ok(self.evaluate(geom, &[Placement { d: geom.d(), b: geom.b() }], m, true)?[0].normal_force)
    }

    /// Evaluate energies (and forces when `derivs`) of the mirror pair in `geom` at
    /// several placements. Reflection matrices are computed once per node and the
    /// kappa map is scaled by the smallest separation, so all placements share nodes.
    pub fn evaluate(&self, geom: &Geometry, placements: &[Placement], m: usize, derivs: bool) -> Result<Vec<Observables>> {
        self.quad.validate()?;
        if !(self.match_tol > 0.0) {
            return domain("match tolerance must be positive");
        }
        for pl in placements {
            geom.placed(pl.d, pl.b).validate()?;
        }
        let d_min = placements.iter().map(|p| p.d).fold(f64::INFINITY, f64::min);
        let fine = self.pass(geom, placements, m, derivs, &self.quad, d_min)?;
        let coarse = self.pass(geom, placements, m, derivs, &self.quad.halved(), d_min)?;
        let pref = 1.0 / (8.0 * PI * PI);
        let mk = |f: &PassSum, c: &PassSum, pick: fn(&NodeTerms) -> [f64; 2], sign: f64| {
            let v = pick(&f.terms).map(|x| sign * pref * x);
            let vc = pick(&c.terms).map(|x| sign * pref * x);
            let value = v[0] + v[1];
            let err = (value - (vc[0] + vc[1])).abs();
            CasimirResult {
                value,
                per_polarization: PolPair { tm: v[0], te: v[1] },
                m_used: m,
                m_keep_min: f.m_keep_min.min(m),
                converged: err <= self.quad.rel_tol * value.abs().max(f64::MIN_POSITIVE),
                quad_error_estimate: err,
            }
        };
        Ok(fine
            .iter()
            .zip(&coarse)
            .map(|(f, c)| Observables {
                energy: mk(f, c, |t| t.logdet, 1.0),
                // F = -dE/db and -dE/dd.
                lateral_force: mk(f, c, |t| t.d_db, -1.0),
                normal_force: mk(f, c, |t| t.d_dd, -1.0),
            })
            .collect())
    }

    fn pass(&self, geom: &Geometry, placements: &[Placement], m: usize, derivs: bool, quad: &QuadratureSpec, d_ref: f64) -> Result<Vec<PassSum>> {
        let (p1, p2, _, _) = geom.parts();
        let lx = p1.period();
        let kappas = semi_infinite(quad.n_kappa, quad.kappa_scale / (2.0 * d_ref));
        let kxs = brillouin_zone(quad.n_kx, lx);
        let nodes: Vec<(f64, f64, f64)> = kappas
            .iter()
            .flat_map(|&(k, wk)| kxs.iter().map(move |&(kx, wx)| (k, kx, wk * k * wx)))
            .collect();
        let imag_tol = self.imag_tol;
        let match_tol = self.match_tol;
        // R1 U R2 U^+ is bounded by exp(-2 lambda~ (d - peaks)); past this exponent the
        // node contributes below roundoff and is not evaluated.
        let gap = d_ref - p1.extrema().1 - p2.map_or(0.0, |p| p.extrema().1);
        let eval = |&(kappa, kx, w): &(f64, f64, f64)| -> Result<(Vec<NodeTerms>, usize)> {
            let point = SpectralPoint::new(kappa, kx, m, lx)?;
            let lt_min = point.lambda_tilde().iter().copied().fold(f64::INFINITY, f64::min);
            if 2.0 * lt_min * gap > NEGLIGIBLE_EXPONENT {
                return Ok((vec![NodeTerms::default(); placements.len()], usize::MAX));
            }
            let [r1, r2] = node_reflections(p1, p2, &point, match_tol)?;
            let mut out = Vec::with_capacity(placements.len());
            for pl in placements {
                let mut t = NodeTerms::default();
                for p in 0..2 {
                    let (ld, db, dd) = pair_terms(&r1[p], &r2[p], pl.d, pl.b, derivs);
                    let lt_min = r1[p].lambda_tilde.iter().copied().fold(f64::INFINITY, f64::min);
                    let allowed = imag_tol * ld.re.abs().max(1.0) / (2.0 * lt_min * pl.d).min(1.0);
                    if ld.im.abs() > allowed {
                        return Err(Error::ComplexLogDet { im: ld.im, kappa, kx });
                    }
                    t.logdet[p] = w * ld.re;
                    t.d_db[p] = w * db.re;
                    t.d_dd[p] = w * dd.re;
                }
                out.push(t);
            }
            Ok((out, r1[0].m_keep))
        };
        let per_node: Vec<(Vec<NodeTerms>, usize)> = if self.parallel {
            nodes.par_iter().map(eval).collect::<Result<_>>()?
        } else {
            nodes.iter().map(eval).collect::<Result<_>>()?
        };
        // Fixed summation order: node index.
        let mut sums = vec![PassSum { terms: NodeTerms::default(), m_keep_min: usize::MAX }; placements.len()];
        for (terms, mk) in &per_node {
            for (s, t) in sums.iter_mut().zip(terms) {
                for p in 0..2 {
                    s.terms.logdet[p] += t.logdet[p];
                    s.terms.d_db[p] += t.d_db[p];
                    s.terms.d_dd[p] += t.d_dd[p];
                }
                s.m_keep_min = s.m_keep_min.min(*mk);
            }
        }
        Ok(sums)
    }
}

#[derive(Debug, Clone, Copy)]
struct PassSum {
    terms: NodeTerms,
    m_keep_min: usize,
}

/// Energy per area at fixed truncation `m` with default engine settings.
pub fn casimir_energy(geom: &Geometry, quad: &QuadratureSpec, m: usize) -> Result<CasimirResult> {
    Engine::with_quad(*quad).energy(geom, m)
}

/// `-dE/db` per area (analytic trace formula).
pub fn lateral_force(geom: &Geometry, quad: &QuadratureSpec, m: usize) -> Result<CasimirResult> {
    Engine::with_quad(*quad).lateral_force(geom, m)
}

/// `-dE/dd` per area; negative means attraction.
pub fn normal_force(geom: &Geometry, quad: &QuadratureSpec, m: usize) -> Result<CasimirResult> {
    Engine::with_quad(*quad).normal_force(geom, m)
}

/// Parameters of the increase-M-by-step protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergeSpec {
    pub m_start: usize,
    pub m_step: usize,
    pub conv_tol: f64,
    pub m_max: usize,
}

impl Default for ConvergeSpec {
    fn default() -> Self {
        Self { m_start: 1, m_step: 5, conv_tol: 1e-3, m_max: 30 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    /// The last successful evaluation, flagged converged or not.
    pub result: CasimirResult,
    /// `(M, value)` for every evaluated truncation.
    pub history: Vec<(usize, f64)>,
    /// Error that ended the sweep early, if any.
    pub stopped_by: Option<String>,
}

/// Evaluate `task(M)` for `M = m_start, m_start + step, ...` until the relative change
/// between successive values is below `conv_tol` or `M` would exceed `m_max`.
pub fn converge_in_m(mut task: impl FnMut(usize) -> Result<CasimirResult>, spec: &ConvergeSpec) -> Result<ConvergenceReport> {
    if spec.m_step == 0 || spec.m_start > spec.m_max {
        return domain(format!("invalid convergence protocol {spec:?}"));
    }
    let mut prev = task(spec.m_start)?;
    let mut history = vec![(spec.m_start, prev.value)];
    let mut m = spec.m_start;
    while m + spec.m_step <= spec.m_max {
        m += spec.m_step;
        let cur = match task(m) {
            Ok(r) => r,
            Err(e) if !e.is_domain() => {
                log::info!("convergence sweep stopped at M={m}: {e}");
                return Ok(ConvergenceReport { result: CasimirResult { converged: false, ..prev }, history, stopped_by: Some(e.to_string()) });
            }
            Err(e) => return Err(e),
        };
        history.push((m, cur.value));
        let change = (cur.value - prev.value).abs() / prev.value.abs().max(f64::MIN_POSITIVE);
        if change < spec.conv_tol {
            return Ok(ConvergenceReport { result: CasimirResult { converged: true, ..cur }, history, stopped_by: None });
        }
        prev = cur;
    }
    Ok(ConvergenceReport { result: CasimirResult { converged: false, ..prev }, history, stopped_by: None })
}

/// Cap the global rayon pool at `CASIMIR_THREADS` workers when the variable is set.
/// Returns the configured count, or `None` if unset or the pool already exists.
pub fn configure_threads() -> Option<usize> {
    let n: usize = std::env::var("CASIMIR_THREADS").ok()?.trim().parse().ok()?;
    let n = n.max(1);
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok().map(|_| n)
}
