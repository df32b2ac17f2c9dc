//! Profiles, Bloch kinematics and mode indexing.
//!
//! Lengths are in units of the grating period unless a profile carries a
//! different `lx`; wave numbers are in inverse length.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Relative tolerance on `h_{-m} = conj(h_m)`.
const REALITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    /// Dirichlet condition on the surface.
    TM,
    /// Neumann condition on the surface.
    TE,
}

impl Polarization {
    pub const BOTH: [Polarization; 2] = [Polarization::TM, Polarization::TE];

    /// Reflection matrix of a flat mirror: -1 for TM, +1 for TE.
    pub fn flat_sign(self) -> f64 {
        match self {
            Polarization::TM => -1.0,
            Polarization::TE => 1.0,
        }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::TM => f.write_str("TM"),
            Polarization::TE => f.write_str("TE"),
        }
    }
}

/// Periodic height profile `h(x) = sum_m h_m exp(i G_m x)` with `G_m = 2 pi m / lx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GratingProfile {
    lx: f64,
    coeffs: BTreeMap<i64, C64>,
    sinusoid_amplitude: Option<f64>,
}

impl GratingProfile {
    /// `h(x) = a sin(2 pi x / lx)`.
    pub fn sinusoid(a: f64, lx: f64) -> Result<Self> {
        if !(a >= 0.0) || !a.is_finite() {
            return domain(format!("amplitude must be nonnegative, got {a}"));
        }
        check_period(lx)?;
        let mut coeffs = BTreeMap::new();
        if a > 0.0 {
            coeffs.insert(1, C64::new(0.0, -0.5 * a));
            coeffs.insert(-1, C64::new(0.0, 0.5 * a));
        }
        Ok(Self { lx, coeffs, sinusoid_amplitude: Some(a) })
    }

    /// Flat surface at height zero.
    pub fn flat(lx: f64) -> Result<Self> {
        Self::sinusoid(0.0, lx)
    }

    /// General real profile from its Fourier coefficients. Missing negative
    /// partners are filled in by conjugation; supplied pairs must agree.
    pub fn from_coeffs(lx: f64, coeffs: impl IntoIterator<Item = (i64, C64)>) -> Result<Self> {
        check_period(lx)?;
        let given: BTreeMap<i64, C64> = coeffs.into_iter().collect();
        let scale = given.values().map(|c| c.norm()).fold(0.0, f64::max);
        let mut full = BTreeMap::new();
        for (&m, &h) in &given {
            if !(h.re.is_finite() && h.im.is_finite()) {
                return domain(format!("coefficient h_{m} is not finite"));
            }
            if m == 0 && h.im.abs() > REALITY_TOL * scale.max(f64::MIN_POSITIVE) {
                return domain("h_0 must be real for a real profile");
            }
            match given.get(&-m) {
                Some(&partner) if (partner - h.conj()).norm() > REALITY_TOL * scale => {
                    return domain(format!("h_{} != conj(h_{m}): profile is not real", -m));
                }
                _ => {}
            }
            let h = if m == 0 { C64::new(h.re, 0.0) } else { h };
            if h != C64::new(0.0, 0.0) {
                full.insert(m, h);
                full.entry(-m).or_insert(h.conj());
            }
        }
        Ok(Self { lx, coeffs: full, sinusoid_amplitude: None })
    }

    /// Real cosine/sine series: `h(x) = h0 + sum_n [c_n cos(G_n x) + s_n sin(G_n x)]`.
    pub fn from_real_series(lx: f64, h0: f64, terms: &[(i64, f64, f64)]) -> Result<Self> {
        let mut coeffs = vec![(0, C64::new(h0, 0.0))];
        for &(n, c, s) in terms {
            if n <= 0 {
                return domain("harmonic orders in a real series must be positive");
            }
            coeffs.push((n, C64::new(0.5 * c, -0.5 * s)));
        }
        let mut merged: BTreeMap<i64, C64> = BTreeMap::new();
        for (n, h) in coeffs {
            *merged.entry(n).or_default() += h;
        }
        Self::from_coeffs(lx, merged)
    }

    pub fn period(&self) -> f64 {
        self.lx
    }

    pub fn coeff(&self, m: i64) -> C64 {
        self.coeffs.get(&m).copied().unwrap_or_default()
    }

    /// Nonzero coefficients in ascending order of `m`.
    pub fn coeffs(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        self.coeffs.iter().map(|(&m, &h)| (m, h))
    }

    /// Highest harmonic present (0 for flat or constant profiles).
    pub fn max_harmonic(&self) -> i64 {
        self.coeffs.keys().map(|m| m.abs()).max().unwrap_or(0)
    }

    pub fn is_flat(&self) -> bool {
        self.coeffs.iter().all(|(&m, _)| m == 0)
    }

    /// Mean height `h_0`.
    pub fn mean(&self) -> f64 {
        self.coeff(0).re
    }

    pub fn sinusoid_amplitude(&self) -> Option<f64> {
        self.sinusoid_amplitude
    }

    /// Complex reconstruction; the imaginary part is roundoff only.
    pub fn eval_complex(&self, x: f64) -> C64 {
        let g = 2.0 * PI / self.lx;
        self.coeffs
            .iter()
            .map(|(&m, &h)| h * C64::from_polar(1.0, g * m as f64 * x))
            .sum()
    }

    pub fn height(&self, x: f64) -> f64 {
        self.eval_complex(x).re
    }

    /// `(min h, max h)` over one period.
    pub fn extrema(&self) -> (f64, f64) {
        if let Some(a) = self.sinusoid_amplitude {
            return (-a, a);
        }
        if self.is_flat() {
            let h0 = self.mean();
            return (h0, h0);
        }
        let n = 4096.max(64 * self.max_harmonic() as usize);
        let samples = (0..n).map(|j| self.height(self.lx * j as f64 / n as f64));
        let (lo, hi) = samples.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| (lo.min(h), hi.max(h)));
        // Sampling can miss a peak by O((2 pi P/n)^2 * amplitude); pad by that.
        let amp: f64 = self.coeffs.iter().filter(|(&m, _)| m != 0).map(|(_, h)| h.norm()).sum();
        let slack = amp * (2.0 * PI * self.max_harmonic() as f64 / n as f64).powi(2);
        (lo - slack, hi + slack)
    }
}

fn check_period(lx: f64) -> Result<()> {
    if !(lx > 0.0) || !lx.is_finite() {
        return domain(format!("period must be positive, got {lx}"));
    }
    Ok(())
}

/// One `(kappa, kx)` node with its Bloch orders `m = -M..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPoint {
    kappa: f64,
    kx: f64,
    m_max: usize,
    lx: f64,
    k: Vec<f64>,
    lambda_tilde: Vec<f64>,
}

impl SpectralPoint {
    pub fn new(kappa: f64, kx: f64, m_max: usize, lx: f64) -> Result<Self> {
        check_period(lx)?;
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return domain(format!("kappa must be nonnegative, got {kappa}"));
        }
        let zone = PI / lx;
        if !(kx.abs() <= zone * (1.0 + 1e-14)) {
            return domain(format!("kx={kx} outside the Brillouin zone [-{zone}, {zone}]"));
        }
        let g = 2.0 * PI / lx;
        let k: Vec<f64> = (-(m_max as i64)..=m_max as i64).map(|m| kx + g * m as f64).collect();
        let lambda_tilde = k.iter().map(|&km| kappa.hypot(km)).collect();
        Ok(Self { kappa, kx, m_max, lx, k, lambda_tilde })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn kx(&self) -> f64 {
        self.kx
    }
    /// Maximum Fourier index M.
    pub fn m_max(&self) -> usize {
        self.m_max
    }
    pub fn period(&self) -> f64 {
        self.lx
    }
    /// N = 2M + 1.
    pub fn n(&self) -> usize {
        2 * self.m_max + 1
    }
    /// Mode indices `-M..=M` in storage order.
    pub fn modes(&self) -> impl Iterator<Item = i64> + Clone {
        let m = self.m_max as i64;
        -m..=m
    }
    /// Storage index of mode `m`.
    pub fn index(&self, m: i64) -> usize {
        (m + self.m_max as i64) as usize
    }
    pub fn mode(&self, index: usize) -> i64 {
        index as i64 - self.m_max as i64
    }
    /// Reciprocal lattice vector `G_n`.
    pub fn g(&self, n: i64) -> f64 {
        2.0 * PI * n as f64 / self.lx
    }
    /// `K_m = kx + G_m` in storage order.
    pub fn bloch(&self) -> &[f64] {
        &self.k
    }
    /// `lambda~_m = sqrt(kappa^2 + K_m^2)` in storage order.
    pub fn lambda_tilde(&self) -> &[f64] {
        &self.lambda_tilde
    }
    /// Same node with a different truncation.
    pub fn with_m(&self, m_max: usize) -> Self {
        Self::new(self.kappa, self.kx, m_max, self.lx).expect("node already validated")
    }
}

/// Rayleigh wave numbers for the node (see [`SpectralPoint::lambda_tilde`]).
pub fn rayleigh_wavenumbers(point: &SpectralPoint) -> Vec<f64> {
    point.lambda_tilde.clone()
}

/// Square of the modified wave number, `kappa^2 + K_m K_m'`; may be negative.
pub fn modified_rayleigh_sq(point: &SpectralPoint, m: i64, mp: i64) -> f64 {
    let km = point.kx + point.g(m);
    let kmp = point.kx + point.g(mp);
    point.kappa * point.kappa + km * kmp
}

/// `lambda~_{mm'} = sqrt(kappa^2 + K_m K_m')`; a negative radicand is a domain error.
pub fn modified_rayleigh_wavenumber(point: &SpectralPoint, m: i64, mp: i64) -> Result<f64> {
    let r = modified_rayleigh_sq(point, m, mp);
    if r < 0.0 {
        return domain(format!("kappa^2 + K_{m} K_{mp} = {r} < 0"));
    }
    Ok(r.sqrt())
}
