//! Gauss–Legendre rules and the (kappa, kx) node layout.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Tricomi's initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
}

/// Gauss–Legendre rule mapped to `[lo, hi]`.
pub fn gl_interval(n: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    x.iter().zip(&w).map(|(&xi, &wi)| (c + h * xi, h * wi)).collect()
}

/// Rule for `int_0^inf f(k) dk` via `k = s t / (1 - t)`.
pub fn semi_infinite(n: usize, s: f64) -> Vec<(f64, f64)> {
    gl_interval(n, 0.0, 1.0)
        .into_iter()
        .map(|(t, w)| (s * t / (1.0 - t), w * s / ((1.0 - t) * (1.0 - t))))
        .collect()
}

/// Rule for `int_{-pi/lx}^{pi/lx} f(kx) dkx`, graded quadratically toward `kx = 0` on
/// both halves where the integrand has a `|kx|` kink as `kappa -> 0`.
pub fn brillouin_zone(n: usize, lx: f64) -> Vec<(f64, f64)> {
    let half = (n / 2).max(1);
    let zone = PI / lx;
    let right: Vec<(f64, f64)> = gl_interval(half, 0.0, 1.0)
        .into_iter()
        .map(|(v, w)| (zone * v * v, w * 2.0 * zone * v))
        .collect();
    right.iter().rev().map(|&(k, w)| (-k, w)).chain(right.iter().copied()).collect()
}

/// Integrate a smooth function over `[lo, hi]`, doubling the node count until two
/// successive rules agree to `rel_tol`. Returns `(value, error estimate)`.
pub fn integrate_adaptive(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, rel_tol: f64, n0: usize, n_max: usize) -> (f64, f64) {
    let eval = |n: usize| gl_interval(n, lo, hi).iter().map(|&(x, w)| w * f(x)).sum::<f64>();
    let mut n = n0;
    let mut prev = eval(n);
    loop {
        n *= 2;
        let cur = eval(n);
        let err = (cur - prev).abs();
        if err <= rel_tol * cur.abs() || n >= n_max {
            return (cur, err);
        }
        prev = cur;
    }
}
