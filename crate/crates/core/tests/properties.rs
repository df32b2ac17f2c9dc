use casimir_core::qep::{assemble_matrices, solve_qep, DEFAULT_MATCH_TOL};
use casimir_core::scattering::reflection_matrices;
use casimir_core::{logdet_integrand, Geometry, GratingProfile, Polarization, SpectralPoint};
use proptest::prelude::*;

type Terms = Vec<(i64, f64, f64)>;

fn raw_series() -> impl Strategy<Value = (f64, Terms, f64)> {
    (
        -0.2f64..0.2,
        prop::collection::vec((1i64..5, -0.05f64..0.05, -0.05f64..0.05), 1..4),
        prop::sample::select(vec![0.5, 1.0, 2.0]),
    )
}

fn series() -> impl Strategy<Value = GratingProfile> {
    raw_series().prop_map(|(h0, terms, lx)| GratingProfile::from_real_series(lx, h0, &terms).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn real_profiles_stay_real((h0, terms, lx) in raw_series()) {
        let p = GratingProfile::from_real_series(lx, h0, &terms).unwrap();
        let max = p.extrema().1.abs().max(p.extrema().0.abs()).max(1e-300);
        for i in 0..1000 {
            let x = lx * i as f64 / 1000.0;
            let z = p.eval_complex(x);
            let direct: f64 = h0 + terms.iter().map(|&(n, c, s)| {
                let t = 2.0 * std::f64::consts::PI * n as f64 * x / lx;
                c * t.cos() + s * t.sin()
            }).sum::<f64>();
            prop_assert!(z.im.abs() < 1e-12 * max);
            prop_assert!((z.re - direct).abs() < 1e-12 * max);
        }
    }

    #[test]
    fn rayleigh_wavenumbers_mirror_under_kx(kappa in 1e-3f64..20.0, kx in -3.1f64..3.1, m_max in 0usize..8) {
        let a = SpectralPoint::new(kappa, kx, m_max, 1.0).unwrap();
        let b = SpectralPoint::new(kappa, -kx, m_max, 1.0).unwrap();
        for m in a.modes() {
            prop_assert_eq!(a.lambda_tilde()[a.index(m)], b.lambda_tilde()[b.index(-m)]);
            prop_assert!(a.lambda_tilde()[a.index(m)] >= kappa);
        }
    }

    #[test]
    fn flat_mirror_is_exact(h0 in -0.3f64..0.3, kappa in 0.01f64..10.0, kx in -3.0f64..3.0, d in 0.35f64..3.0) {
        let p = GratingProfile::from_real_series(1.0, h0, &[]).unwrap();
        let pt = SpectralPoint::new(kappa, kx, 4, 1.0).unwrap();
        let (rs, _) = reflection_matrices(&p, &pt, DEFAULT_MATCH_TOL).unwrap();
        for r in &rs {
            for m in pt.modes() {
                let lt = pt.lambda_tilde()[pt.index(m)];
                let want = r.pol.flat_sign() * (2.0 * lt * h0).exp();
                prop_assert!((r.get(m, m).re - want).abs() < 1e-12 * want.abs());
            }
        }
        let geom = Geometry::plate_grating(p, d).unwrap();
        let v = logdet_integrand(&geom, &pt, DEFAULT_MATCH_TOL).unwrap();
        let want: f64 = pt.lambda_tilde().iter().map(|&l| (1.0 - (-2.0 * l * (d - h0)).exp()).ln()).sum();
        for pol in Polarization::BOTH {
            // ln det carries an absolute roundoff of a few ulps of 1.
            prop_assert!((v.get(pol) - want).abs() < 1e-12 * want.abs() + 1e-14);
        }
    }

    #[test]
    fn spectrum_pairs_under_reflection(p in series(), kappa in 0.05f64..5.0, kx in -0.45f64..0.45) {
        // conj(P(lambda)) = P(-conj(lambda))^T for any real profile: the positive set
        // is the negative set reflected across the imaginary axis.
        let lx = p.period();
        let pt = SpectralPoint::new(kappa / lx, kx * 2.0 * std::f64::consts::PI / lx, 5, lx).unwrap();
        let sol = solve_qep(&assemble_matrices(&p, &pt), &pt).unwrap();
        prop_assert_eq!(sol.lambda.len(), pt.n());
        prop_assert_eq!(sol.positive.len(), pt.n());
        for &l in &sol.lambda {
            prop_assert!(l.re < 0.0);
            let partner = sol.positive.iter().map(|&x| (x + l.conj()).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(partner < 1e-9 * l.norm(), "{} has no reflected partner ({:e})", l, partner);
        }
    }

    #[test]
    fn shifted_even_profiles_have_conjugate_pairs(
        terms in prop::collection::vec((1i64..5, -0.05f64..0.05), 1..4),
        shift in 0.0f64..1.0,
        kappa in 0.05f64..5.0,
        kx in -0.45f64..0.45,
    ) {
        // Cosine series shifted by `shift`: the spectrum of the even profile is real or
        // conjugate-paired, and a lateral shift is a unitary similarity.
        let series: Vec<(i64, f64, f64)> = terms.iter().map(|&(n, c)| {
            let t = 2.0 * std::f64::consts::PI * n as f64 * shift;
            (n, c * t.cos(), c * t.sin())
        }).collect();
        let p = GratingProfile::from_real_series(1.0, 0.0, &series).unwrap();
        let pt = SpectralPoint::new(kappa, kx * 2.0 * std::f64::consts::PI, 5, 1.0).unwrap();
        let sol = solve_qep(&assemble_matrices(&p, &pt), &pt).unwrap();
        for &l in &sol.lambda {
            let partner = sol.lambda.iter().map(|&x| (x - l.conj()).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(partner < 1e-8 * l.norm(), "{} has no conjugate partner ({:e})", l, partner);
        }
    }

    #[test]
    fn logdet_is_negative(a in 0.0f64..0.2, d_gap in 0.05f64..1.0, kappa in 0.01f64..10.0, kx in -3.0f64..3.0) {
        let geom = Geometry::plate_grating(GratingProfile::sinusoid(a, 1.0).unwrap(), a + d_gap).unwrap();
        let pt = SpectralPoint::new(kappa, kx, 4, 1.0).unwrap();
        let v = logdet_integrand(&geom, &pt, DEFAULT_MATCH_TOL).unwrap();
        prop_assert!(v.tm < 0.0 && v.te < 0.0, "{:?}", v);
    }
}
