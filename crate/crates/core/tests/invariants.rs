use bandedge::discrete::{checkerboard_bands, checkerboard_eigenvalues, CheckerboardModel};
use bandedge::fibre::bloch_eigs;
use bandedge::lattice::{DualLattice, Lattice2D, QuasiMomentum, ShiftVector, SupercellMap, Vec2};
use bandedge::linalg::{hermitian_eig, HermitianMatrix};
use bandedge::perturb::second_order_z;
use bandedge::potential::{make_shift_perturbation, FourierPotential};
use num_complex::Complex64;
use proptest::prelude::*;

fn oblique() -> DualLattice {
    Lattice2D::from_generators([[1.0, 0.0], [0.3, 1.1]]).unwrap().dual()
}

fn real_potential(dual: DualLattice, terms: &[((i64, i64), f64, f64)]) -> FourierPotential {
    let coeffs = terms.iter().flat_map(|&((a, b), re, im)| {
        [([a, b], Complex64::new(re, im)), ([-a, -b], Complex64::new(re, -im))]
    });
    let mut sum = FourierPotential::zero(dual.clone());
    for (m, c) in coeffs {
        let single = FourierPotential::from_coeffs(dual.clone(), [(m, c)], false).unwrap();
        sum = sum.add(&single).unwrap();
    }
    FourierPotential::from_coeffs(dual, sum.iter(), true).unwrap()
}

fn terms() -> impl Strategy<Value = Vec<((i64, i64), f64, f64)>> {
    prop::collection::vec((((-2i64..=2), (1i64..=2)), -1.0..1.0f64, -1.0..1.0f64), 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_then_unfold_is_canonical(x in -20.0..20.0f64, y in -20.0..20.0f64, n in 1u32..6) {
        let dual = oblique();
        let map = SupercellMap::new(&dual, n).unwrap();
        let k = QuasiMomentum(Vec2::new(x, y));
        let (kappa, l) = map.fold(&k);
        prop_assert!(l < map.m());
        let back = map.unfold(&kappa, l).unwrap();
        prop_assert!(dual.congruent(&back.0, &k.0, 1e-9));
        let f = map.fine_dual().fractional(&kappa.0);
        prop_assert!((0.0..1.0).contains(&f.x) && (0.0..1.0).contains(&f.y));
    }

    #[test]
    fn refinement_preserves_the_function(t in terms(), p in 1u64..7, mu in (-2i64..=2, 1i64..=2), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let dual = oblique();
        let w = real_potential(dual.clone(), &t);
        let Ok(nu) = ShiftVector::new([mu.0, mu.1], 1, p, &dual) else { return Ok(()) };
        let fine = nu.refined_dual(&dual);
        let wf = w.refine_to(&fine).unwrap();
        let pt = Vec2::new(x, y);
        prop_assert!((w.evaluate(&pt) - wf.evaluate(&pt)).norm() < 1e-10);
        prop_assert!(wf.is_real());
        let v = make_shift_perturbation(&nu, Complex64::new(0.3, 0.4), &fine).unwrap();
        prop_assert!(v.evaluate(&pt).im.abs() < 1e-12);
        prop_assert!(v.sup_norm_bound() <= 1.0 + 1e-12);
    }

    #[test]
    fn hermitian_eig_is_a_decomposition(seed in prop::collection::vec(-1.0..1.0f64, 2 * 36)) {
        let n = 6;
        let h = HermitianMatrix::from_fn(n, |i, j| {
            let (a, b) = (i.min(j), i.max(j));
            let c = Complex64::new(seed[a * n + b], seed[n * n + a * n + b]);
            match i.cmp(&j) {
                std::cmp::Ordering::Equal => Complex64::new(c.re, 0.0),
                std::cmp::Ordering::Less => c,
                std::cmp::Ordering::Greater => c.conj(),
            }
        })
        .unwrap();
        let e = hermitian_eig(&h).unwrap();
        prop_assert!(e.max_residual(&h) < 1e-12);
        prop_assert!(e.orthonormality_defect() < 1e-12);
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let trace: f64 = (0..n).map(|i| h.entries()[(i, i)].re).sum();
        prop_assert!((trace - e.values.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn real_potentials_have_even_bands(t in terms(), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let w = real_potential(oblique(), &t);
        let k = Vec2::new(x, y);
        let a = bloch_eigs(&w, &k, 40.0).unwrap();
        let b = bloch_eigs(&w, &(-k), 40.0).unwrap();
        prop_assert_eq!(a.dim(), b.dim());
        for (u, v) in a.values.iter().zip(&b.values) {
            prop_assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn z_split_identity(t in terms(), x in -3.0..3.0f64, y in -3.0..3.0f64, p in 3u64..8) {
        let dual = Lattice2D::square(1.0).dual();
        let w = real_potential(dual.clone(), &t);
        let nu = ShiftVector::new([1, 0], 1, p, &dual).unwrap();
        let Ok(z) = second_order_z(&w, &Vec2::new(x, y), &nu, 40.0, 8, 0) else { return Ok(()) };
        prop_assert!((z.principal + z.r_term + z.r0_term - z.direct).abs() <= 1e-10 * (1.0 + z.direct.abs()));
    }

    #[test]
    fn checkerboard_eigenvalues_stay_in_bands(v0 in -3.0..3.0f64, v1 in -3.0..3.0f64, x in -4.0..4.0f64, y in -4.0..4.0f64) {
        let m = CheckerboardModel { v0, v1 };
        let e = checkerboard_eigenvalues(&m, &Vec2::new(x, y));
        let bands = checkerboard_bands(&m);
        for (val, (lo, hi)) in e.iter().zip(bands) {
            prop_assert!(*val >= lo - 1e-12 && *val <= hi + 1e-12);
        }
        prop_assert!((e[0] + e[1] - v0 - v1).abs() < 1e-12);
    }
}
