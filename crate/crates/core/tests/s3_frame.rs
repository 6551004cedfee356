use ndarray::Array1;
use proptest::prelude::*;
use tilt_core::s3_frame::{S3Spectral, SpectralField, VOLUME, build_grid_exact};

fn random_field(sp: &S3Spectral, seed: u64) -> SpectralField {
    use rand::{RngExt, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    SpectralField { coeffs: Array1::from_iter((0..sp.dim()).map(|_| rng.random_range(-1.0..1.0))) }
}

fn rel(a: &SpectralField, b: &SpectralField) -> f64 {
    let d = &a.coeffs - &b.coeffs;
    d.dot(&d).sqrt() / b.coeffs.dot(&b.coeffs).sqrt().max(1e-300)
}

fn eps(i: usize, j: usize, l: usize) -> f64 {
    match (i, j, l) {
        (1, 2, 3) | (2, 3, 1) | (3, 1, 2) => 1.0,
        (2, 1, 3) | (3, 2, 1) | (1, 3, 2) => -1.0,
        _ => 0.0,
    }
}

#[test]
fn commutators_on_x1() {
    let sp = S3Spectral::new(2).unwrap();
    let x1 = sp.analyze(&sp.grid.coordinate(0)).unwrap();
    let y12 = sp.apply_y(1, &sp.apply_y(2, &x1).unwrap()).unwrap();
    let y21 = sp.apply_y(2, &sp.apply_y(1, &x1).unwrap()).unwrap();
    let comm = sp.synthesize(&SpectralField { coeffs: &y12.coeffs - &y21.coeffs }).unwrap();
    let x3 = sp.grid.coordinate(2);
    for (c, x) in comm.iter().zip(&x3) {
        assert!((c + 2.0 * x).abs() < 1e-12);
    }
    let checks = [(2, 3), (3, 2)];
    for (i, a) in checks {
        let v = sp.synthesize(&sp.apply_y(i, &x1).unwrap()).unwrap();
        let xa = sp.grid.coordinate(a);
        for (p, q) in v.iter().zip(&xa) {
            assert!((p + q).abs() < 1e-12);
        }
    }
}

#[test]
fn commutator_identity_l8() {
    let sp = S3Spectral::new(8).unwrap();
    for seed in 0..100 {
        let f = random_field(&sp, seed);
        for i in 1..=3 {
            for j in 1..=3 {
                if i == j {
                    continue;
                }
                let a = sp.apply_y(i, &sp.apply_y(j, &f).unwrap()).unwrap();
                let b = sp.apply_y(j, &sp.apply_y(i, &f).unwrap()).unwrap();
                let mut rhs = SpectralField::zeros(sp.dim());
                for l in 1..=3 {
                    let e = eps(i, j, l);
                    if e != 0.0 {
                        rhs.coeffs = &rhs.coeffs + &(sp.apply_y(l, &f).unwrap().coeffs * (2.0 * e));
                    }
                }
                let lhs = SpectralField { coeffs: &a.coeffs - &b.coeffs };
                let d = &lhs.coeffs - &rhs.coeffs;
                let r = d.dot(&d).sqrt() / sp.l2_norm(&f);
                assert!(r < 1e-10, "seed {seed} ({i},{j}) {r}");
            }
        }
    }
}

#[test]
fn casimir_l8() {
    let sp = S3Spectral::new(8).unwrap();
    for k in 0..=6 {
        let f = sp.project_degree(&random_field(&sp, k as u64 + 7), k);
        assert!(sp.casimir_check(&f, k) < 1e-10, "k = {k}");
    }
    let x1 = sp.analyze(&sp.grid.coordinate(0)).unwrap();
    assert!(sp.casimir_check(&x1, 1) < 1e-12);
    let x1x2: Vec<f64> = sp.grid.nodes.iter().map(|n| n.x()[0] * n.x()[1]).collect();
    let f = sp.project_degree(&sp.analyze(&x1x2).unwrap(), 2);
    assert!(sp.l2_norm(&f) > 0.1);
    assert!(sp.casimir_check(&f, 2) < 1e-12);
}

#[test]
fn degree_one_content_of_x1() {
    let sp = S3Spectral::new(4).unwrap();
    let x1 = sp.analyze(&sp.grid.coordinate(0)).unwrap();
    for (c, lab) in x1.coeffs.iter().zip(&sp.labels) {
        if lab.k != 1 {
            assert!(c.abs() < 1e-13);
        }
    }
    // dense-grid projection agrees with the default grid
    let dense = S3Spectral::with_grid(build_grid_exact(4, 20, 32).unwrap()).unwrap();
    let x1d = dense.analyze(&dense.grid.coordinate(0)).unwrap();
    assert!(rel(&x1d, &x1) < 1e-13);
}

#[test]
fn constants_and_norms() {
    let sp = S3Spectral::new(1).unwrap();
    let one = sp.analyze(&vec![1.0; sp.n_points()]).unwrap();
    assert!((one.coeffs[0] - VOLUME.sqrt()).abs() < 1e-13);
    assert!(one.coeffs.iter().skip(1).all(|c| c.abs() < 1e-14));
    assert!((sp.l2_norm(&one) - VOLUME.sqrt()).abs() < 1e-13);
    for i in 1..=3 {
        assert!(sp.l2_norm(&sp.apply_y(i, &one).unwrap()) < 1e-13);
    }
    let x1 = sp.analyze(&sp.grid.coordinate(0)).unwrap();
    let n0 = sp.l2_norm(&x1).powi(2);
    // each Y_i x1 is another coordinate with the same L2 norm
    assert!((sp.sobolev_norm_sq(&x1, 1) - 4.0 * n0).abs() < 1e-12);
    assert!((n0 - VOLUME / 4.0).abs() < 1e-12);
}

#[test]
fn dense_quadrature_orthogonality_l4() {
    let sp = S3Spectral::new(4).unwrap();
    let dense = S3Spectral::with_grid(build_grid_exact(4, 24, 32).unwrap()).unwrap();
    // the same basis on two different grids gives the same coefficients
    for seed in 0..5 {
        let f = random_field(&sp, seed);
        let v = dense.synthesize(&f).unwrap();
        let back = dense.analyze(&v).unwrap();
        assert!(rel(&back, &f) < 1e-12);
        let v0 = sp.synthesize(&f).unwrap();
        let direct: f64 = v0.iter().zip(&sp.grid.weights).map(|(a, w)| a * a * w).sum();
        let dense_sum: f64 = v.iter().zip(&dense.grid.weights).map(|(a, w)| a * a * w).sum();
        assert!((direct - dense_sum).abs() < 1e-11 * dense_sum);
    }
}

#[test]
fn sobolev_oracle() {
    let sp = S3Spectral::new(5).unwrap();
    let f = random_field(&sp, 11);
    for m in 0..4 {
        let direct = sp.sobolev_norm_sq(&f, m);
        let spectral: f64 = f
            .coeffs
            .iter()
            .zip(&sp.labels)
            .map(|(c, lab)| {
                let lam = (lab.k * (lab.k + 2)) as f64;
                (0..=m).map(|j| lam.powi(j as i32)).sum::<f64>() * c * c
            })
            .sum();
        assert!((direct - spectral).abs() < 1e-10 * spectral, "m = {m}");
    }
}

#[test]
fn filter_factors_shape() {
    let sp = S3Spectral::new(6).unwrap();
    let f = sp.filter_factors(36.0);
    for (s, lab) in f.iter().zip(&sp.labels) {
        if lab.k <= 4 {
            assert_eq!(*s, 1.0);
        } else {
            assert!(*s < 1.0);
        }
    }
}

#[test]
fn snapshot_csv() {
    let sp = S3Spectral::new(1).unwrap();
    let f = sp.constant(2.0);
    let mut buf = Vec::new();
    sp.write_snapshot_csv(&f, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("index,k,two_j,two_m,two_m_prime,mu,nu,n,part,coeff"));
    assert_eq!(text.lines().count(), 1 + sp.dim());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip(seed in any::<u64>(), l in 0usize..7) {
        let sp = S3Spectral::new(l).unwrap();
        let f = random_field(&sp, seed);
        let back = sp.analyze(&sp.synthesize(&f).unwrap()).unwrap();
        prop_assert!(rel(&back, &f) < 1e-12);
    }

    #[test]
    fn skew_adjoint(seed in any::<u64>(), i in 1usize..4) {
        let sp = S3Spectral::new(5).unwrap();
        let f = random_field(&sp, seed);
        let g = random_field(&sp, seed.wrapping_add(1));
        let a = sp.apply_y(i, &f).unwrap().coeffs.dot(&g.coeffs);
        let b = f.coeffs.dot(&sp.apply_y(i, &g).unwrap().coeffs);
        prop_assert!((a + b).abs() <= 1e-10 * sp.l2_norm(&f) * sp.l2_norm(&g));
    }

    #[test]
    fn sobolev_homogeneous(seed in any::<u64>(), c in -5.0f64..5.0, m in 0usize..4) {
        let sp = S3Spectral::new(3).unwrap();
        let f = random_field(&sp, seed);
        let cf = SpectralField { coeffs: f.coeffs.mapv(|x| c * x) };
        let a = sp.sobolev_norm(&cf, m);
        let b = c.abs() * sp.sobolev_norm(&f, m);
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        prop_assert!(sp.sobolev_norm(&f, 0) == sp.l2_norm(&f) || (sp.sobolev_norm(&f, 0) - sp.l2_norm(&f)).abs() < 1e-14);
    }
}
