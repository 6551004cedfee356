use tilt_core::background::*;
use tilt_core::diagnostics::{fit_rate, hatted_fluid};
use tilt_core::euler_flrw::*;
use tilt_core::s3_frame::{ModeSpec, S3Spectral};
use tilt_core::{Error, derive_params};

#[test]
fn homogeneous_matches_closed_form() {
    for cs2 in [0.36, 0.8] {
        let p = derive_params(cs2, 3.0).unwrap();
        let bg = flrw(&p, FlrwKind::ClosedDeSitter);
        let (c1, c2) = euler_constants_from_data(1.0, 0.1, p.h);
        let x0 = homogeneous_euler_exact(c1, c2, &p, &bg, 1.0).unwrap();
        let sp = S3Spectral::new(0).unwrap();
        let sys = EulerFlrw::new(&sp, p, bg);
        let init = FluidFieldState::homogeneous(&sp, 1.0, x0.v1, x0.rho.powf(2.0 * p.rs));
        let mut cfg = StepperConfig::new(5e-4, 0, 5.0);
        cfg.output_every = 200;
        let res = sys.evolve(&init, &cfg, |_| {}).unwrap();
        assert!(res.failure.is_none());
        for s in &res.snapshots {
            let x = homogeneous_euler_exact(c1, c2, &p, &bg, s.t).unwrap();
            let rho = sp.mean(&s.q()).powf(1.0 / (2.0 * p.rs));
            assert!((sp.mean(&s.v(1)) / x.v1 - 1.0).abs() < 1e-8);
            assert!((rho / x.rho - 1.0).abs() < 1e-8, "cs2 {cs2} t {}", s.t);
        }
    }
}

#[test]
fn perturbation_decays_at_hubble_rate() {
    let p = derive_params(0.5, 3.0).unwrap();
    let bg = flrw(&p, FlrwKind::ClosedDeSitter);
    let (c1, c2) = euler_constants_from_data(1.0, 0.1, p.h);
    let x0 = homogeneous_euler_exact(c1, c2, &p, &bg, 1.0).unwrap();
    let sp = S3Spectral::new(2).unwrap();
    let sys = EulerFlrw::new(&sp, p, bg);
    let modes = ModeSpec { degrees: vec![1, 2], seed: 3 };
    let init = perturb_background(&sp, 1.0, x0.v1, x0.rho.powf(2.0 * p.rs), 1e-3, &modes).unwrap();
    let mut cfg = StepperConfig::new(0.01, 2, 7.0);
    cfg.output_every = 10;
    let (mut ts, mut vs) = (vec![], vec![]);
    sys.evolve(&init, &cfg, |s| {
        let x = homogeneous_euler_exact(c1, c2, &p, &bg, s.t).unwrap();
        let h = hatted_fluid(&sp, s, x.v1, x.rho.powf(2.0 * p.rs)).unwrap();
        ts.push(s.t);
        vs.push((1..4).map(|i| sp.sobolev_norm_sq(&h.v[i], 2)).sum::<f64>().sqrt());
    })
    .unwrap();
    let f = fit_rate(&ts, &vs, (4.0, 7.0), p.h).unwrap();
    assert!((f.exponent + 1.0).abs() < 0.05, "{f:?}");
}

#[test]
fn cfl_guard() {
    let p = derive_params(0.5, 3.0).unwrap();
    let sp = S3Spectral::new(4).unwrap();
    let sys = EulerFlrw::new(&sp, p, flrw(&p, FlrwKind::ClosedDeSitter));
    let init = FluidFieldState::homogeneous(&sp, 0.0, 0.1, 0.5);
    let cfg = StepperConfig::new(10.0, 4, 20.0);
    assert!(matches!(sys.evolve(&init, &cfg, |_| {}), Err(Error::Domain(_))));
}
