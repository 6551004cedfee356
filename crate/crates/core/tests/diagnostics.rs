use proptest::prelude::*;
use tilt_core::derive_params;
use tilt_core::diagnostics::{LimitSample, fit_rate, limits};

proptest! {
    #[test]
    fn fit_recovers_exponent(rate in -5.0f64..2.0, c in 0.1f64..10.0, h in 0.5f64..2.0) {
        let ts: Vec<f64> = (0..40).map(|i| 1.0 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|t| c * (rate * h * t).exp()).collect();
        let f = fit_rate(&ts, &ys, (1.0, 5.0), h).unwrap();
        prop_assert!((f.exponent - rate).abs() < 1e-9);
        prop_assert!(f.rms_residual < 1e-9);
    }

    /// Exactly self-similar late-time data have zero drift and a null limit.
    #[test]
    fn limits_of_exact_asymptotics(cs2 in 0.5f64..0.9, u in 0.2f64..3.0) {
        let p = derive_params(cs2, 3.0).unwrap();
        let wq = 4.0 * p.rs / (1.0 - 2.0 * p.rs);
        let samples: Vec<LimitSample> = (0..60)
            .map(|i| {
                let t = 6.0 + 0.05 * i as f64;
                let v1 = u * (-p.h * t).exp();
                let q = 0.3 * (-wq * p.h * t).exp();
                let e = (-p.h * t).exp();
                LimitSample { t, e: [[e, 0.0, 0.0], [0.0, 2.0 * e, 0.0], [0.0, 0.0, e]], v: [(v1 * v1 + q).sqrt(), v1, 0.0, 0.0], q }
            })
            .collect();
        let l = limits(&samples, &p, 1e-2).unwrap();
        prop_assert!((l.e_inf[1][1] - 2.0).abs() < 1e-12);
        prop_assert!((l.g_inf[1][1] - 0.25).abs() < 1e-12);
        prop_assert!((l.v_inf[1] - u).abs() < 1e-12);
        prop_assert!((l.rho2rs_inf - 0.3).abs() < 1e-12);
        prop_assert!(l.null_defect < 1e-3);
    }
}
