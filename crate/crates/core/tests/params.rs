use proptest::prelude::*;
use tilt_core::params::a_s_from_rs;
use tilt_core::{Regime, classify_regime, derive_params, rate_table};

#[test]
fn restricted_endpoint_values() {
    let p = derive_params(3.0 / 7.0, 3.0).unwrap();
    assert!((p.rs - 0.3).abs() < 1e-14);
    assert!((p.a_s - 0.5).abs() < 1e-14);
    assert_eq!(classify_regime(3.0 / 7.0).unwrap(), Regime::ExtremeTiltBeyond);
    assert_eq!(classify_regime(0.4).unwrap(), Regime::ExtremeTiltRestricted);
}

proptest! {
    #[test]
    fn a_s_identity(cs2 in 0.01f64..0.99) {
        let p = derive_params(cs2, 3.0).unwrap();
        prop_assert!((p.a_s - a_s_from_rs(p.rs)).abs() <= 1e-13 * p.a_s.abs().max(1.0));
        prop_assert!(p.rs > 0.0 && p.rs < 0.5);
    }

    #[test]
    fn density_weights(cs2 in 0.01f64..0.99, lambda in 0.1f64..10.0) {
        let p = derive_params(cs2, lambda).unwrap();
        // rho^{2 r_s} rho^{1 - 2 r_s} = rho and the table's hatted-density exponent is -4 r_s/(1 - 2 r_s)
        prop_assert!((p.p_to_q_power() + 1.0 - p.p_to_rho_power()).abs() < 1e-12 * p.p_to_rho_power());
        let t = rate_table(&p);
        let w = -4.0 * p.rs / (1.0 - 2.0 * p.rs);
        prop_assert!((t.get("rho2rs_hat").unwrap() - w).abs() <= 1e-12 * w.abs().max(1.0));
        prop_assert!((t.get("tilt_cosh_theta").unwrap() - p.a_s).abs() <= 1e-12 * p.a_s.abs().max(1.0));
        prop_assert!((t.exponent("k_hat").unwrap() + 2.0 * p.h).abs() < 1e-15);
    }

    #[test]
    fn regime_monotone(a in 0.001f64..0.999, b in 0.001f64..0.999) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(classify_regime(lo).unwrap() <= classify_regime(hi).unwrap());
        let sign = derive_params(hi, 3.0).unwrap().a_s.signum();
        match classify_regime(hi).unwrap() {
            Regime::Orthogonal => prop_assert!(sign < 0.0),
            Regime::Radiation => {}
            _ => prop_assert!(sign > 0.0),
        }
    }
}
