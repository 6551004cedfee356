//! Sound-speed parameter algebra, regime classification and predicted decay exponents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used to snap a sound speed onto the radiation boundary 1/3.
const RADIATION_SNAP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoundSpeedParams {
    pub cs2: f64,
    pub rs: f64,
    pub a_s: f64,
    pub lambda: f64,
    pub h: f64,
}

impl SoundSpeedParams {
    /// 1 + c_s^2
    pub fn one_plus_cs2(&self) -> f64 {
        1.0 + self.cs2
    }

    /// 1 - 2 r_s = (1 - c_s^2)/(1 + c_s^2)
    pub fn one_minus_2rs(&self) -> f64 {
        (1.0 - self.cs2) / (1.0 + self.cs2)
    }

    /// Exponent p with rho^{2 r_s} = (rho^{1-2 r_s})^p.
    pub fn p_to_q_power(&self) -> f64 {
        2.0 * self.cs2 / (1.0 - self.cs2)
    }

    /// Exponent with rho = (rho^{1-2 r_s})^p.
    pub fn p_to_rho_power(&self) -> f64 {
        (1.0 + self.cs2) / (1.0 - self.cs2)
    }
}

pub fn derive_params(cs2: f64, lambda: f64) -> Result<SoundSpeedParams> {
    if !(cs2 > 0.0 && cs2 < 1.0) {
        return Err(Error::Domain(format!("cs2 = {cs2} must lie in (0, 1)")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("Lambda = {lambda} must be positive")));
    }
    let rs = cs2 / (1.0 + cs2);
    let a_s = (3.0 * cs2 - 1.0) / (1.0 - cs2);
    Ok(SoundSpeedParams { cs2, rs, a_s, lambda, h: (lambda / 3.0).sqrt() })
}

/// The second closed form of A_s, written through r_s only.
pub fn a_s_from_rs(rs: f64) -> f64 {
    -1.0 + 2.0 * rs / (1.0 - 2.0 * rs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Orthogonal,
    Radiation,
    ExtremeTiltRestricted,
    ExtremeTiltBeyond,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Orthogonal => "orthogonal",
            Regime::Radiation => "radiation",
            Regime::ExtremeTiltRestricted => "extreme_tilt_restricted",
            Regime::ExtremeTiltBeyond => "extreme_tilt_beyond",
        }
    }
}

pub fn classify_regime(cs2: f64) -> Result<Regime> {
    if !(cs2 > 0.0 && cs2 < 1.0) {
        return Err(Error::Domain(format!("cs2 = {cs2} must lie in (0, 1)")));
    }
    let third = 1.0 / 3.0;
    Ok(if (cs2 - third).abs() <= RADIATION_SNAP {
        Regime::Radiation
    } else if cs2 < third {
        Regime::Orthogonal
    } else if cs2 < 3.0 / 7.0 {
        Regime::ExtremeTiltRestricted
    } else {
        Regime::ExtremeTiltBeyond
    })
}

/// (a0 + a1 cs2) / (b0 + b1 cs2), kept symbolic and evaluated on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRational {
    pub num: [f64; 2],
    pub den: [f64; 2],
}

impl LinearRational {
    pub const fn constant(c: f64) -> Self {
        LinearRational { num: [c, 0.0], den: [1.0, 0.0] }
    }

    pub fn eval(&self, cs2: f64) -> f64 {
        (self.num[0] + self.num[1] * cs2) / (self.den[0] + self.den[1] * cs2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub name: String,
    pub expr: LinearRational,
    /// Exponent in units of H, evaluated at the table's cs2.
    pub coefficient: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub cs2: f64,
    pub h: f64,
    pub entries: Vec<RateEntry>,
}

impl RateTable {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.coefficient)
    }

    /// Exponent in units of inverse time (coefficient times H).
    pub fn exponent(&self, name: &str) -> Option<f64> {
        self.get(name).map(|c| c * self.h)
    }
}

pub fn rate_table(params: &SoundSpeedParams) -> RateTable {
    // 4 r_s/(1-2 r_s) = 4 cs2/(1-cs2) and A_s = (3 cs2 - 1)/(1 - cs2).
    let rows: [(&str, LinearRational, &str); 11] = [
        ("v_hat", LinearRational::constant(-1.0), "hatted spatial velocity"),
        ("v0_hat", LinearRational::constant(-1.0), "hatted v0"),
        (
            "rho2rs_hat",
            LinearRational { num: [0.0, -4.0], den: [1.0, -1.0] },
            "hatted rho^{2 r_s}",
        ),
        ("k_hat", LinearRational::constant(-2.0), "hatted mean curvature"),
        ("n_hat", LinearRational::constant(-2.0), "hatted lapse"),
        ("e_hat", LinearRational::constant(-1.0), "hatted frame components"),
        ("gamma_hat", LinearRational::constant(-1.0), "hatted connection coefficients"),
        (
            "rho_background",
            LinearRational { num: [-2.0, -2.0], den: [1.0, -1.0] },
            "background density",
        ),
        (
            "tilt_cosh_theta",
            LinearRational { num: [-1.0, 3.0], den: [1.0, -1.0] },
            "background cosh(theta) growth",
        ),
        (
            "u_null",
            LinearRational { num: [-1.0, 3.0], den: [1.0, -1.0] },
            "growth of u_mu along the extreme-tilt direction",
        ),
        ("g_offdiag", LinearRational::constant(-0.5), "background off-diagonal metric factor G"),
    ];
    RateTable {
        cs2: params.cs2,
        h: params.h,
        entries: rows
            .iter()
            .map(|(name, expr, d)| RateEntry {
                name: name.to_string(),
                expr: *expr,
                coefficient: expr.eval(params.cs2),
                description: d.to_string(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radiation_boundary() {
        let p = derive_params(1.0 / 3.0, 3.0).unwrap();
        assert!((p.rs - 0.25).abs() < 1e-15);
        assert!(p.a_s.abs() < 1e-15);
        assert!((p.h - 1.0).abs() < 1e-15);
    }

    #[test]
    fn restricted_endpoint() {
        let p = derive_params(3.0 / 7.0, 3.0).unwrap();
        assert!((p.rs - 0.3).abs() < 1e-14);
        assert!((p.a_s - 0.5).abs() < 1e-14);
    }

    #[test]
    fn half() {
        let p = derive_params(0.5, 3.0).unwrap();
        assert!((p.rs - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.a_s - 1.0).abs() < 1e-14);
        assert!((a_s_from_rs(p.rs) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn domain_errors() {
        assert!(derive_params(0.0, 3.0).is_err());
        assert!(derive_params(1.0, 3.0).is_err());
        assert!(derive_params(0.5, 0.0).is_err());
        assert!(derive_params(0.5, -1.0).is_err());
        assert!(classify_regime(1.2).is_err());
    }

    #[test]
    fn regimes() {
        assert_eq!(classify_regime(0.2).unwrap(), Regime::Orthogonal);
        assert_eq!(classify_regime(1.0 / 3.0).unwrap(), Regime::Radiation);
        assert_eq!(classify_regime(0.4).unwrap(), Regime::ExtremeTiltRestricted);
        assert_eq!(classify_regime(3.0 / 7.0).unwrap(), Regime::ExtremeTiltBeyond);
        assert_eq!(classify_regime(0.6).unwrap(), Regime::ExtremeTiltBeyond);
    }

    #[test]
    fn table_values() {
        let t = rate_table(&derive_params(0.4, 3.0).unwrap());
        // r_s = 2/7 so 4 r_s/(1 - 2 r_s) = (8/7)/(3/7)
        assert!((t.get("rho2rs_hat").unwrap() + 8.0 / 3.0).abs() < 1e-14);
        assert_eq!(t.get("k_hat"), Some(-2.0));
        assert_eq!(t.get("n_hat"), Some(-2.0));
        let t = rate_table(&derive_params(0.5, 3.0).unwrap());
        assert!((t.get("rho_background").unwrap() + 6.0).abs() < 1e-14);
        assert!((t.get("tilt_cosh_theta").unwrap() - 1.0).abs() < 1e-14);
    }
}
