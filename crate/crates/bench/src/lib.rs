//! Fixtures shared by the benchmarks.

use tilt_core::background::{AsymptoticData, BackgroundTrajectory, integrate_background};
use tilt_core::{SoundSpeedParams, derive_params};

pub fn params() -> SoundSpeedParams {
    derive_params(0.4, 3.0).expect("valid sound speed")
}

/// Tilted background on [2, 5].
pub fn tilted_background(p: &SoundSpeedParams) -> BackgroundTrajectory {
    let data = AsymptoticData { k3: [0.0; 3], k3_23: 0.0, g_inf: [1.0, 1.2, 0.8], v1_inf: 1.0, p_inf: 0.1 };
    let tr = integrate_background(&data, p, 2.0, 10.0, 1e-12).expect("background integrates");
    tr.refined(2.0, 5.0, 1e-12).expect("background integrates")
}
