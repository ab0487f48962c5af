//! Bundled reference data: the two analysis cavities and a reconstructed
//! sideband state with its reported standard deviations.

use crate::cavity::CavityParams;
use crate::covariance::CovarianceParams;

pub const SIGNAL_CAVITY_JSON: &str = include_str!("../fixtures/signal.json");
pub const IDLER_CAVITY_JSON: &str = include_str!("../fixtures/idler.json");
pub const REFERENCE_STATE_JSON: &str = include_str!("../fixtures/reference_state.json");
pub const REFERENCE_STATE_STD_JSON: &str = include_str!("../fixtures/reference_state_std.json");
pub const VACUUM_STATE_JSON: &str = include_str!("../fixtures/vacuum_state.json");

/// Analysis frequency used with the bundled fixtures.
pub const ANALYSIS_FREQUENCY_HZ: f64 = 20e6;

/// Total detection efficiency quoted alongside the fixture state.
pub const DETECTION_EFFICIENCY: f64 = 0.61;

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> T {
    serde_json::from_str(text).expect("bundled fixture is valid JSON")
}

pub fn signal_cavity() -> CavityParams {
    parse(SIGNAL_CAVITY_JSON)
}

pub fn idler_cavity() -> CavityParams {
    parse(IDLER_CAVITY_JSON)
}

pub fn reference_state() -> CovarianceParams {
    parse(REFERENCE_STATE_JSON)
}

pub fn reference_state_std() -> CovarianceParams {
    parse(REFERENCE_STATE_STD_JSON)
}

pub fn vacuum_state() -> CovarianceParams {
    parse(VACUUM_STATE_JSON)
}
