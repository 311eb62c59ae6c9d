//! Probes that decide whether a function ran: companion-app screenshot
//! comparison and windowed data peaks, plus the probe-evaluation gate.

mod evaluate;
mod image;
mod peak;

use thiserror::Error;

pub use evaluate::{
    evaluate_probe, probe_for, CalibrationRecord, DeviceProbe, ProbeAccuracyReport, ProfileSet,
    ScenarioRuns, SimFunctionTest, ELIGIBILITY_THRESHOLD,
};
pub use image::{differing_fraction, image_diff_probe, ImageDiffConfig, Raster};
pub use peak::{
    calibrate_threshold, data_peak, traffic_probe, Calibration, PeakProfile, DEFAULT_WINDOW_SECONDS,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("probe destination set is empty")]
    NoDestinations,
    #[error("window must be positive, got {0}")]
    BadWindow(f64),
    #[error("calibration needs at least one activation and one background peak")]
    NoPeaks,
    #[error("activation and background peaks overlap (A_min {a_min} <= B_max {b_max})")]
    Overlap { a_min: f64, b_max: f64 },
    #[error("no traffic-probe calibration for {0}")]
    Uncalibrated(String),
    #[error("image dimensions differ: candidate {candidate:?}, reference {reference:?}")]
    DimensionMismatch {
        candidate: (usize, usize),
        reference: (usize, usize),
    },
    #[error("bad raster: {0}")]
    BadRaster(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
