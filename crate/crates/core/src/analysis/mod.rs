//! Landscape, similarity and forgetting diagnostics over saved checkpoints.

pub mod landscape;
pub mod metrics;
pub mod similarity;
pub mod spectrum;

pub use landscape::{alpha_grid, barrier, interp_curve, interp_curve_with, plane_surface, plane_surface_with, InterpCurve, PlaneGrid};
pub use metrics::{average_accuracy, average_forgetting, forgetting_at, EvalMatrix};
pub use similarity::{cka, cka_probe, cka_with, hidden_activations, layer_cka, pairwise_distance, CKA_PROBE_SIZE};
pub use spectrum::{
    direction_overlap, hessian_spectrum, spectrum_sample, taylor_forgetting, taylor_forgetting_with, SpectrumOptions,
    SpectrumResult, TaylorForgetting, SPECTRUM_SAMPLE_SIZE,
};

/// Default number of points on an interpolation curve.
pub const DEFAULT_INTERP_POINTS: usize = 21;
/// Default plane grid resolution per axis.
pub const DEFAULT_PLANE_RESOLUTION: usize = 25;
/// Default plane margin as a fraction of the anchor extent.
pub const DEFAULT_PLANE_MARGIN: f64 = 0.1;
