//! Photo enhancement with fitted piecewise tone curves.
//!
//! An image is adjusted by `N` global curve triples (one curve per color
//! channel); the adjusted copies are blended per pixel by confidence maps.
//! Curves and maps are fitted directly to an `(input, reference)` pair.

pub mod bench;
pub mod curve;
pub mod error;
pub mod fusion;
pub mod image;
pub mod imageio;
pub mod metrics;
pub mod optimize;
pub mod preset;
pub mod solution;
pub mod solutionspace;
pub mod synthetic;

pub use curve::{basic_curve, iterated_curve, ramp_clamp, CurveTriple, Lut, PngCurve};
pub use error::{Error, Result};
pub use fusion::{ConfidenceMaps, FusionMode, InterpolationWeights};
pub use image::{BitDepth, Image, Plane};
pub use imageio::{load_png, save_png, ResizeMethod};
pub use metrics::QualityReport;
pub use optimize::{fit_global_only, fit_pair, init_solution_set, FitConfig, FitTrace};
pub use preset::{apply_preset, load_preset, save_preset, MapPolicy};
pub use solution::SolutionSet;
pub use solutionspace::RgbPoint;
