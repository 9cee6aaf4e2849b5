//! Direct per-image fitting of curve triples and confidence maps.
//!
//! The fused output of a [`SolutionSet`] is compared against a reference with
//! `l2 + w·(1 − SSIM)` and every parameter is updated by Adam. Curves start at
//! the identity and confidence maps at `1/N`, so the initial output equals the
//! input. With more than one solution the initial knots get a small seeded
//! offset that sums to zero across solutions: the fused output is still the
//! input, but the solutions are no longer interchangeable and can specialize.

mod adam;
pub mod gradcheck;
mod objective;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use objective::{project_nondecreasing, LossParts, Objective, ParamLayout};

use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::image::Image;
use crate::imageio::{resize, scaled_dims, ResizeMethod};
use crate::metrics::{psnr_from_mse, QualityReport, DEFAULT_SSIM_WEIGHT};
use crate::solution::SolutionSet;

/// Steps between trace records.
pub const TRACE_INTERVAL: usize = 10;

/// Largest accepted value of each count-like field.
pub const MAX_SOLUTIONS: usize = 16;
pub const MAX_PIECES: usize = 256;
pub const MAX_ITERATIONS: u32 = 64;
pub const MAX_STEPS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub solutions: usize,
    pub pieces: usize,
    pub iterations: u32,
    pub steps: usize,
    pub learning_rate: f64,
    pub ssim_weight: f64,
    pub fusion_mode: FusionMode,
    pub monotone_knots: bool,
    pub seed: u64,
    pub fit_scale: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            solutions: 3,
            pieces: 7,
            iterations: 4,
            steps: 2000,
            learning_rate: 0.01,
            ssim_weight: DEFAULT_SSIM_WEIGHT,
            fusion_mode: FusionMode::Plain,
            monotone_knots: false,
            seed: 0,
            fit_scale: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(1..=MAX_SOLUTIONS).contains(&self.solutions) {
            return bad(format!("solutions must be in 1..={MAX_SOLUTIONS}, got {}", self.solutions));
        }
        if !(1..=MAX_PIECES).contains(&self.pieces) {
            return bad(format!("pieces must be in 1..={MAX_PIECES}, got {}", self.pieces));
        }
        if !(1..=MAX_ITERATIONS).contains(&self.iterations) {
            return bad(format!(
                "iterations must be in 1..={MAX_ITERATIONS}, got {}",
                self.iterations
            ));
        }
        if !(1..=MAX_STEPS).contains(&self.steps) {
            return bad(format!("steps must be in 1..={MAX_STEPS}, got {}", self.steps));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.ssim_weight.is_finite() && self.ssim_weight >= 0.0) {
            return bad(format!("ssim_weight must be nonnegative, got {}", self.ssim_weight));
        }
        if !(1..=4).contains(&self.fit_scale) {
            return bad(format!("fit_scale must be 1, 2, 3 or 4, got {}", self.fit_scale));
        }
        Ok(())
    }

    pub fn layout(&self, width: usize, height: usize) -> ParamLayout {
        ParamLayout {
            solutions: self.solutions,
            pieces: self.pieces,
            iterations: self.iterations,
            mode: self.fusion_mode,
            width,
            height,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub total: f64,
    pub l2: f64,
    /// `1 − SSIM`, unweighted.
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub points: Vec<TracePoint>,
    /// Quality of the clamped full-resolution output; absent if the fit
    /// did not finish.
    pub report: Option<QualityReport>,
}

impl FitTrace {
    pub fn initial_loss(&self) -> Option<f64> {
        self.points.first().map(|p| p.total)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.total)
    }

    /// Running minimum of the recorded losses.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.points
            .iter()
            .scan(f64::INFINITY, |best, p| {
                *best = best.min(p.total);
                Some(*best)
            })
            .collect()
    }
}

/// Snapshot handed to progress observers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitProgress {
    pub step: usize,
    pub steps: usize,
    pub loss: f64,
    /// PSNR of the unclamped fused output at the fitting resolution.
    pub psnr: f64,
}

impl FitProgress {
    pub fn fraction(&self) -> f64 {
        self.step as f64 / self.steps as f64
    }
}

/// Absolute size of the seeded knot offsets, in units of one piece's span.
const KNOT_OFFSET: f64 = 0.25;

fn initial_params(config: &FitConfig, layout: &ParamLayout) -> Vec<f64> {
    let mut params = vec![0.0; layout.len()];
    let m = layout.pieces;
    for i in 0..layout.solutions {
        for c in 0..3 {
            for (k, v) in params[layout.knots(i, c)].iter_mut().enumerate() {
                *v = k as f64 / m as f64;
            }
        }
    }
    if layout.solutions > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let amp = KNOT_OFFSET / m as f64;
        for c in 0..3 {
            for k in 0..=m {
                let mut sum = 0.0;
                for i in 0..layout.solutions - 1 {
                    let d = rng.gen_range(-amp..amp);
                    params[layout.knots(i, c).start + k] += d;
                    sum += d;
                }
                params[layout.knots(layout.solutions - 1, c).start + k] -= sum;
            }
        }
    }
    let share = 1.0 / layout.solutions as f64;
    let latent = match layout.mode {
        FusionMode::Plain => share,
        FusionMode::Constrained => objective::logit(share),
    };
    params[layout.map_range()].fill(latent);
    params
}

/// The starting point of a fit: curves and maps whose fused output
/// reproduces any input.
pub fn init_solution_set(config: &FitConfig, width: usize, height: usize) -> Result<SolutionSet> {
    config.validate()?;
    let layout = config.layout(width, height);
    layout.decode(&initial_params(config, &layout))
}

/// Fit curves and confidence maps so the fused input matches `reference`.
pub fn fit_pair(
    input: &Image,
    reference: &Image,
    config: &FitConfig,
) -> Result<(SolutionSet, FitTrace)> {
    fit_with_observer(input, reference, config, false, &mut |_| {})
}

/// Fit a single curve triple with its confidence map frozen at 1.
pub fn fit_global_only(
    input: &Image,
    reference: &Image,
    config: &FitConfig,
) -> Result<(SolutionSet, FitTrace)> {
    let config = FitConfig {
        solutions: 1,
        ..config.clone()
    };
    fit_with_observer(input, reference, &config, true, &mut |_| {})
}

/// [`fit_pair`] (or the frozen-map variant) reporting progress every
/// [`TRACE_INTERVAL`] steps and once at the end.
pub fn fit_with_observer(
    input: &Image,
    reference: &Image,
    config: &FitConfig,
    freeze_maps: bool,
    observer: &mut dyn FnMut(&FitProgress),
) -> Result<(SolutionSet, FitTrace)> {
    config.validate()?;
    input.ensure_same_dims(reference)?;
    let (width, height) = input.dims();

    let scaled;
    let (fit_input, fit_reference) = if config.fit_scale > 1 {
        let (w, h) = scaled_dims(width, height, config.fit_scale);
        scaled = (
            resize(input, w, h, ResizeMethod::Bilinear)?,
            resize(reference, w, h, ResizeMethod::Bilinear)?,
        );
        (&scaled.0, &scaled.1)
    } else {
        (input, reference)
    };

    let layout = config.layout(fit_input.width(), fit_input.height());
    let mut params = initial_params(config, &layout);
    if freeze_maps {
        let full = match layout.mode {
            FusionMode::Plain => 1.0,
            FusionMode::Constrained => objective::logit(1.0),
        };
        params[layout.map_range()].fill(full);
    }
    let mut objective =
        Objective::new(fit_input, fit_reference, layout, config.ssim_weight)?.freeze_maps(freeze_maps);
    let mut adam = Adam::new(layout.len(), config.learning_rate);
    let mut grad = vec![0.0; layout.len()];
    let mut trace = FitTrace::default();
    let mut best: Option<(f64, Vec<f64>)> = None;

    let record = |trace: &mut FitTrace, step: usize, parts: &LossParts| {
        trace.points.push(TracePoint {
            step,
            total: parts.total,
            l2: parts.l2,
            ssim: parts.ssim_loss,
        });
    };

    for step in 0..config.steps {
        let parts = objective.evaluate(&params, &mut grad)?;
        if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                trace: Box::new(trace),
            });
        }
        if step % TRACE_INTERVAL == 0 {
            record(&mut trace, step, &parts);
            if best.as_ref().is_none_or(|(b, _)| parts.total < *b) {
                best = Some((parts.total, params.clone()));
            }
            observer(&FitProgress {
                step,
                steps: config.steps,
                loss: parts.total,
                psnr: psnr_from_mse(parts.l2),
            });
        }
        adam.step(&mut params, &grad);
        if config.monotone_knots {
            for i in 0..layout.solutions {
                for c in 0..3 {
                    project_nondecreasing(&mut params[layout.knots(i, c)]);
                }
            }
        }
    }

    let mut parts = objective.loss(&params)?;
    if !parts.total.is_finite() {
        return Err(Error::Diverged {
            step: config.steps,
            trace: Box::new(trace),
        });
    }
    if let Some((best_loss, best_params)) = best {
        if best_loss < parts.total {
            params = best_params;
            parts = objective.loss(&params)?;
        }
    }
    record(&mut trace, config.steps, &parts);

    let mut set = layout.decode(&params)?;
    if set.map_dims() != Some((width, height)) {
        set = set.resized_maps(width, height)?;
    }
    trace.report = Some(QualityReport::measure(&set.render(input)?, reference)?);
    observer(&FitProgress {
        step: config.steps,
        steps: config.steps,
        loss: parts.total,
        psnr: psnr_from_mse(parts.l2),
    });
    Ok((set, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y, c| {
            0.05 + 0.9 * ((x as f64 / w as f64) * 0.6 + (y as f64 / h as f64) * 0.3 + c as f64 * 0.03)
        })
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        for bad in [
            FitConfig { steps: 0, ..Default::default() },
            FitConfig { solutions: 0, ..Default::default() },
            FitConfig { pieces: 0, ..Default::default() },
            FitConfig { iterations: 0, ..Default::default() },
            FitConfig { learning_rate: 0.0, ..Default::default() },
            FitConfig { ssim_weight: -0.1, ..Default::default() },
            FitConfig { fit_scale: 5, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))), "{bad:?}");
        }
    }

    #[test]
    fn config_parses_partial_json() {
        let c: FitConfig = serde_json::from_str(r#"{"steps": 50, "fusion_mode": "constrained"}"#).unwrap();
        assert_eq!(c.steps, 50);
        assert_eq!(c.fusion_mode, FusionMode::Constrained);
        assert_eq!(c.pieces, 7);
        assert!(serde_json::from_str::<FitConfig>(r#"{"stepz": 1}"#).is_err());
    }

    #[test]
    fn single_solution_init_is_identity_with_unit_map() {
        for mode in [FusionMode::Plain, FusionMode::Constrained] {
            let config = FitConfig { solutions: 1, fusion_mode: mode, ..Default::default() };
            let set = init_solution_set(&config, 4, 3).unwrap();
            assert_eq!(set.triples()[0], crate::curve::CurveTriple::identity(7, 4).unwrap());
            assert!(set.maps().channel(0, 0).data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn identity_pair_stays_exact() {
        let img = gradient_image(16, 16);
        let config = FitConfig { steps: 200, ..Default::default() };
        let (_, trace) = fit_pair(&img, &img, &config).unwrap();
        assert!(trace.report.unwrap().psnr > 50.0);
        assert!(trace.final_loss().unwrap() <= trace.initial_loss().unwrap());
    }

    #[test]
    fn huge_learning_rate_reports_divergence_or_finishes() {
        let img = gradient_image(16, 16);
        let target = img.map(|v| v.powf(0.5));
        let config = FitConfig { steps: 30, learning_rate: 1e300, ..Default::default() };
        match fit_pair(&img, &target, &config) {
            Err(Error::Diverged { trace, .. }) => assert!(trace.points.iter().all(|p| p.total.is_finite())),
            Ok((_, trace)) => assert!(trace.final_loss().unwrap().is_finite()),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn trace_steps_increase() {
        let img = gradient_image(16, 16);
        let target = img.map(|v| v * v);
        let config = FitConfig { steps: 45, ..Default::default() };
        let (_, trace) = fit_pair(&img, &target, &config).unwrap();
        assert!(trace.points.windows(2).all(|w| w[0].step < w[1].step));
        assert_eq!(trace.points.last().unwrap().step, 45);
        let best = trace.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
    }
}
