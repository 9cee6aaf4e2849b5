//! Finite-difference audit of the fitting objective's analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{Objective, ParamLayout};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::image::Image;

/// Below this magnitude gradients are compared absolutely rather than
/// relatively; central differences carry roughly `1e-16 / eps` of
/// round-off, which would otherwise dominate near-zero entries.
pub const RELATIVE_FLOOR: f64 = 1e-6;

const SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub trials: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            trials: 100,
            epsilon: 1e-5,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub knots: f64,
    pub alpha_latents: f64,
    pub map_latents: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.knots.max(self.alpha_latents).max(self.map_latents)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_error() < tolerance
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn random_image(rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(SIDE, SIDE, |_, _, _| rng.gen_range(0.02..0.98))
}

fn random_layout(rng: &mut ChaCha8Rng) -> ParamLayout {
    ParamLayout {
        solutions: rng.gen_range(1..=3),
        pieces: rng.gen_range(1..=8),
        iterations: rng.gen_range(1..=5),
        mode: if rng.gen_bool(0.5) {
            FusionMode::Plain
        } else {
            FusionMode::Constrained
        },
        width: SIDE,
        height: SIDE,
    }
}

fn random_params(rng: &mut ChaCha8Rng, layout: &ParamLayout) -> Vec<f64> {
    let mut p = vec![0.0; layout.len()];
    for v in &mut p[layout.knot_range()] {
        *v = rng.gen_range(-0.1..1.1);
    }
    // Keep latents away from where tanh saturates so the check is informative.
    for v in &mut p[layout.alpha_range()] {
        *v = rng.gen_range(-1.5..1.5);
    }
    let range = match layout.mode {
        FusionMode::Plain => -0.2..1.2,
        FusionMode::Constrained => -3.0..3.0,
    };
    for v in &mut p[layout.map_range()] {
        *v = rng.gen_range(range.clone());
    }
    p
}

/// Compare the analytic gradient of the full objective against central
/// differences on random 8×8 pairs with random configurations.
pub fn gradient_check(options: &GradCheckOptions) -> Result<GradCheckReport> {
    if options.trials == 0 {
        return Err(Error::InvalidConfig("trials must be positive".into()));
    }
    if !(options.epsilon.is_finite() && options.epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be positive, got {}",
            options.epsilon
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport {
        trials: options.trials,
        ..Default::default()
    };
    let eps = options.epsilon;
    for _ in 0..options.trials {
        let layout = random_layout(&mut rng);
        let input = random_image(&mut rng);
        let reference = random_image(&mut rng);
        let mut params = random_params(&mut rng, &layout);
        let mut objective = Objective::new(&input, &reference, layout, 0.1)?;
        let mut grad = vec![0.0; layout.len()];
        objective.evaluate(&params, &mut grad)?;

        let classes = [
            (layout.knot_range(), &mut report.knots),
            (layout.alpha_range(), &mut report.alpha_latents),
            (layout.map_range(), &mut report.map_latents),
        ];
        for (range, worst) in classes {
            for k in range {
                let saved = params[k];
                params[k] = saved + eps;
                let up = objective.loss(&params)?.total;
                params[k] = saved - eps;
                let down = objective.loss(&params)?.total;
                params[k] = saved;
                let numeric = (up - down) / (2.0 * eps);
                *worst = worst.max(relative_error(grad[k], numeric));
            }
        }
    }
    Ok(report)
}
