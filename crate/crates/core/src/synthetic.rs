//! Deterministic synthetic images and image pairs for experiments and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curve::{CurveTriple, PngCurve};
use crate::error::Result;
use crate::fusion::ConfidenceMaps;
use crate::image::{Image, Plane};
use crate::solution::SolutionSet;

/// A smooth, natural-looking random image with values in `[0.05, 0.95]`:
/// a tilted ramp plus a handful of soft blobs per channel.
pub fn smooth_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes = [0, 1, 2].map(|_| smooth_field(width, height, &mut rng, 0.05, 0.95));
    Image::from_planes(planes).expect("planes share dimensions")
}

fn smooth_field(width: usize, height: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Plane {
    let (gx, gy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let blobs: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.08..0.35),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let mut plane = Plane::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let mut s = gx * u + gy * v;
        for &(cx, cy, r, a) in &blobs {
            let d2 = (u - cx).powi(2) + (v - cy).powi(2);
            s += a * (-d2 / (2.0 * r * r)).exp();
        }
        s
    });
    let (min, max) = plane.min_max();
    let span = (max - min).max(1e-12);
    for v in plane.data_mut() {
        *v = lo + (hi - lo) * (*v - min) / span;
    }
    plane
}

/// Per-channel gamma brightening `x^(1/gamma)`.
pub fn gamma_brighten(image: &Image, gamma: f64) -> Image {
    image.map(|v| v.max(0.0).powf(1.0 / gamma))
}

/// Smooth S-curve blending the identity with a smoothstep by `strength`.
pub fn s_curve(x: f64, strength: f64) -> f64 {
    let s = x * x * (3.0 - 2.0 * x);
    x + strength * (s - x)
}

/// Parameters of one photometric degradation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degradation {
    pub gamma: f64,
    pub contrast: f64,
    pub tint: [f64; 3],
}

impl Degradation {
    pub fn random(rng: &mut impl Rng) -> Self {
        Degradation {
            gamma: rng.gen_range(1.6..2.6),
            contrast: rng.gen_range(-0.6..0.8),
            tint: [0, 1, 2].map(|_| rng.gen_range(0.75..1.0)),
        }
    }

    pub fn apply(&self, image: &Image) -> Image {
        let mut out = image.clone();
        for c in 0..3 {
            for v in out.plane_mut(c).data_mut() {
                let x = v.clamp(0.0, 1.0).powf(self.gamma);
                *v = s_curve(x, self.contrast) * self.tint[c];
            }
        }
        out
    }
}

/// `(input, reference)` where the input is a degraded copy of the clean
/// reference.
pub fn degraded_pair(width: usize, height: usize, seed: u64) -> (Image, Image) {
    let reference = smooth_image(width, height, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let input = Degradation::random(&mut rng).apply(&reference);
    (input, reference)
}

/// `(input, reference)` whose left and right halves are related by two
/// different tone maps, so no single global curve reproduces the reference.
pub fn split_tone_pair(width: usize, height: usize, seed: u64) -> (Image, Image) {
    let input = smooth_image(width, height, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let bright = rng.gen_range(1.6..2.4);
    let dark = rng.gen_range(1.6..2.4);
    let tint = [0, 1, 2].map(|_| rng.gen_range(0.85..1.0));
    let reference = Image::from_fn(width, height, |x, y, c| {
        let v = input.plane(c).get(x, y);
        if 2 * x < width {
            v.powf(1.0 / bright)
        } else {
            v.powf(dark) * tint[c]
        }
    });
    (input, reference)
}

/// A random nondecreasing curve with knots in `[0, 1]` and moderate bends.
pub fn random_curve(rng: &mut impl Rng, pieces: usize, iterations: u32) -> PngCurve {
    let mut knots: Vec<f64> = (0..=pieces)
        .map(|k| {
            let base = k as f64 / pieces as f64;
            (base + rng.gen_range(-0.4..0.4) / pieces as f64).clamp(0.0, 1.0)
        })
        .collect();
    knots.sort_by(f64::total_cmp);
    let alphas = (0..pieces).map(|_| rng.gen_range(-0.8..0.8)).collect();
    PngCurve::new(knots, alphas, iterations).expect("valid by construction")
}

/// A random set in the fitting model class: `n` triples with default
/// shape and smooth plain-mode maps that sum to one at every pixel.
pub fn random_solution_set(n: usize, width: usize, height: usize, seed: u64) -> Result<SolutionSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples = (0..n)
        .map(|_| {
            CurveTriple::new(
                random_curve(&mut rng, 7, 4),
                random_curve(&mut rng, 7, 4),
                random_curve(&mut rng, 7, 4),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let fields: Vec<[Plane; 3]> = (0..n)
        .map(|_| [0, 1, 2].map(|_| smooth_field(width, height, &mut rng, -1.0, 1.0)))
        .collect();
    let maps = (0..n)
        .map(|i| {
            [0, 1, 2].map(|c| {
                Plane::from_fn(width, height, |x, y| {
                    let total: f64 = fields.iter().map(|f| f[c].get(x, y).exp()).sum();
                    fields[i][c].get(x, y).exp() / total
                })
            })
        })
        .collect();
    SolutionSet::new(triples, ConfidenceMaps::plain(maps)?)
}

/// Per-channel linear stretch mapping the 1st and 99th percentiles to 0
/// and 1. Channels with no spread are left unchanged.
pub fn auto_contrast(image: &Image) -> Image {
    let mut out = image.clone();
    for c in 0..3 {
        let mut sorted = image.plane(c).data().to_vec();
        sorted.sort_by(f64::total_cmp);
        let at = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
        let (lo, hi) = (at(0.01), at(0.99));
        if hi - lo > 1e-12 {
            for v in out.plane_mut(c).data_mut() {
                *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0);
            }
        }
    }
    out
}
