//! Flat parameter vector and the paired loss with its analytic gradient.
//!
//! Parameters are stored unconstrained. Alphas pass through `tanh` and
//! constrained confidence values through the logistic function, so every
//! vector decodes to a valid [`SolutionSet`]. Knots and plain confidence
//! values are used as-is.

use std::ops::Range;

use crate::curve::{CurveTriple, PieceEval, PngCurve};
use crate::error::Result;
use crate::fusion::{ConfidenceMaps, FusionMode};
use crate::image::{Image, Plane};
use crate::metrics;
use crate::solution::SolutionSet;

/// Logistic latent beyond which the squashed value rounds to exactly 1.
const SATURATED_LATENT: f64 = 40.0;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn logit(p: f64) -> f64 {
    if p >= 1.0 {
        SATURATED_LATENT
    } else if p <= 0.0 {
        -SATURATED_LATENT
    } else {
        (p / (1.0 - p)).ln().clamp(-SATURATED_LATENT, SATURATED_LATENT)
    }
}

/// Where each parameter lives in the flat vector: all knots, then all alpha
/// latents, then all confidence-map latents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub solutions: usize,
    pub pieces: usize,
    pub iterations: u32,
    pub mode: FusionMode,
    pub width: usize,
    pub height: usize,
}

impl ParamLayout {
    fn knot_count(&self) -> usize {
        self.solutions * 3 * (self.pieces + 1)
    }

    fn alpha_count(&self) -> usize {
        self.solutions * 3 * self.pieces
    }

    fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn map_channels(&self) -> usize {
        self.mode.map_channels()
    }

    pub fn len(&self) -> usize {
        self.knot_count() + self.alpha_count() + self.solutions * self.map_channels() * self.pixels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn knot_range(&self) -> Range<usize> {
        0..self.knot_count()
    }

    pub fn alpha_range(&self) -> Range<usize> {
        let s = self.knot_count();
        s..s + self.alpha_count()
    }

    pub fn map_range(&self) -> Range<usize> {
        self.knot_count() + self.alpha_count()..self.len()
    }

    pub fn knots(&self, solution: usize, channel: usize) -> Range<usize> {
        let s = (solution * 3 + channel) * (self.pieces + 1);
        s..s + self.pieces + 1
    }

    pub fn alphas(&self, solution: usize, channel: usize) -> Range<usize> {
        let s = self.knot_count() + (solution * 3 + channel) * self.pieces;
        s..s + self.pieces
    }

    /// Latents of map `solution`, stored channel `channel` (always 0 in
    /// constrained mode).
    pub fn map(&self, solution: usize, channel: usize) -> Range<usize> {
        let p = self.pixels();
        let s = self.map_range().start + (solution * self.map_channels() + channel) * p;
        s..s + p
    }

    /// Map latent index seen by color channel `c`.
    fn map_for_color(&self, solution: usize, c: usize) -> Range<usize> {
        match self.mode {
            FusionMode::Plain => self.map(solution, c),
            FusionMode::Constrained => self.map(solution, 0),
        }
    }

    fn curve(&self, params: &[f64], solution: usize, channel: usize) -> PngCurve {
        let knots = params[self.knots(solution, channel)].to_vec();
        let alphas = params[self.alphas(solution, channel)]
            .iter()
            .map(|a| a.tanh())
            .collect();
        PngCurve::from_parts(knots, alphas, self.iterations)
    }

    pub fn decode(&self, params: &[f64]) -> Result<SolutionSet> {
        assert_eq!(params.len(), self.len(), "parameter vector does not match layout");
        let triples = (0..self.solutions)
            .map(|i| {
                let [r, g, b] = [0, 1, 2].map(|c| self.curve(params, i, c));
                CurveTriple::new(r, g, b)
            })
            .collect::<Result<Vec<_>>>()?;
        let plane = |i: usize, ch: usize, f: fn(f64) -> f64| {
            let data = params[self.map(i, ch)].iter().map(|&v| f(v)).collect();
            Plane::new(self.width, self.height, data).expect("layout dimensions")
        };
        let maps = match self.mode {
            FusionMode::Plain => ConfidenceMaps::plain(
                (0..self.solutions)
                    .map(|i| [0, 1, 2].map(|c| plane(i, c, |v| v)))
                    .collect(),
            )?,
            FusionMode::Constrained => ConfidenceMaps::constrained(
                (0..self.solutions).map(|i| plane(i, 0, sigmoid)).collect(),
            )?,
        };
        SolutionSet::new(triples, maps)
    }

    /// Inverse of [`Self::decode`], saturating alphas of ±1 and confidence
    /// values of 0 or 1 at large finite latents.
    pub fn encode(&self, set: &SolutionSet) -> Vec<f64> {
        let mut params = vec![0.0; self.len()];
        for (i, triple) in set.triples().iter().enumerate() {
            for c in 0..3 {
                let curve = triple.channel(c);
                params[self.knots(i, c)].copy_from_slice(curve.knots());
                for (dst, &a) in params[self.alphas(i, c)].iter_mut().zip(curve.alphas()) {
                    *dst = a.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh();
                }
            }
            for ch in 0..self.map_channels() {
                let src = set.maps().channel(i, ch).data();
                let dst = &mut params[self.map(i, ch)];
                match self.mode {
                    FusionMode::Plain => dst.copy_from_slice(src),
                    FusionMode::Constrained => {
                        dst.iter_mut().zip(src).for_each(|(d, &v)| *d = logit(v))
                    }
                }
            }
        }
        params
    }
}

/// Loss value and its components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub l2: f64,
    /// `1 − SSIM`, before weighting.
    pub ssim_loss: f64,
}

/// The paired loss of a fused result against a fixed reference, as a
/// function of the flat parameter vector.
pub struct Objective<'a> {
    input: &'a Image,
    reference: &'a Image,
    layout: ParamLayout,
    ssim_weight: f64,
    window: usize,
    freeze_maps: bool,
    values: Vec<Vec<f64>>,
    evals: Vec<Vec<PieceEval>>,
    conf: Vec<Vec<f64>>,
}

impl<'a> Objective<'a> {
    pub fn new(
        input: &'a Image,
        reference: &'a Image,
        layout: ParamLayout,
        ssim_weight: f64,
    ) -> Result<Self> {
        input.ensure_same_dims(reference)?;
        assert_eq!(input.dims(), (layout.width, layout.height));
        let slots = layout.solutions * 3;
        Ok(Objective {
            input,
            reference,
            layout,
            ssim_weight,
            window: metrics::effective_window(layout.width, layout.height),
            freeze_maps: false,
            values: vec![Vec::new(); slots],
            evals: vec![Vec::new(); slots],
            conf: vec![Vec::new(); layout.solutions * layout.map_channels()],
        })
    }

    /// Keep confidence maps fixed: their gradient is reported as zero.
    pub fn freeze_maps(mut self, freeze: bool) -> Self {
        self.freeze_maps = freeze;
        self
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn loss(&mut self, params: &[f64]) -> Result<LossParts> {
        let mut scratch = vec![0.0; params.len()];
        self.evaluate(params, &mut scratch)
    }

    /// Loss at `params`; its gradient is written to `grad`.
    pub fn evaluate(&mut self, params: &[f64], grad: &mut [f64]) -> Result<LossParts> {
        let layout = self.layout;
        assert_eq!(params.len(), layout.len());
        assert_eq!(grad.len(), layout.len());
        let (w, h) = (layout.width, layout.height);
        let pixels = w * h;
        let n = layout.solutions;

        // Confidence values.
        for i in 0..n {
            for ch in 0..layout.map_channels() {
                let latents = &params[layout.map(i, ch)];
                let slot = &mut self.conf[i * layout.map_channels() + ch];
                slot.clear();
                match layout.mode {
                    FusionMode::Plain => slot.extend_from_slice(latents),
                    FusionMode::Constrained => slot.extend(latents.iter().map(|&v| sigmoid(v))),
                }
            }
        }
        let conf_slot = |i: usize, c: usize| match layout.mode {
            FusionMode::Plain => i * 3 + c,
            FusionMode::Constrained => i,
        };

        // Globally adjusted channels and fusion.
        let mut fused: [Vec<f64>; 3] = [0, 1, 2].map(|_| vec![0.0; pixels]);
        for i in 0..n {
            for c in 0..3 {
                let curve = layout.curve(params, i, c);
                let slot = i * 3 + c;
                let evals = &mut self.evals[slot];
                let values = &mut self.values[slot];
                evals.clear();
                values.clear();
                for &x in self.input.plane(c).data() {
                    let e = curve.eval_piece(x);
                    values.push(curve.value_of(&e));
                    evals.push(e);
                }
                let conf = &self.conf[conf_slot(i, c)];
                for ((r, &v), &k) in fused[c].iter_mut().zip(values.iter()).zip(conf) {
                    *r += v * k;
                }
            }
        }
        let result = Image::from_planes(
            fused.map(|d| Plane::new(w, h, d).expect("layout dimensions")),
        )?;

        // Loss and its gradient with respect to the fused result.
        let (l2, mut d_result) = metrics::l2_loss_with_gradient(&result, self.reference)?;
        let mut ssim_loss = 0.0;
        if self.ssim_weight > 0.0 {
            let (s, d_ssim) =
                metrics::ssim_with_gradient(&result, self.reference, self.window)?;
            ssim_loss = 1.0 - s;
            for (dr, ds) in d_result.iter_mut().zip(&d_ssim) {
                for (a, b) in dr.iter_mut().zip(ds) {
                    *a -= self.ssim_weight * b;
                }
            }
        }
        let total = l2 + self.ssim_weight * ssim_loss;

        // Backward through fusion and curves.
        grad.fill(0.0);
        for i in 0..n {
            for c in 0..3 {
                let slot = i * 3 + c;
                let conf = &self.conf[conf_slot(i, c)];
                let values = &self.values[slot];
                let evals = &self.evals[slot];
                let knots = &params[layout.knots(i, c)];
                let mut d_knots = vec![0.0; layout.pieces + 1];
                let mut d_bend = vec![0.0; layout.pieces];
                for p in 0..pixels {
                    let g = d_result[c][p];
                    let gv = g * conf[p];
                    let e = &evals[p];
                    d_knots[e.piece] += gv * (1.0 - e.bent);
                    d_knots[e.piece + 1] += gv * e.bent;
                    d_bend[e.piece] += gv * e.d_alpha;
                }
                for (dst, v) in grad[layout.knots(i, c)].iter_mut().zip(&d_knots) {
                    *dst += v;
                }
                let alpha_idx = layout.alphas(i, c);
                for m in 0..layout.pieces {
                    let alpha = params[alpha_idx.start + m].tanh();
                    let span = knots[m + 1] - knots[m];
                    grad[alpha_idx.start + m] += d_bend[m] * span * (1.0 - alpha * alpha);
                }
                if !self.freeze_maps {
                    let map_idx = layout.map_for_color(i, c);
                    let dst = &mut grad[map_idx];
                    for p in 0..pixels {
                        dst[p] += d_result[c][p] * values[p];
                    }
                }
            }
        }
        if !self.freeze_maps && layout.mode == FusionMode::Constrained {
            for i in 0..n {
                let conf = &self.conf[i];
                for (g, &k) in grad[layout.map(i, 0)].iter_mut().zip(conf) {
                    *g *= k * (1.0 - k);
                }
            }
        }
        Ok(LossParts {
            total,
            l2,
            ssim_loss,
        })
    }
}

/// Euclidean projection onto nondecreasing sequences (pool adjacent
/// violators).
pub fn project_nondecreasing(values: &mut [f64]) {
    // Blocks of (sum, count).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values.iter() {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 > s1 / n1 as f64 {
                blocks.pop();
                *blocks.last_mut().expect("two blocks") = (s0 + s1, n0 + n1);
            } else {
                break;
            }
        }
    }
    let mut i = 0;
    for (s, n) in blocks {
        let mean = s / n as f64;
        for v in &mut values[i..i + n] {
            *v = mean;
        }
        i += n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pav_projection() {
        let mut v = [0.0, 0.3, 0.2, 0.5, 0.4, 0.4, 1.0];
        project_nondecreasing(&mut v);
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        assert!((v[1] - 0.25).abs() < 1e-15 && (v[2] - 0.25).abs() < 1e-15);
        let mut sorted = [0.1, 0.2, 0.3];
        project_nondecreasing(&mut sorted);
        assert_eq!(sorted, [0.1, 0.2, 0.3]);
        let mut rev = [3.0, 2.0, 1.0];
        project_nondecreasing(&mut rev);
        assert_eq!(rev, [2.0, 2.0, 2.0]);
    }

    #[test]
    fn layout_ranges_partition_the_vector() {
        for mode in [FusionMode::Plain, FusionMode::Constrained] {
            let l = ParamLayout {
                solutions: 3,
                pieces: 7,
                iterations: 4,
                mode,
                width: 5,
                height: 4,
            };
            assert_eq!(l.knot_range().len(), 72);
            assert_eq!(l.alpha_range().len(), 63);
            assert_eq!(l.map_range().len(), 3 * mode.map_channels() * 20);
            assert_eq!(l.knot_range().end, l.alpha_range().start);
            assert_eq!(l.alpha_range().end, l.map_range().start);
            assert_eq!(l.map(2, mode.map_channels() - 1).end, l.len());
        }
    }

    #[test]
    fn logistic_saturation_is_exact() {
        assert_eq!(sigmoid(logit(1.0)), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(logit(0.2)) - 0.2).abs() < 1e-15);
    }
}
