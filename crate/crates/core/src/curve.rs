//! Piecewise nonlinear global tone curves.
//!
//! A curve over `M` pieces is anchored by `M + 1` knot values. Inside piece
//! `m` the input is mapped to a local coordinate with a clamped ramp, bent by
//! `n` iterations of the quadratic map `x + a·x·(1 − x)`, and scaled by the
//! knot span `k[m+1] − k[m]`:
//!
//! ```text
//! V(x) = k[0] + Σ_m (k[m+1] − k[m]) · F^n(clamp(x·M − m); a[m])
//! ```
//!
//! Because `F^n(0) = 0` and `F^n(1) = 1` for every `a`, all pieces left of the
//! one containing `x` contribute their full span and all pieces to the right
//! contribute nothing, so evaluation only needs the active piece.

use crate::error::{Error, Result};
use crate::image::{Image, Plane};

/// One step of the basic quadratic curve. Fixed points at 0 and 1.
#[inline]
pub fn basic_curve(x: f64, alpha: f64) -> f64 {
    x + alpha * x * (1.0 - x)
}

/// `n` applications of [`basic_curve`].
pub fn iterated_curve(x: f64, alpha: f64, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::ZeroIterations);
    }
    Ok(iterate(x, alpha, n))
}

#[inline]
fn iterate(x: f64, alpha: f64, n: u32) -> f64 {
    let mut f = x;
    for _ in 0..n {
        f = basic_curve(f, alpha);
    }
    f
}

/// Value of `F^n(x; alpha)` and its derivative with respect to `alpha`.
#[inline]
fn iterate_with_alpha_derivative(x: f64, alpha: f64, n: u32) -> (f64, f64) {
    let mut f = x;
    let mut df = 0.0;
    for _ in 0..n {
        // d/dα [f + α f (1 − f)] = df·(1 + α − 2αf) + f(1 − f)
        df = df * (1.0 + alpha - 2.0 * alpha * f) + f * (1.0 - f);
        f = basic_curve(f, alpha);
    }
    (f, df)
}

/// The clamped ramp selecting a piece's local coordinate.
#[inline]
pub fn ramp_clamp(y: f64) -> f64 {
    if y < 0.0 {
        0.0
    } else if y > 1.0 {
        1.0
    } else {
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PngCurve {
    knots: Vec<f64>,
    alphas: Vec<f64>,
    iterations: u32,
}

/// Gradient of a curve's output with respect to its parameters at one input.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveGradient {
    pub knots: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// What a single input sees: the active piece, the bent local coordinate,
/// and its derivative with respect to that piece's alpha.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PieceEval {
    pub piece: usize,
    pub bent: f64,
    pub d_alpha: f64,
}

impl PngCurve {
    pub fn new(knots: Vec<f64>, alphas: Vec<f64>, iterations: u32) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::NoPieces);
        }
        if knots.len() != alphas.len() + 1 {
            return Err(Error::KnotAlphaCount {
                knots: knots.len(),
                alphas: alphas.len(),
            });
        }
        if iterations == 0 {
            return Err(Error::ZeroIterations);
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::NonFinite { what: "knot" });
        }
        for (piece, &value) in alphas.iter().enumerate() {
            if !(-1.0..=1.0).contains(&value) {
                return Err(Error::AlphaOutOfRange { piece, value });
            }
        }
        Ok(PngCurve {
            knots,
            alphas,
            iterations,
        })
    }

    /// Trusted constructor for optimizer-produced parameters.
    pub(crate) fn from_parts(knots: Vec<f64>, alphas: Vec<f64>, iterations: u32) -> Self {
        debug_assert_eq!(knots.len(), alphas.len() + 1);
        debug_assert!(alphas.iter().all(|a| (-1.0..=1.0).contains(a)));
        PngCurve {
            knots,
            alphas,
            iterations,
        }
    }

    /// Uniform knots `m / M` and zero alphas: maps every input to itself.
    pub fn identity(pieces: usize, iterations: u32) -> Result<Self> {
        let knots = (0..=pieces).map(|m| m as f64 / pieces as f64).collect();
        Self::new(knots, vec![0.0; pieces], iterations)
    }

    pub fn constant(value: f64, pieces: usize, iterations: u32) -> Result<Self> {
        Self::new(vec![value; pieces + 1], vec![0.0; pieces], iterations)
    }

    #[inline]
    pub fn pieces(&self) -> usize {
        self.alphas.len()
    }

    #[inline]
    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    #[inline]
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    #[inline]
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    #[inline]
    fn locate(&self, x: f64) -> (usize, f64) {
        let m = self.pieces();
        let t = x * m as f64;
        // `as usize` saturates negatives (and NaN) to 0.
        let piece = (t.floor() as usize).min(m - 1);
        (piece, ramp_clamp(t - piece as f64))
    }

    #[inline]
    fn combine(&self, piece: usize, bent: f64) -> f64 {
        let lo = self.knots[piece];
        let hi = self.knots[piece + 1];
        let v = lo + (hi - lo) * bent;
        // Guard against rounding past the piece's knots.
        v.clamp(lo.min(hi), lo.max(hi))
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (piece, local) = self.locate(x);
        self.combine(piece, iterate(local, self.alphas[piece], self.iterations))
    }

    pub(crate) fn eval_piece(&self, x: f64) -> PieceEval {
        let (piece, local) = self.locate(x);
        let (bent, d_alpha) =
            iterate_with_alpha_derivative(local, self.alphas[piece], self.iterations);
        PieceEval {
            piece,
            bent,
            d_alpha,
        }
    }

    #[inline]
    pub(crate) fn value_of(&self, e: &PieceEval) -> f64 {
        self.combine(e.piece, e.bent)
    }

    pub fn apply_plane(&self, plane: &Plane) -> Plane {
        plane.map(|v| self.eval(v))
    }

    /// Partial derivatives of `eval(x)` with respect to every knot and alpha.
    ///
    /// At a piece boundary the derivative from the piece interior is used.
    pub fn gradients(&self, x: f64) -> CurveGradient {
        let m = self.pieces();
        let e = self.eval_piece(x);
        let mut knots = vec![0.0; m + 1];
        let mut alphas = vec![0.0; m];
        knots[e.piece] = 1.0 - e.bent;
        knots[e.piece + 1] = e.bent;
        alphas[e.piece] = (self.knots[e.piece + 1] - self.knots[e.piece]) * e.d_alpha;
        CurveGradient { knots, alphas }
    }

    /// Sample the curve at `resolution` evenly spaced inputs over [0, 1].
    pub fn to_lut(&self, resolution: usize) -> Lut {
        assert!(resolution >= 2, "a lookup table needs at least two entries");
        let last = (resolution - 1) as f64;
        Lut {
            table: (0..resolution).map(|i| self.eval(i as f64 / last)).collect(),
        }
    }
}

/// A uniformly sampled curve, applied with linear interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct Lut {
    table: Vec<f64>,
}

impl Lut {
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        let last = self.table.len() - 1;
        let t = ramp_clamp(x) * last as f64;
        let i = (t as usize).min(last - 1);
        let frac = t - i as f64;
        let a = self.table[i];
        a + (self.table[i + 1] - a) * frac
    }
}

/// One curve per RGB channel, sharing piece count and iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveTriple {
    curves: [PngCurve; 3],
}

impl CurveTriple {
    pub fn new(r: PngCurve, g: PngCurve, b: PngCurve) -> Result<Self> {
        let shape = (r.pieces(), r.iterations());
        if (g.pieces(), g.iterations()) != shape || (b.pieces(), b.iterations()) != shape {
            return Err(Error::MixedCurveShapes);
        }
        Ok(CurveTriple { curves: [r, g, b] })
    }

    pub fn identity(pieces: usize, iterations: u32) -> Result<Self> {
        let c = PngCurve::identity(pieces, iterations)?;
        Ok(CurveTriple {
            curves: [c.clone(), c.clone(), c],
        })
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &PngCurve {
        &self.curves[c]
    }

    pub fn curves(&self) -> &[PngCurve; 3] {
        &self.curves
    }

    pub fn pieces(&self) -> usize {
        self.curves[0].pieces()
    }

    pub fn iterations(&self) -> u32 {
        self.curves[0].iterations()
    }

    /// The globally adjusted image: each channel through its own curve.
    pub fn apply(&self, image: &Image) -> Image {
        let planes = [0, 1, 2].map(|c| self.curves[c].apply_plane(image.plane(c)));
        Image::from_planes(planes)
            .expect("curve application preserves dimensions")
            .with_depth(image.depth())
    }

    pub fn to_luts(&self, resolution: usize) -> [Lut; 3] {
        [0, 1, 2].map(|c| self.curves[c].to_lut(resolution))
    }
}
