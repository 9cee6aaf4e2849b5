//! Confidence-map fusion of globally adjusted images.
//!
//! Plain maps carry one unconstrained weight per pixel and channel and are
//! fused as `R = Σ V_i ⊙ C_i`. Constrained maps are single-channel, valued in
//! [0, 1], and broadcast over the three color channels; they additionally
//! support user-weighted interpolation
//! `C_a,i = C_i·w_i / (Σ_j C_j·w_j + ε)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Plane};

/// Added to every normalizing denominator.
pub const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    #[default]
    Plain,
    Constrained,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Plain => "plain",
            FusionMode::Constrained => "constrained",
        }
    }

    /// Channels stored per confidence map.
    pub fn map_channels(self) -> usize {
        match self {
            FusionMode::Plain => 3,
            FusionMode::Constrained => 1,
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plain" => Ok(FusionMode::Plain),
            "constrained" => Ok(FusionMode::Constrained),
            other => Err(format!("unknown fusion mode `{other}` (expected plain or constrained)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConfidenceMaps {
    Plain(Vec<[Plane; 3]>),
    Constrained(Vec<Plane>),
}

impl ConfidenceMaps {
    pub fn plain(maps: Vec<[Plane; 3]>) -> Result<Self> {
        check_dims(maps.iter().flatten())?;
        Ok(ConfidenceMaps::Plain(maps))
    }

    pub fn constrained(maps: Vec<Plane>) -> Result<Self> {
        check_dims(maps.iter())?;
        for p in &maps {
            if let Some(&value) = p.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::MapOutOfRange { value });
            }
        }
        Ok(ConfidenceMaps::Constrained(maps))
    }

    /// `n` maps of `value` in the given mode.
    pub fn uniform(mode: FusionMode, n: usize, width: usize, height: usize, value: f64) -> Self {
        let p = Plane::filled(width, height, value);
        match mode {
            FusionMode::Plain => {
                ConfidenceMaps::Plain(vec![[p.clone(), p.clone(), p]; n])
            }
            FusionMode::Constrained => ConfidenceMaps::Constrained(vec![p; n]),
        }
    }

    pub fn mode(&self) -> FusionMode {
        match self {
            ConfidenceMaps::Plain(_) => FusionMode::Plain,
            ConfidenceMaps::Constrained(_) => FusionMode::Constrained,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ConfidenceMaps::Plain(m) => m.len(),
            ConfidenceMaps::Constrained(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        match self {
            ConfidenceMaps::Plain(m) => m.first().map(|p| p[0].dims()),
            ConfidenceMaps::Constrained(m) => m.first().map(Plane::dims),
        }
    }

    /// Map `i` as seen by color channel `c`.
    #[inline]
    pub fn channel(&self, i: usize, c: usize) -> &Plane {
        match self {
            ConfidenceMaps::Plain(m) => &m[i][c],
            ConfidenceMaps::Constrained(m) => &m[i],
        }
    }

    /// Apply `f` to every stored plane, keeping the mode.
    pub fn map_planes(&self, mut f: impl FnMut(&Plane) -> Plane) -> ConfidenceMaps {
        match self {
            ConfidenceMaps::Plain(m) => {
                ConfidenceMaps::Plain(m.iter().map(|p| [0, 1, 2].map(|c| f(&p[c]))).collect())
            }
            ConfidenceMaps::Constrained(m) => {
                ConfidenceMaps::Constrained(m.iter().map(&mut f).collect())
            }
        }
    }
}

fn check_dims<'a>(mut planes: impl Iterator<Item = &'a Plane>) -> Result<()> {
    if let Some(first) = planes.next() {
        let dims = first.dims();
        for p in planes {
            if p.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found: p.dims(),
                });
            }
        }
    }
    Ok(())
}

/// Positive per-solution interpolation weights.
///
/// Weights are stored relative to their maximum and snapped to a fine
/// logarithmic grid, so any common positive factor drops out before the
/// fusion arithmetic and uniformly scaled weights give bitwise-identical
/// results.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationWeights {
    raw: Vec<f64>,
    relative: Vec<f64>,
}

/// Steps per octave of the relative-weight grid.
const WEIGHT_GRID: f64 = (1u64 << 30) as f64;

impl InterpolationWeights {
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::CountMismatch {
                expected: 1,
                found: 0,
            });
        }
        for (index, &value) in raw.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidWeight { index, value });
            }
        }
        let max = raw.iter().copied().fold(0.0, f64::max);
        let relative = raw
            .iter()
            .enumerate()
            .map(|(index, &w)| {
                let octaves = (w / max).log2();
                let r = ((octaves * WEIGHT_GRID).round() / WEIGHT_GRID).exp2();
                // Ratios beyond the normal range underflow toward zero.
                if r.is_normal() {
                    Ok(r)
                } else {
                    Err(Error::WeightRatio { index, value: w, max })
                }
            })
            .collect::<Result<_>>()?;
        Ok(InterpolationWeights { raw, relative })
    }

    pub fn equal(n: usize) -> Self {
        Self::new(vec![1.0; n]).expect("unit weights are valid")
    }

    /// Weights exactly as supplied.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Scale-free weights used by [`interpolate`]; the largest is 1.
    pub fn relative(&self) -> &[f64] {
        &self.relative
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

impl std::str::FromStr for InterpolationWeights {
    type Err = String;

    /// Comma-separated positive numbers, e.g. `2,0.01,0.1`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let values = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("bad weight `{}`: {e}", t.trim()))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        InterpolationWeights::new(values).map_err(|e| e.to_string())
    }
}

fn check_solutions(solutions: &[Image], maps: &ConfidenceMaps) -> Result<()> {
    if solutions.is_empty() {
        return Err(Error::CountMismatch {
            expected: 1,
            found: 0,
        });
    }
    if maps.len() != solutions.len() {
        return Err(Error::CountMismatch {
            expected: solutions.len(),
            found: maps.len(),
        });
    }
    let dims = solutions[0].dims();
    for s in &solutions[1..] {
        if s.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: s.dims(),
            });
        }
    }
    if let Some(m) = maps.dims() {
        if m != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: m,
            });
        }
    }
    Ok(())
}

/// `R = Σ_i V_i ⊙ C_i` with three-channel maps. Output is not clamped.
pub fn fuse_plain(solutions: &[Image], maps: &ConfidenceMaps) -> Result<Image> {
    if maps.mode() != FusionMode::Plain {
        return Err(Error::ModeMismatch {
            expected: "plain",
            found: maps.mode().name(),
        });
    }
    fuse(solutions, maps)
}

/// Weighted sum of solutions in either mode; constrained maps are broadcast
/// across the color channels. Output is not clamped.
pub fn fuse(solutions: &[Image], maps: &ConfidenceMaps) -> Result<Image> {
    check_solutions(solutions, maps)?;
    let (w, h) = solutions[0].dims();
    let planes = [0, 1, 2].map(|c| {
        let mut acc = vec![0.0; w * h];
        for (i, v) in solutions.iter().enumerate() {
            let vc = v.plane(c).data();
            let cc = maps.channel(i, c).data();
            for ((a, &x), &k) in acc.iter_mut().zip(vc).zip(cc) {
                *a += x * k;
            }
        }
        Plane::new(w, h, acc).expect("dimensions checked")
    });
    Ok(Image::from_planes(planes)?.with_depth(solutions[0].depth()))
}

fn require_constrained(maps: &ConfidenceMaps) -> Result<&[Plane]> {
    match maps {
        ConfidenceMaps::Constrained(m) => Ok(m),
        ConfidenceMaps::Plain(_) => Err(Error::ModeMismatch {
            expected: "constrained",
            found: "plain",
        }),
    }
}

/// Spatial interpolation toward user-preferred solutions.
pub fn interpolate(
    solutions: &[Image],
    maps: &ConfidenceMaps,
    weights: &InterpolationWeights,
) -> Result<Image> {
    let planes = require_constrained(maps)?;
    check_solutions(solutions, maps)?;
    if weights.len() != solutions.len() {
        return Err(Error::CountMismatch {
            expected: solutions.len(),
            found: weights.len(),
        });
    }
    let wts = weights.relative();
    let (w, h) = solutions[0].dims();
    let mut out = [0, 1, 2].map(|_| vec![0.0; w * h]);
    let mut adjusted = vec![0.0; planes.len()];
    for p in 0..w * h {
        let mut denom = 0.0;
        for (i, map) in planes.iter().enumerate() {
            adjusted[i] = map.data()[p] * wts[i];
            denom += adjusted[i];
        }
        denom += NORMALIZE_EPS;
        for (c, plane) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, v) in solutions.iter().enumerate() {
                acc += v.plane(c).data()[p] * (adjusted[i] / denom);
            }
            plane[p] = acc;
        }
    }
    let planes = out.map(|d| Plane::new(w, h, d).expect("dimensions checked"));
    Ok(Image::from_planes(planes)?.with_depth(solutions[0].depth()))
}

/// Divide constrained maps by their per-pixel sum (plus ε).
pub fn normalize_maps(maps: &ConfidenceMaps) -> Result<ConfidenceMaps> {
    let planes = require_constrained(maps)?;
    let Some(first) = planes.first() else {
        return Ok(maps.clone());
    };
    let (w, h) = first.dims();
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; w * h]; planes.len()];
    for p in 0..w * h {
        let denom = planes.iter().map(|m| m.data()[p]).sum::<f64>() + NORMALIZE_EPS;
        for (o, m) in out.iter_mut().zip(planes) {
            o[p] = m.data()[p] / denom;
        }
    }
    Ok(ConfidenceMaps::Constrained(
        out.into_iter()
            .map(|d| Plane::new(w, h, d).expect("dimensions checked"))
            .collect(),
    ))
}
