//! The complete enhancement model: `N` curve triples plus their confidence
//! maps, and the two ways of rendering it (exact curves, or lookup tables).

use rayon::prelude::*;

use crate::curve::{CurveTriple, Lut};
use crate::error::{Error, Result};
use crate::fusion::{self, ConfidenceMaps, FusionMode, InterpolationWeights};
use crate::image::{Image, Plane};
use crate::imageio::{resize_plane, ResizeMethod};

/// Table size used by the fast render path.
pub const DEFAULT_LUT_RESOLUTION: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct SolutionSet {
    triples: Vec<CurveTriple>,
    maps: ConfidenceMaps,
}

impl SolutionSet {
    pub fn new(triples: Vec<CurveTriple>, maps: ConfidenceMaps) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::CountMismatch {
                expected: 1,
                found: 0,
            });
        }
        if maps.len() != triples.len() {
            return Err(Error::CountMismatch {
                expected: triples.len(),
                found: maps.len(),
            });
        }
        let shape = (triples[0].pieces(), triples[0].iterations());
        if triples.iter().any(|t| (t.pieces(), t.iterations()) != shape) {
            return Err(Error::MixedCurveShapes);
        }
        Ok(SolutionSet { triples, maps })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn pieces(&self) -> usize {
        self.triples[0].pieces()
    }

    pub fn iterations(&self) -> u32 {
        self.triples[0].iterations()
    }

    pub fn mode(&self) -> FusionMode {
        self.maps.mode()
    }

    pub fn triples(&self) -> &[CurveTriple] {
        &self.triples
    }

    pub fn maps(&self) -> &ConfidenceMaps {
        &self.maps
    }

    pub fn map_dims(&self) -> Option<(usize, usize)> {
        self.maps.dims()
    }

    pub fn with_triples(&self, triples: Vec<CurveTriple>) -> Result<Self> {
        SolutionSet::new(triples, self.maps.clone())
    }

    pub fn with_maps(&self, maps: ConfidenceMaps) -> Result<Self> {
        SolutionSet::new(self.triples.clone(), maps)
    }

    /// The same curves with maps resampled (bilinear) to `width × height`.
    pub fn resized_maps(&self, width: usize, height: usize) -> Result<Self> {
        let mut err = None;
        let maps = self.maps.map_planes(|p| {
            resize_plane(p, width, height, ResizeMethod::Bilinear).unwrap_or_else(|e| {
                err = Some(e);
                p.clone()
            })
        });
        match err {
            Some(e) => Err(e),
            None => self.with_maps(maps),
        }
    }

    /// Globally adjusted images, one per curve triple.
    pub fn solutions(&self, input: &Image) -> Vec<Image> {
        self.triples.iter().map(|t| t.apply(input)).collect()
    }

    /// Fused output, unclamped.
    pub fn render(&self, input: &Image) -> Result<Image> {
        fusion::fuse(&self.solutions(input), &self.maps)
    }

    /// Spatially interpolated output (constrained mode only), unclamped.
    pub fn interpolate(&self, input: &Image, weights: &InterpolationWeights) -> Result<Image> {
        fusion::interpolate(&self.solutions(input), &self.maps, weights)
    }

    pub fn luts(&self, resolution: usize) -> Vec<[Lut; 3]> {
        self.triples.iter().map(|t| t.to_luts(resolution)).collect()
    }

    /// Fused output through precomputed tables, rows in parallel on the
    /// current rayon pool. Output is unclamped.
    pub fn render_with_luts(&self, input: &Image, luts: &[[Lut; 3]]) -> Result<Image> {
        if luts.len() != self.len() {
            return Err(Error::CountMismatch {
                expected: self.len(),
                found: luts.len(),
            });
        }
        let (w, h) = input.dims();
        if let Some(dims) = self.maps.dims() {
            if dims != (w, h) {
                return Err(Error::DimensionMismatch {
                    expected: (w, h),
                    found: dims,
                });
            }
        }
        let planes = [0, 1, 2].map(|c| {
            let src = input.plane(c).data();
            let mut out = vec![0.0; w * h];
            out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                let base = y * w;
                for (i, lut) in luts.iter().enumerate() {
                    let conf = &self.maps.channel(i, c).data()[base..base + w];
                    let s = &src[base..base + w];
                    for ((o, &x), &k) in row.iter_mut().zip(s).zip(conf) {
                        *o += lut[c].apply(x) * k;
                    }
                }
            });
            Plane::new(w, h, out).expect("dimensions checked")
        });
        Ok(Image::from_planes(planes)?.with_depth(input.depth()))
    }
}
