//! Portable preset directories: a JSON manifest with every curve parameter
//! plus one 16-bit PNG per confidence map.
//!
//! Map values are stored as `(v − lo) / (hi − lo)`, with `[lo, hi] = [0, 1]`
//! for constrained maps and the map's own min/max for plain maps.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curve::{CurveTriple, PngCurve};
use crate::error::{Error, Result};
use crate::fusion::{ConfidenceMaps, FusionMode};
use crate::image::{BitDepth, Image, Plane};
use crate::imageio::{decode_png_planes, encode_planes};
use crate::optimize::{MAX_ITERATIONS, MAX_PIECES, MAX_SOLUTIONS};
use crate::solution::SolutionSet;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "preset.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveParams {
    pub knots: Vec<f64>,
    pub alphas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetManifest {
    pub format_version: u32,
    pub n_solutions: usize,
    pub pieces: usize,
    pub iterations: u32,
    pub fusion_mode: FusionMode,
    pub map_range: Vec<MapRange>,
    pub curves: Vec<[CurveParams; 3]>,
    pub maps: Vec<String>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn inconsistent(field: &'static str, detail: impl Into<String>) -> Error {
    Error::InconsistentPreset {
        field,
        detail: detail.into(),
    }
}

pub fn map_file_name(index: usize) -> String {
    format!("map_{index}.png")
}

impl PresetManifest {
    /// Parse and validate a manifest. A recognizable but different
    /// `format_version` is reported as such before any other field is
    /// looked at.
    pub fn parse(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: probe.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let manifest: PresetManifest = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_solutions;
        if !(1..=MAX_SOLUTIONS).contains(&n) {
            return Err(inconsistent("n_solutions", format!("{n} is outside 1..={MAX_SOLUTIONS}")));
        }
        if !(1..=MAX_PIECES).contains(&self.pieces) {
            return Err(inconsistent("pieces", format!("{} is outside 1..={MAX_PIECES}", self.pieces)));
        }
        if !(1..=MAX_ITERATIONS).contains(&self.iterations) {
            return Err(inconsistent(
                "iterations",
                format!("{} is outside 1..={MAX_ITERATIONS}", self.iterations),
            ));
        }
        for (field, len) in [
            ("curves", self.curves.len()),
            ("maps", self.maps.len()),
            ("map_range", self.map_range.len()),
        ] {
            if len != n {
                return Err(inconsistent(field, format!("expected {n} entries, found {len}")));
            }
        }
        for triple in &self.curves {
            for c in triple {
                if c.knots.len() != self.pieces + 1 || c.alphas.len() != self.pieces {
                    return Err(inconsistent(
                        "curves",
                        format!(
                            "expected {} knots and {} alphas, found {} and {}",
                            self.pieces + 1,
                            self.pieces,
                            c.knots.len(),
                            c.alphas.len()
                        ),
                    ));
                }
            }
        }
        for r in &self.map_range {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return Err(inconsistent("map_range", format!("invalid range [{}, {}]", r.lo, r.hi)));
            }
            if self.fusion_mode == FusionMode::Constrained && (r.lo, r.hi) != (0.0, 1.0) {
                return Err(inconsistent("map_range", "constrained maps are stored on [0, 1]"));
            }
        }
        for name in &self.maps {
            let bare = Path::new(name).file_name().and_then(|f| f.to_str()) == Some(name.as_str());
            if !bare || !name.ends_with(".png") {
                return Err(inconsistent("maps", format!("{name:?} is not a bare .png file name")));
            }
        }
        Ok(())
    }

    /// The curve triples described by the manifest.
    pub fn triples(&self) -> Result<Vec<CurveTriple>> {
        self.curves
            .iter()
            .map(|t| {
                let [r, g, b] = t.clone().map(|c| PngCurve::new(c.knots, c.alphas, self.iterations));
                CurveTriple::new(r?, g?, b?)
            })
            .collect()
    }

    fn curves_of(set: &SolutionSet) -> Vec<[CurveParams; 3]> {
        set.triples()
            .iter()
            .map(|t| {
                t.curves().clone().map(|c| CurveParams {
                    knots: c.knots().to_vec(),
                    alphas: c.alphas().to_vec(),
                })
            })
            .collect()
    }
}

fn map_planes(maps: &ConfidenceMaps, i: usize) -> Vec<&Plane> {
    match maps {
        ConfidenceMaps::Plain(m) => m[i].iter().collect(),
        ConfidenceMaps::Constrained(m) => vec![&m[i]],
    }
}

fn stored_range(mode: FusionMode, planes: &[&Plane]) -> MapRange {
    match mode {
        FusionMode::Constrained => MapRange { lo: 0.0, hi: 1.0 },
        FusionMode::Plain => {
            let (lo, hi) = planes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let (a, b) = p.min_max();
                (lo.min(a), hi.max(b))
            });
            MapRange { lo, hi }
        }
    }
}

/// The manifest describing `set`, without encoding any map.
pub fn manifest_for(set: &SolutionSet) -> PresetManifest {
    let mode = set.mode();
    PresetManifest {
        format_version: FORMAT_VERSION,
        n_solutions: set.len(),
        pieces: set.pieces(),
        iterations: set.iterations(),
        fusion_mode: mode,
        map_range: (0..set.len())
            .map(|i| stored_range(mode, &map_planes(set.maps(), i)))
            .collect(),
        curves: PresetManifest::curves_of(set),
        maps: (0..set.len()).map(map_file_name).collect(),
    }
}

/// Manifest plus `(file name, PNG bytes)` for each map.
pub fn encode_preset(set: &SolutionSet) -> Result<(PresetManifest, Vec<(String, Vec<u8>)>)> {
    let manifest = manifest_for(set);
    let mut files = Vec::with_capacity(set.len());
    for (i, (range, name)) in manifest.map_range.iter().zip(&manifest.maps).enumerate() {
        let span = range.hi - range.lo;
        let scaled: Vec<Plane> = map_planes(set.maps(), i)
            .iter()
            .map(|p| p.map(|v| if span > 0.0 { (v - range.lo) / span } else { 0.0 }))
            .collect();
        let refs: Vec<&Plane> = scaled.iter().collect();
        files.push((name.clone(), encode_planes(&refs, BitDepth::Sixteen)?));
    }
    Ok((manifest, files))
}

/// Rebuild a set from a validated manifest and a source of sidecar bytes.
pub fn decode_preset(
    manifest: &PresetManifest,
    mut sidecar: impl FnMut(&str) -> Result<Vec<u8>>,
) -> Result<SolutionSet> {
    manifest.validate()?;
    let triples = manifest.triples()?;
    let channels = manifest.fusion_mode.map_channels();
    let mut dims = None;
    let mut per_map = Vec::with_capacity(manifest.n_solutions);
    for (name, range) in manifest.maps.iter().zip(&manifest.map_range) {
        let decoded = decode_png_planes(&sidecar(name)?)?;
        if decoded.has_alpha || decoded.planes.len() != channels || decoded.depth != BitDepth::Sixteen {
            return Err(inconsistent(
                "maps",
                format!("{name} must be a 16-bit {channels}-channel PNG without alpha"),
            ));
        }
        let d = decoded.planes[0].dims();
        if *dims.get_or_insert(d) != d {
            return Err(inconsistent("maps", format!("{name} has different dimensions")));
        }
        let (lo, hi) = (range.lo, range.hi);
        let planes: Vec<Plane> = decoded
            .planes
            .iter()
            .map(|p| {
                p.map(|t| {
                    // Exact endpoints keep save → load → save byte-stable.
                    if t >= 1.0 {
                        hi
                    } else {
                        (lo + t * (hi - lo)).clamp(lo, hi)
                    }
                })
            })
            .collect();
        per_map.push(planes);
    }
    let maps = match manifest.fusion_mode {
        FusionMode::Constrained => {
            ConfidenceMaps::constrained(per_map.into_iter().map(|mut p| p.remove(0)).collect())?
        }
        FusionMode::Plain => ConfidenceMaps::plain(
            per_map
                .into_iter()
                .map(|p| <[Plane; 3]>::try_from(p).expect("channel count checked"))
                .collect(),
        )?,
    };
    SolutionSet::new(triples, maps)
}

pub fn save_preset(set: &SolutionSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest, files) = encode_preset(set)?;
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))
}

pub fn load_preset(dir: impl AsRef<Path>) -> Result<SolutionSet> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = PresetManifest::parse(&text)?;
    decode_preset(&manifest, |name| {
        let path = dir.join(name);
        match fs::read(&path) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingSidecar(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    })
}

/// Which confidence maps to use when applying a preset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapPolicy {
    /// The preset's own maps, bilinearly resized to the image if needed.
    Stored,
    /// Constant `1/N` maps: only the curves transfer.
    #[default]
    Uniform,
}

impl fmt::Display for MapPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapPolicy::Stored => "stored",
            MapPolicy::Uniform => "uniform",
        })
    }
}

impl FromStr for MapPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stored" => Ok(MapPolicy::Stored),
            "uniform" => Ok(MapPolicy::Uniform),
            other => Err(Error::InvalidConfig(format!(
                "unknown map policy {other:?} (expected stored or uniform)"
            ))),
        }
    }
}

/// The preset re-targeted to `width × height` under `policy`.
pub fn preset_for_dims(set: &SolutionSet, width: usize, height: usize, policy: MapPolicy) -> Result<SolutionSet> {
    match policy {
        MapPolicy::Stored if set.map_dims() == Some((width, height)) => Ok(set.clone()),
        MapPolicy::Stored => set.resized_maps(width, height),
        MapPolicy::Uniform => set.with_maps(ConfidenceMaps::uniform(
            set.mode(),
            set.len(),
            width,
            height,
            1.0 / set.len() as f64,
        )),
    }
}

/// Apply every curve triple and fuse; output clamped to [0, 1].
pub fn apply_preset(image: &Image, set: &SolutionSet, policy: MapPolicy) -> Result<Image> {
    let (w, h) = image.dims();
    Ok(preset_for_dims(set, w, h, policy)?.render(image)?.clamped())
}
