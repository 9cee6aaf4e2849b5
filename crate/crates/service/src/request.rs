//! Parsing of fit request bodies.

use base64::Engine;
use serde::Deserialize;
use tonefit::{FitConfig, FusionMode};

/// Body of `POST /api/sessions/{id}/fit`. Every field is optional; absent
/// fields take the library defaults, except `fusion_mode`, which defaults to
/// constrained so interpolation previews are available.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitBody {
    solutions: Option<usize>,
    pieces: Option<usize>,
    iterations: Option<u32>,
    steps: Option<usize>,
    learning_rate: Option<f64>,
    ssim_weight: Option<f64>,
    fusion_mode: Option<FusionMode>,
    monotone_knots: Option<bool>,
    seed: Option<u64>,
    fit_scale: Option<usize>,
    /// Base64-encoded PNG.
    reference: Option<String>,
}

#[derive(Debug)]
pub struct FitRequest {
    pub config: FitConfig,
    pub reference_png: Option<Vec<u8>>,
}

#[derive(Debug, PartialEq)]
pub enum RequestError {
    /// Not JSON at all.
    Syntax(String),
    /// JSON, but not an acceptable request.
    Invalid(String),
}

/// Parse and validate a fit body. An empty body means all defaults.
pub fn parse_fit_request(body: &[u8]) -> Result<FitRequest, RequestError> {
    let parsed: FitBody = if body.iter().all(u8::is_ascii_whitespace) {
        FitBody::default()
    } else {
        serde_json::from_slice(body).map_err(|e| {
            if e.is_syntax() || e.is_eof() {
                RequestError::Syntax(e.to_string())
            } else {
                RequestError::Invalid(e.to_string())
            }
        })?
    };
    let d = FitConfig::default();
    let config = FitConfig {
        solutions: parsed.solutions.unwrap_or(d.solutions),
        pieces: parsed.pieces.unwrap_or(d.pieces),
        iterations: parsed.iterations.unwrap_or(d.iterations),
        steps: parsed.steps.unwrap_or(d.steps),
        learning_rate: parsed.learning_rate.unwrap_or(d.learning_rate),
        ssim_weight: parsed.ssim_weight.unwrap_or(d.ssim_weight),
        fusion_mode: parsed.fusion_mode.unwrap_or(FusionMode::Constrained),
        monotone_knots: parsed.monotone_knots.unwrap_or(d.monotone_knots),
        seed: parsed.seed.unwrap_or(d.seed),
        fit_scale: parsed.fit_scale.unwrap_or(d.fit_scale),
    };
    config
        .validate()
        .map_err(|e| RequestError::Invalid(e.to_string()))?;
    let reference_png = parsed
        .reference
        .map(|b64| {
            base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| RequestError::Invalid(format!("reference: {e}")))
        })
        .transpose()?;
    Ok(FitRequest {
        config,
        reference_png,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_to_constrained() {
        let r = parse_fit_request(b"").unwrap();
        assert_eq!(r.config.fusion_mode, FusionMode::Constrained);
        assert_eq!(r.config.steps, 2000);
        assert!(r.reference_png.is_none());
        let r = parse_fit_request(br#"{"steps": 10, "fusion_mode": "plain", "reference": "iVBO"}"#).unwrap();
        assert_eq!((r.config.steps, r.config.fusion_mode), (10, FusionMode::Plain));
        assert_eq!(r.reference_png.unwrap(), vec![0x89, 0x50, 0x4e]);
    }

    #[test]
    fn classifies_errors() {
        assert!(matches!(parse_fit_request(b"{"), Err(RequestError::Syntax(_))));
        assert!(matches!(parse_fit_request(br#"{"steps": 0}"#), Err(RequestError::Invalid(_))));
        assert!(matches!(parse_fit_request(br#"{"stepz": 3}"#), Err(RequestError::Invalid(_))));
        assert!(matches!(parse_fit_request(br#"{"steps": -3}"#), Err(RequestError::Invalid(_))));
        assert!(matches!(parse_fit_request(br#"{"reference": "@@"}"#), Err(RequestError::Invalid(_))));
    }
}
