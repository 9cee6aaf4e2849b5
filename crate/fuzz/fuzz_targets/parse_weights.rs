#![no_main]

use libfuzzer_sys::fuzz_target;
use tonefit::InterpolationWeights;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(w) = text.parse::<InterpolationWeights>() {
        assert!(w.raw().iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(w.relative().iter().all(|v| v.is_finite() && *v > 0.0 && *v <= 1.0));
    }
});
