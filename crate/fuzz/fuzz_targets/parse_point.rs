#![no_main]

use libfuzzer_sys::fuzz_target;
use tonefit::RgbPoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = text.parse::<RgbPoint>() {
        assert!(p.is_finite());
    }
});
