#![no_main]

use libfuzzer_sys::fuzz_target;
use tonefit::imageio::{decode_png, decode_png_planes};

fuzz_target!(|data: &[u8]| {
    if let Ok(decoded) = decode_png_planes(data) {
        assert!(!decoded.planes.is_empty());
    }
    if let Ok(image) = decode_png(data) {
        for plane in image.planes() {
            assert!(plane.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
});
