#![no_main]

use libfuzzer_sys::fuzz_target;
use tonefit::preset::{decode_preset, PresetManifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(manifest) = PresetManifest::parse(text) else { return };
    // A manifest that validates must also build curves, and re-serialize to
    // something that parses back identically.
    if manifest.validate().is_ok() {
        manifest.triples().expect("validated manifest builds curves");
        let again = PresetManifest::parse(&manifest.to_json()).expect("re-serialized manifest parses");
        assert_eq!(again, manifest);
    }
    let _ = decode_preset(&manifest, |name| Err(tonefit::Error::MissingSidecar(name.into())));
});
