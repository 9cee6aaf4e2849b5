#![no_main]

use libfuzzer_sys::fuzz_target;
use tonefit_service::parse_fit_request;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = parse_fit_request(data) {
        req.config.validate().expect("accepted request has a valid config");
    }
});
