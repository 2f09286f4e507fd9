#![no_main]

use libfuzzer_sys::fuzz_target;
use twinforge_core::telemetry::decode_patterns;

fuzz_target!(|data: &[u8]| {
    if let Ok(patterns) = decode_patterns(data) {
        assert!(patterns.iter().all(|p| p.len() == 170));
    }
});
