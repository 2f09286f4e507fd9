#![no_main]

use libfuzzer_sys::fuzz_target;
use twinforge_core::telemetry::BehaviouralPattern;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = serde_json::from_slice::<BehaviouralPattern>(data) {
        assert_eq!(p.values().len(), 170);
        let text = serde_json::to_string(&p).expect("serialize");
        let again: BehaviouralPattern = serde_json::from_str(&text).expect("round trip");
        assert_eq!(again, p);
    }
});
