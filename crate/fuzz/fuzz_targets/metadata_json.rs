#![no_main]

use libfuzzer_sys::fuzz_target;
use twinforge_core::ledger::{full_similarity, DynamicMetadata};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(doc) = DynamicMetadata::from_json(text) {
        let again = DynamicMetadata::from_json(&doc.to_json()).expect("round trip");
        assert_eq!(again, doc);
        assert_eq!(full_similarity(&doc, &doc), 100.0);
    }
});
