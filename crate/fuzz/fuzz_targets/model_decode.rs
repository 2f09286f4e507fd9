#![no_main]

use libfuzzer_sys::fuzz_target;
use twinforge_core::models::{ClassifierModel, DaeModel};
use twinforge_core::neural::{decode_network, encode_network};

fuzz_target!(|data: &[u8]| {
    // First byte picks the input width so the shape checks are exercised too.
    let Some((&w, body)) = data.split_first() else {
        return;
    };
    if let Ok(net) = decode_network(body, usize::from(w % 8) + 1) {
        assert_eq!(encode_network(&net), body);
    }
    let _ = DaeModel::from_bytes(body, 0.05);
    let _ = ClassifierModel::from_bytes(body);
});
