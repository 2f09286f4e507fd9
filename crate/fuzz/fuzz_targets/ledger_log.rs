#![no_main]

use libfuzzer_sys::fuzz_target;
use twinforge_core::ledger::LedgerState;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(state) = LedgerState::from_log_json(text) {
        let again = LedgerState::from_log_json(&state.log_to_json()).expect("round trip");
        assert_eq!(again, state);
    }
});
