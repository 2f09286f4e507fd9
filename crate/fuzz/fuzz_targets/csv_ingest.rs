#![no_main]

use libfuzzer_sys::fuzz_target;
use twinforge_core::telemetry::{ingest_csv_reader, window_cycles};

fuzz_target!(|data: &[u8]| {
    if let Ok(ingested) = ingest_csv_reader(data) {
        for w in window_cycles(&ingested.cycles) {
            assert!(w.readings.iter().all(|r| r.features().iter().all(|v| v.is_finite())));
        }
    }
});
