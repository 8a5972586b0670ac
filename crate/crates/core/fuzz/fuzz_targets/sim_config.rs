#![no_main]

use libfuzzer_sys::fuzz_target;
use vpstream::sim::SimConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = toml::from_str::<SimConfig>(text) {
        if cfg.validate().is_ok() {
            // Validation must rule out every derived-quantity failure.
            cfg.payload_bits().unwrap();
            cfg.grid().unwrap();
            assert!(cfg.timing().total_slots > 0);
        }
    }
});
