#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(profiles) = vpstream::caching::read_profiles(data, Path::new("fuzz")) {
        for p in &profiles {
            for f in 0..p.n_frames() {
                let total: f64 = p.fractions(f).iter().map(|(_, x)| x).sum();
                assert!(total <= 1.0 + 1e-9);
            }
        }
    }
});
