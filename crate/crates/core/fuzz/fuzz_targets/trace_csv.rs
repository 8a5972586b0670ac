#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;

// Whatever parses must be a usable trace set.
fuzz_target!(|data: &[u8]| {
    if let Ok(traces) = vpstream::io::read_traces(data, Path::new("fuzz")) {
        for t in &traces {
            for q in &t.poses {
                assert!((q.norm() - 1.0).abs() < 1e-9);
            }
        }
    }
});
