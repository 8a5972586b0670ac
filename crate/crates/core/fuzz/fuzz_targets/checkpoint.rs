#![no_main]

use libfuzzer_sys::fuzz_target;
use vpstream::prediction::{decode_checkpoint, encode_checkpoint};

// A decoded checkpoint re-encodes to the same bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode_checkpoint(data) {
        assert_eq!(encode_checkpoint(&ck), data);
    }
});
