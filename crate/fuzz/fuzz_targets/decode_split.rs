#![no_main]

use ifm::data::{decode_split, encode_split};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(split) = decode_split(data) {
        // Anything accepted must re-encode to the same bytes.
        assert_eq!(encode_split(&split), data);
    }
});
