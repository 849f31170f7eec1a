#![no_main]

use libfuzzer_sys::fuzz_target;
use patchnet::data::parse_manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = parse_manifest(data) {
        assert!(!entries.is_empty());
    }
});
