#![no_main]

use libfuzzer_sys::fuzz_target;
use patchnet::data::pnm::{decode_labels, encode_labels};

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = decode_labels(data) {
        assert_eq!(labels.data.len(), labels.width * labels.height);
        let again = decode_labels(&encode_labels(&labels)).expect("re-encoded labels decode");
        assert_eq!(again, labels);
    }
});
