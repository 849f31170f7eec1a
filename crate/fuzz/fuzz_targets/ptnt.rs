#![no_main]

use libfuzzer_sys::fuzz_target;
use patchnet::Tensor;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = Tensor::from_ptnt_bytes(data) {
        // Compared as bytes: NaN payloads must survive, and NaN != NaN.
        let bytes = t.to_ptnt_bytes();
        let again = Tensor::from_ptnt_bytes(&bytes).expect("re-encoded tensor decodes");
        assert_eq!(again.to_ptnt_bytes(), bytes);
    }
});
