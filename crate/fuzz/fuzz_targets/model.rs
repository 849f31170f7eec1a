#![no_main]

use libfuzzer_sys::fuzz_target;
use patchnet::network::Model;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = Model::from_bytes(data) {
        let bytes = m.to_bytes();
        let again = Model::from_bytes(&bytes).expect("re-encoded model decodes");
        assert_eq!(again.to_bytes(), bytes);
    }
});
