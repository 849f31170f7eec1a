#![no_main]

use libfuzzer_sys::fuzz_target;
use patchnet::data::pnm::Pnm;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = Pnm::decode(data) {
        let again = Pnm::decode(&p.encode()).expect("re-encoded image decodes");
        assert_eq!(again, p);
        let image = p.to_image();
        assert_eq!(image.shape(), [3, p.height, p.width]);
        assert!(image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        Pnm::from_image(&image).expect("decoded image re-encodes as 8-bit");
    }
});
