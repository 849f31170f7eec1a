#![no_main]

use libfuzzer_sys::fuzz_target;
use patchnet::cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = RunConfig::parse(data) {
        // Validation may reject the config but must not panic.
        let _ = cfg.validate();
        let json = serde_json::to_vec(&cfg).expect("config serializes");
        assert_eq!(RunConfig::parse(&json).expect("config round-trips"), cfg);
    }
});
