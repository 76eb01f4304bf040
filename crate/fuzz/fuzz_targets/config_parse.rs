#![no_main]

use explain_al::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        // the written form must parse back to the same config
        let again = ExperimentConfig::parse(&cfg.to_string()).unwrap();
        assert_eq!(again, cfg);
    }
});
