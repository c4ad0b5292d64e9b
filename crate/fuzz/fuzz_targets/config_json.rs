#![no_main]

use libfuzzer_sys::fuzz_target;
use ssm_prune::model::ModelConfig;

fuzz_target!(|data: &[u8]| {
    // Config parsing must never panic, and anything that validates must
    // survive a serialize/parse round trip unchanged.
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ModelConfig::from_json_str(text) {
            let back = ModelConfig::from_json_str(&cfg.to_json()).expect("validated config round-trips");
            assert_eq!(back, cfg);
        }
    }
});
