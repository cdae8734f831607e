#![no_main]

use libfuzzer_sys::fuzz_target;
use qsd_core::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = ExperimentConfig::from_json_str(text) {
            let _ = config.validate();
            let _ = config.analysis();
        }
    }
});
