#![no_main]

use libfuzzer_sys::fuzz_target;
use qsd_core::io::{decode_measure_json, encode_measure_json};

fuzz_target!(|data: &[u8]| {
    if let Ok(measure) = decode_measure_json(data) {
        let text = encode_measure_json(&measure).expect("decoded measure encodes");
        assert!(decode_measure_json(text.as_bytes()).is_ok());
    }
});
