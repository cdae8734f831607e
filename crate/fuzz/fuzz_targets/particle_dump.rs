#![no_main]

use libfuzzer_sys::fuzz_target;
use qsd_core::io::{decode_particles, encode_particles};

fuzz_target!(|data: &[u8]| {
    if let Ok(dump) = decode_particles(data) {
        if dump.dim == 1 {
            if let Ok(measure) = dump.into_measure::<1>() {
                let again = decode_particles(&encode_particles(&measure)).expect("re-encoded dump decodes");
                assert_eq!(again.len(), measure.len());
            }
        }
    }
});
