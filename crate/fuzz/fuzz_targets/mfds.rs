#![no_main]

use libfuzzer_sys::fuzz_target;
use mfas_core::formats::{read_mfds, write_mfds};

fuzz_target!(|data: &[u8]| {
    if let Ok(split) = read_mfds(data) {
        // decoded values are f32, so re-encoding is lossless
        let bytes = write_mfds(&split).unwrap();
        assert_eq!(read_mfds(&bytes).unwrap(), split);
    }
});
