#![no_main]

use libfuzzer_sys::fuzz_target;
use mfas_core::formats::{read_mfft, write_mfft};

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = read_mfft(data) {
        let bytes = write_mfft(&file).unwrap();
        assert_eq!(read_mfft(&bytes).unwrap(), file);
        let _ = file.tap_matrices();
    }
});
