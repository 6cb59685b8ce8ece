//! Input is `manifest \0 blob`.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mfas_core::checkpoint::{fused_from_checkpoint, modality_from_checkpoint};
use mfas_core::formats::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let blob = data.get(split + 1..).unwrap_or(&[]);
    let Ok(ck) = Checkpoint::parse(manifest, blob) else {
        return;
    };
    let _ = fused_from_checkpoint(&ck);
    let _ = modality_from_checkpoint(&ck);
});
