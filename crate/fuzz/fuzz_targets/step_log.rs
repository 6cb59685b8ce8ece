#![no_main]

use libfuzzer_sys::fuzz_target;
use mfas_core::search::{read_step_log, records_from_log};
use mfas_core::space::SpaceConfig;

fuzz_target!(|data: &[u8]| {
    let space = SpaceConfig::new(2, 2, 3, 2).unwrap();
    if let Ok(rows) = read_step_log(data, &space) {
        let _ = records_from_log(&rows).top_k(5);
    }
});
