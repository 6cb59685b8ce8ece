#![no_main]

use libfuzzer_sys::fuzz_target;
use mfas_core::config::{parse_space, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_space(text, &[]);
    if let Ok(cfg) = RunConfig::parse(text, &[]) {
        assert_eq!(RunConfig::parse(&cfg.resolved(), &[]).unwrap(), cfg);
    }
});
