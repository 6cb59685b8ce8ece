#![no_main]

use libfuzzer_sys::fuzz_target;
use mfas_core::space::{deserialize, serialize, SpaceConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let cfg = SpaceConfig::new(2, 2, 3, 3).unwrap();
    if let Ok(arch) = deserialize(text, &cfg) {
        let wire = serialize(&arch, &cfg);
        assert_eq!(deserialize(&wire, &cfg).unwrap(), arch);
    }
});
