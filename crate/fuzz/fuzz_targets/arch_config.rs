#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // A config that parses must also survive cost accounting.
        if let Ok(cfg) = aerodet::arch::ArchConfig::from_toml_str(text) {
            let _ = aerodet::flops::count_model(&cfg);
        }
    }
});
