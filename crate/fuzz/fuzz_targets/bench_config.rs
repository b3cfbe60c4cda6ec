#![no_main]

use gmi_core::bench::BenchConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = BenchConfig::from_toml_str(text) {
            cfg.validate().expect("parsed configs are valid");
        }
    }
});
