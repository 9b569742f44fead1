#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use socsit_core::harness::Scenario;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = Scenario::from_toml(text, Path::new("."));
    }
});
