#![no_main]

use libfuzzer_sys::fuzz_target;
use socsit_core::wire::{self, WireRecord};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rec) = text.parse::<WireRecord>() {
        let again: WireRecord = rec.to_string().parse().expect("printed record parses");
        assert_eq!(rec, again);
    }
    if let Ok(log) = wire::parse_log(text) {
        assert_eq!(wire::parse_log(&wire::write_log(&log)).expect("printed log parses"), log);
    }
});
