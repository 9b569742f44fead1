#![no_main]

use libfuzzer_sys::fuzz_target;
use socsit_core::trace;

fuzz_target!(|data: &[u8]| {
    let Ok(t) = trace::read_trace(data) else {
        return;
    };
    let mut out = Vec::new();
    trace::write_trace(&mut out, &t.frames).expect("in-memory write");
    let again = trace::read_trace(out.as_slice()).expect("written trace reads back");
    assert_eq!(again.frames, t.frames);
});
