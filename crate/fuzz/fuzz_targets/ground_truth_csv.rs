#![no_main]

use libfuzzer_sys::fuzz_target;
use socsit_core::trace;

fuzz_target!(|data: &[u8]| {
    let Ok(frames) = trace::read_ground_truth(data) else {
        return;
    };
    let mut out = Vec::new();
    trace::write_ground_truth(&mut out, &frames).expect("in-memory write");
    let again = trace::read_ground_truth(out.as_slice()).expect("written labels read back");
    assert_eq!(again, frames);
});
