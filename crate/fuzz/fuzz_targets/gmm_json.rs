#![no_main]

use libfuzzer_sys::fuzz_target;
use socsit_core::percept::GmmModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(model) = GmmModel::from_json(text) else {
        return;
    };
    for (d, f) in [(0.0, 1.0), (0.8, 0.9), (3.0, 0.5), (1e6, 0.0)] {
        let p = model.posterior(d, f);
        assert!((0.0..=1.0).contains(&p), "posterior {p}");
    }
    assert_eq!(GmmModel::from_json(&model.to_json()).expect("printed model parses"), model);
});
