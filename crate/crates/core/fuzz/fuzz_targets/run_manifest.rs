#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::pipeline::manifest::RunManifest;

fuzz_target!(|text: &str| {
    if let Ok(m) = RunManifest::from_json(text) {
        assert_eq!(RunManifest::from_json(&m.to_json()).expect("canonical manifest parses"), m);
    }
});
