#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::splits::SplitManifest;

fuzz_target!(|text: &str| {
    if let Ok(m) = SplitManifest::from_json(text) {
        assert_eq!(SplitManifest::from_json(&m.to_json()).expect("canonical manifest parses"), m);
    }
});
