#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::scenario::{parse_scenario, serialize_scenario};

fuzz_target!(|text: &str| {
    if let Ok(s) = parse_scenario(text, 1) {
        // Canonical form is a fixed point.
        let canonical = serialize_scenario(&s);
        let again = parse_scenario(&canonical, 1).expect("canonical record parses");
        assert_eq!(serialize_scenario(&again), canonical);
    }
});
