#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::evaluation::DifficultyBins;

fuzz_target!(|text: &str| {
    if let Ok(b) = DifficultyBins::parse(text) {
        for d in [0.0, 1e-9, 20.0, 1e9] {
            assert!(b.bin_of(d) < b.len());
        }
    }
});
