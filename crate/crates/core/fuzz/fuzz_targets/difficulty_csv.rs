#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::difficulty::read_difficulties;

fuzz_target!(|data: &[u8]| {
    if let Ok((_, records)) = read_difficulties(data) {
        for r in records {
            assert!(r.difficulty.is_none_or(f64::is_finite));
        }
    }
});
