#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::vectorize::{Axis, FeatureTable};

fuzz_target!(|data: &[u8]| {
    for axis in [Axis::Ego, Axis::Social] {
        let _ = FeatureTable::read_csv(axis, data, None);
    }
});
