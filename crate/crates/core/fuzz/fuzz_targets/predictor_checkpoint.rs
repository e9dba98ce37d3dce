#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::predictor::PredictorCheckpoint;

fuzz_target!(|text: &str| {
    let _ = PredictorCheckpoint::from_json(text);
});
