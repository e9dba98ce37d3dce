#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::nn::Autoencoder;

fuzz_target!(|text: &str| {
    let _ = Autoencoder::from_json(text);
});
