#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::pipeline::read_latents;

fuzz_target!(|data: &[u8]| {
    let _ = read_latents(data);
});
