#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::pipeline::PipelineConfig;

fuzz_target!(|text: &str| {
    if let Ok(c) = PipelineConfig::parse(text) {
        let _ = c.validate();
    }
});
