#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::evaluation::GapReport;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = GapReport::read_csv(data) {
        let mut out = Vec::new();
        r.write_csv(&mut out).expect("parsed report serializes");
        let _ = r.to_text();
    }
});
