#![no_main]

use libfuzzer_sys::fuzz_target;
use scenefactor::clustering::{read_labels, write_labels};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_labels(data) {
        let mut out = Vec::new();
        write_labels(&rows, &mut out).expect("parsed labels serialize");
        assert_eq!(read_labels(out.as_slice()).expect("written labels parse"), rows);
    }
});
