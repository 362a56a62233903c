#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((header, rows)) = dyndiff::eval::parse_csv(text) {
            assert!(rows.iter().all(|r| r.len() == header.len()));
        }
    }
});
