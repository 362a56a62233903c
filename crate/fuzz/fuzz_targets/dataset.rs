#![no_main]
use libfuzzer_sys::fuzz_target;

// Input: manifest JSON, a NUL byte, then data.bin.
fuzz_target!(|data: &[u8]| {
    let (manifest, body) = match data.iter().position(|&b| b == 0) {
        Some(k) => (&data[..k], &data[k + 1..]),
        None => (data, &[][..]),
    };
    if let Ok(set) = dyndiff::tasks::Dataset::from_bytes(manifest, body) {
        for i in 0..set.len() {
            let _ = set.trajectory(i);
            let _ = set.condition(i);
        }
        let _ = set.system();
    }
});
