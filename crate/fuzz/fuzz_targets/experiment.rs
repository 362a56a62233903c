#![no_main]
use libfuzzer_sys::fuzz_target;

// Input: manifest JSON, a NUL byte, then data.bin.
fuzz_target!(|data: &[u8]| {
    let (manifest, body) = match data.iter().position(|&b| b == 0) {
        Some(k) => (&data[..k], &data[k + 1..]),
        None => (data, &[][..]),
    };
    if let Ok(exp) = dyndiff::projector::Experiment::from_bytes(manifest, body) {
        let _ = exp.stacked_hankel(2);
    }
});
