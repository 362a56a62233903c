#![no_main]
use libfuzzer_sys::fuzz_target;

// Input: manifest JSON, NUL, data.bin, and optionally NUL plus traces.bin.
fuzz_target!(|data: &[u8]| {
    let mut parts = data.splitn(3, |&b| b == 0);
    let manifest = parts.next().unwrap_or(&[]);
    let body = parts.next().unwrap_or(&[]);
    let traces = parts.next();
    if let Ok(dump) = dyndiff::sampler::SampleDump::from_bytes(manifest, body, traces) {
        for k in 0..dump.len() {
            let _ = dump.trajectory(k);
            let _ = dump.condition(k);
        }
    }
});
