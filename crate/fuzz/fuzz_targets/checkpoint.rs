#![no_main]
use libfuzzer_sys::fuzz_target;

// Input: header JSON, a NUL byte, then weights.bin.
fuzz_target!(|data: &[u8]| {
    let (header, weights) = match data.iter().position(|&b| b == 0) {
        Some(k) => (&data[..k], &data[k + 1..]),
        None => (data, &[][..]),
    };
    if let Ok(ckpt) = dyndiff::denoiser::Checkpoint::from_bytes(header, weights) {
        let _ = ckpt.schedule();
    }
});
