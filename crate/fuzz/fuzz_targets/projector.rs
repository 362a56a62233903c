#![no_main]
use libfuzzer_sys::fuzz_target;

// Input: header JSON, a NUL byte, then the matrix bytes.
fuzz_target!(|data: &[u8]| {
    let (header, body) = match data.iter().position(|&b| b == 0) {
        Some(k) => (&data[..k], &data[k + 1..]),
        None => (data, &[][..]),
    };
    if let Ok((p, _)) = dyndiff::projector::Projector::from_bytes(header, body) {
        let _ = p.apply(&vec![1.0; p.dim()]);
    }
});
