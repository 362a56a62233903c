#![no_main]
use dyndiff::tasks::ConditionLayout;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let layout = ConditionLayout::Waypoint { n: 4, v_max: 4, o_max: 4 };
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Ok(task) = layout.decode_waypoint(&values, 40) {
        let again = layout.encode_waypoint(&task).expect("decoded task re-encodes");
        assert_eq!(again.len(), layout.len());
    }
});
