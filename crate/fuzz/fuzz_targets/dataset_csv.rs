#![no_main]

use explain_al::dataset::{parse_dataset, write_dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = parse_dataset(data) {
        assert!(set.features().matrix().is_finite());
        assert!(set.labels().iter().all(|&y| y < set.num_classes()));
        let mut out = Vec::new();
        write_dataset(&set, &mut out).unwrap();
        let again = parse_dataset(out.as_slice()).unwrap();
        assert_eq!(again.labels(), set.labels());
        assert_eq!(again.dims(), set.dims());
    }
});
