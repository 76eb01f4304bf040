#![no_main]

use explain_al::harness::{parse_curves_csv, summarize};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_curves_csv(data) {
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.f1_macro)));
        if let Ok(summary) = summarize(&rows) {
            for s in &summary.strategies {
                for p in &s.points {
                    assert!(p.ci_low <= p.mean + 1e-12 && p.mean <= p.ci_high + 1e-12);
                }
            }
        }
    }
});
