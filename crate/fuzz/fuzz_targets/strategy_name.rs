#![no_main]

use gmi_core::{ScoringStrategy, StrategyKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() < 8 {
        return;
    }
    let (g, name) = data.split_at(8);
    let gamma = f64::from_le_bytes(g.try_into().unwrap());
    if let Ok(name) = std::str::from_utf8(name) {
        if let Ok(kind) = name.parse::<StrategyKind>() {
            assert_eq!(kind.name(), name);
        }
        if let Ok(s) = ScoringStrategy::parse(name, gamma) {
            assert!(s.kernel.gamma() > 0.0 && s.kernel.gamma().is_finite());
        }
    }
});
