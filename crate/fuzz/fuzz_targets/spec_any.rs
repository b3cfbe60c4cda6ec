#![no_main]

use gmi_core::{deserialize_spec, deserialize_spec_any, deserialize_spec_stream};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = deserialize_spec_any(data) {
        let direct = deserialize_spec(data).or_else(|_| deserialize_spec_stream(data));
        assert_eq!(direct.ok(), Some(spec));
    }
});
