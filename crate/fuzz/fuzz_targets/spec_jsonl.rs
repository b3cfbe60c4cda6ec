#![no_main]

use gmi_core::{deserialize_spec_stream, serialize_spec_stream};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = deserialize_spec_stream(data) {
        let again =
            deserialize_spec_stream(&serialize_spec_stream(&spec)).expect("re-serialized stream parses");
        assert_eq!(again, spec);
    }
});
