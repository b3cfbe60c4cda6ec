#![no_main]

use gmi_core::{deserialize_spec, serialize_spec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = deserialize_spec(data) {
        let again = deserialize_spec(&serialize_spec(&spec)).expect("re-serialized spec parses");
        assert_eq!(again, spec);
    }
});
