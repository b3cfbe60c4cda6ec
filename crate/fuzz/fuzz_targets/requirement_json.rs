#![no_main]

use gmi_core::{deserialize_requirement, serialize_requirement};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = deserialize_requirement(data) {
        let again =
            deserialize_requirement(&serialize_requirement(&req)).expect("re-serialized requirement parses");
        assert_eq!(again, req);
    }
});
