#![no_main]

use libfuzzer_sys::fuzz_target;
use radchar::iq_input::{parse, InputFormat};

fuzz_target!(|data: &[u8]| {
    for format in [None, Some(InputFormat::Raw), Some(InputFormat::Csv)] {
        if let Ok(frame) = parse(data, format) {
            assert_eq!(frame.len(), 1024);
            assert!(frame.iter().all(|v| v.is_finite()));
        }
    }
});
