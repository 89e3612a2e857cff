#![no_main]

use libfuzzer_sys::fuzz_target;
use radchar::dataset::Sidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(side) = serde_json::from_slice::<Sidecar>(data) {
        let _ = side.config.validate();
    }
});
