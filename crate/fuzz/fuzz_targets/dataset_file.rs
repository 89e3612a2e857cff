#![no_main]

use libfuzzer_sys::fuzz_target;
use radchar::dataset::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::from_bytes(data) {
        // Anything accepted must re-encode to the same bytes.
        assert_eq!(ds.to_bytes(), data);
    }
});
