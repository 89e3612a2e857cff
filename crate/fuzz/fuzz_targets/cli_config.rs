#![no_main]

use libfuzzer_sys::fuzz_target;
use radchar_cli::config::FileConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = FileConfig::parse(text);
    }
});
