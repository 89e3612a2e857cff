#![no_main]

use libfuzzer_sys::fuzz_target;
use radchar_nn::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        let _ = radchar::bundle::from_checkpoint(&ckpt);
    }
});
