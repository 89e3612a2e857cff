#![no_main]

use libfuzzer_sys::fuzz_target;
use radchar::dataset::format::{decode_record, encode_record, Header};

fuzz_target!(|data: &[u8]| {
    let _ = Header::decode(data);
    if let Ok(rec) = decode_record(data) {
        let (i, q) = rec.planar.split_at(rec.planar.len() / 2);
        let mut out = Vec::new();
        encode_record(rec.index, &rec.params, i.iter().copied().zip(q.iter().copied()), &mut out);
        assert_eq!(decode_record(&out).unwrap().params, rec.params);
    }
});
