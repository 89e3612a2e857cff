//! Replays the checked-in fuzz seeds through the same entry points the fuzz
//! targets use, plus truncated and bit-flipped variants of each seed.

use std::path::PathBuf;

use radchar::dataset::format::{decode_record, Header};
use radchar::dataset::{Dataset, Sidecar};
use radchar::iq_input::{parse, InputFormat};
use radchar_nn::Checkpoint;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

/// The seed itself, a few truncations and a few single-bit flips.
fn variants(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut v = vec![bytes.to_vec()];
    for cut in [0, 1, bytes.len() / 2, bytes.len().saturating_sub(1)] {
        v.push(bytes[..cut.min(bytes.len())].to_vec());
    }
    for pos in [0, 4, 8, 28, 36, 40, bytes.len() / 3] {
        if pos < bytes.len() {
            let mut b = bytes.to_vec();
            b[pos] ^= 0x40;
            v.push(b);
        }
    }
    v
}

#[test]
fn dataset_seeds() {
    let all = seeds("dataset_file");
    assert!(Dataset::from_bytes(&all.iter().find(|(n, _)| n == "two_records").unwrap().1).is_ok());
    for (_, s) in all {
        for b in variants(&s) {
            if let Ok(ds) = Dataset::from_bytes(&b) {
                assert_eq!(ds.to_bytes(), b);
            }
        }
    }
}

#[test]
fn record_seeds() {
    for (name, s) in seeds("dataset_record") {
        if name == "record0" {
            assert!(decode_record(&s).is_ok());
        }
        for b in variants(&s) {
            let _ = Header::decode(&b);
            let _ = decode_record(&b);
        }
    }
}

#[test]
fn checkpoint_seeds() {
    for (_, s) in seeds("checkpoint") {
        assert!(radchar::bundle::from_bytes(&s).is_ok());
        for b in variants(&s) {
            if let Ok(c) = Checkpoint::from_bytes(&b) {
                let _ = radchar::bundle::from_checkpoint(&c);
            }
        }
    }
}

#[test]
fn iq_input_seeds() {
    for (name, s) in seeds("iq_input") {
        if name.starts_with("frame") {
            assert!(parse(&s, None).is_ok(), "{name}");
        }
        for b in variants(&s) {
            for f in [None, Some(InputFormat::Raw), Some(InputFormat::Csv)] {
                if let Ok(frame) = parse(&b, f) {
                    assert_eq!(frame.len(), 1024);
                }
            }
        }
    }
}

#[test]
fn sidecar_seeds() {
    for (_, s) in seeds("sidecar") {
        let side: Sidecar = serde_json::from_slice(&s).unwrap();
        side.config.validate().unwrap();
        for b in variants(&s) {
            let _ = serde_json::from_slice::<Sidecar>(&b);
        }
    }
}

proptest::proptest! {
    #[test]
    fn iq_parsers_never_panic(bytes in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..5000)) {
        let _ = parse(&bytes, None);
        let _ = parse(&bytes, Some(InputFormat::Raw));
    }

    #[test]
    fn csv_parser_never_panics(text in "[0-9eE.,+\\-\\n a-z]{0,400}") {
        let _ = radchar::iq_input::parse_csv(&text);
    }
}
