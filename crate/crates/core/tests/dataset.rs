use proptest::prelude::*;

use radchar::dataset::format::{decode_record, Header};
use radchar::dataset::{
    generate, read_record, read_sidecar, regenerate_record_bytes, sample_params, split, write_dataset, Dataset,
    DatasetConfig, LabelNormalizer, StandardizationStats, HEADER_LEN, RECORD_LEN,
};
use radchar::waveform::{min_sampling_rate, SAMPLE_RATE_HZ};
use radchar::Error;

fn bytes_for(cfg: &DatasetConfig, workers: usize) -> Vec<u8> {
    let mut out = Vec::new();
    write_dataset(cfg, workers, &mut out).unwrap();
    out
}

#[test]
fn generation_is_repeatable_and_worker_independent() {
    let cfg = DatasetConfig::with_count_seed(2500, 7);
    let a = bytes_for(&cfg, 1);
    assert_eq!(a, bytes_for(&cfg, 1));
    assert_eq!(a, bytes_for(&cfg, 8));
    assert_eq!(a.len(), HEADER_LEN + 2500 * RECORD_LEN);
}

#[test]
fn file_sidecar_and_single_record_access() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.radc");
    let cfg = DatasetConfig::with_count_seed(10, 42);
    let summary = generate(&cfg, &path, 2).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len() as u64, summary.bytes);
    let header = Header::decode(&bytes).unwrap();
    assert_eq!(header.count, 10);
    assert_eq!(header.file_len(), Some(bytes.len()));

    let side = read_sidecar(&path).unwrap();
    assert_eq!(side.config, cfg);
    assert_eq!(side.sha256, summary.sha256);
    assert_eq!(Dataset::load(&path).unwrap().fingerprint(), summary.sha256);

    for i in 0..10 {
        let (_, rec) = read_record(&path, i).unwrap();
        assert_eq!(rec.params, sample_params(&cfg, i));
        let off = HEADER_LEN + i as usize * RECORD_LEN;
        assert_eq!(regenerate_record_bytes(&cfg, i).unwrap(), &bytes[off..off + RECORD_LEN]);
    }
    assert!(matches!(read_record(&path, 10), Err(Error::Config(_))));
    assert_eq!(summary.class_counts.iter().sum::<u64>(), 10);
}

#[test]
fn every_record_respects_the_sampling_bound() {
    let cfg = DatasetConfig::with_count_seed(300, 11);
    let ds = Dataset::from_bytes(&bytes_for(&cfg, 1)).unwrap();
    for p in ds.all_params() {
        p.validate().unwrap();
        assert!(SAMPLE_RATE_HZ >= min_sampling_rate(p) * (1.0 - 1e-9));
    }
}

#[test]
fn subset_renumbers_records() {
    let ds = Dataset::from_bytes(&bytes_for(&DatasetConfig::with_count_seed(20, 1), 1)).unwrap();
    let sub = ds.subset(&[5, 2, 19]);
    assert_eq!(sub.len(), 3);
    assert_eq!(sub.params(0), ds.params(5));
    assert_eq!(sub.planar(2), ds.planar(19));
}

#[test]
fn split_examples() {
    let s = split(100, 3).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
    assert_eq!(split(1000, 9).unwrap(), split(1000, 9).unwrap());
    assert_ne!(split(1000, 9).unwrap(), split(1000, 10).unwrap());
    assert!(split(5, 0).is_err());
}

#[test]
fn standardisation_of_a_real_split() {
    let ds = Dataset::from_bytes(&bytes_for(&DatasetConfig::with_count_seed(1000, 4), 1)).unwrap();
    let train = split(ds.len(), 0).unwrap().train;
    let stats = StandardizationStats::compute(train.iter().map(|&i| ds.planar(i))).unwrap();
    let (mut sum, mut sq, mut n) = (0.0f64, 0.0f64, 0.0f64);
    let mut out = vec![0f32; 1024];
    for &i in &train {
        stats.apply(ds.planar(i), &mut out);
        for &v in &out {
            sum += v as f64;
            sq += (v as f64).powi(2);
            n += 1.0;
        }
    }
    assert!((sum / n).abs() < 1e-6, "mean {}", sum / n);
    assert!((sq / n - 1.0).abs() < 1e-4, "variance {}", sq / n);
}

#[test]
fn corrupted_records_are_rejected() {
    let cfg = DatasetConfig::with_count_seed(3, 2);
    let bytes = bytes_for(&cfg, 1);
    let rec = &bytes[HEADER_LEN..HEADER_LEN + RECORD_LEN];
    assert!(decode_record(rec).is_ok());
    assert!(decode_record(&rec[1..]).is_err());

    let mut bad_index = bytes.clone();
    bad_index[HEADER_LEN] ^= 1;
    assert!(matches!(Dataset::from_bytes(&bad_index), Err(Error::Format(_))));

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Dataset::from_bytes(&bad_magic), Err(Error::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_the_indices(count in 10usize..3000, seed in any::<u64>()) {
        let s = split(count, seed).unwrap();
        prop_assert_eq!(s.train.len(), count * 70 / 100);
        prop_assert_eq!(s.val.len(), count * 15 / 100);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..count).collect::<Vec<_>>());
    }

    #[test]
    fn labels_round_trip(seed in any::<u64>(), index in any::<u64>()) {
        let p = sample_params(&DatasetConfig::with_count_seed(1, seed), index);
        let norm = LabelNormalizer::default();
        let n = norm.normalize(&p).unwrap();
        prop_assert!(n.iter().all(|v| (0.0..=1.0).contains(v)));
        let back = norm.denormalize(&n);
        let raw = LabelNormalizer::raw(&p);
        for k in 0..4 {
            prop_assert!((back[k] - raw[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = Dataset::from_bytes(&bytes);
        let _ = decode_record(&bytes);
    }
}
