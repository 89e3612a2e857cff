use std::path::Path;
use std::process::{Command, Output};

fn radchar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radchar"))
        .current_dir(dir)
        .env_remove("RADCHAR_DATA_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = radchar(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    radchar(dir, args).status.code().unwrap()
}

#[test]
fn generate_train_eval_infer_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--count", "120", "--seed", "5", "--out", "d.radc", "--workers", "1"]);
    assert!(d.join("d.radc.json").exists());

    let shown = ok(d, &["inspect", "--dataset", "d.radc", "--index", "3", "--dump-csv", "f.csv", "--dump-raw", "f.raw"]);
    assert!(shown.contains("identical"), "{shown}");

    ok(d, &["train", "--dataset", "d.radc", "--model", "cnn1d", "--epochs", "1", "--out", "m.rckp"]);
    assert!(d.join("m.rckp.last").exists());
    let log = std::fs::read_to_string(d.join("m.rckp.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);

    ok(d, &["eval", "--checkpoint", "m.rckp", "--dataset", "d.radc", "--report", "a.csv"]);
    ok(d, &["eval", "--checkpoint", "m.rckp", "--dataset", "d.radc", "--report", "b.csv"]);
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 42);

    let from_csv = ok(d, &["infer", "--checkpoint", "m.rckp", "--input", "f.csv"]);
    let from_raw = ok(d, &["infer", "--checkpoint", "m.rckp", "--input", "f.raw", "--format", "raw"]);
    assert_eq!(from_csv, from_raw);
    assert!(from_csv.starts_with("class"));
}

#[test]
fn error_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &["train", "--weights", "1,2"]), 2);
    assert_eq!(code(d, &["generate", "--count", "3", "--snr-min", "5", "--snr-max", "-5", "--out", "x"]), 2);
    assert_eq!(code(d, &["inspect", "--dataset", "missing.radc", "--index", "0"]), 3);

    std::fs::write(d.join("junk.radc"), b"not a dataset").unwrap();
    assert_eq!(code(d, &["inspect", "--dataset", "junk.radc", "--index", "0"]), 4);

    ok(d, &["generate", "--count", "40", "--seed", "1", "--out", "a.radc"]);
    ok(d, &["generate", "--count", "40", "--seed", "2", "--out", "b.radc"]);
    assert_eq!(code(d, &["inspect", "--dataset", "a.radc", "--index", "40"]), 2);
    ok(d, &["train", "--dataset", "a.radc", "--model", "cnn2d", "--epochs", "1", "--out", "m.rckp"]);
    assert_eq!(code(d, &["eval", "--checkpoint", "m.rckp", "--dataset", "b.radc"]), 4);
}

#[test]
fn config_file_and_data_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir(d.join("data")).unwrap();
    std::fs::write(d.join("c.toml"), "[generate]\ncount = 25\nseed = 8\nout = \"cfg.radc\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_radchar"))
        .current_dir(d)
        .env("RADCHAR_DATA_DIR", d.join("data"))
        .args(["--config", "c.toml", "generate", "--count", "30"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("wrote 30 records"), "{text}");
    assert!(d.join("data/cfg.radc").exists());

    std::fs::write(d.join("bad.toml"), "[generate]\ncuont = 1\n").unwrap();
    assert_eq!(code(d, &["--config", "bad.toml", "generate"]), 2);
}

#[test]
fn config_fuzz_seeds_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/cli_config");
    for e in std::fs::read_dir(dir).unwrap() {
        let text = std::fs::read_to_string(e.unwrap().path()).unwrap();
        radchar_cli::config::FileConfig::parse(&text).unwrap();
        for cut in 0..text.len() {
            if text.is_char_boundary(cut) {
                let _ = radchar_cli::config::FileConfig::parse(&text[..cut]);
            }
        }
    }
}
