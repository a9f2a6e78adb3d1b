//! End-to-end behaviour of the `fdm` command-line tool.

use std::fs::File;
use std::path::Path;
use std::process::{Command, Output};

use fdm_recover::io::RecordReader;

fn fdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdm")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = fdm(args);
    assert!(out.status.success(), "fdm {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    fdm(args).status.code().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn json(path: &str) -> serde_json::Value {
    serde_json::from_reader(File::open(path).unwrap()).unwrap()
}

#[test]
fn zero_records_give_a_header_only_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "empty.fdm");
    ok(&["simulate", "--records", "0", "--out", &out]);
    let mut r = RecordReader::new(File::open(&out).unwrap()).unwrap();
    assert_eq!(r.header().channels.len(), 3);
    assert!(r.next_record().unwrap().is_none());
}

#[test]
fn identical_seeds_give_identical_files_and_other_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<Vec<u8>> = ["7", "7", "8"]
        .iter()
        .enumerate()
        .map(|(i, seed)| {
            let out = path(dir.path(), &format!("r{i}.fdm"));
            ok(&["simulate", "--seed", seed, "--records", "20", "--out", &out]);
            std::fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(files[0], files[1]);
    assert_ne!(files[0], files[2]);
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = path(dir.path(), "bad.toml");
    ok(&["init", "--out", &bad_cfg]);
    let text = std::fs::read_to_string(&bad_cfg).unwrap().replace("h_floor = 0.00001", "h_floor = 2.0");
    assert!(text.contains("h_floor = 2.0"));
    std::fs::write(&bad_cfg, text).unwrap();
    assert_eq!(code(&["simulate", "--config", &bad_cfg, "--records", "1", "--out", &path(dir.path(), "x.fdm")]), 2);

    let junk = path(dir.path(), "junk.fdm");
    std::fs::write(&junk, b"not a record file").unwrap();
    assert_eq!(code(&["recover", "--input", &junk, "--analytic", "--out", &path(dir.path(), "y.fdm")]), 3);

    let missing = path(dir.path(), "missing.fdm");
    assert_eq!(code(&["recover", "--input", &missing, "--analytic", "--out", &path(dir.path(), "y.fdm")]), 1);

    let raw = path(dir.path(), "raw.fdm");
    let rec = path(dir.path(), "rec.fdm");
    ok(&["simulate", "--records", "30", "--out", &raw]);
    ok(&["recover", "--input", &raw, "--analytic", "--out", &rec]);
    // A single-species source has no second population to separate.
    assert_eq!(code(&["analyze", "--input", &rec, "--which", "psd", "--out", &path(dir.path(), "a")]), 4);
    assert!(json(&path(dir.path(), "a/psd.json"))["error"].is_string());
}

#[test]
fn analysing_unrecovered_records_names_the_missing_channel() {
    let dir = tempfile::tempdir().unwrap();
    let raw = path(dir.path(), "raw.fdm");
    ok(&["simulate", "--records", "3", "--out", &raw]);
    let out = fdm(&["analyze", "--input", &raw, "--out", &path(dir.path(), "a")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("recovered0"));
}

#[test]
fn records_from_another_configuration_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "psd.toml");
    let raw = path(dir.path(), "raw.fdm");
    ok(&["init", "--preset", "cf252-psd", "--out", &cfg]);
    ok(&["simulate", "--config", &cfg, "--records", "2", "--out", &raw]);
    let out = path(dir.path(), "rec.fdm");
    assert_eq!(code(&["recover", "--input", &raw, "--analytic", "--out", &out]), 3);
    ok(&["recover", "--input", &raw, "--analytic", "--force", "--out", &out]);
}

#[test]
fn spectrum_summary_reports_both_photopeaks() {
    let dir = tempfile::tempdir().unwrap();
    let raw = path(dir.path(), "raw.fdm");
    let rec = path(dir.path(), "rec.fdm");
    let cal = path(dir.path(), "cal.fdm");
    let h0 = path(dir.path(), "h0.cal");
    let out = path(dir.path(), "a");
    ok(&["simulate", "--records", "4000", "--out", &raw]);
    ok(&["simulate", "--records", "500", "--calibration", "--out", &cal]);
    let cal_out = ok(&["calibrate", "--input", &cal, "--out", &h0]);
    assert!(String::from_utf8_lossy(&cal_out.stderr).contains("warning"));
    assert_eq!(json(&path(dir.path(), "h0.json"))["records"], 500);
    ok(&["recover", "--input", &raw, "--calibration", &h0, "--out", &rec]);
    ok(&["analyze", "--input", &rec, "--which", "spectrum,charge", "--out", &out]);
    let s = &json(&format!("{out}/spectrum.json"))["summary"];
    let fit = |channel: &str| (s[channel]["mean"].as_f64().unwrap(), s[channel]["sigma"].as_f64().unwrap());
    let (ma, sa) = fit("anode");
    let (mr, sr) = fit("recovered");
    // The default gate misses a few percent of the slow tail.
    assert!(ma > 620.0 && ma < 662.0, "{ma}");
    assert!((mr - ma).abs() < 5.0 && sa > 5.0 && sr >= 0.9 * sa && sr < 3.0 * sa, "{ma} {sa} {mr} {sr}");
    let report = ok(&["report", "--input", &out]);
    let v: serde_json::Value = serde_json::from_slice(&report.stdout).unwrap();
    assert!(v["charge"]["summary"]["difference"]["n"].as_u64().unwrap() > 3000);
    assert!(std::fs::read_to_string(format!("{out}/events.csv")).unwrap().lines().count() > 3000);
}
