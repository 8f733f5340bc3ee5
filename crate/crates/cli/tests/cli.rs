use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_zonalsim"));
    c.env_remove("ZONALSIM_BUNDLE").env("RUST_LOG", "off");
    c
}

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/two-bus-demo")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn demo_run_writes_day_and_monthly_files() {
    let out = tempfile::tempdir().unwrap();
    ok(bin()
        .args(["run", "--bundle"])
        .arg(demo())
        .args(["--designs", "national,zonal", "--out"])
        .arg(out.path())
        .output()
        .unwrap());
    assert!(out.path().join("day-2024-03-21.json").is_file());
    let monthly = fs::read_to_string(out.path().join("monthly.csv")).unwrap();
    assert_eq!(monthly.lines().count(), 2);
}

#[test]
fn bundle_can_come_from_the_environment() {
    let out = tempfile::tempdir().unwrap();
    ok(bin()
        .env("ZONALSIM_BUNDLE", demo())
        .args(["run", "--out"])
        .arg(out.path())
        .output()
        .unwrap());
    assert!(out.path().join("summary.json").is_file());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        ok(bin()
            .args(["run", "--policy", "2", "--bundle"])
            .arg(demo())
            .arg("--out")
            .arg(dir)
            .output()
            .unwrap());
    }
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn eight_workers_match_one_worker() {
    let bundle = tempfile::tempdir().unwrap();
    ok(bin()
        .args(["synth", "--days", "6", "--seed", "3", "--out"])
        .arg(bundle.path())
        .output()
        .unwrap());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, jobs) in [(a.path(), "1"), (b.path(), "8")] {
        ok(bin()
            .args([
                "run",
                "--policy",
                "3",
                "--designs",
                "national,zonal,nodal",
                "--jobs",
                jobs,
                "--bundle",
            ])
            .arg(bundle.path())
            .arg("--out")
            .arg(dir)
            .output()
            .unwrap());
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 6 + 5);
    assert_eq!(fa, fb);
}

#[test]
fn date_outside_bundle_is_a_range_error() {
    let out = tempfile::tempdir().unwrap();
    let r = bin()
        .args([
            "run",
            "--from",
            "2030-01-01",
            "--to",
            "2030-01-02",
            "--bundle",
        ])
        .arg(demo())
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("outside bundle coverage"));
}

#[test]
fn bad_flags_exit_nonzero() {
    let r = bin().args(["run", "--policy", "7"]).output().unwrap();
    assert_eq!(r.status.code(), Some(1));
    let r = bin().args(["run", "--rent-share", "1.5"]).output().unwrap();
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn report_prints_tables_and_rejects_empty_directory() {
    let out = tempfile::tempdir().unwrap();
    ok(bin()
        .args(["run", "--policy", "3", "--bundle"])
        .arg(demo())
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap());
    let r = ok(bin().arg("report").arg(out.path()).output().unwrap());
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.contains("consumer cost stack"));
    assert!(text.contains("restoration"));
    let month_rows = text.lines().filter(|l| l.starts_with("2024-03 ")).count();
    assert_eq!(month_rows, 1);

    let empty = tempfile::tempdir().unwrap();
    let r = bin().arg("report").arg(empty.path()).output().unwrap();
    assert!(!r.status.success());
}

#[test]
fn policy_three_restoration_is_uniform() {
    let bundle = tempfile::tempdir().unwrap();
    ok(bin()
        .args(["synth", "--days", "4", "--seed", "8", "--out"])
        .arg(bundle.path())
        .output()
        .unwrap());
    let out = tempfile::tempdir().unwrap();
    ok(bin()
        .args(["run", "--policy", "3", "--bundle"])
        .arg(bundle.path())
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap());
    let table = fs::read_to_string(out.path().join("policy.csv")).unwrap();
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "restoration").unwrap();
    let ratios: Vec<&str> = lines
        .map(|l| l.split(',').nth(col).unwrap())
        .filter(|r| !r.is_empty())
        .collect();
    assert!(!ratios.is_empty());
    assert!(ratios.iter().all(|r| *r == ratios[0]), "{ratios:?}");
}

#[test]
fn calibrate_prints_one_row_per_day() {
    let r = ok(bin()
        .args(["calibrate", "--bundle"])
        .arg(demo())
        .output()
        .unwrap());
    let text = String::from_utf8(r.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("2024-03-21,"));
    assert!(lines[1].ends_with(",true,false"));
}
