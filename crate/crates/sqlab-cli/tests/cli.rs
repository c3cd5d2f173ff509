use std::fs;
use std::path::Path;
use std::process::Command;

use sqlab_cli::{run, EXIT_PASS, EXIT_USAGE, EXIT_VIOLATION};

fn sqlab(args: &[&str], out: &Path) -> (i32, String, String) {
    let mut argv = vec!["sqlab".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--out".into());
    argv.push(out.display().to_string());
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = run(argv, &mut o, &mut e);
    (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(str::to_string).collect()
}

fn field(path: &Path, row: usize, name: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap();
    lines.nth(row).unwrap().split(',').nth(col).unwrap().to_string()
}

#[test]
fn cover_example_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = sqlab(&["cover", "--k", "3", "--delta", "2^-10", "--samples", "1e5"], dir.path());
    assert_eq!(code, EXIT_PASS, "{out}");
    let csv = dir.path().join("cover.csv");
    assert_eq!(field(&csv, 0, "covered_fraction"), "1");
    assert_eq!(field(&csv, 0, "delta"), "2^-10");
    assert_eq!(field(&csv, 0, "samples"), "100000");
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("cover.json")).unwrap()).unwrap();
    assert_eq!(side["config"]["delta"], "2^-10");
    assert_eq!(side["pass"], true);
    assert!(side["started_unix"].as_u64().is_some());
}

#[test]
fn biortho_example_reports_measured_violations() {
    // D = 10 leaves 59 violating solutions for k = 3 (D = 16 is the first clean dilation).
    let dir = tempfile::tempdir().unwrap();
    let args = ["biortho", "--k", "3", "--delta", "2^-12", "--step", "2^-8", "--D", "10"];
    let (code, _, _) = sqlab(&args, dir.path());
    assert_eq!(code, EXIT_VIOLATION);
    let csv = dir.path().join("biortho.csv");
    assert_eq!(field(&csv, 0, "solutions"), "48368");
    assert_eq!(field(&csv, 0, "violations"), "59");
    assert_eq!(field(&csv, 0, "d_min"), "16");
    let (code, _, _) = sqlab(&["biortho", "--k", "3", "--delta", "2^-12", "--step", "2^-8", "--D", "16"], dir.path());
    assert_eq!(code, EXIT_PASS);
}

#[test]
fn single_occupancy_ratio_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["ratio", "--k", "2", "--delta", "2^-8", "--grid", "1024", "--trials", "1", "--occupancy", "single"];
    let (code, _, _) = sqlab(&args, dir.path());
    assert_eq!(code, EXIT_PASS);
    let r: f64 = field(&dir.path().join("ratio.csv"), 0, "max").parse().unwrap();
    assert!((r - 1.0).abs() <= 1e-6, "{r}");
}

#[test]
fn usage_errors_exit_one_with_usage_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["cover", "--no-such-flag"],
        vec!["bogus"],
        vec!["cover", "--delta", "2^x"],
        vec!["biortho", "--D", "7", "--delta", "2^-6", "--step", "2^-4"],
        vec!["sweep"],
    ] {
        let (code, out, err) = sqlab(&args, dir.path());
        assert_eq!(code, EXIT_USAGE, "{args:?}: {out}");
        assert!(!err.is_empty(), "{args:?}");
    }
    let (_, _, err) = sqlab(&["cover", "--no-such-flag"], dir.path());
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = sqlab(&["--help"], dir.path());
    assert_eq!(code, EXIT_PASS);
    assert!(out.contains("--occupancy"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "# coarse run\nk=2\ndelta=2^-6\nsamples=1e4\nseed=9\n").unwrap();
    let (code, _, _) = sqlab(&["cover", "--config", conf.to_str().unwrap(), "--delta", "2^-7"], dir.path());
    assert_eq!(code, EXIT_PASS);
    let csv = dir.path().join("cover.csv");
    assert_eq!(field(&csv, 0, "k"), "2");
    assert_eq!(field(&csv, 0, "delta"), "2^-7");
    assert_eq!(field(&csv, 0, "samples"), "10000");
    fs::write(&conf, "k=2\nnot_a_key=1\n").unwrap();
    let (code, _, _) = sqlab(&["cover", "--config", conf.to_str().unwrap()], dir.path());
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn sweep_is_union_of_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--delta", "2^-6,2^-8", "--samples", "2e4", "--seed", "5"];
    let mut args = vec!["sweep", "--of", "cover", "--k", "2,3,4"];
    args.extend(common);
    let (code, _, _) = sqlab(&args, &dir.path().join("sweep"));
    assert_eq!(code, EXIT_PASS);
    let swept = csv_rows(&dir.path().join("sweep").join("sweep_cover.csv"));
    let mut singles = Vec::new();
    for k in ["2", "3", "4"] {
        let mut args = vec!["cover", "--k", k];
        args.extend(common);
        let out = dir.path().join(format!("k{k}"));
        sqlab(&args, &out);
        singles.extend(csv_rows(&out.join("cover.csv")));
    }
    assert_eq!(swept.len(), 6);
    assert_eq!(swept, singles);
}

#[test]
fn reruns_are_byte_identical_and_plots_are_emitted() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["ratio", "--k", "3", "--delta", "2^-4..2^-5", "--grid", "256", "--trials", "2", "--emit-plot"];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    sqlab(&args, &a);
    sqlab(&args, &b);
    assert_eq!(fs::read(a.join("ratio.csv")).unwrap(), fs::read(b.join("ratio.csv")).unwrap());
    let dat = fs::read_to_string(a.join("ratio.dat")).unwrap();
    assert!(dat.starts_with("# k delta grid"));
    assert_eq!(dat.lines().count(), 3);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("ratio.json")).unwrap()).unwrap();
    assert!(side["checks"][0]["name"].as_str().unwrap().contains("slope"));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_sqlab");
    let st = Command::new(bin)
        .args(["rescale", "--k", "2", "--M", "2^-1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(EXIT_PASS), "{}", String::from_utf8_lossy(&st.stdout));
    let st = Command::new(bin).args(["rescale", "--k", "5", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(EXIT_VIOLATION));
    let st = Command::new(bin).args(["rescale", "--frobnicate"]).output().unwrap();
    assert_eq!(st.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&st.stderr).contains("Usage"));
}
