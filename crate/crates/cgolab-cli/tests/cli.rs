use cgolab::fieldgrid::{GridField, GridSpec};
use cgolab_cli::config::parse_config;
use std::path::Path;
use std::process::Command;

fn cgolab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cgolab"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn empty_command_is_reported() {
    let errs = parse_config("command=\ngrid.n=32\n").unwrap_err();
    assert!(errs.iter().any(|e| e.message == "missing command"), "{errs:?}");
    let errs = parse_config("grid.n=32\n").unwrap_err();
    assert!(errs.iter().any(|e| e.message == "missing command"), "{errs:?}");
}

#[test]
fn minimal_decay_scan_round_trips() {
    let text = "command=decay-scan\ngrid.n=64\ngrid.L=4\nxi.s=8,16,32\npotential=gaussian(0,0.2,1)\n";
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.n, 64);
    assert_eq!(cfg.s_list, vec![8.0, 16.0, 32.0]);
    assert_eq!(cfg.to_text(), text);
    assert_eq!(parse_config(&cfg.to_text()).unwrap().to_text(), text);
}

#[test]
fn corrupted_header_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.bin");
    GridField::zeros(GridSpec::new(3, 8, 2.0).unwrap()).save(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0..4].copy_from_slice(&7i32.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    let text = format!("command=decay-scan\npotential=file({})\n", path.display());
    let errs = parse_config(&text).unwrap_err();
    assert_eq!(errs.len(), 1);
    assert_eq!(errs[0].line, 2);
    assert!(errs[0].message.contains("header field dim"), "{}", errs[0]);
}

#[test]
fn all_errors_are_collected_with_line_numbers() {
    let text = "command=decay-scan\ngrid.n=abc\nbogus=1\ngrid.n=32\npotential=file(/nonexistent/q.bin)\n";
    let errs = parse_config(text).unwrap_err();
    let lines: Vec<usize> = errs.iter().map(|e| e.line).collect();
    assert_eq!(lines, vec![2, 3, 4, 5], "{errs:?}");
    assert!(errs[0].message.contains("malformed number"));
    assert!(errs[1].message.contains("unknown key"));
    assert!(errs[2].message.contains("duplicate key"));
    assert!(errs[3].message.contains("missing file"));
    assert_eq!(errs[1].to_string(), "line 3: unknown key 'bogus'");
}

#[test]
fn multiplier_check_regularises_the_origin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.cfg", "command=multiplier-check\ngrid.n=32\nxi.s=8,16\n");
    let out = dir.path().join("out");
    let st = cgolab()
        .args(["multiplier-check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert_eq!(st.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["summary"]["count_regularized_min"].as_u64().unwrap() >= 1);
    assert_eq!(report["command"], "multiplier-check");
    let csv = std::fs::read_to_string(out.join("multiplier_check.csv")).unwrap();
    assert!(csv.starts_with("s,"), "{csv}");
}

#[test]
fn identical_runs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "d.cfg",
        "command=decay-scan\ngrid.n=32\nxi.s=8,16\npotential=gaussian(0,0.3,0.5)\n",
    );
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let st = cgolab()
            .args(["decay-scan", "--seed", "5", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
            .status;
        assert!(st.success());
        outputs.push(std::fs::read(out.join("decay_scan.csv")).unwrap());
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn dry_run_prints_the_plan_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cgolab().args(["energy", "--dry-run", "--out"]).arg(&out).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("energy"), "{text}");
    assert!(!out.exists());
}

#[test]
fn errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "command=decay-scan\ngrid.n=-3\nfoo=1\n");
    let o = cgolab().args(["decay-scan", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line 2") && err.contains("line 3"), "{err}");

    let o = cgolab().args(["energy", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_check_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.cfg", "command=accept\ncriteria=3\n");
    let st = cgolab()
        .args(["accept", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap()
        .status;
    assert_eq!(st.code(), Some(1));
}
