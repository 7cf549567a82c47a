use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tempdistill"))
}

const TINY: &str = "epochs = 2\nteacher_epochs = 2\ntrain_scenes = 4\nheldout_scenes = 2\nobjects = 2\nbatch_size = 2\n\
[distill]\nstudent_frames = 2\nteacher_frames = 4\nqueries = 4\nchannels = 3\nheight = 3\nwidth = 3\n";

fn subdirs(root: &Path) -> Vec<std::path::PathBuf> {
    std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect()
}

#[test]
fn verify_succeeds_and_fault_injection_fails() {
    let out = tempfile::tempdir().unwrap();
    let ok = bin().args(["verify", "--out"]).arg(out.path()).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = bin().args(["verify", "--inject-fault", "conv", "--out"]).arg(out.path()).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.contains("conv2d_same3"), "{stdout}");
    let dirs = subdirs(out.path());
    assert_eq!(dirs.len(), 2);
    assert!(dirs.iter().all(|d| d.join("verification.json").exists()));
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "epochs = 0\n").unwrap();
    let out = bin().args(["train", "--out"]).arg(dir.path()).arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let unknown = bin().args(["verify", "--inject-fault", "warp"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
    let missing = bin().args(["train", "--config", "/nonexistent/cfg.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn train_report_and_ablate_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let runs = dir.path().join("runs");

    let train = bin().args(["train", "--seed", "3", "--config"]).arg(&cfg).arg("--out").arg(&runs).output().unwrap();
    assert_eq!(train.status.code(), Some(0), "{}", String::from_utf8_lossy(&train.stderr));
    let run = subdirs(&runs).pop().unwrap();
    for f in ["report.json", "metrics.json", "curves.csv", "summary.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report = bin().arg("report").arg("--run").arg(&run).output().unwrap();
    assert_eq!(report.status.code(), Some(0));

    let ablate = bin()
        .args(["ablate", "--kind", "mask-ratio", "--grid", "0.5,0.75", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&runs)
        .output()
        .unwrap();
    assert_eq!(ablate.status.code(), Some(0), "{}", String::from_utf8_lossy(&ablate.stderr));
    let table = subdirs(&runs).into_iter().find(|d| d.file_name().unwrap().to_string_lossy().starts_with("ablate")).unwrap();
    let csv = std::fs::read_to_string(table.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(table.join("ablation.json").exists());
}
