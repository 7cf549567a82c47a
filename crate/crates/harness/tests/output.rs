use tempdistill_harness::output::{create_run_dir, read_json, report_run, write_new, write_run, RunSummary, METRICS_FILE, SUMMARY_FILE};
use tempdistill_harness::train::train_distill;
use tempdistill_harness::verify::tiny_config;

#[test]
fn run_dirs_never_collide() {
    let root = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = (0..5).map(|_| create_run_dir(root.path(), "x").unwrap()).collect();
    let unique: std::collections::BTreeSet<_> = dirs.iter().collect();
    assert_eq!(unique.len(), 5);
}

#[test]
fn existing_files_are_not_overwritten() {
    let root = tempfile::tempdir().unwrap();
    let p = root.path().join("f.txt");
    write_new(&p, b"one").unwrap();
    write_new(&p, b"one").unwrap();
    assert!(write_new(&p, b"two").is_err());
    assert_eq!(std::fs::read(&p).unwrap(), b"one");
}

#[test]
fn written_run_reports_consistently() {
    let root = tempfile::tempdir().unwrap();
    let dir = create_run_dir(root.path(), "train").unwrap();
    let run = train_distill(&tiny_config(2, 4).unwrap()).unwrap();
    write_run(&dir, &run).unwrap();
    assert!(write_run(&dir, &run).is_ok(), "identical rewrite is allowed");
    assert!(dir.join(METRICS_FILE).exists());
    let summary = report_run(&dir).unwrap();
    assert_eq!(summary, report_run(&dir).unwrap());
    let stored: RunSummary = read_json(&dir.join(SUMMARY_FILE)).unwrap();
    assert_eq!(stored, summary);
    assert!(summary.teacher_frozen);
    assert_eq!(summary.epochs, 2);
    let curves = std::fs::read_to_string(dir.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 3);
}
