use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_extralonger"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TOY: &str = "\
# tiny model for smoke runs
t_in = 6
t_out = 4
d_tf = 4
d_tod = 2
d_dow = 2
d_sf = 6
d_spatial = 2
heads = 2
epochs = 3
";

fn toy_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["synth", "--nodes", "5", "--days", "4", "--steps-per-day", "24", "--seed", "3", "--out", "data"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    std::fs::write(dir.path().join("toy.cfg"), TOY).unwrap();
    dir
}

#[test]
fn synth_train_eval_predict() {
    let dir = toy_dir();
    let d = dir.path();
    let o = run(
        &["train", "--data", "data", "--config", "toy.cfg", "--epochs", "2", "--out", "m.xlng", "--log", "log.csv"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("# epochs = 2 (flag)"), "{text}");
    assert!(text.contains("# heads = 2 (file)"), "{text}");
    assert!(text.contains("# batch_size = 16 (default)"), "{text}");
    let log = std::fs::read_to_string(d.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let e1 = run(&["eval", "--ckpt", "m.xlng", "--data", "data", "--split", "test"], d);
    let e2 = run(&["eval", "--ckpt", "m.xlng", "--data", "data", "--split", "test"], d);
    assert!(e1.status.success(), "{}", stderr(&e1));
    let line = stdout(&e1);
    assert!(line.starts_with("rmse=") && line.contains(" mae=") && line.contains(" mape="), "{line}");
    assert_eq!(line, stdout(&e2));

    let p = run(
        &["predict", "--ckpt", "m.xlng", "--data", "data", "--window-start", "10", "--out", "p.csv", "--dump-attention", "a.csv"],
        d,
    );
    assert!(p.status.success(), "{}", stderr(&p));
    let csv = std::fs::read_to_string(d.join("p.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "step,node_0,node_1,node_2,node_3,node_4");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("16,"));
    let att = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(att.lines().count(), 1 + 2 * 5 * 5);
}

#[test]
fn unknown_key_exits_2_with_suggestion() {
    let dir = toy_dir();
    std::fs::write(dir.path().join("bad.cfg"), "learning_rte = 0.01\n").unwrap();
    let o = run(&["train", "--data", "data", "--config", "bad.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("learning_rte") && err.contains("learning_rate"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn usage_and_data_errors() {
    let dir = toy_dir();
    assert_eq!(run(&["train"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["eval", "--ckpt", "missing.xlng", "--data", "data"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["train", "--data", "nowhere"], dir.path()).status.code(), Some(2));
    let o = run(&["baseline", "--method", "ha", "--data", "data", "--T", "200", "--T-out", "24"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("requires ≥ 224 steps"), "{}", stderr(&o));
}

#[test]
fn baselines_report_metrics() {
    let dir = toy_dir();
    for method in ["ha", "var"] {
        let o = run(
            &["baseline", "--method", method, "--data", "data", "--T", "6", "--T-out", "4", "--p", "2"],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).starts_with("rmse="));
    }
}

#[test]
fn bench_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["bench", "--grid", "64,128", "--nodes", "4", "--out", "b.csv", "--svg", "b.svg", "--set", "bench_repeats=3"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "variant,T,N,D,heads,repeats,wall_ms_median,score_entries,score_bytes,flagged");
    assert_eq!(lines.len(), 5);
    assert!(std::fs::read_to_string(dir.path().join("b.svg")).unwrap().starts_with("<svg"));
}
