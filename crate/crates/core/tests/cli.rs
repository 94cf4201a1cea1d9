use std::path::Path;
use std::process::{Command, Output};

fn replex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replex"))
        .args(args)
        .env_remove("REPLEX_SEED")
        .output()
        .expect("spawn replex")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn value(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {report}"))
        .to_string()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn metrics_on_distinct_single_words() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("u.txt");
    std::fs::write(&f, "hello\nworld\nagain\n").unwrap();
    let o = replex(&["metrics", path_str(&f)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(value(&out, "l_dimen"), "1");
    assert_eq!(value(&out, "hist"), "[0,0,0,0,0,0,0,0,0,3]");
    assert!(!out.contains("bleu4="));
}

#[test]
fn metrics_with_references_reports_bleu() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = dir.path().join("h.txt");
    let refs = dir.path().join("r.txt");
    std::fs::write(&hyp, "the cat sat on mat\n").unwrap();
    std::fs::write(&refs, "the cat sat on the mat\n").unwrap();
    let o = replex(&["metrics", path_str(&hyp), "--refs", path_str(&refs)]);
    assert!(o.status.success());
    let bleu: f64 = value(&stdout(&o), "bleu4").parse().unwrap();
    assert!((bleu - 0.578_930_067_467_409_8).abs() < 1e-9);
}

#[test]
fn metrics_respects_custom_weights() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("u.txt");
    std::fs::write(&f, "a a a a a\n").unwrap();
    let o = replex(&["metrics", path_str(&f), "--alpha", "1", "--beta", "1,0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(value(&out, "mean_u_dimen"), "0.25");
    assert_eq!(value(&out, "hist"), "[1,0]");
    assert_eq!(value(&out, "wl2"), "1");
    let bad = replex(&["metrics", path_str(&f), "--alpha", "0.5,0.2"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn metrics_data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let o = replex(&["metrics", path_str(&empty)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("empty.txt"));
    let missing = dir.path().join("nope.txt");
    assert_eq!(replex(&["metrics", path_str(&missing)]).status.code(), Some(3));
}

#[test]
fn gradcurve_export() {
    let o = replex(&["gradcurve"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("p,ce,tfl,tldr,grad_ce,grad_tfl,grad_tldr"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 199);
    assert!((rows[0][0] - 0.005).abs() < 1e-15 && (rows[198][0] - 0.995).abs() < 1e-12);
    let half = &rows[99];
    assert_eq!(half[0], 0.5);
    assert!((half[4] + 2.0).abs() < 1e-12);
    assert!((half[6] + 4.1776).abs() < 1e-3);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    assert!(replex(&["gradcurve", "--out", path_str(&out)]).status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);
    let unwritable = dir.path().join("no/such/dir/curve.csv");
    assert_eq!(replex(&["gradcurve", "--out", path_str(&unwritable)]).status.code(), Some(3));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "no_such_key = 3\n").unwrap();
    let o = replex(&["train", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"));
    let missing = dir.path().join("missing.cfg");
    assert_eq!(replex(&["train", "--config", path_str(&missing)]).status.code(), Some(2));
    assert_eq!(replex(&["train", "--epochs", "-1"]).status.code(), Some(2));
}

#[test]
fn missing_corpus_exits_3_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let corpus = dir.path().join("absent-train.txt");
    std::fs::write(
        &cfg,
        format!("train_corpus = {}\nvalid_corpus = {}\n", corpus.display(), corpus.display()),
    )
    .unwrap();
    let o = replex(&["train", "--config", path_str(&cfg), "--out", path_str(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("absent-train.txt"), "{err}");
    assert_eq!(err.lines().filter(|l| l.starts_with("error:")).count(), 1);
}

#[test]
fn help_lists_flags_with_defaults() {
    let o = replex(&["train", "--help"]);
    let help = stdout(&o);
    for flag in [
        "--config",
        "--profile",
        "--scheme",
        "--gamma",
        "--uniform-w",
        "--attention",
        "--seed",
        "--epochs",
        "--valid-interval",
        "--out",
    ] {
        assert!(help.contains(flag), "{flag} missing");
    }
    assert!(help.contains("[default: 2]"));
    assert!(help.contains("REPLEX_SEED"));
    assert!(help.contains("[default: replex-out]"));
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("tiny.cfg");
    std::fs::write(
        &cfg,
        "# small and fast\n\
         synthetic_dialogues = 60\n\
         synthetic_valid_dialogues = 10\n\
         hidden_size = 8\n\
         embedding_size = 8\n\
         epochs = 1\n\
         valid_interval = 0.5\n",
    )
    .unwrap();
    cfg
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = replex(&[
        "train",
        "--config",
        path_str(&cfg),
        "--scheme",
        "tldr",
        "--seed",
        "7",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], "epoch,step,wl2,l_dimen,bleu4,mean_u_dimen");
    assert_eq!(rows.len(), 3);
    assert!(out.join("best.ckpt").exists() && out.join("last.ckpt").exists());
    let report = stdout(&o);
    let best_wl2 = value(&report, "wl2");

    let e = replex(&[
        "eval",
        "--config",
        path_str(&cfg),
        "--checkpoint",
        path_str(&out.join("best.ckpt")),
    ]);
    assert!(e.status.success(), "{}", stderr(&e));
    assert_eq!(value(&stdout(&e), "wl2"), best_wl2);

    // same seed from the environment gives the same log
    let again = dir.path().join("again");
    let o2 = Command::new(env!("CARGO_BIN_EXE_replex"))
        .args(["train", "--config", path_str(&cfg), "--scheme", "tldr", "--out", path_str(&again)])
        .env("REPLEX_SEED", "7")
        .output()
        .unwrap();
    assert!(o2.status.success());
    assert_eq!(std::fs::read_to_string(again.join("metrics.csv")).unwrap(), log);
}

#[test]
fn gencorpus_writes_loadable_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("corpus");
    let o = replex(&["gencorpus", "--config", path_str(&cfg), "--seed", "3", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let train = std::fs::read_to_string(out.join("train.txt")).unwrap();
    assert_eq!(train.split("\n\n").filter(|b| !b.trim().is_empty()).count(), 60);
    let o2 = replex(&["gencorpus", "--config", path_str(&cfg), "--seed", "3", "--out", path_str(&out)]);
    assert!(o2.status.success());
    assert_eq!(std::fs::read_to_string(out.join("train.txt")).unwrap(), train);

    let run_cfg = dir.path().join("files.cfg");
    std::fs::write(
        &run_cfg,
        format!(
            "{}train_corpus = {}\nvalid_corpus = {}\n",
            std::fs::read_to_string(&cfg).unwrap(),
            out.join("train.txt").display(),
            out.join("valid.txt").display()
        ),
    )
    .unwrap();
    let t = replex(&["train", "--config", path_str(&run_cfg), "--out", path_str(&dir.path().join("r"))]);
    assert!(t.status.success(), "{}", stderr(&t));
}
