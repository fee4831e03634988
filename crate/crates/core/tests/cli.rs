use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdn_motion::data::{load_dataset, load_predictions, save_predictions, PredictionRecord};
use mdn_motion::trainer::LOG_HEADER;
use mdn_motion::Checkpoint;

const SMALL: &str = "dataset = \"data.jsonl\"\nout_dir = \"out\"\njoints = 4\nframes = 5\ncomponents = 3\n\
                     hidden_width = 16\nepochs = 2\nbatch_size = 8\nn_samples = 40\nlr0 = 1e-3\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdn-motion"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Temp dir with `run.toml` holding `config` and a generated dataset.
fn workspace(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    std::fs::write(root.join("run.toml"), config).unwrap();
    ok(&run(&["gen-data", "--spec", "run.toml", "--out", "data.jsonl"], &root));
    (dir, root)
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("spec.toml"), "n_modes = 1\nn_samples = 7\njoints = 3\nframes = 2\n").unwrap();
    let stdout = ok(&run(&["gen-data", "--spec", "spec.toml", "--out", "a.jsonl", "--seed", "5"], root));
    assert!(stdout.contains("7 samples"));
    ok(&run(&["gen-data", "--spec", "spec.toml", "--out", "b.jsonl", "--seed", "5"], root));
    assert_eq!(load_dataset(root.join("a.jsonl")).unwrap().len(), 7);
    assert_eq!(std::fs::read(root.join("a.jsonl")).unwrap(), std::fs::read(root.join("b.jsonl")).unwrap());
    ok(&run(&["gen-data", "--spec", "spec.toml", "--out", "c.jsonl", "--seed", "6"], root));
    assert_ne!(std::fs::read(root.join("a.jsonl")).unwrap(), std::fs::read(root.join("c.jsonl")).unwrap());
}

#[test]
fn gen_data_rejects_unseparated_modes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.toml"), "n_modes = 3\namplitude = 1.0\njoints = 4\nframes = 5\n").unwrap();
    let out = run(&["gen-data", "--spec", "spec.toml", "--out", "x.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("modes 0 and 1"), "{}", stderr(&out));
    assert!(!dir.path().join("x.jsonl").exists());
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "learning_rate = 0.1\n").unwrap();
    let out = run(&["train", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"));
}

#[test]
fn zero_epochs_writes_initialization() {
    let (_dir, root) = workspace(&SMALL.replace("epochs = 2", "epochs = 0"));
    ok(&run(&["train", "--config", "run.toml"], &root));
    let log = std::fs::read_to_string(root.join("out/train_log.csv")).unwrap();
    assert_eq!(log.trim_end(), LOG_HEADER);
    let ck = Checkpoint::load(root.join("out/checkpoint.bin")).unwrap();
    let ds = load_dataset(root.join("data.jsonl")).unwrap();
    let init = mdn_motion::trainer::initial_checkpoint(&ds, &ck.model.cfg).unwrap();
    assert_eq!(ck, init);
    let resolved = std::fs::read_to_string(root.join("out/resolved_config.toml")).unwrap();
    assert!(resolved.contains("hidden_width = 16") && resolved.contains("w_v = 0.1"));
}

#[test]
fn resume_from_final_checkpoint_is_a_no_op() {
    let (_dir, root) = workspace(SMALL);
    ok(&run(&["train", "--config", "run.toml"], &root));
    let first = std::fs::read(root.join("out/checkpoint.bin")).unwrap();
    std::fs::copy(root.join("out/checkpoint.bin"), root.join("final.bin")).unwrap();
    ok(&run(&["train", "--config", "run.toml", "--resume", "final.bin"], &root));
    assert_eq!(std::fs::read(root.join("out/checkpoint.bin")).unwrap(), first);
    let log = std::fs::read_to_string(root.join("out/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn resume_continues_to_the_same_result() {
    let (_dir, root) = workspace(SMALL);
    ok(&run(&["train", "--config", "run.toml", "--epochs", "3", "--out-dir", "full"], &root));
    ok(&run(&["train", "--config", "run.toml", "--epochs", "1", "--out-dir", "part"], &root));
    ok(&run(
        &["train", "--config", "run.toml", "--epochs", "3", "--out-dir", "part", "--resume", "part/checkpoint.bin"],
        &root,
    ));
    for f in ["checkpoint.bin", "train_log.csv"] {
        assert_eq!(
            std::fs::read(root.join("full").join(f)).unwrap(),
            std::fs::read(root.join("part").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn flags_override_config_values() {
    let (_dir, root) = workspace(SMALL);
    ok(&run(&["train", "--config", "run.toml", "--epochs", "1", "--components", "2"], &root));
    let ck = Checkpoint::load(root.join("out/checkpoint.bin")).unwrap();
    assert_eq!(ck.model.cfg.components, 2);
    assert_eq!(ck.model.cfg.epochs, 1);
    assert_eq!(ck.model.cfg.hidden_width, 16);
}

#[test]
fn divergence_exits_with_last_good_checkpoint() {
    let (_dir, root) = workspace(&SMALL.replace("lr0 = 1e-3", "lr0 = 1e200"));
    let out = run(&["train", "--config", "run.toml"], &root);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("last_good.bin"));
    let last = Checkpoint::load(root.join("out/last_good.bin")).unwrap();
    assert!(last.model.params.first_non_finite().is_none());
}

#[test]
fn predict_and_eval_round_trip() {
    let (_dir, root) = workspace(SMALL);
    ok(&run(&["train", "--config", "run.toml"], &root));
    ok(&run(&["predict", "--ckpt", "out/checkpoint.bin", "--input", "data.jsonl", "--out", "p1.jsonl"], &root));
    ok(&run(&["predict", "--ckpt", "out/checkpoint.bin", "--input", "data.jsonl", "--out", "p2.jsonl"], &root));
    assert_eq!(std::fs::read(root.join("p1.jsonl")).unwrap(), std::fs::read(root.join("p2.jsonl")).unwrap());

    let (c, t, preds) = load_predictions(root.join("p1.jsonl")).unwrap();
    assert_eq!((c, t, preds.len()), (4, 5, 40));
    for p in &preds {
        assert_eq!(p.hypotheses.len(), 3);
        assert!((p.alphas.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    let line = ok(&run(&["eval", "--pred", "p1.jsonl", "--gt", "data.jsonl", "--out-dir", "e1"], &root));
    assert!(line.starts_with("mpjpe_best=") && line.contains(" apd=") && line.trim_end().ends_with("n=40"));
    assert!(root.join("e1/eval_report.csv").exists() && root.join("e1/eval_report.json").exists());

    // shuffled record order gives the same report
    let mut shuffled = preds.clone();
    shuffled.reverse();
    save_predictions(&shuffled, c, t, root.join("shuffled.jsonl")).unwrap();
    let again = ok(&run(&["eval", "--pred", "shuffled.jsonl", "--gt", "data.jsonl", "--out-dir", "e2"], &root));
    assert_eq!(line, again);
    assert_eq!(
        std::fs::read(root.join("e1/eval_report.json")).unwrap(),
        std::fs::read(root.join("e2/eval_report.json")).unwrap()
    );
}

#[test]
fn eval_of_ground_truth_is_zero_and_ids_must_match() {
    let (_dir, root) = workspace(SMALL);
    let ds = load_dataset(root.join("data.jsonl")).unwrap();
    let exact: Vec<PredictionRecord> = ds
        .samples
        .iter()
        .map(|s| PredictionRecord {
            id: s.id,
            hypotheses: vec![s.target.clone(), s.target.clone()],
            alphas: vec![0.5, 0.5],
        })
        .collect();
    save_predictions(&exact, 4, 5, root.join("exact.jsonl")).unwrap();
    let line = ok(&run(&["eval", "--pred", "exact.jsonl", "--gt", "data.jsonl"], &root));
    assert!(line.starts_with("mpjpe_best=0.0000 apd=0.0000"), "{line}");

    let mut wrong = exact.clone();
    wrong[0].id = 999;
    save_predictions(&wrong, 4, 5, root.join("wrong.jsonl")).unwrap();
    let out = run(&["eval", "--pred", "wrong.jsonl", "--gt", "data.jsonl"], &root);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_rejects_dimension_mismatch() {
    let (_dir, root) = workspace(SMALL);
    ok(&run(&["train", "--config", "run.toml", "--epochs", "0"], &root));
    std::fs::write(root.join("other.toml"), "joints = 3\nframes = 5\nn_samples = 4\n").unwrap();
    ok(&run(&["gen-data", "--spec", "other.toml", "--out", "other.jsonl"], &root));
    let out = run(&["predict", "--ckpt", "out/checkpoint.bin", "--input", "other.jsonl", "--out", "p.jsonl"], &root);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("joints"));
}

#[test]
fn gradcheck_passes_by_default_and_fails_at_zero_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&run(&["gradcheck"], dir.path()));
    assert!(stdout.contains("max_rel_err") && stdout.contains("gradcheck passed"));

    let out = run(&["gradcheck", "--tol", "0"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("worst segment"));
}

#[test]
fn thread_count_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("gradcheck").env("MDN_MOTION_THREADS", "0").current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().arg("gradcheck").env("MDN_MOTION_THREADS", "2").current_dir(dir.path()).output().unwrap();
    assert!(out.status.success());
}
