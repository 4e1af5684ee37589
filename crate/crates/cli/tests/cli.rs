use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wdice::evaluation::ScoreReport;
use wdice::holistic_net::{HolisticModel, NetworkConfig};
use wdice::io;
use wdice::synth_data::read_dataset;
use wdice::wasserstein::emd_lp;
use wdice::{CrispSegmentation, GroundMetric, ProbSegmentation, ProbVector};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn wdice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdice")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn emd_values() {
    let o = wdice(&["emd", "--p", "0.1,0.2,0.3,0.2,0.2", "--q", "0.1,0.2,0.3,0.2,0.2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "0\n");

    let o = wdice(&["emd", "--p", "0,0,1,0,0", "--q", "0,1,0,0,0", "--metric", "tree"]);
    assert_eq!(stdout(&o), "0.6\n");

    let metric_file = fixture("tree.metric");
    let o = wdice(&["emd", "--p", "0,0,1,0,0", "--q", "0,1,0,0,0", "--metric", p(&metric_file)]);
    assert_eq!(stdout(&o), "0.6\n");
}

#[test]
fn emd_matches_library() {
    let a = [0.13, 0.27, 0.05, 0.4, 0.15];
    let b = [0.3, 0.1, 0.2, 0.15, 0.25];
    let lib = emd_lp(
        &ProbVector::new(a.to_vec()).unwrap(),
        &ProbVector::new(b.to_vec()).unwrap(),
        &GroundMetric::brats_tree(),
    )
    .unwrap()
    .0;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let o = wdice(&["emd", "--p", &join(&a), "--q", &join(&b), "-v"]);
    assert_eq!(o.status.code(), Some(0));
    let printed: f64 = stdout(&o).lines().next().unwrap().parse().unwrap();
    assert!((printed - lib).abs() <= 1e-11 * lib.abs().max(1.0));
    assert!(stdout(&o).contains("plan:"));
}

#[test]
fn emd_rejects_bad_input_with_exit_two() {
    let o = wdice(&["emd", "--p", "0.5,abc", "--q", "1,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p:"), "{}", stderr(&o));

    let o = wdice(&["emd", "--p", "0.5,0.5", "--q", "0.2,0.3", "--metric", "zero-one"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("q:"));

    let o = wdice(&["emd", "--p", "0.5,0.5", "--q", "0.5,0.5", "--metric", "tree"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("metric"));
}

#[test]
fn eval_perfect_and_background_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let gt = fixture("gt.bin");
    let out = dir.path().join("self.json");
    let o = wdice(&["eval", "--pred", p(&gt), "--gt", p(&gt), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = ScoreReport::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report.regions.iter().all(|r| r.score == 1.0));

    let labels = io::read_sample(&gt).unwrap().labels;
    let background = CrispSegmentation::new(labels.dims().clone(), 5, vec![0; labels.len()]).unwrap();
    let bg_path = dir.path().join("bg.wdpm");
    io::write_prob_map(&bg_path, &ProbSegmentation::from_crisp(&background)).unwrap();
    let out = dir.path().join("bg.json");
    let o = wdice(&["eval", "--pred", p(&bg_path), "--gt", p(&gt), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let report = ScoreReport::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    for r in &report.regions {
        assert!(r.score <= 1e-8, "{}: {}", r.name, r.score);
    }
}

#[test]
fn eval_fixture_report_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (fixture("pred_crisp.bin"), fixture("gt.bin"));
    let (metric, regions) = (fixture("tree.metric"), fixture("regions.txt"));
    let metric_arg = format!("tree={}", p(&metric));
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "4", "1"].iter().enumerate() {
        let out = dir.path().join(format!("r{k}.json"));
        let o = wdice(&[
            "--threads",
            threads,
            "eval",
            "--pred",
            p(&pred),
            "--gt",
            p(&gt),
            "--metric",
            "zero_one=zero-one",
            "--metric",
            &metric_arg,
            "--regions",
            p(&regions),
            "--out",
            p(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push((fs::read(&out).unwrap(), stdout(&o)));
    }
    assert!(outputs.iter().all(|x| x == &outputs[0]));
    assert!(outputs[0].1.contains("wasserstein[tree]"));
}

#[test]
fn eval_shape_mismatch_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = wdice(&["gen-data", "--out", p(dir.path()), "--size", "32", "--samples", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let other = dir.path().join("sample_00000.bin");
    let o = wdice(&["eval", "--pred", p(&other), "--gt", p(&fixture("gt.bin"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pred"));
}

fn write_config(dir: &Path, phases: &str, extra: &str) -> PathBuf {
    let path = dir.join("train.toml");
    let text = format!(
        "train_data = \"train\"\nval_data = \"val\"\ncheckpoint = \"out/model.wdhn\"\nlog = \"out/log.tsv\"\nbatch_size = 4\n{extra}\n[network]\nscales = 2\nchannels = 3\nseed = 5\n\n{phases}"
    );
    fs::write(&path, text).unwrap();
    path
}

fn make_data(dir: &Path) {
    for (name, seed, n) in [("train", "1", "6"), ("val", "2", "2")] {
        let o = wdice(&[
            "gen-data",
            "--out",
            p(&dir.join(name)),
            "--size",
            "16",
            "--samples",
            n,
            "--seed",
            seed,
            "--fractions",
            "0.05,0.2,0.08,0.04",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
}

const PT_SCHEDULE: &str = "[[phases]]\nloss = \"mean_dice\"\nepochs = 1\nlearning_rate = 0.1\n\n[[phases]]\nloss = \"wasserstein\"\nmetric = \"tree\"\nepochs = 2\nlearning_rate = 0.1\n";

#[test]
fn train_zero_epochs_writes_the_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    make_data(dir.path());
    let cfg = write_config(dir.path(), "", "");
    let o = wdice(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let saved = HolisticModel::load(&dir.path().join("out/model.wdhn")).unwrap();
    let train = read_dataset(&dir.path().join("train")).unwrap();
    let images: Vec<_> = train.iter().take(8).map(|s| &s.image).collect();
    let init = HolisticModel::initialise(
        NetworkConfig {
            scales: 2,
            channels: 3,
            classes: 5,
            input_channels: 2,
            seed: 5,
        },
        &images,
    )
    .unwrap();
    assert_eq!(saved, init);
    let log = fs::read_to_string(dir.path().join("out/log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn train_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    make_data(dir.path());
    let cfg = write_config(dir.path(), PT_SCHEDULE, "");
    let mut results = Vec::new();
    for threads in ["1", "4", "1"] {
        let o = wdice(&["--threads", threads, "train", "--config", p(&cfg)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        results.push((
            fs::read(dir.path().join("out/log.tsv")).unwrap(),
            fs::read(dir.path().join("out/model.wdhn")).unwrap(),
        ));
    }
    assert!(results.iter().all(|r| r == &results[0]));
    let log = String::from_utf8(results[0].0.clone()).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.lines().nth(3).unwrap().contains("wasserstein:tree"));
}

#[test]
fn train_divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    make_data(dir.path());
    let cfg = write_config(
        dir.path(),
        "[[phases]]\nloss = \"mean_dice\"\nepochs = 2\nlearning_rate = 1e300\n",
        "",
    );
    let o = wdice(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn train_rejects_bad_config_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    make_data(dir.path());
    let cfg = write_config(dir.path(), "[[phases]]\nloss = \"hinge\"\nepochs = 1\nlearning_rate = 0.1\n", "");
    let o = wdice(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("phases[0]"));
}

#[test]
fn predict_then_eval_directories_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    make_data(dir.path());
    let cfg = write_config(dir.path(), PT_SCHEDULE, "");
    assert_eq!(wdice(&["train", "--config", p(&cfg)]).status.code(), Some(0));
    let preds = dir.path().join("preds");
    let o = wdice(&[
        "predict",
        "--model",
        p(&dir.path().join("out/model.wdhn")),
        "--data",
        p(&dir.path().join("val")),
        "--out",
        p(&preds),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let reports = dir.path().join("reports");
    let o = wdice(&[
        "eval",
        "--pred",
        p(&preds),
        "--gt",
        p(&dir.path().join("val")),
        "--out",
        p(&reports),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("2 volume(s)"));

    // a set against itself gives zero differences
    let set = format!("a={}", p(&reports));
    let same = format!("b={}", p(&reports));
    let o = wdice(&["compare", &set, &same]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    for line in table.lines().skip(1) {
        let last: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
        assert_eq!(last, 0.0, "{line}");
    }

    // columns follow argument order
    let gt_report = dir.path().join("gt.json");
    let gt = fixture("gt.bin");
    assert_eq!(
        wdice(&["eval", "--pred", p(&gt), "--gt", p(&gt), "--out", p(&gt_report)]).status.code(),
        Some(0)
    );
    let out = dir.path().join("cmp.json");
    let o = wdice(&[
        "compare",
        &format!("zeta={}", p(&reports)),
        &format!("alpha={}", p(&gt_report)),
        &format!("mid={}", p(&reports)),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let header = stdout(&o).lines().next().unwrap().to_string();
    let (z, a, m) = (header.find("zeta").unwrap(), header.find("alpha").unwrap(), header.find("mid").unwrap());
    assert!(z < a && a < m);
    assert!(stdout(&o).contains("confusion_mass"));
    assert!(fs::read_to_string(&out).unwrap().contains("\"confusion_mass\""));
}

#[test]
fn compare_rejects_mismatched_label_spaces() {
    let dir = tempfile::tempdir().unwrap();
    let gt = fixture("gt.bin");
    let r = dir.path().join("r.json");
    assert_eq!(wdice(&["eval", "--pred", p(&gt), "--gt", p(&gt), "--out", p(&r)]).status.code(), Some(0));
    let mut report = ScoreReport::from_json(&fs::read_to_string(&r).unwrap()).unwrap();
    report.meta.labels[1] = "something_else".into();
    let r2 = dir.path().join("r2.json");
    fs::write(&r2, report.to_json().unwrap()).unwrap();
    let o = wdice(&["compare", &format!("a={}", p(&r)), &format!("b={}", p(&r2))]);
    assert_eq!(o.status.code(), Some(2));
}
