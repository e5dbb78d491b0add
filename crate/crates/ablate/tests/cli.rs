use std::path::Path;
use std::process::{Command, Output};

use ablate::container;
use ablate_core::{desk_architecture, Network};

const SMALL: [&str; 8] = ["--classes", "4", "--per-class", "20", "--test-per-class", "10", "--size", "8"];

fn ablate(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ablate"))
        .args(args)
        .current_dir(dir)
        .env_remove("ABLATE_WORKERS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run(args: &[String], dir: &Path) -> Output {
    ablate(&args.iter().map(String::as_str).collect::<Vec<_>>(), dir)
}

/// Trains a small model in `dir` and returns its file name.
fn small_model(dir: &Path) -> &'static str {
    let o = run(&with(&["train", "--out", "m.ablate", "--epochs", "2"], &SMALL), dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    "m.ablate"
}

#[test]
fn help_documents_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, flags) in [
        ("train", &["--out", "--history", "--manifest", "--epochs", "--seed", "--config", "--images", "--noise"][..]),
        ("eval", &["--model", "--top-k", "--split", "--data-seed"]),
        ("stats", &["--model", "--format"]),
        ("sweep", &["--treatment", "--layer", "--magnitudes", "--trials", "--eval-subset", "--workers", "--csv", "--json"]),
        ("compare", &["--result", "--a", "--b"]),
        ("plotdata", &["--result", "--out-dir"]),
    ] {
        let o = ablate(&[sub, "--help"], dir.path());
        assert_eq!(o.status.code(), Some(0));
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{} --help lacks {}", sub, f);
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["sweep", "--bogus"][..], &["frobnicate"], &[], &["eval", "--top-k", "x"], &["eval"]] {
        let o = ablate(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{:?}", args);
        let err = stderr(&o);
        assert!(err.starts_with("error[usage]: "), "{:?}: {}", args, err);
        assert_eq!(err.lines().count(), 1);
    }
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"input\": [1, 8, 8], \"layers\": [{\"name\": \"x\", \"kind\": \"warp\"}]}")
        .unwrap();
    std::fs::write(dir.path().join("junk.ablate"), b"not a model").unwrap();
    let cases: Vec<Vec<String>> = vec![
        with(&["train", "--out", "m.ablate", "--manifest", "bad.json"], &SMALL),
        with(&["train", "--out", "m.ablate", "--manifest", "missing.json"], &SMALL),
        with(&["eval", "--model", "junk.ablate"], &[]),
        with(&["eval", "--model", "missing.ablate"], &[]),
    ];
    for args in cases {
        let o = run(&args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{:?}", args);
        assert!(stderr(&o).starts_with("error[data]: "), "{}", stderr(&o));
    }
}

#[test]
fn unwritable_output_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&with(&["train", "--out", "no/such/dir/m.ablate", "--epochs", "0"], &SMALL), dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[runtime]: "));
}

#[test]
fn zero_epoch_train_emits_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&with(&["train", "--out", "m.ablate", "--epochs", "0", "--seed", "9"], &SMALL), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let saved = container::load(&dir.path().join("m.ablate")).unwrap();
    assert_eq!(saved, Network::build(desk_architecture(8, 4), 9).unwrap());
    let history = std::fs::read_to_string(dir.path().join("m.ablate.history.csv")).unwrap();
    assert_eq!(history, "epoch,loss,accuracy\n");
}

#[test]
fn train_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| with(&["train", "--out", out, "--epochs", "1", "--seed", "3"], &SMALL);
    assert_eq!(run(&args("a.ablate"), dir.path()).status.code(), Some(0));
    assert_eq!(run(&args("b.ablate"), dir.path()).status.code(), Some(0));
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.ablate"), read("b.ablate"));
    assert_eq!(read("a.ablate.history.csv"), read("b.ablate.history.csv"));
}

fn accuracy(o: &Output) -> f64 {
    let text = stdout(o);
    let field = text.split_whitespace().find_map(|f| f.strip_prefix("accuracy=")).unwrap();
    field.parse().unwrap()
}

#[test]
fn eval_ceiling_and_chance() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let o = run(&with(&["eval", "--model", model, "--top-k", "4"], &SMALL), dir.path());
    assert_eq!(accuracy(&o), 1.0);

    // zero the first layer: every image maps to the same logits
    let mut net = container::load(&dir.path().join(model)).unwrap();
    let p = net.params_mut("conv_1").unwrap();
    p.weights.data_mut().fill(0.0);
    p.biases.data_mut().fill(0.0);
    container::save(&net, &dir.path().join("chance.ablate")).unwrap();
    for k in 1..=3 {
        let o = run(&with(&["eval", "--model", "chance.ablate", "--top-k", &k.to_string()], &SMALL), dir.path());
        assert_eq!(accuracy(&o), k as f64 / 4.0);
    }
}

#[test]
fn eval_matches_sweep_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let eval = run(&with(&["eval", "--model", model, "--top-k", "1"], &SMALL), dir.path());
    let sweep = run(
        &with(
            &["sweep", "--model", model, "--top-k", "1", "--layer", "conv_1", "--magnitudes", "0", "--json", "r.json"],
            &SMALL,
        ),
        dir.path(),
    );
    assert_eq!(sweep.status.code(), Some(0), "{}", stderr(&sweep));
    let result = ablate::harness::read_json(&dir.path().join("r.json")).unwrap();
    assert_eq!(result.baseline, accuracy(&eval));
}

#[test]
fn stats_has_one_row_per_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let o = ablate(&["stats", "--model", model, "--format", "csv"], dir.path());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("layer,size,mean,median,sigma,min,max,kurtosis,skew"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);

    let net = container::load(&dir.path().join(model)).unwrap();
    let w: Vec<f64> = net.params("dense_1").unwrap().weights.data().iter().map(|&v| v as f64).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let sigma = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let row: Vec<&str> = rows[4].split(',').collect();
    assert_eq!(row[0], "dense_1_W");
    assert_eq!(row[1], w.len().to_string());
    assert!((row[2].parse::<f64>().unwrap() - mean).abs() < 1e-6);
    assert!((row[4].parse::<f64>().unwrap() - sigma).abs() < 1e-6);

    let table = stdout(&ablate(&["stats", "--model", model], dir.path()));
    assert_eq!(table.lines().count(), 9);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let cfg = r#"{"model": "m.ablate", "classes": 4, "per_class": 20, "test_per_class": 10, "size": 8,
        "layers": ["conv_1"], "treatments": ["node_knockout"], "magnitudes": [0.5], "trials": 2, "seed": 4, "top_k": 2}"#;
    std::fs::write(dir.path().join("sweep.json"), cfg).unwrap();
    let o = ablate(&["sweep", "--config", "sweep.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.starts_with("node_knockout,conv_1,0.5,")));

    let o = ablate(&["sweep", "--config", "sweep.json", "--trials", "3", "--layer", "dense_1"], dir.path());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.starts_with("node_knockout,dense_1,0.5,")));

    std::fs::write(dir.path().join("typo.json"), r#"{"model": "m.ablate", "trails": 3}"#).unwrap();
    let o = ablate(&["sweep", "--config", "typo.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let _ = model;
}

#[test]
fn workers_fall_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let args = with(
        &["sweep", "--model", model, "--layer", "conv_1", "--magnitudes", "0.5", "--top-k", "2", "--json", "r.json"],
        &SMALL,
    );
    let o = Command::new(env!("CARGO_BIN_EXE_ablate"))
        .args(&args)
        .current_dir(dir.path())
        .env("ABLATE_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(ablate::harness::read_json(&dir.path().join("r.json")).unwrap().config.workers, 3);

    let mut flagged = args.clone();
    flagged.extend(["--workers".to_string(), "2".to_string()]);
    let o = Command::new(env!("CARGO_BIN_EXE_ablate"))
        .args(&flagged)
        .current_dir(dir.path())
        .env("ABLATE_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(ablate::harness::read_json(&dir.path().join("r.json")).unwrap().config.workers, 2);

    let o = Command::new(env!("CARGO_BIN_EXE_ablate"))
        .args(&args)
        .current_dir(dir.path())
        .env("ABLATE_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_compare_plotdata_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let sweep = with(
        &[
            "sweep", "--model", model, "--treatment", "synapse_knockout", "--layer", "conv_1,dense_1",
            "--magnitudes", "0,0.5,1", "--trials", "3", "--top-k", "2", "--csv", "r.csv", "--json", "r.json",
        ],
        &SMALL,
    );
    let o = run(&sweep, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(dir.path().join("r.csv")).unwrap().lines().count(), 1 + 2 * 3 * 3);

    for file in ["r.csv", "r.json"] {
        let o = ablate(
            &["compare", "--result", file, "--a", "synapse_knockout:conv_1:0", "--b", "synapse_knockout:conv_1:0"],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("p_value=1 "), "{}", stdout(&o));
    }
    let o = ablate(&["compare", "--result", "r.csv", "--a", "synapse_knockout:conv_1:0", "--b", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = ablate(&["compare", "--result", "r.csv", "--a", "synapse_knockout:conv_1:0", "--b", "synapse_knockout:conv_2:0"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = ablate(&["plotdata", "--result", "r.csv", "--out-dir", "plots"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut files: Vec<String> = std::fs::read_dir(dir.path().join("plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["synapse_knockout_conv_1.csv", "synapse_knockout_dense_1.csv"]);

    // the series values are re-derivable from the CSV records
    let result = ablate::harness::read_json(&dir.path().join("r.json")).unwrap();
    let series = std::fs::read_to_string(dir.path().join("plots/synapse_knockout_conv_1.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        series.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for (row, cell) in rows.iter().zip(result.cells.iter().filter(|c| c.layer == "conv_1")) {
        assert_eq!(row[0], cell.magnitude);
        assert_eq!(row[1], cell.mean);
        assert_eq!(row[2], cell.std);
    }
}

#[test]
fn plotdata_on_empty_result_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.csv"), "treatment,layer,magnitude,trial,seed,top_k,accuracy,n_images,wall_ms\n").unwrap();
    let o = ablate(&["plotdata", "--result", "e.csv", "--out-dir", "plots"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(dir.path().join("plots")).unwrap().count(), 0);
}

#[test]
fn idx_input_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let split = ablate_core::synth_dataset(
        &ablate_core::SynthSpec { classes: 4, per_class: 20, test_per_class: 5, size: 8, noise: 0.0 },
        0,
    )
    .unwrap();
    ablate::idx::save(&split.train, &dir.path().join("i.idx"), &dir.path().join("l.idx")).unwrap();
    let o = ablate(&["train", "--out", "m.ablate", "--images", "i.idx", "--labels", "l.idx", "--epochs", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = ablate(&["eval", "--model", "m.ablate", "--images", "i.idx", "--labels", "l.idx", "--top-k", "4"], dir.path());
    assert_eq!(accuracy(&o), 1.0);
    // --images alone is a usage error
    assert_eq!(ablate(&["eval", "--model", "m.ablate", "--images", "i.idx"], dir.path()).status.code(), Some(1));
}
