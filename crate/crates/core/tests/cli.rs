use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

use drpt::cli::RunManifest;
use drpt::config::RunConfig;
use drpt::data::load_features;
use drpt::eval::{evaluate, EvalReport};
use drpt::model::{init_model, load_checkpoint, Backbone, InitSource};
use drpt::space::{load_space, write_space, CompositionSpace, Pair, Split};

fn drpt<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_drpt")).args(args).output().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn sha(path: &Path) -> String {
    Sha256::digest(fs::read(path).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

fn synth(tmp: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let dir = tmp.path().join(name);
    let mut args: Vec<std::ffi::OsString> =
        vec!["synth".into(), "--config".into(), fixture("convergence.toml").into(), "--out".into(), dir.clone().into()];
    args.extend(extra.iter().map(Into::into));
    let out = drpt(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<std::ffi::OsString> = vec![
        "train".into(),
        data.into(),
        "--config".into(),
        fixture("convergence.toml").into(),
        "--out".into(),
        out.into(),
    ];
    args.extend(extra.iter().map(Into::into));
    drpt(&args)
}

#[test]
fn help_lists_common_flags_and_subcommands() {
    let out = drpt(["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for word in [
        "--config", "--seed", "--out", "--threads", "--json", "synth", "ent-stats", "train", "eval", "gradcheck",
        "sweep-sequences", "retrieve",
    ] {
        assert!(text.contains(word), "missing {word} in help:\n{text}");
    }
}

#[test]
fn unknown_flags_and_missing_arguments_are_usage_errors() {
    assert_eq!(drpt(["--frobnicate"]).status.code(), Some(1));
    assert_eq!(drpt(["train", "--no-such-flag", "x"]).status.code(), Some(1));
    assert_eq!(drpt(["eval"]).status.code(), Some(1));
    assert_eq!(drpt(["nope"]).status.code(), Some(1));
}

#[test]
fn synth_is_deterministic_and_writes_a_manifest() {
    let tmp = TempDir::new().unwrap();
    let a = synth(&tmp, "a", &[]);
    let b = synth(&tmp, "b", &[]);
    for name in ["states.txt", "objects.txt", "train_pairs.csv", "test_pairs.csv", "train.bin", "val.bin", "test.bin"] {
        assert_eq!(sha(&a.join(name)), sha(&b.join(name)), "{name}");
    }
    let c = synth(&tmp, "c", &["--seed", "8"]);
    assert_ne!(sha(&a.join("train.bin")), sha(&c.join("train.bin")));

    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(a.join(RunManifest::file_name("synth"))).unwrap()).unwrap();
    assert_eq!(manifest.command, "synth");
    assert_eq!(manifest.seed, Some(7));
    assert!(manifest.outputs.keys().any(|k| k.ends_with("train.bin")));
    assert!(manifest.inputs.keys().any(|k| k.ends_with("convergence.toml")));
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));
    assert!(!a.join("synth.manifest.json.tmp").exists());
}

#[test]
fn synth_with_every_pair_seen_is_infeasible() {
    let tmp = TempDir::new().unwrap();
    let out = drpt([
        OsStr::new("synth"),
        OsStr::new("--seen-fraction"),
        OsStr::new("1.0"),
        OsStr::new("--out"),
        tmp.path().as_os_str(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("infeasible split"), "{}", stderr(&out));
}

#[test]
fn ent_stats_on_the_three_pair_manifest() {
    let tmp = TempDir::new().unwrap();
    let space = CompositionSpace::anonymous(2, 2, vec![Pair::new(0, 0), Pair::new(0, 1), Pair::new(1, 0)]);
    write_space(tmp.path(), &space).unwrap();
    let out = drpt([OsStr::new("ent-stats"), tmp.path().as_os_str(), OsStr::new("--json")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // ent_a = [2, 1], ent_avg = 3/4, var_a = ((5/4)^2 + (1/4)^2) / 2.
    assert_eq!(json["ent_avg"], 0.75);
    assert_eq!(json["ent_a"], serde_json::json!([2, 1]));
    assert_eq!(json["ent_o"], serde_json::json!([2, 1]));
    assert_eq!(json["var_a"], 0.8125);
    assert_eq!(json["var_o"], 0.8125);

    let table = drpt([OsStr::new("ent-stats"), tmp.path().as_os_str()]);
    let text = String::from_utf8_lossy(&table.stdout);
    assert!(text.contains("ent_avg") && text.contains("0.75"), "{text}");
    assert!(tmp.path().join("ent-stats.manifest.json").exists());
}

#[test]
fn split_overlap_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("states.txt"), "old\nnew\n").unwrap();
    fs::write(tmp.path().join("objects.txt"), "cat\ndog\n").unwrap();
    fs::write(tmp.path().join("train_pairs.csv"), "state,object\nold,cat\n").unwrap();
    fs::write(tmp.path().join("val_pairs.csv"), "state,object\n").unwrap();
    fs::write(tmp.path().join("test_pairs.csv"), "state,object,seen\nold,cat,0\n").unwrap();
    let out = drpt([OsStr::new("ent-stats"), tmp.path().as_os_str()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("split overlap"), "{}", stderr(&out));
}

#[test]
fn train_is_reproducible_and_zero_epochs_keeps_the_init() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, "data", &[]);
    let (r1, r2, r0) = (tmp.path().join("r1"), tmp.path().join("r2"), tmp.path().join("r0"));
    for dir in [&r1, &r2] {
        let out = train(&data, dir, &["--epochs", "6"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(sha(&r1.join("model.ckpt")), sha(&r2.join("model.ckpt")));
    assert_eq!(sha(&r1.join("history.csv")), sha(&r2.join("history.csv")));
    let history = fs::read_to_string(r1.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,status,loss,train_acc"), "{history}");
    assert_eq!(history.lines().count(), 7);
    assert!(r1.join("train.manifest.json").exists());

    let other_seed = tmp.path().join("r3");
    assert!(train(&data, &other_seed, &["--epochs", "6", "--seed", "1"]).status.success());
    assert_ne!(sha(&r1.join("model.ckpt")), sha(&other_seed.join("model.ckpt")));

    assert!(train(&data, &r0, &["--epochs", "0"]).status.success());
    let (ckpt, sidecar) = load_checkpoint(&r0.join("model.ckpt")).unwrap();
    let space = load_space(&data).unwrap();
    let cfg = RunConfig::load(&fixture("convergence.toml")).unwrap();
    let (init, enc) = init_model(&space, &Backbone::load(&data).unwrap(), cfg.train.tau, cfg.train.seed, &InitSource::Gaussian).unwrap();
    assert_eq!(ckpt.table, init);
    assert_eq!(ckpt.encoders, enc);
    assert_eq!(sidecar.unwrap().space_hash, space.manifest_hash());
}

#[test]
fn eval_matches_the_library_and_reaches_auc_one() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, "data", &[]);
    let run = tmp.path().join("run");
    assert!(train(&data, &run, &[]).status.success());
    let ckpt_path = run.join("model.ckpt");
    let out = drpt([
        OsStr::new("eval"),
        ckpt_path.as_os_str(),
        data.as_os_str(),
        OsStr::new("--json"),
        OsStr::new("--threads"),
        OsStr::new("3"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let printed: EvalReport = serde_json::from_slice(&out.stdout).unwrap();
    let written: EvalReport = serde_json::from_str(&fs::read_to_string(run.join("eval_test.json")).unwrap()).unwrap();
    assert_eq!(printed, written);

    let space = load_space(&data).unwrap();
    let test = load_features(&data.join("test.bin"), Split::Test, &space).unwrap();
    let (ckpt, _) = load_checkpoint(&ckpt_path).unwrap();
    let library = evaluate(&ckpt.encoders, &ckpt.table, &test, &space, 1).unwrap();
    assert_eq!(printed, library);
    assert_eq!(library.auc, 1.0);
    let curve = fs::read_to_string(run.join("curve_test.csv")).unwrap();
    assert_eq!(curve, library.curve_csv());
    assert!(run.join("eval.manifest.json").exists());
}

#[test]
fn eval_failures() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, "data", &[]);
    let missing = tmp.path().join("missing.ckpt");
    let out = drpt([OsStr::new("eval"), missing.as_os_str(), data.as_os_str()]);
    assert_eq!(out.status.code(), Some(2));

    let garbage = tmp.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(drpt([OsStr::new("eval"), garbage.as_os_str(), data.as_os_str()]).status.code(), Some(2));

    let run = tmp.path().join("run");
    assert!(train(&data, &run, &["--epochs", "0"]).status.success());
    let out = drpt([
        OsStr::new("eval"),
        run.join("model.ckpt").as_os_str(),
        data.as_os_str(),
        OsStr::new("--split"),
        OsStr::new("train"),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_by_default_and_fails_at_threshold_zero() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, "data", &[]);
    // Heavy dropout in the config must not reach the check.
    let config = tmp.path().join("dropout.toml");
    fs::write(&config, "[train]\ndropout_rate = 0.9\n").unwrap();
    let out = drpt([
        OsStr::new("gradcheck"),
        data.as_os_str(),
        OsStr::new("--config"),
        config.as_os_str(),
        OsStr::new("--json"),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["max_rel_error"].as_f64().unwrap() < 1e-5);
    assert_eq!(json["per_status"].as_object().unwrap().len(), 3);

    let out = drpt([OsStr::new("gradcheck"), data.as_os_str(), OsStr::new("--threshold"), OsStr::new("0")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(data.join("gradcheck.manifest.json").exists());
}

#[test]
fn sweep_rows_reproduce_with_train_and_eval() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, "data", &[]);
    let sweep = tmp.path().join("sweep");
    let config = fixture("convergence.toml");
    let out = drpt([
        OsStr::new("sweep-sequences"),
        data.as_os_str(),
        OsStr::new("--config"),
        config.as_os_str(),
        OsStr::new("--epochs"),
        OsStr::new("9"),
        OsStr::new("--out"),
        sweep.as_os_str(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(sweep.join("sequence_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);

    // Row a-o-ao, rebuilt from separate train and eval runs.
    let row: Vec<&str> = csv.lines().find(|l| l.starts_with("a-o-ao,")).unwrap().split(',').collect();
    let run = tmp.path().join("a-o-ao");
    assert!(train(&data, &run, &["--epochs", "9", "--schedule", "a-o-ao"]).status.success());
    let out = drpt([
        OsStr::new("eval"),
        run.join("model.ckpt").as_os_str(),
        data.as_os_str(),
        OsStr::new("--json"),
    ]);
    let report: EvalReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(row[4], format!("{:.6}", report.auc));
    assert_eq!(row[3], format!("{:.6}", report.best_hm));

    // Joint row, from the joint-baseline flag.
    let joint: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert_eq!(joint[0], "joint");
    let run = tmp.path().join("joint");
    assert!(train(&data, &run, &["--epochs", "9", "--joint-baseline"]).status.success());
    let out = drpt([OsStr::new("eval"), run.join("model.ckpt").as_os_str(), data.as_os_str(), OsStr::new("--json")]);
    let report: EvalReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(joint[4], format!("{:.6}", report.auc));
}

#[test]
fn retrieve_in_both_directions() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp, "data", &[]);
    let run = tmp.path().join("run");
    assert!(train(&data, &run, &[]).status.success());
    let ckpt = run.join("model.ckpt");

    let out = drpt([
        OsStr::new("retrieve"),
        ckpt.as_os_str(),
        data.as_os_str(),
        OsStr::new("--sample"),
        OsStr::new("0"),
        OsStr::new("-k"),
        OsStr::new("3"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let results = json["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    assert_eq!(results[0]["pair"], json["query"]["label"]);
    let scores: Vec<f64> = results.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let space = load_space(&data).unwrap();
    let pair = space.test_unseen_pairs[0];
    let query = format!("{},{}", space.states[pair.state], space.objects[pair.object]);
    let out = drpt([
        OsStr::new("retrieve"),
        ckpt.as_os_str(),
        data.as_os_str(),
        OsStr::new("--pair"),
        OsStr::new(&query),
        OsStr::new("-k"),
        OsStr::new("4"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let results = json["results"].as_array().unwrap();
    assert_eq!(results.len(), 4);
    assert!(results.iter().all(|r| r["label"] == space.pair_name(pair)));

    let out = drpt([
        OsStr::new("retrieve"),
        ckpt.as_os_str(),
        data.as_os_str(),
        OsStr::new("--pair"),
        OsStr::new("nope,never"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    // Exactly one query kind is required.
    assert_eq!(drpt([OsStr::new("retrieve"), ckpt.as_os_str(), data.as_os_str()]).status.code(), Some(1));
}
