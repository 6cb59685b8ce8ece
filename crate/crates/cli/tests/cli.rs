use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mfas_core::checkpoint;
use mfas_core::fusion::{FusedModel, FusionNetwork, SharedWeightStore, TapShape};
use mfas_core::modality::ModalityNetwork;
use mfas_core::space::Architecture;
use mfas_core::tensor::Activation;

const SMALL: &str = r#"
[space]
M = 2
N = 2
P = 3
L = 2

[search]
E_search = 2
E_train = 1
K = 3
T_max = 1.0
T_min = 0.001
seed = 5
hidden_dim = 8

[train]
extractor_width = 16
pretrain_epochs = 2

[final]
hidden_dim = 16
phase1_epochs = 1
phase2_epochs = 1

[data.synth]
n_train = 400
n_val = 200
n_test = 1000
"#;

fn mfas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfas"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), SMALL).unwrap();
    tmp
}

#[test]
fn space_size_prints_exact_count() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mfas(
        tmp.path(),
        &["space-size", "--set", "space.M=8", "--set", "space.N=2", "--set", "space.P=3", "--set", "space.L=3"],
    );
    assert_eq!(ok(&out).trim(), "110592");
    fs::write(tmp.path().join("s.toml"), "[space]\nM = 16\nN = 16\nP = 2\nL = 5\n").unwrap();
    assert_eq!(ok(&mfas(tmp.path(), &["--config", "s.toml", "space-size"])).trim(), "35184372088832");
}

#[test]
fn export_arch_prints_wire_format() {
    let tmp = setup();
    let out = mfas(tmp.path(), &["--config", "run.toml", "export-arch", "[(2,1,3),(1,2,1)]"]);
    assert_eq!(ok(&out).trim(), r#"{"triplets":[[2,1,3],[1,2,1]],"M":2,"N":2,"P":3}"#);
    let bad = mfas(tmp.path(), &["--config", "run.toml", "export-arch", "[(3,1,1)]"]);
    assert!(!bad.status.success());
}

#[test]
fn search_is_byte_identical_across_reruns() {
    let tmp = setup();
    ok(&mfas(tmp.path(), &["--config", "run.toml", "--out", "a", "search"]));
    ok(&mfas(tmp.path(), &["--config", "run.toml", "--out", "b", "search"]));
    // a rerun from the resolved config lands in its own directory
    ok(&mfas(tmp.path(), &["--config", "a/config.resolved", "--out", "c", "search"]));
    let read = |d: &str, f: &str| fs::read(tmp.path().join(d).join(f)).unwrap();
    for file in ["steplog.csv", "topk.json", "f.bin", "g.manifest"] {
        assert_eq!(read("a", file), read("b", file), "{file}");
        assert_eq!(read("a", file), read("c", file), "{file}");
    }
    let log = String::from_utf8(read("a", "steplog.csv")).unwrap();
    assert!(log.starts_with("step,iteration,level,arch,predicted_acc,val_acc,temperature\n"));
    // 12 level-one architectures plus at most K per later step
    assert!(log.lines().count() - 1 <= 12 + 2 * 3);
}

#[test]
fn random_checkpoint_scores_chance_on_generated_data() {
    let tmp = setup();
    ok(&mfas(tmp.path(), &["--config", "run.toml", "--out", "data", "gen-data"]));
    let test = tmp.path().join("data/test.mfds");
    let before = fs::read(&test).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let f = ModalityNetwork::new(32, &[16, 16], 16, Activation::Relu, &mut rng).unwrap();
    let g = ModalityNetwork::new(32, &[16, 16], 16, Activation::Relu, &mut rng).unwrap();
    let arch = Architecture::from_tuples(&[(1, 2, 1)]);
    let fusion = FusionNetwork::build(&arch, &TapShape::of(&f, &g), 16, 8, &SharedWeightStore::new(), &mut rng).unwrap();
    let model = FusedModel { f, g, fusion };
    checkpoint::save(&checkpoint::fused_to_checkpoint(&model), &tmp.path().join("random")).unwrap();

    let out = ok(&mfas(tmp.path(), &["eval", "--checkpoint", "random", "--data", "data/test.mfds"]));
    let acc: f64 = out.trim().parse().unwrap();
    assert!((acc - 1.0 / 16.0).abs() <= 0.03, "accuracy {acc}");
    assert_eq!(fs::read(&test).unwrap(), before);
}

#[test]
fn full_run_writes_every_artifact() {
    let tmp = setup();
    let args = |cmd: &'static str| ["--config", "run.toml", "--out", "run", cmd];
    ok(&mfas(tmp.path(), &args("pretrain")));
    ok(&mfas(tmp.path(), &args("search")));
    ok(&mfas(tmp.path(), &args("random-search")));
    let report = ok(&mfas(tmp.path(), &args("train-final")));
    let table = ok(&mfas(tmp.path(), &args("report")));
    let run = tmp.path().join("run");
    for f in [
        "config.resolved",
        "pretrain_curve.csv",
        "steplog.csv",
        "topk.json",
        "random_steplog.csv",
        "random_topk.json",
        "model.manifest",
        "model.bin",
        "final_curve.csv",
        "final_report.txt",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    // random search matches the progressive search's evaluation count
    let rows = |f: &str| fs::read_to_string(run.join(f)).unwrap().lines().count();
    assert_eq!(rows("steplog.csv"), rows("random_steplog.csv"));
    assert!(table.contains("mfas    mean") && table.contains("random  std"));

    // the saved winner reproduces the reported test accuracy
    ok(&mfas(tmp.path(), &args("gen-data")));
    let reported = report.lines().find_map(|l| l.strip_prefix("test_acc ")).unwrap().trim().to_string();
    let eval = ok(&mfas(tmp.path(), &["eval", "--checkpoint", "run/model.manifest", "--data", "run/test.mfds"]));
    assert_eq!(eval.trim(), reported);
}

#[test]
fn failures_leave_no_partial_outputs() {
    let tmp = setup();
    let out = mfas(tmp.path(), &["--config", "run.toml", "--out", "bad", "--set", "data.synth.C_x=1", "search"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
    assert!(!tmp.path().join("bad").exists());

    // train-final without a step log fails after writing config.resolved
    let out = mfas(tmp.path(), &["--config", "run.toml", "--out", "empty", "train-final"]);
    assert!(!out.status.success());
    assert!(!tmp.path().join("empty").exists());

    for bad in [vec!["--set", "search.bogus=1"], vec!["--set", "space.P=4"]] {
        let mut args = vec!["--config", "run.toml", "--out", "x"];
        args.extend(bad);
        args.push("search");
        assert!(!mfas(tmp.path(), &args).status.success());
    }
    assert!(!mfas(tmp.path(), &["--config", "missing.toml", "search"]).status.success());
}
