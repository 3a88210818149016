use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hetero_embed::net::{Activation, NetConfig};
use hetero_embed::pipeline::{parse_report, train};
use hetero_embed::{Dataset, EmbeddingNet, RunConfig, Sample};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetero-embed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &TempDir, body: &str) -> PathBuf {
    let p = path(dir, "run.cfg");
    std::fs::write(&p, body).unwrap();
    p
}

fn data_lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count() - 1
}

#[test]
fn synth_writes_expected_sample_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(&dir, "default.hem");
    let res = run(&["synth", "--out", s(&out)]);
    assert_eq!(code(&res), 0);
    assert_eq!(data_lines(&out), 50 * 2 * 20);
    assert!(String::from_utf8_lossy(&res.stdout).contains("domains=A,B"));

    let cfg = write_config(
        &dir,
        "synth.n_identities=2\nsynth.samples_per_identity_per_domain=1\n",
    );
    let tiny = path(&dir, "tiny.hem");
    assert_eq!(
        code(&run(&["synth", "--config", s(&cfg), "--out", s(&tiny)])),
        0
    );
    assert_eq!(data_lines(&tiny), 4);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "net.embed_dim=8\nnet.widht=3\n");
    let res = run(&[
        "synth",
        "--config",
        s(&cfg),
        "--out",
        s(&path(&dir, "x.hem")),
    ]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("net.widht"));
}

#[test]
fn zero_epochs_leaves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let body = "train.epochs=0\nsynth.n_identities=6\nsynth.samples_per_identity_per_domain=3\n";
    let cfg = write_config(&dir, body);
    let ckpt = path(&dir, "net.ckpt");
    assert_eq!(
        code(&run(&["train", "--config", s(&cfg), "--out", s(&ckpt)])),
        0
    );
    let saved = EmbeddingNet::load(&ckpt).unwrap();

    let rc = RunConfig::parse(body).unwrap();
    let data = hetero_embed::dataset::generate_synthetic(&rc.synth).unwrap();
    let outcome = train(&rc, &data).unwrap();
    assert_eq!(saved, outcome.initial);
    let log = std::fs::read_to_string(path(&dir, "net.ckpt.log.csv")).unwrap();
    assert_eq!(
        log.trim_end(),
        "epoch,mean_loss,mean_l1,mean_l2,active_fraction,lr"
    );
}

fn toy(domains: &[&str], per_domain: usize, n_identities: usize, dim: usize) -> Dataset {
    let mut samples = Vec::new();
    for i in 0..n_identities {
        for d in domains {
            for j in 0..per_domain {
                let mut features = vec![0.0; dim];
                features[0] = 10.0 * i as f64 + 0.01 * j as f64;
                samples.push(Sample {
                    id: samples.len(),
                    identity: format!("p{i:02}"),
                    domain: d.to_string(),
                    features,
                });
            }
        }
    }
    Dataset::new(samples, dim).unwrap()
}

#[test]
fn single_domain_data_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(&dir, "one.hem");
    toy(&["A"], 4, 6, 3).save_manifest(&data).unwrap();
    let res = run(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&path(&dir, "n.ckpt")),
    ]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn input_dimension_mismatch_is_a_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(&dir, "d.hem");
    toy(&["A", "B"], 3, 6, 3).save_manifest(&data).unwrap();
    let cfg = write_config(&dir, "net.input_dim=7\n");
    let res = run(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&path(&dir, "n.ckpt")),
    ]);
    assert_eq!(code(&res), 5);

    // A checkpoint of the wrong width fails the same way at evaluation.
    let ckpt = path(&dir, "wide.ckpt");
    let net_cfg = NetConfig {
        input_dim: 5,
        ..NetConfig::default()
    };
    EmbeddingNet::init(net_cfg, 1).unwrap().save(&ckpt).unwrap();
    let res = run(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&res), 5);
}

#[test]
fn overflowing_features_are_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut samples = toy(&["A", "B"], 3, 6, 3).samples().to_vec();
    for s in &mut samples {
        s.features.iter_mut().for_each(|f| *f = (*f + 1.0) * 1e200);
    }
    let data = path(&dir, "huge.hem");
    Dataset::new(samples, 3)
        .unwrap()
        .save_manifest(&data)
        .unwrap();
    let cfg = write_config(
        &dir,
        "net.normalize_output=false\nnet.activation=tanh\nnet.hidden_dims=\n",
    );
    let res = run(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&path(&dir, "n.ckpt")),
    ]);
    assert_eq!(code(&res), 4, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("epoch 1"));
}

fn identity_net(dim: usize) -> EmbeddingNet {
    let cfg = NetConfig {
        input_dim: dim,
        hidden_dims: vec![],
        embed_dim: dim,
        activation: Activation::Relu,
        normalize_output: false,
    };
    let mut params = vec![0.0; dim * dim + dim];
    for i in 0..dim {
        params[i * dim + i] = 1.0;
    }
    EmbeddingNet::from_params(cfg, params).unwrap()
}

fn report_value(report: &str, key: &str) -> String {
    parse_report(report)
        .unwrap()
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("missing {key}"))
        .1
}

#[test]
fn separable_data_evaluates_perfectly_and_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(&dir, "toy.hem");
    toy(&["A", "B"], 3, 10, 2).save_manifest(&data).unwrap();
    let ckpt = path(&dir, "id.ckpt");
    identity_net(2).save(&ckpt).unwrap();
    let (roc, cmc, rep) = (
        path(&dir, "roc.csv"),
        path(&dir, "cmc.csv"),
        path(&dir, "eval.txt"),
    );
    let args = [
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&rep),
        "--roc-out",
        s(&roc),
        "--cmc-out",
        s(&cmc),
    ];
    let first = run(&args);
    assert_eq!(
        code(&first),
        0,
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let stdout = String::from_utf8(first.stdout.clone()).unwrap();
    assert_eq!(report_value(&stdout, "rank1"), "1");
    assert_eq!(report_value(&stdout, "eer"), "0");
    assert_eq!(report_value(&stdout, "cross.rank1"), "1");
    assert_eq!(std::fs::read_to_string(&rep).unwrap(), stdout);
    assert!(std::fs::read_to_string(&roc)
        .unwrap()
        .starts_with("far,gar,threshold\n"));
    assert!(std::fs::read_to_string(&cmc)
        .unwrap()
        .starts_with("rank,accuracy\n1,1\n"));

    let second = run(&args);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn eval_requires_a_checkpoint() {
    assert_eq!(code(&run(&["eval"])), 2);
}

#[test]
fn compare_reports_both_modes_and_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        "synth.n_identities=12\nsynth.samples_per_identity_per_domain=5\ntrain.epochs=2\ntrain.tuples_per_epoch=128\n",
    );
    let res = run(&["compare", "--config", s(&cfg), "--seed", "9"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report = String::from_utf8(res.stdout).unwrap();
    let again = run(&["compare", "--config", s(&cfg), "--seed", "9"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), report);
    for key in [
        "triplet_baseline.first_epoch_loss",
        "triplet_baseline.final_epoch_loss",
        "triplet_baseline.rank1",
        "triplet_baseline.cross.rank1",
        "hetero.eer",
        "hetero.gar@0.001",
        "hetero.gar@0.1",
        "hetero.cross.rank1",
        "delta.rank1",
        "delta.cross.rank1",
    ] {
        report_value(&report, key);
    }
}
