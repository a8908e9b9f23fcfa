use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
# small synthetic run
vocab_size = 12
seq_len = 6
oracle_hidden = 8
n_train = 128
n_test = 64
gen_hidden = 8
disc_emb = 8
disc_filters = 4
rollouts = 4
pretrain_epochs = 2
disc_pretrain_steps = 2
adv_epochs = 2
d_steps = 2
batch_size = 16
eval_samples = 64
seeds = 7
";

fn prefixgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefixgan")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn run_small(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let cfg = write_config(dir, SMALL);
    let output = format!("--output={}", dir.join(out).display());
    let mut args = vec!["run", "--config", &cfg, &output];
    args.extend_from_slice(extra);
    prefixgan(&args)
}

#[test]
fn run_writes_reports_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = run_small(dir.path(), out, &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = dir.path().join("a");
    assert_eq!(fs::read_to_string(a.join("config.txt")).unwrap(), SMALL);
    for f in ["finals.csv", "aggregate.csv", "seed_7/curve.csv", "seed_7/final.csv"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let curve = fs::read_to_string(a.join("seed_7/curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,phase,nll_oracle,nll_gen,d_loss,g_objective,wall_s\n"));
    assert_eq!(curve.lines().count(), 1 + 2 + 2);
    let png = fs::read(a.join("curves.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    let ck = a.join("seed_7/checkpoint");
    for f in ["config.txt", "generator.bin", "discriminator.bin", "rng_state.txt", "vocab.txt", "oracle.bin"] {
        assert!(ck.join(f).is_file(), "{f}");
    }
}

#[test]
fn relaxed_curve_has_a_temperature_column() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(dir.path(), "r", &["--path=relaxed", "--variant=full_prefix"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = fs::read_to_string(dir.path().join("r/seed_7/curve.csv")).unwrap();
    assert!(curve.lines().next().unwrap().ends_with(",wall_s,temperature"));
    assert_eq!(
        fs::read_to_string(dir.path().join("r/overrides.txt")).unwrap(),
        "--output=".to_string() + &dir.path().join("r").display().to_string() + "\n--path=relaxed\n--variant=full_prefix\n"
    );
}

#[test]
fn aggregate_matches_finals() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(dir.path(), "m", &["--seeds=7,8,9", "--adv_epochs=1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut finals = csv::Reader::from_path(dir.path().join("m/finals.csv")).unwrap();
    let header = finals.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = finals.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    let mut agg = csv::Reader::from_path(dir.path().join("m/aggregate.csv")).unwrap();
    let mut checked = 0;
    for rec in agg.records().map(Result::unwrap) {
        let col = header.iter().position(|h| h == &rec[0]).unwrap();
        let v: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
        let mean = v.iter().sum::<f64>() / 3.0;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!((rec[1].parse::<f64>().unwrap() - mean).abs() < 1e-12 * mean.abs().max(1.0));
        assert!((rec[2].parse::<f64>().unwrap() - std).abs() < 1e-9);
        assert_eq!(&rec[3], "3");
        checked += 1;
    }
    assert_eq!(checked, 6);
}

#[test]
fn compare_against_itself_and_eval_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(dir.path(), "c", &[]);
    assert!(o.status.success());
    let run = dir.path().join("c").display().to_string();
    let o = prefixgan(&["compare", &run, &run]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("metric,mean_a,mean_b,delta,sign,b_better,paired_seeds\n"));
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!((f[3], f[4], f[5], f[6]), ("0", "0", "0", "1"), "{line}");
    }

    let gen = dir.path().join("c/seed_7/checkpoint/generator.bin").display().to_string();
    let test = dir.path().join("c/test.txt").display().to_string();
    let o = prefixgan(&["eval", "--generator", &gen, "--test", &test, "--samples", "32"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "bleu2,bleu3,bleu4,bleu5,nll_gen,nll_oracle,n_samples,convention_id"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[6], "32");
    assert!(row[5].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn exit_codes_separate_config_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "no_such_key = 1\n");
    assert_eq!(prefixgan(&["run", "--config", &bad]).status.code(), Some(1));
    let missing = dir.path().join("absent.cfg").display().to_string();
    assert_eq!(prefixgan(&["run", "--config", &missing]).status.code(), Some(1));
    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(prefixgan(&["run", "--config", &cfg, "--seq_len=0"]).status.code(), Some(1));
    assert_eq!(prefixgan(&["frobnicate"]).status.code(), Some(1));

    let nowhere = dir.path().join("nothing").display().to_string();
    assert_eq!(prefixgan(&["compare", &nowhere, &nowhere]).status.code(), Some(2));
    let test = dir.path().join("t.txt");
    fs::write(&test, "a b\n").unwrap();
    let o = prefixgan(&["eval", "--generator", &nowhere, "--test", &test.display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
}
