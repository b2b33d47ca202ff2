use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 14] = [
    "--set", "dim_h=8",
    "--set", "dim_ff=16",
    "--set", "prefix_len=2",
    "--set", "epochs=1",
    "--set", "batch_size=8",
    "--set", "pretrain_epochs=1",
    "--set", "eval_every=never",
];

fn piplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_piplab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn datagen(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["datagen", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    piplab(&args)
}

fn tiny_data(dir: &Path) {
    let o = datagen(dir, &["--seed", "5", "--n-train", "32", "--n-dev", "6", "--n-test", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn datagen_defaults_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = datagen(&a, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("n_train=3000\nn_dev=640\nn_test=640\n"));
    for (file, n) in [("train.tsv", 3000), ("dev.tsv", 640), ("test.tsv", 640)] {
        assert_eq!(std::fs::read_to_string(a.join(file)).unwrap().lines().count(), n);
    }
    assert!(datagen(&b, &[]).status.success());
    for file in ["train.tsv", "dev.tsv", "test.tsv", "vocab.txt"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn datagen_over_capacity_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = datagen(tmp.path(), &["--n-train", "1000000"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("distinct frames"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_every_mode_and_lists_tensors() {
    for mode in ["finetune", "prefix", "pip-direct", "pip-indirect"] {
        let o = piplab(&["gradcheck", "--mode", mode]);
        let out = stdout(&o);
        assert!(o.status.success(), "{mode}: {out}{}", stderr(&o));
        assert!(out.contains("result=PASS"));
        if mode == "pip-indirect" {
            for name in ["instructor/attn.wq", "instructor/attn.bo", "instructor/head.w", "instructor/head.b"] {
                assert!(out.contains(name), "{name}");
            }
        }
        if mode == "pip-direct" {
            assert!(!out.contains("prefix/enc_self.1.v "));
            assert!(out.contains("prefix/enc_self.1.k "));
        }
    }
}

#[test]
fn corrupted_backward_rule_is_reported() {
    let o = piplab(&["gradcheck", "--mode", "pip-indirect", "--corrupt", "softmax:1.05"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("result=FAIL"));
    assert!(stderr(&o).contains("gradient check failed"));
    assert_eq!(piplab(&["gradcheck", "--mode", "prefix", "--corrupt", "nope:2"]).status.code(), Some(1));
}

#[test]
fn train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_data(&data);
    let d = data.to_str().unwrap();
    for mode in ["pip-indirect", "pip-direct"] {
        let ck = tmp.path().join(format!("{mode}.ckpt"));
        let mut args = vec!["train", "--mode", mode, "--data-dir", d, "--out", ck.to_str().unwrap()];
        args.extend_from_slice(&TINY);
        let o = piplab(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        assert!(out.contains("TED-3") && out.contains("dev.tma="), "{out}");
        let log = std::fs::read_to_string(ck.with_extension("log")).unwrap();
        let first = log.lines().next().unwrap();
        let pel: f64 = first
            .split(' ')
            .find_map(|f| f.strip_prefix("pel_loss="))
            .unwrap()
            .parse()
            .unwrap();
        if mode == "pip-indirect" {
            assert!(pel > 0.0, "{first}");
        } else {
            assert_eq!(pel, 0.0);
            assert!(out.contains("direct_check_max=0\n"), "{out}");
        }

        let dev = data.join("dev.tsv");
        let eval = ["eval", "--checkpoint", ck.to_str().unwrap(), "--data", dev.to_str().unwrap()];
        let a = piplab(&eval);
        let b = piplab(&eval);
        assert!(a.status.success(), "{}", stderr(&a));
        assert_eq!(a.stdout, b.stdout);
        assert!(stdout(&a).contains(&format!("{mode}.n_examples=6")));
    }
}

#[test]
fn eval_gold_gives_a_perfect_row() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_data(tmp.path());
    let dev = tmp.path().join("dev.tsv");
    let o = piplab(&["eval", "--gold", "--data", dev.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let header = out.lines().next().unwrap();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(cols, ["Model", "BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "TMA", "TED-3"]);
    let row: Vec<&str> = out.lines().nth(2).unwrap().split_whitespace().collect();
    assert_eq!(row, ["gold", "100.00", "100.00", "100.00", "100.00", "100.00", "0.000"]);
    assert!(out.contains("gold.ted3=0\n") && out.contains("gold.bleu=1\n"));
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    let ck = tmp.path().join("x.ckpt");
    let o = piplab(&["train", "--mode", "prefix", "--data-dir", missing.to_str().unwrap(), "--out", ck.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing"), "{}", stderr(&o));

    tiny_data(tmp.path());
    let d = tmp.path().to_str().unwrap();
    let o = piplab(&["train", "--data-dir", d, "--out", ck.to_str().unwrap(), "--set", "bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"));
    let o = piplab(&["train", "--data-dir", d, "--out", ck.to_str().unwrap(), "--set", "lr=-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(piplab(&["train", "--mode", "sideways", "--data-dir", d, "--out", "x"]).status.code(), Some(1));

    std::fs::write(&ck, b"PIPCKPT1garbage").unwrap();
    let dev = tmp.path().join("dev.tsv");
    let o = piplab(&["eval", "--checkpoint", ck.to_str().unwrap(), "--data", dev.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint format error"), "{}", stderr(&o));

    let o = piplab(&["compare", "--data-dir", d, "--modes", "prefix", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least two modes"));
}

#[test]
fn compare_is_deterministic_and_counts_params() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_data(tmp.path());
    let d = tmp.path().to_str().unwrap();
    let mut args = vec!["compare", "--data-dir", d, "--modes", "finetune,prefix,pip-indirect", "--seeds", "1,2"];
    args.extend_from_slice(&TINY);
    let a = piplab(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    args.extend_from_slice(&["--jobs", "2"]);
    let b = piplab(&args);
    assert_eq!(a.stdout, b.stdout);
    let out = stdout(&a);
    assert!(out.contains("# Params"));
    let params = |m: &str| -> usize {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{m}.trainable_params=")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(params("prefix") < params("finetune"));
    assert_eq!(params("pip-indirect") - params("prefix"), 5 * 8 * 8 + 5 * 8);
    assert_eq!(out.lines().filter(|l| l.starts_with("prefix 1 ") || l.starts_with("prefix 2 ")).count(), 2);
}
