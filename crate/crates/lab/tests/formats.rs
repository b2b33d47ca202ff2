use std::path::Path;

use pip_core::data::{encode_all, generate_corpus, Grammar, ParaphraseExample, Vocab};
use pip_core::model::{Mode, ModelConfig};
use pip_core::parse::ParseTree;
use pip_core::trainer::{evaluate, train, EvalData, EvalEvery, TrainConfig, TrainState};
use pip_lab::checkpoint::{self, Checkpoint, MAGIC};
use pip_lab::config::RunConfig;
use pip_lab::corpus::{format_corpus, parse_corpus, read_corpus, read_vocab, write_corpus, write_vocab, DataDir};
use pip_lab::report::{format_log, format_table, parse_log, Row, COLUMNS};
use pip_lab::LabError;
use proptest::prelude::*;

fn corpus(n: usize) -> (Vec<ParaphraseExample>, Vocab) {
    let g = Grammar::default();
    let c = generate_corpus(11, n, 1, 1, &g).unwrap();
    (c.train, Vocab::from_grammar(&g))
}

#[test]
fn corpus_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.tsv");
    let (examples, _) = corpus(1000);
    write_corpus(&path, &examples).unwrap();
    assert_eq!(read_corpus(&path).unwrap(), examples);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1000);
    assert!(text.ends_with('\n') && !text.contains('\r'));
}

#[test]
fn empty_corpus_file_is_valid() {
    assert!(parse_corpus("", Path::new("x")).unwrap().is_empty());
}

#[test]
fn malformed_lines_name_line_and_field() {
    let (ex, _) = corpus(2);
    let good = format_corpus(&ex);
    let first = good.lines().next().unwrap();
    let two_fields = format!("{first}\na b\tc d\n");
    match parse_corpus(&two_fields, Path::new("c.tsv")) {
        Err(LabError::Line { line: 2, message, .. }) => assert!(message.contains("3"), "{message}"),
        other => panic!("{other:?}"),
    }
    let bad_parse = "a b\tb a\t( S ( NP )\n";
    assert!(matches!(
        parse_corpus(bad_parse, Path::new("c.tsv")),
        Err(LabError::Field { line: 1, field: 3, .. })
    ));
    let double_space = "a  b\tb a\t( S )\n";
    assert!(matches!(
        parse_corpus(double_space, Path::new("c.tsv")),
        Err(LabError::Field { line: 1, field: 1, .. })
    ));
    assert!(matches!(
        parse_corpus("a b\tb a\t( S )\r\n", Path::new("c.tsv")),
        Err(LabError::Line { line: 1, .. })
    ));
    let msg = parse_corpus(&two_fields, Path::new("c.tsv")).unwrap_err().to_string();
    assert!(msg.starts_with("c.tsv:2:"), "{msg}");
}

#[test]
fn vocab_file_is_one_token_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    let (_, vocab) = corpus(1);
    write_vocab(&path, &vocab).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    for (i, line) in text.lines().enumerate() {
        assert_eq!(vocab.id(line), i);
    }
    assert_eq!(read_vocab(&path).unwrap(), vocab);
    std::fs::write(&path, "<pad>\n<bos>\n").unwrap();
    assert!(read_vocab(&path).is_err());
}

#[test]
fn data_dir_round_trip_and_missing_dir() {
    let dir = tempfile::tempdir().unwrap();
    let g = Grammar::default();
    let c = generate_corpus(2, 20, 5, 5, &g).unwrap();
    let v = Vocab::from_grammar(&g);
    let d = DataDir::new(dir.path().join("data"));
    d.write(&c, &v).unwrap();
    assert_eq!(d.read().unwrap(), (c, v));
    let missing = DataDir::new(dir.path().join("nope")).read().unwrap_err();
    assert!(missing.to_string().contains("nope"), "{missing}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn arbitrary_examples_round_trip(
        src in proptest::collection::vec("[a-z]{1,6}", 1..8),
        tgt in proptest::collection::vec("[a-z]{1,6}", 1..8),
        labels in proptest::collection::vec("[A-Z]{1,3}", 1..5),
    ) {
        prop_assume!(src != tgt);
        let leaves = labels[1..].iter().map(|l| ParseTree::leaf(l.as_str()).unwrap()).collect();
        let tree = ParseTree::new(labels[0].as_str(), leaves).unwrap();
        let ex = vec![ParaphraseExample::new(src, tgt, tree).unwrap()];
        let text = format_corpus(&ex);
        prop_assert_eq!(parse_corpus(&text, Path::new("p")).unwrap(), ex);
    }
}

#[test]
fn config_file_comments_overrides_and_unknown_keys() {
    let mut c = RunConfig::default();
    c.merge_text("# comment\nepochs = 3 # trailing\n\nmode=pip-direct\nlr=0.01\n", "f").unwrap();
    assert_eq!((c.epochs, c.mode, c.lr), (3, Mode::PipDirect, Some(0.01)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "epochs=3\nbatch_size=4\n").unwrap();
    let c = RunConfig::load(Some(&path), &["epochs=7".into()]).unwrap();
    assert_eq!((c.epochs, c.batch_size), (7, 4));
    let err = RunConfig::default().merge_text("epochs=1\nepoch=2\n", "f").unwrap_err();
    assert!(err.to_string().contains("f:2") && err.to_string().contains("epoch"), "{err}");
    assert_eq!(err.exit_code(), 1);
    assert!(RunConfig::default().assign("epochs=many").is_err());
    assert!(RunConfig::default().assign("no_equals").is_err());
}

#[test]
fn config_text_round_trips_and_covers_every_knob() {
    let mut c = RunConfig::default();
    for a in ["eval_every=never", "scheduler=linear", "reparam_dim=12", "prefix_lr=0.001", "seed=9"] {
        c.assign(a).unwrap();
    }
    let mut back = RunConfig::default();
    back.merge_text(&c.to_text(), "t").unwrap();
    assert_eq!(back, c);
    let keys: Vec<&str> = c.entries().iter().map(|(k, _)| *k).collect();
    for k in ["n_train", "dim_h", "prefix_len", "pel_weight", "reparameterize_prefix", "eval_every", "pretrain_epochs"] {
        assert!(keys.contains(&k), "{k}");
    }
}

#[test]
fn config_builds_mode_specific_training_settings() {
    let mut c = RunConfig::default();
    c.assign("prefix_lr=0.002").unwrap();
    c.assign("reparameterize_prefix=true").unwrap();
    let p = c.train_config(Mode::PipIndirect, 4).unwrap();
    let f = c.train_config(Mode::Finetune, 4).unwrap();
    assert_eq!((p.lr, p.seed), (0.002, 4));
    assert_eq!(f.lr, 1e-5);
    assert!(p.reparameterize_prefix && !f.reparameterize_prefix);
    c.assign("clip_norm=0").unwrap();
    assert_eq!(c.train_config(Mode::Prefix, 0).unwrap_err().exit_code(), 1);
}

fn tiny_state(mode: Mode) -> (TrainState, Vocab, Vec<ParaphraseExample>) {
    let g = Grammar::default();
    let vocab = Vocab::from_grammar(&g);
    let c = generate_corpus(3, 24, 6, 1, &g).unwrap();
    let model = ModelConfig {
        dim_h: 8,
        dim_ff: 16,
        prefix_len: 2,
        ..ModelConfig::toy(vocab.len())
    };
    let mut tc = TrainConfig::for_mode(mode);
    tc.epochs = 1;
    tc.batch_size = 8;
    tc.eval_every = EvalEvery::Never;
    tc.reparameterize_prefix = mode == Mode::Prefix;
    let mut st = TrainState::init(&model, &tc).unwrap();
    let enc = encode_all(&c.train, &vocab, model.max_len).unwrap();
    train(&tc, &mut st, &enc, None).unwrap();
    (st, vocab, c.dev)
}

#[test]
fn checkpoint_round_trip_is_bit_exact_and_evaluates_identically() {
    let g = Grammar::default();
    for mode in Mode::ALL {
        let (st, vocab, dev) = tiny_state(mode);
        let ck = Checkpoint { state: st, vocab };
        let bytes = checkpoint::encode(&ck).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let mut back = checkpoint::decode(&bytes).unwrap();
        assert_eq!(checkpoint::encode(&back).unwrap(), bytes, "{mode}");
        assert_eq!(back.state.mode, mode);
        assert!(back.state.weights.store().bitwise_eq(ck.state.weights.store()));
        let enc = encode_all(&dev, &ck.vocab, ck.state.model_config().max_len).unwrap();
        let data = EvalData {
            examples: &dev,
            encoded: &enc,
            vocab: &ck.vocab,
            grammar: &g,
        };
        let cfg = Default::default();
        let mut orig = ck.state.clone();
        let a = evaluate(&mut orig, &data, &cfg).unwrap();
        let b = evaluate(&mut back.state, &data, &cfg).unwrap();
        assert_eq!(a, b, "{mode}");
    }
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let (st, vocab, _) = tiny_state(Mode::PipIndirect);
    let bytes = checkpoint::encode(&Checkpoint { state: st, vocab }).unwrap();
    let cases: Vec<Vec<u8>> = vec![
        Vec::new(),
        b"NOTACKPT".to_vec(),
        bytes[..bytes.len() - 3].to_vec(),
        [bytes.as_slice(), &[0u8]].concat(),
        {
            let mut b = bytes.clone();
            let at = bytes.windows(5).position(|w| w == b"mode=").unwrap() + 5;
            b[at] = b'X';
            b
        },
    ];
    for c in cases {
        let err = checkpoint::decode(&c).unwrap_err();
        assert!(matches!(err, LabError::Checkpoint(_)), "{err:?}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn log_round_trips_and_records_pel() {
    let g = Grammar::default();
    let vocab = Vocab::from_grammar(&g);
    let c = generate_corpus(3, 16, 4, 1, &g).unwrap();
    let model = ModelConfig {
        dim_h: 8,
        dim_ff: 16,
        prefix_len: 2,
        ..ModelConfig::toy(vocab.len())
    };
    let mut tc = TrainConfig::for_mode(Mode::PipDirect);
    tc.epochs = 1;
    tc.batch_size = 8;
    tc.eval_every = EvalEvery::Epoch;
    let mut st = TrainState::init(&model, &tc).unwrap();
    let enc = encode_all(&c.train, &vocab, model.max_len).unwrap();
    let dev = encode_all(&c.dev, &vocab, model.max_len).unwrap();
    let data = EvalData {
        examples: &c.dev,
        encoded: &dev,
        vocab: &vocab,
        grammar: &g,
    };
    let log = train(&tc, &mut st, &enc, Some(&data)).unwrap();
    let text = format_log(&log);
    assert_eq!(parse_log(&text).unwrap(), log);
    assert!(text.lines().filter(|l| l.starts_with("step ")).all(|l| l.contains(" pel_loss=0 ")));
    assert_eq!(text.lines().filter(|l| l.starts_with("eval ")).count(), 1);
    assert_eq!(text.lines().filter(|l| l.starts_with("direct_check ")).count(), 2);
}

#[test]
fn table_lists_metrics_in_order() {
    let r = pip_core::metrics::MetricsReport {
        bleu: 1.0,
        rouge1: 1.0,
        rouge2: 1.0,
        rouge_l: 1.0,
        tma: 100.0,
        ted3: 0.0,
        n_examples: 3,
        n_parse_failures: 0,
    };
    let t = format_table(&[Row {
        label: "gold".into(),
        params: Some(42),
        report: r,
    }]);
    let header: Vec<&str> = t.lines().next().unwrap().split("  ").map(str::trim).filter(|s| !s.is_empty()).collect();
    assert_eq!(header[0], "Model");
    assert_eq!(header[1], "# Params");
    assert_eq!(&header[2..], &COLUMNS);
    assert!(t.lines().nth(2).unwrap().contains("100.00"));
}
