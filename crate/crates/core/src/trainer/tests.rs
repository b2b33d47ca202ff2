use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::tensor::OpKind;
use crate::data::{encode_all, generate_corpus, Grammar, Vocab, UNK};

const MODES: [Mode; 4] = [Mode::Finetune, Mode::Prefix, Mode::PipDirect, Mode::PipIndirect];

#[test]
fn adamw_zero_gradient_without_decay_is_a_no_op() {
    let mut p = vec![0.3, -1.2];
    let mut st = AdamWState::new(&[2]);
    let cfg = AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    adamw_step(&mut [p.as_mut_slice()], &[&[0.0, 0.0]], &mut st, 1e-3, &cfg).unwrap();
    assert_eq!(p, [0.3, -1.2]);
}

#[test]
fn adamw_first_step_moves_by_lr() {
    let mut p = vec![1.0];
    let mut st = AdamWState::new(&[1]);
    let cfg = AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    adamw_step(&mut [p.as_mut_slice()], &[&[1.0]], &mut st, 0.01, &cfg).unwrap();
    assert!((p[0] - (1.0 - 0.01 / (1.0 + 1e-8))).abs() < 1e-15);
    assert_eq!(st.t, 1);
}

#[test]
fn adamw_decay_is_geometric() {
    let mut p = vec![2.0, -0.5];
    let mut st = AdamWState::new(&[2]);
    let cfg = AdamWConfig::default();
    let (lr, steps) = (0.1, 25);
    for _ in 0..steps {
        adamw_step(&mut [p.as_mut_slice()], &[&[0.0, 0.0]], &mut st, lr, &cfg).unwrap();
    }
    let f = libm::pow(1.0 - lr * cfg.weight_decay, steps as f64);
    assert!((p[0] - 2.0 * f).abs() < 1e-12);
    assert!((p[1] + 0.5 * f).abs() < 1e-12);
}

#[test]
fn adamw_rejects_non_finite_gradients_without_side_effects() {
    let mut p = vec![1.0, 2.0];
    let mut st = AdamWState::new(&[2]);
    let err = adamw_step(&mut [p.as_mut_slice()], &[&[0.1, f64::NAN]], &mut st, 0.1, &AdamWConfig::default());
    assert!(matches!(err, Err(Error::Numeric(_))));
    assert_eq!(p, [1.0, 2.0]);
    assert_eq!(st, AdamWState::new(&[2]));
}

#[test]
fn clipping_scales_to_the_threshold() {
    let mut g = vec![3.0, 4.0];
    let norm = clip_grad_norm(&mut [g.as_mut_slice()], 1.0).unwrap();
    assert_eq!(norm, 5.0);
    assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);

    let (mut a, mut b) = (vec![0.1], vec![0.2]);
    clip_grad_norm(&mut [a.as_mut_slice(), b.as_mut_slice()], 1.0).unwrap();
    assert_eq!((a[0], b[0]), (0.1, 0.2));
    assert!(clip_grad_norm(&mut [a.as_mut_slice()], 0.0).is_err());
}

#[test]
fn schedules() {
    assert_eq!(lr_at(0, 100, 3e-4, Scheduler::Linear), 3e-4);
    assert_eq!(lr_at(50, 100, 3e-4, Scheduler::Linear), 1.5e-4);
    assert_eq!(lr_at(50, 100, 3e-4, Scheduler::Constant), 3e-4);
    assert_eq!("linear".parse::<Scheduler>().unwrap(), Scheduler::Linear);
    assert!("cosine".parse::<Scheduler>().is_err());
}

#[test]
fn paper_defaults_per_mode() {
    let ft = TrainConfig::for_mode(Mode::Finetune);
    assert_eq!((ft.lr, ft.scheduler), (1e-5, Scheduler::Linear));
    for m in [Mode::Prefix, Mode::PipDirect, Mode::PipIndirect] {
        let c = TrainConfig::for_mode(m);
        assert_eq!(c.lr, 3e-4);
        assert_eq!((c.epochs, c.batch_size, c.clip_norm, c.pel_weight), (10, 16, 1.0, 1.0));
    }
    let mut bad = TrainConfig::for_mode(Mode::Prefix);
    bad.pel_weight = -1.0;
    assert!(bad.validate().is_err());
    bad = TrainConfig::for_mode(Mode::Finetune);
    bad.reparameterize_prefix = true;
    assert!(bad.validate().is_err());
}

struct Fixture {
    model: ModelConfig,
    train: Vec<EncodedExample>,
}

fn fixture(n: usize) -> Fixture {
    let g = Grammar::default();
    let vocab = Vocab::from_grammar(&g);
    let mut model = ModelConfig::micro(vocab.len());
    model.dim_h = 16;
    model.dim_ff = 32;
    model.max_len = 64;
    model.prefix_len = 4;
    let c = generate_corpus(8, n, 1, 1, &g).unwrap();
    let train = encode_all(&c.train, &vocab, model.max_len).unwrap();
    Fixture { model, train }
}

fn quick(mode: Mode, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::for_mode(mode);
    c.epochs = epochs;
    c.batch_size = 8;
    c.seed = 3;
    c.eval_every = EvalEvery::Never;
    if mode == Mode::Finetune {
        c.lr = 1e-3;
    } else {
        c.lr = 3e-2;
    }
    c
}

#[test]
fn trainable_sets_are_exact() {
    let f = fixture(4);
    let names = |m: Mode| TrainState::init(&f.model, &quick(m, 1)).unwrap().trainable_names();
    let ft = names(Mode::Finetune);
    assert!(ft.iter().all(|n| n.starts_with("model/")));
    assert_eq!(ft.len(), ModelWeights::init(&f.model, 0).unwrap().store().len());
    let prefix = names(Mode::Prefix);
    assert_eq!(prefix.len(), 2 * f.model.sites().len());
    assert!(prefix.iter().all(|n| n.starts_with("prefix/")));
    let direct = names(Mode::PipDirect);
    let missing: Vec<&String> = prefix.iter().filter(|n| !direct.contains(n)).collect();
    assert_eq!(missing, ["prefix/enc_self.1.v"]);
    let indirect = names(Mode::PipIndirect);
    assert_eq!(indirect.len(), prefix.len() + 10);
    assert!(indirect[prefix.len()..].iter().all(|n| n.starts_with("instructor/")));
}

#[test]
fn frozen_backbone_is_bitwise_unchanged() {
    let f = fixture(24);
    for mode in [Mode::Prefix, Mode::PipDirect, Mode::PipIndirect] {
        let cfg = quick(mode, 2);
        let mut st = TrainState::init(&f.model, &cfg).unwrap();
        let before = st.weights.store().clone();
        let bank_before = st.bank.as_ref().unwrap().store().clone();
        train(&cfg, &mut st, &f.train, None).unwrap();
        assert!(st.weights.store().bitwise_eq(&before), "{mode}");
        assert!(!st.bank.as_ref().unwrap().store().bitwise_eq(&bank_before), "{mode}");
    }
    let cfg = quick(Mode::Finetune, 1);
    let mut st = TrainState::init(&f.model, &cfg).unwrap();
    let before = st.weights.store().clone();
    train(&cfg, &mut st, &f.train, None).unwrap();
    let changed = before
        .iter()
        .zip(st.weights.store().iter())
        .filter(|((_, a), (_, b))| !a.bitwise_eq(b))
        .count();
    assert!(changed as f64 >= 0.99 * before.len() as f64);
}

#[test]
fn dead_value_prefix_is_untouched_in_direct_mode() {
    let f = fixture(16);
    let cfg = quick(Mode::PipDirect, 1);
    let mut st = TrainState::init(&f.model, &cfg).unwrap();
    let bank = st.bank.as_ref().unwrap();
    let dead: Vec<_> = bank.dead_direct_ids().iter().map(|&i| bank.store().get(i).clone()).collect();
    let log = train(&cfg, &mut st, &f.train, None).unwrap();
    let bank = st.bank.as_ref().unwrap();
    for (i, t) in bank.dead_direct_ids().iter().zip(&dead) {
        assert!(bank.store().get(*i).bitwise_eq(t));
    }
    assert_eq!(log.direct_check.len(), log.steps.len());
    assert!(log.direct_check.iter().all(|&d| d == 0.0));
}

#[test]
fn training_is_deterministic() {
    let f = fixture(20);
    for mode in MODES {
        let cfg = quick(mode, 1);
        let run = || {
            let mut st = TrainState::init(&f.model, &cfg).unwrap();
            let log = train(&cfg, &mut st, &f.train, None).unwrap();
            (log, st)
        };
        let (la, sa) = run();
        let (lb, sb) = run();
        assert_eq!(la, lb);
        assert!(sa.weights.store().bitwise_eq(sb.weights.store()));
        if let (Some(a), Some(b)) = (&sa.bank, &sb.bank) {
            assert!(a.store().bitwise_eq(b.store()));
        }
    }
}

#[test]
fn first_epoch_loss_decreases_for_every_mode() {
    let f = fixture(96);
    for mode in MODES {
        let cfg = quick(mode, 1);
        let mut st = TrainState::init(&f.model, &cfg).unwrap();
        let log = train(&cfg, &mut st, &f.train, None).unwrap();
        let first = log.steps.first().unwrap().lm_loss;
        let last = log.steps.last().unwrap().lm_loss;
        assert!(last < first, "{mode}: {first} -> {last}");
        assert!(log.steps.iter().all(|s| s.combined_loss.is_finite() && s.grad_norm.is_finite()));
        let pel0 = log.steps[0].pel_loss;
        assert_eq!(pel0 > 0.0, mode == Mode::PipIndirect, "{mode}");
        if mode == Mode::PipIndirect {
            let s = &log.steps[0];
            assert!((s.combined_loss - (s.lm_loss + cfg.pel_weight * s.pel_loss)).abs() < 1e-12);
        }
    }
}

#[test]
fn mismatched_state_and_config_are_rejected() {
    let f = fixture(4);
    let mut st = TrainState::init(&f.model, &quick(Mode::Prefix, 1)).unwrap();
    assert!(matches!(
        train(&quick(Mode::PipDirect, 1), &mut st, &f.train, None),
        Err(Error::Contract(_))
    ));
    assert!(matches!(train(&quick(Mode::Prefix, 1), &mut st, &[], None), Err(Error::EmptyBatch(_))));
    let w = ModelWeights::init(&f.model, 0).unwrap();
    assert!(TrainState::from_parts(Mode::Prefix, w, None, None).is_err());
}

#[test]
fn corruption_permutes_and_masks() {
    let cfg = PretrainConfig::default();
    let ids: Vec<usize> = (10..19).collect();
    let mut rng = crate::rng::stream(4, crate::rng::Stream::Test);
    for _ in 0..200 {
        let c = corrupt(&ids, &cfg, &mut rng);
        assert_eq!(c.len(), ids.len());
        let mut kept: Vec<usize> = c.iter().copied().filter(|&t| t != UNK).collect();
        kept.sort();
        assert!(kept.iter().all(|t| ids.contains(t)));
        kept.dedup();
        assert_eq!(kept.len(), c.iter().filter(|&&t| t != UNK).count());
    }
    let none = PretrainConfig {
        mask_prob: 0.0,
        scramble_prob: 0.0,
        shuffle_window: 0.0,
        ..cfg.clone()
    };
    assert_eq!(corrupt(&ids, &none, &mut rng), ids);
    assert!(PretrainConfig { mask_prob: 1.5, ..cfg }.validate().is_err());
}

#[test]
fn pretraining_is_deterministic_and_learns() {
    let f = fixture(48);
    let sentences: Vec<Vec<usize>> = f.train.iter().map(|e| e.target[..e.target.len() - 1].to_vec()).collect();
    let cfg = PretrainConfig {
        epochs: 3,
        ..PretrainConfig::default()
    };
    assert_eq!(denoising_examples(&sentences, &cfg, 1), denoising_examples(&sentences, &cfg, 1));
    let (wa, log) = pretrain_backbone(&f.model, &cfg, &sentences, 1).unwrap();
    let (wb, _) = pretrain_backbone(&f.model, &cfg, &sentences, 1).unwrap();
    assert!(wa.store().bitwise_eq(wb.store()));
    assert!(log.epoch_loss(3).unwrap() < log.epoch_loss(1).unwrap());
    assert!(!wa.store().bitwise_eq(ModelWeights::init(&f.model, 1).unwrap().store()));
}

#[test]
fn every_mode_passes_gradient_check() -> Result<()> {
    for mode in MODES {
        let r = gradcheck_micro(mode, 4, &GradCheckOptions::default())?;
        assert_eq!(r.names.len(), r.report.per_tensor.len());
        assert!(r.report.max_rel_error < 1e-4, "{mode}: {}", r.report.max_rel_error);
    }
    Ok(())
}

#[test]
fn corrupted_backward_rule_fails_gradient_check() -> Result<()> {
    let opts = GradCheckOptions {
        corrupt: Some((OpKind::Softmax, 1.05)),
        ..GradCheckOptions::default()
    };
    let r = gradcheck_micro(Mode::Prefix, 4, &opts)?;
    assert!(r.report.max_rel_error > 1e-3, "{}", r.report.max_rel_error);
    Ok(())
}
