use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::*;
use crate::data::{encode_all, generate_corpus, Grammar, Vocab};
use crate::model::{forward_loss, ModelConfig, ModelWeights};
use crate::rng::{stream, Stream};
use crate::tensor::{grad_check, Tape, Tensor};

fn random(shape: &[usize], rng: &mut crate::rng::StreamRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn entries(bank: &PrefixBank) -> Vec<f64> {
    bank.store().iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

#[test]
fn bank_init_is_seeded_and_centered() {
    let cfg = ModelConfig::toy(30);
    let a = init_prefix_bank(&cfg, 1).unwrap();
    assert!(a.store().bitwise_eq(init_prefix_bank(&cfg, 1).unwrap().store()));
    assert!(!a.store().bitwise_eq(init_prefix_bank(&cfg, 2).unwrap().store()));
    assert_eq!(a.sites(), cfg.sites());
    for (_, t) in a.store().iter() {
        assert_eq!(t.shape(), &[8, 32]);
        assert!(t.requires_grad());
    }

    let wide = ModelConfig {
        prefix_len: 32,
        ..cfg
    };
    let xs = entries(&init_prefix_bank(&wide, 3).unwrap());
    assert!(xs.len() >= 10_000);
    let mean = xs[..10_000].iter().sum::<f64>() / 10_000.0;
    assert!(mean.abs() <= 0.002, "{mean}");
    let var = xs[..10_000].iter().map(|x| x * x).sum::<f64>() / 10_000.0;
    assert!((libm::sqrt(var) - PREFIX_INIT_STD).abs() < 0.001);
}

#[test]
fn pooling_buckets() {
    let mut rng = stream(1, Stream::Test);
    let x = random(&[4, 3], &mut rng);
    assert!(pool_rows(&x, 4).unwrap().bitwise_eq(&x));

    let y = random(&[8, 3], &mut rng);
    let p = pool_rows(&y, 4).unwrap();
    for j in 0..4 {
        for c in 0..3 {
            let want = (y.row(2 * j)[c] + y.row(2 * j + 1)[c]) / 2.0;
            assert!((p.row(j)[c] - want).abs() < 1e-15);
        }
    }

    // Fewer rows than buckets: nearest-row replication.
    let z = random(&[2, 3], &mut rng);
    let q = pool_rows(&z, 4).unwrap();
    assert_eq!(q.row(0), z.row(0));
    assert_eq!(q.row(1), z.row(0));
    assert_eq!(q.row(2), z.row(1));
    assert_eq!(q.row(3), z.row(1));
    assert!(pool_rows(&z, 0).is_err());
}

#[test]
fn parse_encoding_shape_cache_and_errors() {
    let cfg = ModelConfig::toy(30);
    let w = ModelWeights::init(&cfg, 4).unwrap();
    for n in [1, 5, 8, 19] {
        let ids: Vec<usize> = (0..n).map(|i| 5 + i % 20).collect();
        let e = encode_parse(&ids, &w, "key").unwrap();
        assert_eq!(e.values.shape(), &[8, 32]);
        assert!(!e.values.requires_grad());
    }
    assert!(matches!(encode_parse(&[], &w, ""), Err(crate::Error::Degenerate(_))));

    let ids = [5, 6, 7, 8, 9, 10];
    let mut cache = ParseEncodingCache::new();
    let first = cache.get_or_compute("( S )", &ids, &w).unwrap().clone();
    let again = cache.get_or_compute("( S )", &ids, &w).unwrap().clone();
    assert_eq!(cache.stats(), (1, 1));
    assert_eq!(cache.len(), 1);
    assert!(first.values.bitwise_eq(&again.values));
    assert!(first.values.bitwise_eq(&encode_parse(&ids, &w, "( S )").unwrap().values));
}

fn micro_setup() -> (ModelConfig, ModelWeights, PrefixBank, crate::data::EncodedExample) {
    let g = Grammar::default();
    let vocab = Vocab::from_grammar(&g);
    let mut cfg = ModelConfig::micro(vocab.len());
    cfg.max_len = 64;
    let c = generate_corpus(2, 1, 1, 1, &g).unwrap();
    let ex = encode_all(&c.train, &vocab, cfg.max_len).unwrap().remove(0);
    let mut w = ModelWeights::init(&cfg, 1).unwrap();
    w.set_frozen(true);
    let bank = PrefixBank::init(&cfg, 1, None).unwrap();
    (cfg, w, bank, ex)
}

#[test]
fn direct_substitution_touches_only_the_last_value_prefix() {
    let cfg = ModelConfig {
        l_enc: 2,
        ..ModelConfig::micro(20)
    };
    let w = ModelWeights::init(&cfg, 1).unwrap();
    let bank = PrefixBank::init(&cfg, 1, None).unwrap();
    let e = encode_parse(&[5, 6, 7], &w, "p").unwrap();
    let mut t = Tape::new();
    let view = bank.bind(&mut t).unwrap();
    let direct = apply_direct(&view, &mut t, &e, &cfg).unwrap();
    let m = cfg.last_encoder_site();
    for s in cfg.sites() {
        let (k0, v0) = view.get(s).unwrap();
        let (k1, v1) = direct.get(s).unwrap();
        assert_eq!(k0, k1);
        if s == m {
            assert_eq!(t.value(v1), e.values.data());
            assert!(!t.requires_grad(v1));
        } else {
            assert_eq!(v0, v1);
        }
    }

    let shallow = ModelConfig {
        l_enc: 3,
        ..cfg.clone()
    };
    assert!(matches!(
        apply_direct(&view, &mut t, &e, &shallow),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn substituted_value_prefix_gets_no_gradient() {
    let (cfg, w, bank, ex) = micro_setup();
    let e = encode_parse(&ex.parse, &w, &ex.parse_key).unwrap();
    let mut t = Tape::new();
    let b = w.bind(&mut t);
    let view = PrefixSpec {
        bank: &bank,
        direct: Some(&e),
    }
    .view(&mut t, &cfg)
    .unwrap();
    let (loss, _) = forward_loss(&mut t, &b, &ex, Some(&view)).unwrap();
    let grads = t.backward(loss).unwrap();
    let m = cfg.last_encoder_site();
    let leaves = view.leaves();
    let vm = bank.store().find(&format!("{m}.v")).unwrap();
    let km = bank.store().find(&format!("{m}.k")).unwrap();
    let dead = grads.get(leaves[vm.index()]).map_or(0.0, |g| g.iter().map(|x| x.abs()).sum());
    assert_eq!(dead, 0.0);
    let live: f64 = grads.get(leaves[km.index()]).unwrap().iter().map(|x| x.abs()).sum();
    assert!(live > 0.0);
    for v in b.vars() {
        assert!(grads.get(*v).is_none_or(|g| g.iter().all(|&x| x == 0.0)));
    }
}

fn instructor_inputs(d: usize, p: usize, seed: u64) -> (ParseInstructor, Tensor, Tensor, Tensor) {
    let cfg = ModelConfig {
        dim_h: d,
        n_heads: 2,
        prefix_len: p,
        ..ModelConfig::micro(10)
    };
    let ins = ParseInstructor::indirect(&cfg, seed, 1.0).unwrap();
    let mut rng = stream(seed, Stream::Test);
    (ins, random(&[p, d], &mut rng), random(&[p, d], &mut rng), random(&[p, d], &mut rng))
}

#[test]
fn prefix_attend_shape_and_zero_output() {
    let (mut ins, k, v, e) = instructor_inputs(8, 3, 1);
    {
        let mut t = Tape::new();
        let a = ins.bind(&mut t).unwrap();
        let (kv, vv, ev) = (t.leaf(&k), t.leaf(&v), t.constant(e.clone()));
        let out = prefix_attend(&mut t, &a, kv, vv, ev).unwrap();
        assert_eq!(t.shape(out), &[3, 8]);
    }
    for name in ["attn.wo", "attn.bo"] {
        let id = ins.store().find(name).unwrap();
        ins.store_mut().get_mut(id).data_mut().fill(0.0);
    }
    let mut t = Tape::new();
    let a = ins.bind(&mut t).unwrap();
    let (kv, vv, ev) = (t.leaf(&k), t.leaf(&v), t.constant(e));
    let out = prefix_attend(&mut t, &a, kv, vv, ev).unwrap();
    assert!(t.value(out).iter().all(|&x| x == 0.0));

    let bad = Tensor::zeros(&[3, 4]);
    let bv = t.leaf(&bad);
    assert!(prefix_attend(&mut t, &a, bv, vv, ev).is_err());
}

#[test]
fn prefix_attend_gradients_match_finite_differences() {
    let (ins, k, v, e) = instructor_inputs(6, 3, 2);
    let mut params = vec![k, v];
    params.extend(ins.store().iter().map(|(_, t)| t.clone()));
    let rep = grad_check(&params, 1e-5, move |t, vars| {
        let a = ins.bind_vars(vars[2..].to_vec())?;
        let ev = t.constant(e.clone());
        let out = prefix_attend(t, &a, vars[0], vars[1], ev)?;
        // Fixed random contraction to a scalar.
        let mut rng = stream(99, Stream::Test);
        let w = random(t.shape(out), &mut rng);
        let wv = t.constant(w);
        let prod = t.mul(out, wv)?;
        Ok(t.sum(prod))
    })
    .unwrap();
    assert_eq!(rep.per_tensor.len(), 12);
    assert!(rep.max_rel_error < 1e-4, "{rep:?}");
}

/// PEL with `H` collapsed to its bias, so every projected row equals `bias`.
fn pel_with_constant_head(bias: &[f64], e_rows: &[&[f64]]) -> crate::Result<f64> {
    let d = bias.len();
    let (mut ins, k, v, _) = instructor_inputs(d, e_rows.len(), 3);
    let w = ins.store().find("head.w").unwrap();
    ins.store_mut().get_mut(w).data_mut().fill(0.0);
    let b = ins.store().find("head.b").unwrap();
    ins.store_mut().get_mut(b).data_mut().copy_from_slice(bias);
    let e = Tensor::from_rows(e_rows).unwrap();
    let mut t = Tape::new();
    let a = ins.bind(&mut t)?;
    let (kv, vv, ev) = (t.leaf(&k), t.leaf(&v), t.constant(e));
    let loss = pel_loss(&mut t, &a, kv, vv, ev)?;
    Ok(t.scalar(loss))
}

#[test]
fn pel_examples() {
    let b = [1.0, -2.0, 0.5, 3.0];
    let scaled: Vec<f64> = b.iter().map(|x| 2.0 * x).collect();
    assert_eq!(pel_with_constant_head(&b, &[&b, &scaled]).unwrap(), 0.0);
    let neg: Vec<f64> = b.iter().map(|x| -x).collect();
    assert!((pel_with_constant_head(&b, &[&neg, &neg]).unwrap() - 2.0).abs() < 1e-12);
    let ortho = [2.0, 1.0, 0.0, 0.0];
    assert!((pel_with_constant_head(&b, &[&b, &ortho]).unwrap() - 0.5).abs() < 1e-12);
    assert!(matches!(
        pel_with_constant_head(&[0.0; 4], &[&b, &b]),
        Err(crate::Error::Degenerate(_))
    ));
}

#[test]
fn pel_stays_in_range() {
    for seed in 0..1000 {
        let (ins, k, v, e) = instructor_inputs(4, 2, seed);
        let mut t = Tape::new();
        let a = ins.bind(&mut t).unwrap();
        let (kv, vv, ev) = (t.leaf(&k), t.leaf(&v), t.constant(e));
        let l = pel_loss(&mut t, &a, kv, vv, ev).unwrap();
        assert!((0.0..=2.0).contains(&t.scalar(l)));
    }
}

#[test]
fn combined_loss_examples() {
    let mut t = Tape::new();
    let lm = t.constant(Tensor::scalar(2.0));
    let pel = t.constant(Tensor::scalar(0.5));
    let c = combined_loss(&mut t, lm, pel, 1.0).unwrap();
    assert_eq!(t.scalar(c), 2.5);
    let c0 = combined_loss(&mut t, lm, pel, 0.0).unwrap();
    assert_eq!(t.scalar(c0), 2.0);
    assert!(combined_loss(&mut t, lm, pel, -0.1).is_err());
}

#[test]
fn combined_gradient_on_instructor_is_lambda_times_pel_gradient() {
    let (cfg, w, bank, ex) = micro_setup();
    let ins = ParseInstructor::indirect(&cfg, 5, 0.7).unwrap();
    let e = encode_parse(&ex.parse, &w, &ex.parse_key).unwrap();
    let m = cfg.last_encoder_site();
    let run = |with_lm: bool| -> Vec<Vec<f64>> {
        let mut t = Tape::new();
        let b = w.bind(&mut t);
        let view = bank.bind(&mut t).unwrap();
        let a = ins.bind(&mut t).unwrap();
        let (km, vm) = view.get(m).unwrap();
        let ev = t.constant(e.values.clone());
        let pel = pel_loss(&mut t, &a, km, vm, ev).unwrap();
        let out = if with_lm {
            let lm = crate::model::forward_loss_mean(&mut t, &b, &ex, Some(&view)).unwrap();
            combined_loss(&mut t, lm, pel, 0.7).unwrap()
        } else {
            pel
        };
        let g = t.backward(out).unwrap();
        a.leaves().iter().map(|&v| g.get(v).unwrap().to_vec()).collect()
    };
    let combined = run(true);
    let alone = run(false);
    for (c, p) in combined.iter().zip(&alone) {
        for (x, y) in c.iter().zip(p) {
            assert!((x - 0.7 * y).abs() < 1e-10);
        }
    }
}

#[test]
fn reparameterized_bank_has_more_parameters_and_full_shapes() {
    let cfg = ModelConfig::toy(30);
    let plain = PrefixBank::init(&cfg, 0, None).unwrap();
    let large = PrefixBank::init(&cfg, 0, Some(16)).unwrap();
    assert!(large.numel() > plain.numel());
    assert_eq!(large.reparam_width(), Some(16));
    let mut t = Tape::new();
    let view = large.bind(&mut t).unwrap();
    for s in cfg.sites() {
        let (k, v) = view.get(s).unwrap();
        assert_eq!(t.shape(k), &[8, 32]);
        assert_eq!(t.shape(v), &[8, 32]);
    }
    assert!(PrefixBank::init(&cfg, 0, Some(0)).is_err());
}
