use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use pip_core::data::{encode_all, generate_corpus, Grammar, Vocab};
use pip_core::metrics::{build_report, ReportConfig};
use pip_core::model::Mode;
use pip_core::tensor::OpKind;
use pip_core::trainer::{evaluate, gradcheck_micro, EvalData, GradCheckOptions};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::corpus::{read_corpus, DataDir};
use crate::error::{LabError, Result};
use crate::experiment::{backbone, compare, run_mode, Prepared};
use crate::report::{format_log, format_report_block, format_table, Row};

#[derive(Debug, Parser)]
#[command(name = "piplab", version, about = "Prefix-tuning and parse-instructed prefix experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic paraphrase corpus and its vocabulary.
    Datagen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 3000)]
        n_train: usize,
        #[arg(long, default_value_t = 640)]
        n_dev: usize,
        #[arg(long, default_value_t = 640)]
        n_test: usize,
    },
    /// Pretrain the backbone, tune one mode, evaluate on dev and save.
    Train {
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        data_dir: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training log path (defaults to the checkpoint path with a .log extension).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on a corpus file.
    Eval {
        #[arg(long, required_unless_present = "gold")]
        checkpoint: Option<PathBuf>,
        /// Corpus file (TSV) to evaluate on.
        #[arg(long)]
        data: PathBuf,
        /// Score the gold targets as generations instead of decoding.
        #[arg(long)]
        gold: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train several modes over several seeds and tabulate mean dev metrics.
    Compare {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "finetune,prefix,pip-direct,pip-indirect")]
        modes: Vec<Mode>,
        /// Seeds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Finite-difference check of every trainable tensor on a micro model.
    Gradcheck {
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Scale one op's backward rule, as OP:FACTOR (harness self-test).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Datagen {
            seed,
            out_dir,
            n_train,
            n_dev,
            n_test,
        } => datagen(seed, &out_dir, n_train, n_dev, n_test, out),
        Command::Train {
            mode,
            data_dir,
            out: ckpt,
            log,
            seed,
            config,
        } => {
            let mut cfg = config.load()?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let log = log.unwrap_or_else(|| ckpt.with_extension("log"));
            train_cmd(&cfg, &DataDir::new(data_dir), &ckpt, &log, out)
        }
        Command::Eval {
            checkpoint,
            data,
            gold,
            config,
        } => eval_cmd(&config.load()?, checkpoint.as_deref(), &data, gold, out),
        Command::Compare {
            data_dir,
            seeds,
            modes,
            jobs,
            config,
        } => compare_cmd(&config.load()?, &DataDir::new(data_dir), &modes, &seeds, jobs, out),
        Command::Gradcheck {
            mode,
            seed,
            eps,
            corrupt,
        } => gradcheck_cmd(mode, seed, eps, corrupt.as_deref(), out),
    }
}

fn w(out: &mut dyn Write, s: &str) -> Result<()> {
    out.write_all(s.as_bytes())
        .map_err(|e| LabError::io(std::path::Path::new("<stdout>"), e))
}

pub fn datagen(
    seed: u64,
    out_dir: &std::path::Path,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    out: &mut dyn Write,
) -> Result<()> {
    let grammar = Grammar::default();
    let corpus = generate_corpus(seed, n_train, n_dev, n_test, &grammar)?;
    let vocab = Vocab::from_grammar(&grammar);
    DataDir::new(out_dir).write(&corpus, &vocab)?;
    let mut s = format!(
        "seed={seed}\nn_train={}\nn_dev={}\nn_test={}\nvocab_size={}\nframe_capacity={}\n",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        vocab.len(),
        grammar.frame_capacity()
    );
    let all: Vec<_> = corpus.train.iter().chain(&corpus.dev).chain(&corpus.test).collect();
    let n = all.len() as f64;
    s.push_str(&format!(
        "mean_src_len={:.3}\nmean_tgt_len={:.3}\n",
        all.iter().map(|e| e.src.len()).sum::<usize>() as f64 / n,
        all.iter().map(|e| e.tgt.len()).sum::<usize>() as f64 / n
    ));
    let mut templates: BTreeMap<String, usize> = BTreeMap::new();
    for e in &all {
        *templates
            .entry(pip_core::parse::template(&e.target_parse, 2))
            .or_default() += 1;
    }
    for (t, c) in templates {
        s.push_str(&format!("target_template[{t}]={c}\n"));
    }
    w(out, &s)
}

pub fn train_cmd(
    cfg: &RunConfig,
    dir: &DataDir,
    ckpt: &std::path::Path,
    log_path: &std::path::Path,
    out: &mut dyn Write,
) -> Result<()> {
    let (corpus, vocab) = dir.read()?;
    let data = Prepared::new(cfg, &corpus, &vocab)?;
    cfg.train_config(cfg.mode, cfg.seed)?;
    let t0 = Instant::now();
    let (bb, pre) = backbone(cfg, &data, cfg.seed)?;
    if let Some(p) = &pre {
        let last = p.steps.last().map_or(0, |s| s.epoch);
        eprintln!(
            "pretrained backbone: {} steps, final epoch loss {:.4} ({:.1?})",
            p.steps.len(),
            p.epoch_loss(last).unwrap_or(f64::NAN),
            t0.elapsed()
        );
    }
    let r = run_mode(cfg, &data, cfg.mode, cfg.seed, bb)?;
    eprintln!("trained {} ({:.1?})", cfg.mode, t0.elapsed());
    checkpoint::save(
        ckpt,
        &Checkpoint {
            state: r.state.clone(),
            vocab,
        },
    )?;
    std::fs::write(log_path, format_log(&r.log)).map_err(|e| LabError::io(log_path, e))?;
    let mut s = format!(
        "mode={}\nseed={}\ntrainable_params={}\ntotal_params={}\ninitial_loss={}\nfinal_loss={}\n",
        r.mode,
        r.seed,
        r.params.trainable,
        r.params.total,
        r.initial_loss(),
        r.final_loss()
    );
    if let Some(d) = r.log.direct_check.iter().copied().reduce(f64::max) {
        s.push_str(&format!("direct_check_max={d}\n"));
    }
    s.push('\n');
    let row = Row {
        label: r.mode.to_string(),
        params: Some(r.params.trainable),
        report: r.report.clone(),
    };
    s.push_str(&format_table(std::slice::from_ref(&row)));
    s.push('\n');
    s.push_str(&format_report_block("dev", &r.report));
    w(out, &s)
}

pub fn eval_cmd(
    cfg: &RunConfig,
    ckpt: Option<&std::path::Path>,
    data: &std::path::Path,
    gold: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let examples = read_corpus(data)?;
    let grammar = Grammar::default();
    let (label, report) = if gold {
        let gens: Vec<Vec<String>> = examples.iter().map(|e| e.tgt.clone()).collect();
        let rc = ReportConfig {
            grammar: &grammar,
            template_height: cfg.template_height,
        };
        ("gold".to_string(), build_report(&gens, &examples, &rc)?)
    } else {
        let path = ckpt.ok_or_else(|| LabError::Config("--checkpoint is required without --gold".into()))?;
        let mut ck = checkpoint::load(path)?;
        let encoded = encode_all(&examples, &ck.vocab, ck.state.model_config().max_len)?;
        let ed = EvalData {
            examples: &examples,
            encoded: &encoded,
            vocab: &ck.vocab,
            grammar: &grammar,
        };
        let report = evaluate(&mut ck.state, &ed, &cfg.eval_config())?;
        (ck.state.mode.to_string(), report)
    };
    let row = Row {
        label: label.clone(),
        params: None,
        report: report.clone(),
    };
    let mut s = format_table(&[row]);
    s.push('\n');
    s.push_str(&format_report_block(&label, &report));
    w(out, &s)
}

pub fn compare_cmd(
    cfg: &RunConfig,
    dir: &DataDir,
    modes: &[Mode],
    seeds: &[u64],
    jobs: usize,
    out: &mut dyn Write,
) -> Result<()> {
    let (corpus, vocab) = dir.read()?;
    let data = Prepared::new(cfg, &corpus, &vocab)?;
    let t0 = Instant::now();
    let cmp = compare(cfg, &data, modes, seeds, jobs)?;
    eprintln!("compared {} cells ({:.1?})", cmp.cells.len(), t0.elapsed());
    let mut s = String::from("mode seed initial_loss final_loss loss_drop tma ted3 parse_failures\n");
    for c in &cmp.cells {
        s.push_str(&format!(
            "{} {} {:.4} {:.4} {:.4} {:.2} {:.3} {}\n",
            c.mode,
            c.seed,
            c.initial_loss(),
            c.final_loss(),
            c.loss_drop(),
            c.report.tma,
            c.report.ted3,
            c.report.n_parse_failures
        ));
    }
    s.push('\n');
    s.push_str(&format_table(&cmp.rows()));
    s.push('\n');
    for row in cmp.rows() {
        s.push_str(&format!("{}.trainable_params={}\n", row.label, row.params.unwrap_or(0)));
        s.push_str(&format_report_block(&row.label, &row.report));
    }
    w(out, &s)
}

pub fn parse_corruption(spec: &str) -> Result<(OpKind, f64)> {
    let bad = || LabError::Config(format!("corruption must be OP:FACTOR, got {spec:?}"));
    let (op, factor) = spec.split_once(':').ok_or_else(bad)?;
    let kind = OpKind::from_name(op).ok_or_else(|| LabError::Config(format!("unknown op {op:?}")))?;
    Ok((kind, factor.parse().map_err(|_| bad())?))
}

pub fn gradcheck_cmd(mode: Mode, seed: u64, eps: f64, corrupt: Option<&str>, out: &mut dyn Write) -> Result<()> {
    let opts = GradCheckOptions {
        eps,
        corrupt: corrupt.map(parse_corruption).transpose()?,
        ..GradCheckOptions::default()
    };
    let r = gradcheck_micro(mode, seed, &opts)?;
    let width = r.names.iter().map(String::len).max().unwrap_or(0);
    let mut s = format!("mode={mode}\ntensors={}\nentries={}\n", r.names.len(), r.report.entries);
    for (name, e) in r.names.iter().zip(&r.report.per_tensor) {
        s.push_str(&format!("{name:<width$}  {e:.3e}\n"));
    }
    let pass = r.report.max_rel_error < GRADCHECK_TOLERANCE;
    s.push_str(&format!(
        "max_rel_error={:.3e}\nresult={}\n",
        r.report.max_rel_error,
        if pass { "PASS" } else { "FAIL" }
    ));
    w(out, &s)?;
    if pass {
        Ok(())
    } else {
        Err(LabError::Check(format!(
            "gradient check failed for {mode}: max relative error {:.3e} ≥ {GRADCHECK_TOLERANCE:e}",
            r.report.max_rel_error
        )))
    }
}
