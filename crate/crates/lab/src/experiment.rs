//! Pretrain → tune → evaluate pipelines over a corpus.

use std::sync::Mutex;

use pip_core::data::{encode_all, Corpus, EncodedExample, Grammar, ParaphraseExample, Vocab};
use pip_core::metrics::MetricsReport;
use pip_core::model::{count_params, Mode, ModelConfig, ModelWeights, ParamCount};
use pip_core::trainer::{
    evaluate, pretrain_backbone, pretraining_sentences, train, EvalData, TrainLog, TrainState,
};

use crate::config::RunConfig;
use crate::error::{LabError, Result};
use crate::report::{mean_report, Row};

/// A corpus encoded for one model configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: ModelConfig,
    pub vocab: Vocab,
    pub grammar: Grammar,
    pub train: Vec<ParaphraseExample>,
    pub train_enc: Vec<EncodedExample>,
    pub dev: Vec<ParaphraseExample>,
    pub dev_enc: Vec<EncodedExample>,
}

impl Prepared {
    pub fn new(cfg: &RunConfig, corpus: &Corpus, vocab: &Vocab) -> Result<Self> {
        let model = cfg.model_config(vocab.len())?;
        if corpus.train.is_empty() {
            return Err(LabError::Config("training split is empty".into()));
        }
        Ok(Prepared {
            train_enc: encode_all(&corpus.train, vocab, model.max_len)?,
            dev_enc: encode_all(&corpus.dev, vocab, model.max_len)?,
            model,
            vocab: vocab.clone(),
            grammar: Grammar::default(),
            train: corpus.train.clone(),
            dev: corpus.dev.clone(),
        })
    }

    pub fn dev_data(&self) -> EvalData<'_> {
        EvalData {
            examples: &self.dev,
            encoded: &self.dev_enc,
            vocab: &self.vocab,
            grammar: &self.grammar,
        }
    }
}

/// The backbone every mode of a seed starts from: denoising-pretrained on the
/// training sentences, or freshly initialized when pretraining is disabled.
pub fn backbone(cfg: &RunConfig, data: &Prepared, seed: u64) -> Result<(ModelWeights, Option<TrainLog>)> {
    if cfg.pretrain_epochs == 0 {
        return Ok((ModelWeights::init(&data.model, seed)?, None));
    }
    let mut sentences = pretraining_sentences(&data.train, &data.vocab);
    if cfg.pretrain_parses {
        sentences.extend(data.train_enc.iter().map(|e| e.parse.clone()));
    }
    let (w, log) = pretrain_backbone(&data.model, &cfg.pretrain_config()?, &sentences, seed)?;
    Ok((w, Some(log)))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub mode: Mode,
    pub seed: u64,
    pub state: TrainState,
    pub log: TrainLog,
    /// Final dev evaluation.
    pub report: MetricsReport,
    pub params: ParamCount,
}

impl RunOutcome {
    /// LM loss of the very first optimizer step, before any update.
    pub fn initial_loss(&self) -> f64 {
        self.log.steps.first().map_or(f64::NAN, |s| s.lm_loss)
    }

    /// Mean LM loss over the last epoch.
    pub fn final_loss(&self) -> f64 {
        let last = self.log.steps.last().map_or(0, |s| s.epoch);
        self.log.epoch_loss(last).unwrap_or(f64::NAN)
    }

    /// Relative fall from the initial to the final loss.
    pub fn loss_drop(&self) -> f64 {
        1.0 - self.final_loss() / self.initial_loss()
    }
}

/// Tunes `mode` from `backbone` and evaluates on dev.
pub fn run_mode(
    cfg: &RunConfig,
    data: &Prepared,
    mode: Mode,
    seed: u64,
    backbone: ModelWeights,
) -> Result<RunOutcome> {
    let tc = cfg.train_config(mode, seed)?;
    let mut state = TrainState::with_backbone(backbone, &tc)?;
    let dev = data.dev_data();
    let log = train(&tc, &mut state, &data.train_enc, (!data.dev.is_empty()).then_some(&dev))?;
    let report = evaluate(&mut state, &dev, &tc.eval)?;
    let params = count_params(&state.weights, state.bank.as_ref(), state.instructor.as_ref(), mode);
    Ok(RunOutcome {
        mode,
        seed,
        state,
        log,
        report,
        params,
    })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    /// Seed-major, then in `modes` order.
    pub cells: Vec<RunOutcome>,
}

impl Comparison {
    pub fn cells_for(&self, mode: Mode) -> impl Iterator<Item = &RunOutcome> {
        self.cells.iter().filter(move |c| c.mode == mode)
    }

    pub fn mean(&self, mode: Mode) -> Option<MetricsReport> {
        mean_report(&self.cells_for(mode).map(|c| c.report.clone()).collect::<Vec<_>>())
    }

    /// One row per mode with mean metrics and the trainable-parameter count.
    pub fn rows(&self) -> Vec<Row> {
        self.modes
            .iter()
            .filter_map(|&m| {
                let report = self.mean(m)?;
                let params = self.cells_for(m).next().map(|c| c.params.trainable);
                Some(Row {
                    label: m.to_string(),
                    params,
                    report,
                })
            })
            .collect()
    }
}

/// Trains every (mode, seed) cell. Seeds run on up to `jobs` threads; each
/// seed pretrains its backbone once and shares it across its modes.
pub fn compare(cfg: &RunConfig, data: &Prepared, modes: &[Mode], seeds: &[u64], jobs: usize) -> Result<Comparison> {
    if modes.len() < 2 {
        return Err(LabError::Config("a comparison needs at least two modes".into()));
    }
    if seeds.is_empty() {
        return Err(LabError::Config("a comparison needs at least one seed".into()));
    }
    let run_seed = |seed: u64| -> Result<Vec<RunOutcome>> {
        let (bb, _) = backbone(cfg, data, seed)?;
        modes
            .iter()
            .map(|&m| run_mode(cfg, data, m, seed, bb.clone()))
            .collect()
    };
    let slots: Vec<Mutex<Option<Result<Vec<RunOutcome>>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, seeds.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("queue lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&seed) = seeds.get(i) else { break };
                *slots[i].lock().expect("slot lock") = Some(run_seed(seed));
            });
        }
    });
    let mut cells = Vec::new();
    for slot in slots {
        cells.extend(slot.into_inner().expect("slot lock").expect("every seed ran")?);
    }
    Ok(Comparison {
        modes: modes.to_vec(),
        seeds: seeds.to_vec(),
        cells,
    })
}
