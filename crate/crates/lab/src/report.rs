//! Training logs and metric reports as text.

use std::collections::BTreeMap;

use pip_core::metrics::MetricsReport;
use pip_core::trainer::{EvalRecord, StepRecord, TrainLog};

use crate::error::{LabError, Result};

/// Metric column headers, in table order.
pub const COLUMNS: [&str; 6] = ["BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "TMA", "TED-3"];

fn report_fields(r: &MetricsReport) -> [(&'static str, String); 8] {
    [
        ("bleu", r.bleu.to_string()),
        ("rouge1", r.rouge1.to_string()),
        ("rouge2", r.rouge2.to_string()),
        ("rouge_l", r.rouge_l.to_string()),
        ("tma", r.tma.to_string()),
        ("ted3", r.ted3.to_string()),
        ("n_examples", r.n_examples.to_string()),
        ("n_parse_failures", r.n_parse_failures.to_string()),
    ]
}

fn join_fields<'a>(fields: impl IntoIterator<Item = (&'a str, String)>) -> String {
    fields
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// One `key=value` record per line: `step …` for optimizer steps, `eval …`
/// for dev evaluations and `direct_check …` for pip-direct verification.
pub fn format_log(log: &TrainLog) -> String {
    let mut out = String::new();
    for s in &log.steps {
        out.push_str("step ");
        out.push_str(&join_fields([
            ("step", s.step.to_string()),
            ("epoch", s.epoch.to_string()),
            ("lr", s.lr.to_string()),
            ("lm_loss", s.lm_loss.to_string()),
            ("pel_loss", s.pel_loss.to_string()),
            ("combined_loss", s.combined_loss.to_string()),
            ("grad_norm", s.grad_norm.to_string()),
        ]));
        out.push('\n');
    }
    for e in &log.evals {
        out.push_str("eval ");
        out.push_str(&join_fields(
            [("step", e.step.to_string()), ("epoch", e.epoch.to_string())]
                .into_iter()
                .chain(report_fields(&e.report)),
        ));
        out.push('\n');
    }
    for (i, d) in log.direct_check.iter().enumerate() {
        out.push_str(&format!("direct_check batch={} max_abs_diff={d}\n", i + 1));
    }
    out
}

struct Record<'a> {
    line: usize,
    fields: BTreeMap<&'a str, &'a str>,
}

impl Record<'_> {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .fields
            .get(key)
            .ok_or_else(|| LabError::Config(format!("log line {}: missing {key}", self.line)))?;
        v.parse()
            .map_err(|_| LabError::Config(format!("log line {}: bad value {v:?} for {key}", self.line)))
    }

    fn report(&self) -> Result<MetricsReport> {
        Ok(MetricsReport {
            bleu: self.get("bleu")?,
            rouge1: self.get("rouge1")?,
            rouge2: self.get("rouge2")?,
            rouge_l: self.get("rouge_l")?,
            tma: self.get("tma")?,
            ted3: self.get("ted3")?,
            n_examples: self.get("n_examples")?,
            n_parse_failures: self.get("n_parse_failures")?,
        })
    }
}

/// Inverse of [`format_log`].
pub fn parse_log(text: &str) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split(' ');
        let kind = parts.next().unwrap_or("");
        let mut fields = BTreeMap::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("log line {}: expected key=value, got {p:?}", i + 1)))?;
            fields.insert(k, v);
        }
        let r = Record { line: i + 1, fields };
        match kind {
            "step" => log.steps.push(StepRecord {
                step: r.get("step")?,
                epoch: r.get("epoch")?,
                lr: r.get("lr")?,
                lm_loss: r.get("lm_loss")?,
                pel_loss: r.get("pel_loss")?,
                combined_loss: r.get("combined_loss")?,
                grad_norm: r.get("grad_norm")?,
            }),
            "eval" => log.evals.push(EvalRecord {
                step: r.get("step")?,
                epoch: r.get("epoch")?,
                report: r.report()?,
            }),
            "direct_check" => log.direct_check.push(r.get("max_abs_diff")?),
            other => return Err(LabError::Config(format!("log line {}: unknown record {other:?}", i + 1))),
        }
    }
    Ok(log)
}

/// Machine-readable block: one `label.key=value` line per field.
pub fn format_report_block(label: &str, r: &MetricsReport) -> String {
    report_fields(r)
        .iter()
        .map(|(k, v)| format!("{label}.{k}={v}\n"))
        .collect()
}

/// One row of an aligned metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub params: Option<usize>,
    pub report: MetricsReport,
}

fn cells(r: &MetricsReport) -> [String; 6] {
    [
        format!("{:.2}", 100.0 * r.bleu),
        format!("{:.2}", 100.0 * r.rouge1),
        format!("{:.2}", 100.0 * r.rouge2),
        format!("{:.2}", 100.0 * r.rouge_l),
        format!("{:.2}", r.tma),
        format!("{:.3}", r.ted3),
    ]
}

/// Aligned plain-text table. BLEU and ROUGE are shown as percentages, TMA in
/// percent, TED-3 as a mean distance. A `# Params` column appears when any row
/// carries a parameter count.
pub fn format_table(rows: &[Row]) -> String {
    let with_params = rows.iter().any(|r| r.params.is_some());
    let mut header: Vec<String> = vec!["Model".into()];
    if with_params {
        header.push("# Params".into());
    }
    header.extend(COLUMNS.iter().map(|c| c.to_string()));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.label.clone()];
            if with_params {
                line.push(r.params.map_or("-".into(), |p| p.to_string()));
            }
            line.extend(cells(&r.report));
            line
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&body)
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let render = |line: &[String]| -> String {
        let mut s = String::new();
        for (c, cell) in line.iter().enumerate() {
            if c == 0 {
                s.push_str(&format!("{cell:<w$}", w = widths[0]));
            } else {
                s.push_str(&format!("  {cell:>w$}", w = widths[c]));
            }
        }
        s.push('\n');
        s
    };
    let mut out = render(&header);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for line in &body {
        out.push_str(&render(line));
    }
    out
}

/// Field-wise mean of reports; counts are summed.
pub fn mean_report(reports: &[MetricsReport]) -> Option<MetricsReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(MetricsReport {
        bleu: mean(|r| r.bleu),
        rouge1: mean(|r| r.rouge1),
        rouge2: mean(|r| r.rouge2),
        rouge_l: mean(|r| r.rouge_l),
        tma: mean(|r| r.tma),
        ted3: mean(|r| r.ted3),
        n_examples: reports.iter().map(|r| r.n_examples).sum(),
        n_parse_failures: reports.iter().map(|r| r.n_parse_failures).sum(),
    })
}
