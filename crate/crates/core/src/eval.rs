//! Zero-shot evaluation over five prompt templates.
//!
//! A task is described by a TOML file:
//!
//! ```toml
//! name = "pubmedqa"
//! kind = "ranked_classification"      # or "extractive_generation"
//! templates = ["t1.tmpl", "t2.tmpl", "t3.tmpl", "t4.tmpl", "t5.tmpl"]
//! test_file = "test.jsonl"
//! gold_column = "final_decision"      # dotted path into each record
//! f1 = "macro"                        # or "micro"; classification only
//! length_normalize = false
//!
//! [label_map]
//! yes = 0
//! no = 1
//! maybe = 2
//! ```
//!
//! Paths are relative to the config file. Template ids are file stems.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, CompletionClient, SamplingParams};
use crate::ctga::{record_rng, DEFAULT_SEED};
use crate::metrics::{macro_f1, mean_stderr, micro_f1, squad_f1};
use crate::template::{load_template_file, render, render_choices, RenderContext, RenderError, Template, TemplateFileError};

pub const TEMPLATE_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    RankedClassification,
    ExtractiveGeneration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Variant {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub kind: TaskKind,
    pub templates: Vec<PathBuf>,
    pub test_file: PathBuf,
    pub gold_column: String,
    #[serde(default)]
    pub label_map: BTreeMap<String, usize>,
    #[serde(default)]
    pub f1: F1Variant,
    #[serde(default)]
    pub length_normalize: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid task config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("expected exactly {TEMPLATE_COUNT} templates, found {0}")]
    TemplateCount(usize),
    #[error("template `{0}` has no answer choices")]
    MissingChoices(String),
    #[error(transparent)]
    Template(#[from] TemplateFileError),
    #[error("{path} line {line}: {message}")]
    TestRecord { path: PathBuf, line: usize, message: String },
    #[error("record {index}: gold {message}")]
    Gold { index: usize, message: String },
    #[error("test set is empty")]
    EmptyTestSet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Label(usize),
    Answers(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct NamedTemplate {
    pub id: String,
    pub template: Template,
}

#[derive(Debug, Clone)]
pub struct EvalTask {
    pub name: String,
    pub kind: TaskKind,
    pub templates: Vec<NamedTemplate>,
    pub records: Vec<serde_json::Map<String, serde_json::Value>>,
    pub golds: Vec<Gold>,
    pub f1: F1Variant,
    pub length_normalize: bool,
    pub seed: u64,
}

fn lookup<'v>(record: &'v serde_json::Map<String, serde_json::Value>, path: &str) -> Option<&'v serde_json::Value> {
    let mut parts = path.split('.');
    let mut cur = record.get(parts.next()?)?;
    for part in parts {
        cur = match cur {
            serde_json::Value::Object(m) => m.get(part)?,
            serde_json::Value::Array(a) => a.get(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

fn gold_for(kind: TaskKind, value: &serde_json::Value, label_map: &BTreeMap<String, usize>) -> Result<Gold, String> {
    use serde_json::Value as J;
    match kind {
        TaskKind::RankedClassification => match value {
            J::String(s) => label_map
                .get(s)
                .or_else(|| label_map.iter().find(|(k, _)| k.eq_ignore_ascii_case(s.trim())).map(|(_, v)| v))
                .map(|&i| Gold::Label(i))
                .ok_or_else(|| format!("`{s}` is not in label_map")),
            J::Number(n) => n
                .as_u64()
                .map(|i| Gold::Label(i as usize))
                .ok_or_else(|| format!("{n} is not a label index")),
            other => Err(format!("{other} is not a label")),
        },
        TaskKind::ExtractiveGeneration => match value {
            J::String(s) => Ok(Gold::Answers(vec![s.clone()])),
            J::Array(items) if !items.is_empty() => items
                .iter()
                .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| format!("{v} is not a string answer")))
                .collect::<Result<_, _>>()
                .map(Gold::Answers),
            other => Err(format!("{other} is not an answer list")),
        },
    }
}

/// Reads a JSON-lines test set. Lines shaped like `{"dataset", "fields"}`
/// are unwrapped to their fields.
pub fn read_test_records(path: &Path) -> Result<Vec<serde_json::Map<String, serde_json::Value>>, EvalError> {
    let file = File::open(path).map_err(|e| EvalError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let bad = |message: String| EvalError::TestRecord {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if obj.len() == 2 && obj.contains_key("dataset") && obj.get("fields").is_some_and(|f| f.is_object()) {
            if let Some(serde_json::Value::Object(fields)) = obj.remove("fields") {
                obj = fields;
            }
        }
        out.push(obj);
    }
    Ok(out)
}

impl EvalTask {
    pub fn new(
        name: impl Into<String>,
        kind: TaskKind,
        templates: Vec<NamedTemplate>,
        records: Vec<serde_json::Map<String, serde_json::Value>>,
        golds: Vec<Gold>,
    ) -> Result<Self, EvalError> {
        if templates.len() != TEMPLATE_COUNT {
            return Err(EvalError::TemplateCount(templates.len()));
        }
        if kind == TaskKind::RankedClassification {
            if let Some(t) = templates.iter().find(|t| !t.template.has_choices()) {
                return Err(EvalError::MissingChoices(t.id.clone()));
            }
        }
        if records.is_empty() {
            return Err(EvalError::EmptyTestSet);
        }
        if golds.len() != records.len() {
            return Err(EvalError::Gold {
                index: golds.len().min(records.len()),
                message: format!("count {} differs from record count {}", golds.len(), records.len()),
            });
        }
        Ok(EvalTask {
            name: name.into(),
            kind,
            templates,
            records,
            golds,
            f1: F1Variant::default(),
            length_normalize: false,
            seed: DEFAULT_SEED,
        })
    }

    pub fn load(config_path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let config_path = config_path.as_ref();
        let text = std::fs::read_to_string(config_path).map_err(|e| EvalError::Io {
            path: config_path.to_owned(),
            message: e.to_string(),
        })?;
        let cfg: TaskConfig = toml::from_str(&text).map_err(|e| EvalError::Config {
            path: config_path.to_owned(),
            message: e.to_string(),
        })?;
        let base = config_path.parent().unwrap_or(Path::new("."));
        if cfg.templates.len() != TEMPLATE_COUNT {
            return Err(EvalError::TemplateCount(cfg.templates.len()));
        }
        let templates = cfg
            .templates
            .iter()
            .map(|p| {
                let path = base.join(p);
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("template").to_owned();
                Ok(NamedTemplate {
                    id,
                    template: load_template_file(&path)?,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let records = read_test_records(&base.join(&cfg.test_file))?;
        let golds = records
            .iter()
            .enumerate()
            .map(|(index, r)| {
                let value = lookup(r, &cfg.gold_column).ok_or_else(|| EvalError::Gold {
                    index,
                    message: format!("column `{}` is missing", cfg.gold_column),
                })?;
                gold_for(cfg.kind, value, &cfg.label_map).map_err(|message| EvalError::Gold { index, message })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut task = EvalTask::new(cfg.name, cfg.kind, templates, records, golds)?;
        task.f1 = cfg.f1;
        task.length_normalize = cfg.length_normalize;
        task.seed = cfg.seed.unwrap_or(DEFAULT_SEED);
        Ok(task)
    }

    pub fn metric_name(&self) -> &'static str {
        match (self.kind, self.f1) {
            (TaskKind::ExtractiveGeneration, _) => "squad_f1",
            (TaskKind::RankedClassification, F1Variant::Macro) => "macro_f1",
            (TaskKind::RankedClassification, F1Variant::Micro) => "micro_f1",
        }
    }

    fn context(&self, template: &NamedTemplate, index: usize) -> RenderContext {
        let seed = record_rng(self.seed, &template.id, index).next_u64();
        RenderContext::from_json_object(&self.records[index], seed)
    }
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("template has no answer choices")]
    NoChoices,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if s <= scores[b] => {}
            _ if s.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Picks the answer choice with the highest summed log-likelihood as a
/// continuation of the rendered prompt.
pub fn ranked_classify(
    template: &Template,
    ctx: &RenderContext,
    client: &CompletionClient,
    length_normalize: bool,
) -> Result<usize, PredictError> {
    let prompt = render(template, ctx)?;
    let choices = render_choices(template, ctx)?;
    if choices.is_empty() {
        return Err(PredictError::NoChoices);
    }
    let prompt = prompt.trim_end();
    let mut scores = Vec::with_capacity(choices.len());
    for choice in &choices {
        let s = client.score_continuation_detailed(prompt, &format!(" {choice}"))?;
        scores.push(if length_normalize && s.tokens > 0 {
            s.total / s.tokens as f64
        } else {
            s.total
        });
    }
    Ok(argmax_lowest(&scores).unwrap_or(0))
}

pub fn extractive_generate(template: &Template, ctx: &RenderContext, client: &CompletionClient) -> Result<String, PredictError> {
    let prompt = render(template, ctx)?;
    let completion = client.complete(&prompt, &SamplingParams::greedy_extraction())?;
    Ok(completion.text.trim().to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateScore {
    pub id: String,
    /// Percentage in [0, 100]. Absent when every record errored.
    pub score: Option<f64>,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub metric: String,
    pub per_template: Vec<TemplateScore>,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub n_examples: usize,
    pub valid: bool,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let scores: Vec<String> = self
            .per_template
            .iter()
            .map(|t| match t.score {
                Some(s) => format!("{}={s:.1}", t.id),
                None => format!("{}=n/a", t.id),
            })
            .collect();
        match (self.mean, self.stderr) {
            (Some(m), Some(s)) => format!("{} {}: {m:.1} ± {s:.1} ({}; n={})", self.task, self.metric, scores.join(" "), self.n_examples),
            _ => format!("{} {}: invalid ({}; n={})", self.task, self.metric, scores.join(" "), self.n_examples),
        }
    }
}

enum Prediction {
    Label(Option<usize>),
    Text(Option<String>),
}

fn score_template(task: &EvalTask, predictions: &[Prediction], n_choices: usize) -> f64 {
    match task.kind {
        TaskKind::RankedClassification => {
            let preds: Vec<usize> = predictions
                .iter()
                .map(|p| match p {
                    Prediction::Label(Some(i)) => *i,
                    _ => usize::MAX,
                })
                .collect();
            let golds: Vec<usize> = task
                .golds
                .iter()
                .map(|g| match g {
                    Gold::Label(i) => *i,
                    Gold::Answers(_) => usize::MAX,
                })
                .collect();
            let n_labels = golds
                .iter()
                .chain(preds.iter())
                .filter(|&&i| i != usize::MAX)
                .max()
                .map_or(1, |m| m + 1)
                .max(n_choices);
            let f = match task.f1 {
                F1Variant::Macro => macro_f1(&preds, &golds, n_labels),
                F1Variant::Micro => micro_f1(&preds, &golds, n_labels),
            };
            f.unwrap_or(0.0) * 100.0
        }
        TaskKind::ExtractiveGeneration => {
            let total: f64 = predictions
                .iter()
                .zip(&task.golds)
                .map(|(p, g)| match (p, g) {
                    (Prediction::Text(Some(pred)), Gold::Answers(golds)) => squad_f1(pred, golds).unwrap_or(0.0),
                    _ => 0.0,
                })
                .sum();
            total / predictions.len() as f64 * 100.0
        }
    }
}

/// Scores every record under each template and aggregates. Errored records
/// count as wrong; a template with no successful record invalidates the
/// report.
pub fn evaluate(task: &EvalTask, client: &CompletionClient) -> EvalReport {
    let indices: Vec<usize> = (0..task.records.len()).collect();
    let mut per_template = Vec::with_capacity(task.templates.len());
    for template in &task.templates {
        let predictions: Vec<Prediction> = client
            .batch(&indices, |client, &i| {
                let ctx = task.context(template, i);
                Ok(match task.kind {
                    TaskKind::RankedClassification => ranked_classify(&template.template, &ctx, client, task.length_normalize).map(|p| Prediction::Label(Some(p))),
                    TaskKind::ExtractiveGeneration => extractive_generate(&template.template, &ctx, client).map(|p| Prediction::Text(Some(p))),
                })
            })
            .into_iter()
            .enumerate()
            .map(|(i, r)| match r {
                Ok(Ok(p)) => p,
                Ok(Err(e)) => {
                    log::warn!("{} {} record {i}: {e}", task.name, template.id);
                    match task.kind {
                        TaskKind::RankedClassification => Prediction::Label(None),
                        TaskKind::ExtractiveGeneration => Prediction::Text(None),
                    }
                }
                Err(e) => unreachable!("predictions never fail at the batch level: {e}"),
            })
            .collect();
        let errors = predictions
            .iter()
            .filter(|p| matches!(p, Prediction::Label(None) | Prediction::Text(None)))
            .count();
        let n_choices = render_choices(&template.template, &task.context(template, 0)).map_or(0, |c| c.len());
        let score = (errors < predictions.len()).then(|| score_template(task, &predictions, n_choices));
        per_template.push(TemplateScore {
            id: template.id.clone(),
            score,
            errors,
        });
    }
    let scores: Option<Vec<f64>> = per_template.iter().map(|t| t.score).collect();
    let (mean, stderr) = match scores.as_deref().map(mean_stderr) {
        Some(Ok((m, s))) => (Some(m), Some(s)),
        _ => (None, None),
    };
    EvalReport {
        task: task.name.clone(),
        metric: task.metric_name().to_owned(),
        valid: mean.is_some(),
        per_template,
        mean,
        stderr,
        n_examples: task.records.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_lowest(&[-3.0, -1.0, -7.0]), Some(1));
        assert_eq!(argmax_lowest(&[-2.0, -2.0, -2.0]), Some(0));
        assert_eq!(argmax_lowest(&[-5.0, -1.0, -1.0]), Some(1));
        assert_eq!(argmax_lowest(&[f64::NAN, -1.0]), Some(1));
        assert_eq!(argmax_lowest(&[]), None);
    }

    #[test]
    fn gold_resolution() {
        let map: BTreeMap<String, usize> = [("yes".to_string(), 0), ("no".to_string(), 1)].into();
        let j = |s: &str| serde_json::from_str::<serde_json::Value>(s).unwrap();
        assert_eq!(gold_for(TaskKind::RankedClassification, &j("\"no\""), &map), Ok(Gold::Label(1)));
        assert_eq!(gold_for(TaskKind::RankedClassification, &j("\"YES\""), &map), Ok(Gold::Label(0)));
        assert_eq!(gold_for(TaskKind::RankedClassification, &j("2"), &map), Ok(Gold::Label(2)));
        assert!(gold_for(TaskKind::RankedClassification, &j("\"perhaps\""), &map).is_err());
        assert_eq!(
            gold_for(TaskKind::ExtractiveGeneration, &j("[\"a\",\"b\"]"), &map),
            Ok(Gold::Answers(vec!["a".into(), "b".into()]))
        );
        assert!(gold_for(TaskKind::ExtractiveGeneration, &j("[]"), &map).is_err());
    }

    #[test]
    fn dotted_lookup() {
        let r: serde_json::Map<String, serde_json::Value> = serde_json::from_str(r#"{"answers":{"text":["x"]},"l":[1,2]}"#).unwrap();
        assert_eq!(lookup(&r, "answers.text").unwrap()[0], "x");
        assert_eq!(lookup(&r, "l.1").unwrap(), 2);
        assert!(lookup(&r, "answers.nope").is_none());
    }

    #[test]
    fn report_summary_one_decimal() {
        let r = EvalReport {
            task: "t".into(),
            metric: "macro_f1".into(),
            per_template: vec![TemplateScore {
                id: "t1".into(),
                score: Some(66.666),
                errors: 0,
            }],
            mean: Some(66.666),
            stderr: Some(0.0),
            n_examples: 3,
            valid: true,
        };
        assert_eq!(r.summary(), "t macro_f1: 66.7 ± 0.0 (t1=66.7; n=3)");
    }
}
