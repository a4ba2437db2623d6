//! Conditional task-generation corpus construction.
//!
//! Each source record is paired with one meta-template for its dataset. The
//! meta-template's input template renders the context passage; its output
//! template renders `instruction ||| response`. The generator learns to map
//!
//! ```text
//! <|tasktype|>
//! yes-no question answering
//! <|context|>
//! {passage}
//! ```
//!
//! to
//!
//! ```text
//! {instruction with the passage replaced by {{context}}}
//! <|pipe|>
//! {response}
//! ```

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset_io::{InstructionPair, SourceRecord};
use crate::registry::{MetaTemplate, TaskType};
use crate::template::{render, RenderContext, RenderError, Value};

pub const TASK_TYPE_TAG: &str = "<|tasktype|>";
pub const CONTEXT_TAG: &str = "<|context|>";
pub const PIPE: &str = "<|pipe|>";
pub const CONTEXT_PLACEHOLDER: &str = "{{context}}";
/// Separates instruction from response in a rendered output template.
pub const TARGET_SEPARATOR: &str = "|||";
pub const DEFAULT_CAP: usize = 100_000;
pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FramingError {
    #[error("instruction does not contain the `{{{{context}}}}` placeholder")]
    MissingContextPlaceholder,
    #[error("{0} contains a `<|pipe|>` line")]
    EmbeddedDelimiter(&'static str),
}

/// The generator's input framing: task-type header, then the context.
pub fn generator_input(task_type: TaskType, context: &str) -> String {
    format!("{TASK_TYPE_TAG}\n{}\n{CONTEXT_TAG}\n{context}", task_type.name())
}

pub(crate) fn has_pipe_line(text: &str) -> bool {
    text.lines().any(|l| l.trim() == PIPE)
}

/// Frames one (instruction, response) example for generator training.
pub fn serialize_generator_pair(
    task_type: TaskType,
    context: &str,
    instruction: &str,
    response: &str,
) -> Result<InstructionPair, FramingError> {
    if !instruction.contains(CONTEXT_PLACEHOLDER) {
        return Err(FramingError::MissingContextPlaceholder);
    }
    frame(task_type, context, instruction, response)
}

fn frame(task_type: TaskType, context: &str, instruction: &str, response: &str) -> Result<InstructionPair, FramingError> {
    if has_pipe_line(instruction) {
        return Err(FramingError::EmbeddedDelimiter("instruction"));
    }
    if has_pipe_line(response) {
        return Err(FramingError::EmbeddedDelimiter("response"));
    }
    let mut meta = BTreeMap::new();
    meta.insert("task_type".to_owned(), task_type.name().to_owned());
    Ok(InstructionPair {
        input: generator_input(task_type, context),
        output: format!("{instruction}\n{PIPE}\n{response}"),
        meta,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetColumns {
    pub name: String,
    /// Template variable -> source column.
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub per_dataset_cap: usize,
    pub seed: u64,
    /// When non-empty, only these datasets are built, with their column
    /// mappings applied.
    #[serde(default)]
    pub datasets: Vec<DatasetColumns>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            per_dataset_cap: DEFAULT_CAP,
            seed: DEFAULT_SEED,
            datasets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("per_dataset_cap must be at least 1")]
    InvalidCap,
    #[error("no meta-template for dataset `{0}`")]
    NoTemplateForDataset(String),
    #[error("{dataset} record {index} ({template}): {source}")]
    Render {
        dataset: String,
        index: usize,
        template: String,
        #[source]
        source: RenderError,
    },
    #[error("{dataset} record {index} ({template}): output has no `|||` between instruction and response")]
    MissingTargetSeparator { dataset: String, index: usize, template: String },
    #[error("{dataset} record {index} ({template}): empty {side}")]
    EmptySide {
        dataset: String,
        index: usize,
        template: String,
        side: &'static str,
    },
    #[error("{dataset} record {index} ({template}): {source}")]
    Framing {
        dataset: String,
        index: usize,
        template: String,
        #[source]
        source: FramingError,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub records: usize,
    pub emitted: usize,
    /// Records whose output template rendered to nothing.
    pub skipped: usize,
}

/// Randomness for one record, independent of every other record.
pub(crate) fn record_rng(seed: u64, dataset: &str, index: usize) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((dataset.len() as u64).to_le_bytes());
    hasher.update(dataset.as_bytes());
    hasher.update((index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Lazily builds the corpus from a record stream. Records past the cap for
/// their dataset are consumed and dropped.
pub struct CorpusBuilder<'r, I> {
    records: I,
    by_dataset: HashMap<&'r str, Vec<&'r MetaTemplate>>,
    columns: HashMap<String, BTreeMap<String, String>>,
    cfg: BuildConfig,
    counts: BTreeMap<String, DatasetCounts>,
}

pub fn build_corpus<'r, I>(records: I, registry: &'r [MetaTemplate], cfg: BuildConfig) -> Result<CorpusBuilder<'r, I::IntoIter>, BuildError>
where
    I: IntoIterator<Item = SourceRecord>,
{
    if cfg.per_dataset_cap == 0 {
        return Err(BuildError::InvalidCap);
    }
    let mut by_dataset: HashMap<&str, Vec<&MetaTemplate>> = HashMap::new();
    for m in registry {
        by_dataset.entry(m.dataset.as_str()).or_default().push(m);
    }
    let columns = cfg.datasets.iter().map(|d| (d.name.clone(), d.columns.clone())).collect();
    Ok(CorpusBuilder {
        records: records.into_iter(),
        by_dataset,
        columns,
        cfg,
        counts: BTreeMap::new(),
    })
}

impl<'r, I> CorpusBuilder<'r, I> {
    pub fn counts(&self) -> &BTreeMap<String, DatasetCounts> {
        &self.counts
    }

    /// `Ok(None)` when the output template renders blank for this record,
    /// which templates use to opt records out.
    fn build_one(&self, record: &SourceRecord, index: usize) -> Result<Option<InstructionPair>, BuildError> {
        let dataset = record.dataset.as_str();
        let candidates = self
            .by_dataset
            .get(dataset)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| BuildError::NoTemplateForDataset(dataset.to_owned()))?;
        let mut rng = record_rng(self.cfg.seed, dataset, index);
        let meta_template = candidates[rng.random_range(0..candidates.len())];
        let render_seed = rng.next_u64();

        let mut ctx = RenderContext::from_json_object(&record.fields, render_seed);
        if let Some(mapping) = self.columns.get(dataset) {
            for (var, column) in mapping {
                if let Some(v) = record.fields.get(column) {
                    ctx.bind(var.clone(), Value::from(v));
                }
            }
        }

        let template_id = meta_template.id.clone();
        let err_ctx = |source| BuildError::Render {
            dataset: dataset.to_owned(),
            index,
            template: template_id.clone(),
            source,
        };
        let context = render(&meta_template.input_template, &ctx).map_err(err_ctx)?;
        let rendered = render(&meta_template.output_template, &ctx).map_err(err_ctx)?;
        if rendered.trim().is_empty() {
            return Ok(None);
        }

        let (instruction, response) =
            rendered
                .split_once(TARGET_SEPARATOR)
                .ok_or_else(|| BuildError::MissingTargetSeparator {
                    dataset: dataset.to_owned(),
                    index,
                    template: template_id.clone(),
                })?;
        let (instruction, response) = (instruction.trim(), response.trim());
        let empty = |side| BuildError::EmptySide {
            dataset: dataset.to_owned(),
            index,
            template: template_id.clone(),
            side,
        };
        if context.trim().is_empty() {
            return Err(empty("context"));
        }
        if instruction.is_empty() {
            return Err(empty("instruction"));
        }
        if response.is_empty() {
            return Err(empty("response"));
        }

        let instruction = instruction.replace(context.as_str(), CONTEXT_PLACEHOLDER);
        let framed = if meta_template.context_free {
            frame(meta_template.task_type, &context, &instruction, response)
        } else {
            serialize_generator_pair(meta_template.task_type, &context, &instruction, response)
        };
        let mut pair = framed.map_err(|source| BuildError::Framing {
            dataset: dataset.to_owned(),
            index,
            template: template_id.clone(),
            source,
        })?;
        pair.meta.insert("dataset".to_owned(), dataset.to_owned());
        pair.meta.insert("meta_template".to_owned(), template_id);
        pair.meta.insert("record_index".to_owned(), index.to_string());
        Ok(Some(pair))
    }
}

impl<'r, I> Iterator for CorpusBuilder<'r, I>
where
    I: Iterator<Item = SourceRecord>,
{
    type Item = Result<InstructionPair, BuildError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let record = self.records.next()?;
            if !self.columns.is_empty() && !self.columns.contains_key(&record.dataset) {
                continue;
            }
            let counts = self.counts.entry(record.dataset.clone()).or_default();
            let index = counts.records;
            counts.records += 1;
            if index >= self.cfg.per_dataset_cap {
                continue;
            }
            let result = self.build_one(&record, index);
            let counts = self.counts.get_mut(&record.dataset).expect("entry created above");
            return match result {
                Ok(Some(pair)) => {
                    counts.emitted += 1;
                    Some(Ok(pair))
                }
                Ok(None) => {
                    counts.skipped += 1;
                    continue;
                }
                Err(e) => Some(Err(e)),
            };
        }
    }
}
