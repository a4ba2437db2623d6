//! Task-type vocabulary and the meta-template catalog.
//!
//! The catalog is a JSON-lines manifest, one meta-template per line:
//!
//! ```text
//! {"id": "squad-exqa-1", "dataset": "squad", "task_type": "extractive question answering",
//!  "context_field": "context", "input_template": "templates/squad/exqa-1.input.tmpl",
//!  "output_template": "templates/squad/exqa-1.output.tmpl"}
//! ```
//!
//! Template paths are relative to the manifest's directory. An optional
//! boolean `context_free` (default `false`) exempts an entry from the
//! `{{context}}` placeholder requirement. Blank lines and lines starting with
//! `#` are ignored.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::{load_template_file, Template, TemplateFileError};

macro_rules! task_types {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// The closed set of task attributes a generator is conditioned on.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum TaskType {
            $($variant),+
        }

        impl TaskType {
            pub const ALL: [TaskType; 16] = [$(TaskType::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(TaskType::$variant => $name),+
                }
            }
        }
    };
}

task_types! {
    Summarization => "summarization",
    Sentiment => "sentiment",
    MultipleChoiceQa => "multiple-choice question answering",
    ExtractiveQa => "extractive question answering",
    TopicClassification => "topic classification",
    NaturalLanguageInference => "natural language inference",
    QuestionGeneration => "question generation",
    TextGeneration => "text generation",
    QaWithoutChoices => "question answering without choices",
    ParaphraseIdentification => "paraphrase identification",
    SentenceCompletion => "sentence completion",
    YesNoQa => "yes-no question answering",
    WordSenseDisambiguation => "word sense disambiguation",
    ParaphraseGeneration => "paraphrase generation",
    TextualEntailment => "textual entailment",
    CoreferenceResolution => "coreference resolution",
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown task type `{0}`")]
pub struct UnknownTaskType(pub String);

impl FromStr for TaskType {
    type Err = UnknownTaskType;

    /// Case-insensitive match on the canonical name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        TaskType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| UnknownTaskType(s.to_owned()))
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for TaskType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TaskType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct MetaTemplate {
    pub id: String,
    pub dataset: String,
    pub task_type: TaskType,
    /// Source-record column holding the passage.
    pub context_field: String,
    /// Renders the context passage from a source record.
    pub input_template: Arc<Template>,
    /// Renders `instruction ||| response` from a source record.
    pub output_template: Arc<Template>,
    pub context_free: bool,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read registry {path}: {source}")]
    UnreadableFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid registry record: {message}")]
    InvalidRecord { line: usize, message: String },
    #[error("line {line}: {source}")]
    UnknownTaskType {
        line: usize,
        #[source]
        source: UnknownTaskType,
    },
    #[error("line {line}: duplicate meta-template id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {source}")]
    Template {
        line: usize,
        #[source]
        source: TemplateFileError,
    },
    #[error("line {line}: input template of `{id}` does not reference context field `{field}`")]
    ContextFieldNotReferenced { line: usize, id: String, field: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    dataset: String,
    task_type: String,
    context_field: String,
    input_template: PathBuf,
    output_template: PathBuf,
    #[serde(default)]
    context_free: bool,
}

/// Loads and validates a registry manifest.
pub fn load_registry(path: impl AsRef<Path>) -> Result<Vec<MetaTemplate>, RegistryError> {
    let path = path.as_ref();
    let unreadable = |source| RegistryError::UnreadableFile {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(unreadable)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut cache: HashMap<PathBuf, Arc<Template>> = HashMap::new();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(unreadable)?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(trimmed).map_err(|e| RegistryError::InvalidRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        let task_type = rec
            .task_type
            .parse::<TaskType>()
            .map_err(|source| RegistryError::UnknownTaskType { line: line_no, source })?;
        if !seen.insert(rec.id.clone()) {
            return Err(RegistryError::DuplicateId { line: line_no, id: rec.id });
        }
        let mut load = |rel: &Path| -> Result<Arc<Template>, RegistryError> {
            let full = base.join(rel);
            if let Some(t) = cache.get(&full) {
                return Ok(Arc::clone(t));
            }
            let t = Arc::new(
                load_template_file(&full).map_err(|source| RegistryError::Template { line: line_no, source })?,
            );
            cache.insert(full, Arc::clone(&t));
            Ok(t)
        };
        let input_template = load(&rec.input_template)?;
        let output_template = load(&rec.output_template)?;

        let root = rec.context_field.split('.').next().unwrap_or_default();
        if !input_template.variables().iter().any(|v| v == root) {
            return Err(RegistryError::ContextFieldNotReferenced {
                line: line_no,
                id: rec.id,
                field: rec.context_field,
            });
        }
        out.push(MetaTemplate {
            id: rec.id,
            dataset: rec.dataset,
            task_type,
            context_field: rec.context_field,
            input_template,
            output_template,
            context_free: rec.context_free,
        });
    }
    Ok(out)
}

/// Meta-templates for `dataset`, in registry order.
pub fn templates_for<'r>(dataset: &str, registry: &'r [MetaTemplate]) -> Vec<&'r MetaTemplate> {
    registry.iter().filter(|m| m.dataset == dataset).collect()
}

/// Counts used by `inspect` and the catalog checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistrySummary {
    pub meta_templates: usize,
    pub datasets: usize,
    pub task_types: BTreeSet<TaskType>,
}

pub fn summarize(registry: &[MetaTemplate]) -> RegistrySummary {
    RegistrySummary {
        meta_templates: registry.len(),
        datasets: registry.iter().map(|m| m.dataset.as_str()).collect::<HashSet<_>>().len(),
        task_types: registry.iter().map(|m| m.task_type).collect(),
    }
}
