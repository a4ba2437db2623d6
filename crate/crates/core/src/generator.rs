//! Synthetic task generation from unannotated documents.
//!
//! Conditional mode prompts a generator trained on the CTGA framing and
//! splits its output on the `<|pipe|>` line. Instruct mode asks a general
//! instruct model for a quoted question or hypothesis, then re-prompts it
//! for the answer.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, CompletionClient, SamplingParams};
use crate::ctga::{generator_input, record_rng, CONTEXT_PLACEHOLDER, PIPE};
use crate::dataset_io::{Document, InstructionPair};
use crate::registry::TaskType;
use crate::template::{parse_template, render, RenderContext, Template};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no `<|pipe|>` line in the generated text")]
    Unparsable,
    #[error("generated {0} is empty")]
    EmptySide(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("no double-quoted span in the response")]
    NoQuotedSpan,
    #[error("instruct mode does not support task type `{0}`")]
    UnsupportedTaskType(TaskType),
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Conditional,
    Instruct,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Conditional => "conditional",
            Mode::Instruct => "instruct",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTask {
    pub doc_id: String,
    pub task_type: TaskType,
    /// Context already substituted.
    pub instruction: String,
    pub response: String,
    pub raw: String,
    pub sample: usize,
}

impl GeneratedTask {
    pub fn to_pair(&self, mode: Mode) -> InstructionPair {
        let mut meta = BTreeMap::new();
        meta.insert("doc_id".to_owned(), self.doc_id.clone());
        meta.insert("task_type".to_owned(), self.task_type.name().to_owned());
        meta.insert("mode".to_owned(), mode.name().to_owned());
        meta.insert("sample".to_owned(), self.sample.to_string());
        InstructionPair {
            input: self.instruction.clone(),
            output: self.response.clone(),
            meta,
        }
    }
}

/// Per-run accounting. Every requested item lands in exactly one of
/// `parsed`, `filtered_unparsable`, `filtered_empty` or `endpoint_failures`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub requested: usize,
    pub parsed: usize,
    pub filtered_unparsable: usize,
    pub filtered_empty: usize,
    #[serde(default)]
    pub endpoint_failures: usize,
    /// Responses keyed by their lowercased first word.
    #[serde(default)]
    pub label_histogram: BTreeMap<String, usize>,
}

impl GenerationStats {
    pub fn identity_holds(&self) -> bool {
        self.requested == self.parsed + self.filtered_unparsable + self.filtered_empty + self.endpoint_failures
    }

    pub fn filtered(&self) -> usize {
        self.filtered_unparsable + self.filtered_empty
    }

    pub fn absorb(&mut self, other: &GenerationStats) {
        self.requested += other.requested;
        self.parsed += other.parsed;
        self.filtered_unparsable += other.filtered_unparsable;
        self.filtered_empty += other.filtered_empty;
        self.endpoint_failures += other.endpoint_failures;
        for (label, n) in &other.label_histogram {
            *self.label_histogram.entry(label.clone()).or_default() += n;
        }
    }

    fn record(&mut self, outcome: &Result<GeneratedTask, GenerateError>) {
        self.requested += 1;
        match outcome {
            Ok(task) => {
                self.parsed += 1;
                *self.label_histogram.entry(label_key(&task.response)).or_default() += 1;
            }
            Err(GenerateError::Parse(ParseError::EmptySide(_))) => self.filtered_empty += 1,
            Err(GenerateError::Parse(ParseError::Unparsable) | GenerateError::NoQuotedSpan) => self.filtered_unparsable += 1,
            Err(GenerateError::Client(_) | GenerateError::UnsupportedTaskType(_)) => self.endpoint_failures += 1,
        }
    }
}

fn label_key(response: &str) -> String {
    response
        .split_whitespace()
        .next()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationFailure {
    pub doc_id: String,
    pub sample: usize,
    pub error: GenerateError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationOutput {
    pub tasks: Vec<GeneratedTask>,
    pub stats: GenerationStats,
    pub failures: Vec<GenerationFailure>,
}

impl GenerationOutput {
    fn collect(items: &[(&Document, usize)], outcomes: Vec<Result<GeneratedTask, GenerateError>>) -> Self {
        let mut out = GenerationOutput::default();
        for ((doc, sample), outcome) in items.iter().zip(outcomes) {
            out.stats.record(&outcome);
            match outcome {
                Ok(task) => out.tasks.push(task),
                Err(error) => {
                    log::debug!("{} sample {sample}: {error}", doc.id);
                    out.failures.push(GenerationFailure {
                        doc_id: doc.id.clone(),
                        sample: *sample,
                        error,
                    })
                }
            }
        }
        out
    }
}

pub fn conditional_prompt(doc: &Document, task_type: TaskType) -> String {
    generator_input(task_type, &doc.text)
}

/// Splits generated text on its first `<|pipe|>` line and substitutes the
/// context into the instruction.
pub fn parse_generation(raw: &str, context: &str) -> Result<(String, String), ParseError> {
    let mut offset = 0;
    let mut split = None;
    for line in raw.split_inclusive('\n') {
        if line.trim() == PIPE {
            split = Some((offset, offset + line.len()));
            break;
        }
        offset += line.len();
    }
    let (start, end) = split.ok_or(ParseError::Unparsable)?;
    let instruction = raw[..start].trim();
    let response = raw[end..].trim();
    if instruction.is_empty() {
        return Err(ParseError::EmptySide("instruction"));
    }
    if response.is_empty() {
        return Err(ParseError::EmptySide("response"));
    }
    Ok((instruction.replace(CONTEXT_PLACEHOLDER, context), response.to_owned()))
}

fn expand(docs: &[Document], samples_per_doc: usize) -> Vec<(&Document, usize)> {
    docs.iter().flat_map(|d| (0..samples_per_doc.max(1)).map(move |s| (d, s))).collect()
}

/// One request per document and sample.
pub fn generate_conditional(
    docs: &[Document],
    task_type: TaskType,
    client: &CompletionClient,
    params: &SamplingParams,
    samples_per_doc: usize,
) -> GenerationOutput {
    let items = expand(docs, samples_per_doc);
    let outcomes = client.batch(&items, |client, (doc, sample)| {
        Ok(client
            .complete(&conditional_prompt(doc, task_type), params)
            .map_err(GenerateError::from)
            .and_then(|c| {
                let (instruction, response) = parse_generation(&c.text, &doc.text)?;
                Ok(GeneratedTask {
                    doc_id: doc.id.clone(),
                    task_type,
                    instruction,
                    response,
                    raw: c.text,
                    sample: *sample,
                })
            }))
    });
    GenerationOutput::collect(&items, outcomes.into_iter().map(flatten).collect())
}

fn flatten(r: Result<Result<GeneratedTask, GenerateError>, ClientError>) -> Result<GeneratedTask, GenerateError> {
    r.map_err(GenerateError::from).and_then(|x| x)
}

pub const YES_NO_PROMPT: &str = "Generate exactly one question that can be answered by a yes or a no for the paragraph below. The question should be parsable and enclosed in quotes (\"\").";
pub const EXTRACTIVE_PROMPT: &str = "Generate exactly one question that can be answered by selecting 1 to 10 words from the paragraph below. The question should be parsable and enclosed in quotes (\"\").";
pub const NLI_PROMPT: &str = "Generate exactly one high-level statement or a hypothesis for the following paragraph. The hypothesis about the paragraph can be true, false, or neither. Make sure the output is less than 10 words. The hypothesis should be parsable and enclosed in quotes (\"\").";

const NLI_ANSWER_SOURCES: [&str; 5] = [
    "{{premise}}\nBased on the previous passage, is it true that \"{{hypothesis}}\"? Yes, no, or maybe?",
    "{{premise}}\n\nQuestion: Does this imply that \"{{hypothesis}}\"? Yes, no, or maybe?",
    "Given that {{premise}} Does it follow that {{hypothesis}} Yes, no, or maybe?",
    "Suppose {{premise}} Can we infer that \"{{hypothesis}}\"? Yes, no, or maybe?",
    "{{premise}} Using only the above description and what you know about the world, \"{{hypothesis}}\" is definitely correct, incorrect, or inconclusive?",
];

/// The five answer templates used to label instruct-mode hypotheses.
pub fn nli_answer_templates() -> &'static [Template] {
    static TEMPLATES: OnceLock<Vec<Template>> = OnceLock::new();
    TEMPLATES.get_or_init(|| {
        NLI_ANSWER_SOURCES
            .iter()
            .map(|s| parse_template(s).expect("bundled answer template parses"))
            .collect()
    })
}

fn is_instruct_type(task_type: TaskType) -> bool {
    matches!(task_type, TaskType::YesNoQa | TaskType::ExtractiveQa | TaskType::NaturalLanguageInference)
}

pub fn instruct_question_prompt(doc: &Document, task_type: TaskType) -> Result<String, GenerateError> {
    let head = match task_type {
        TaskType::YesNoQa => YES_NO_PROMPT,
        TaskType::ExtractiveQa => EXTRACTIVE_PROMPT,
        TaskType::NaturalLanguageInference => NLI_PROMPT,
        other => return Err(GenerateError::UnsupportedTaskType(other)),
    };
    Ok(format!("{head}\n{}", doc.text))
}

/// The first non-empty span between double quotes, straight or curly.
pub fn first_quoted_span(text: &str) -> Option<&str> {
    let mut rest = text;
    while let Some(open) = rest.find(['"', '\u{201C}']) {
        let after = &rest[open + rest[open..].chars().next()?.len_utf8()..];
        let close = after.find(['"', '\u{201D}'])?;
        let span = after[..close].trim();
        if !span.is_empty() {
            return Some(span);
        }
        rest = &after[close + after[close..].chars().next()?.len_utf8()..];
    }
    None
}

pub fn instruct_generate_question(
    doc: &Document,
    task_type: TaskType,
    client: &CompletionClient,
    params: &SamplingParams,
) -> Result<String, GenerateError> {
    let prompt = instruct_question_prompt(doc, task_type)?;
    let completion = client.complete(&prompt, params)?;
    first_quoted_span(&completion.text)
        .map(str::to_owned)
        .ok_or(GenerateError::NoQuotedSpan)
}

/// The prompt that asks for the answer to `question`. NLI prompts use the
/// answer template at `nli_template`.
pub fn instruct_answer_prompt(doc: &Document, question: &str, task_type: TaskType, nli_template: usize) -> Result<String, GenerateError> {
    match task_type {
        TaskType::YesNoQa | TaskType::ExtractiveQa => Ok(format!("{question}\n{}", doc.text)),
        TaskType::NaturalLanguageInference => {
            let templates = nli_answer_templates();
            let ctx = RenderContext::new(0).with("premise", doc.text.as_str()).with("hypothesis", question);
            Ok(render(&templates[nli_template % templates.len()], &ctx).expect("answer template binds both variables"))
        }
        other => Err(GenerateError::UnsupportedTaskType(other)),
    }
}

pub fn instruct_generate_answer(
    doc: &Document,
    question: &str,
    task_type: TaskType,
    nli_template: usize,
    client: &CompletionClient,
    params: &SamplingParams,
) -> Result<(String, String), GenerateError> {
    let prompt = instruct_answer_prompt(doc, question, task_type, nli_template)?;
    let completion = client.complete(&prompt, params)?;
    Ok((prompt, completion.text.trim().to_owned()))
}

/// Question then answer for every document and sample.
pub fn generate_instruct(
    docs: &[Document],
    task_type: TaskType,
    client: &CompletionClient,
    params: &SamplingParams,
    samples_per_doc: usize,
    seed: u64,
) -> GenerationOutput {
    let items = expand(docs, samples_per_doc);
    if !is_instruct_type(task_type) {
        let outcomes = items.iter().map(|_| Err(GenerateError::UnsupportedTaskType(task_type))).collect();
        return GenerationOutput::collect(&items, outcomes);
    }
    let outcomes = client.batch(&items, |client, (doc, sample)| {
        let one = || -> Result<GeneratedTask, GenerateError> {
            let question = instruct_generate_question(doc, task_type, client, params)?;
            let nli_template = record_rng(seed, &doc.id, *sample).random_range(0..NLI_ANSWER_SOURCES.len());
            let (instruction, answer) = instruct_generate_answer(doc, &question, task_type, nli_template, client, params)?;
            if answer.is_empty() {
                return Err(ParseError::EmptySide("response").into());
            }
            Ok(GeneratedTask {
                doc_id: doc.id.clone(),
                task_type,
                instruction,
                raw: answer.clone(),
                response: answer,
                sample: *sample,
            })
        };
        Ok(one())
    });
    GenerationOutput::collect(&items, outcomes.into_iter().map(flatten).collect())
}
