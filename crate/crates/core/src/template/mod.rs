//! A closed subset of the Jinja template language, as used by P3-style prompt
//! templates.
//!
//! Supported constructs: literal text, `{{ expr }}` outputs, and
//! `{% if cond %}...{% else %}...{% endif %}`. An expression is a variable
//! path (`context.contexts`, `answers['text']`, `answer_choices[label]`), a
//! string or integer literal, a list literal, or `range(a, b)`, optionally
//! piped through `join(sep)`, `choice`, and `most_frequent`. Anything else is
//! rejected at parse time.
//!
//! A template may end with an answer-choices block: a line reading
//! `answer_choices:` followed by `|||`-separated choice templates.

mod ast;
mod parser;
mod render;
mod value;

use std::collections::BTreeMap;
use std::path::Path as FsPath;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use ast::{to_source, Condition, Expr, Filter, Node, Operand, Path, Segment};
pub use value::Value;

/// Marker line that introduces the answer-choices block of a template file.
pub const ANSWER_CHOICES_MARKER: &str = "answer_choices:";
/// Separator between answer choices.
pub const CHOICE_SEPARATOR: &str = "|||";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at byte {offset}: {message}")]
pub struct SyntaxError {
    pub offset: usize,
    pub message: String,
}

impl SyntaxError {
    pub(crate) fn new(offset: usize, message: impl Into<String>) -> Self {
        SyntaxError {
            offset,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("missing variable `{0}`")]
    MissingVariable(String),
    #[error("type mismatch in `{context}`: expected {expected}, found {found}")]
    TypeMismatch {
        expected: &'static str,
        found: &'static str,
        context: String,
    },
    #[error("index {index} out of range for `{path}` (length {len})")]
    IndexOutOfRange { path: String, index: i64, len: usize },
    #[error("`choice` applied to an empty list")]
    EmptyChoice,
    #[error("template has no answer choices")]
    NoChoices,
}

impl RenderError {
    fn type_mismatch(expected: &'static str, found: &Value, context: impl Into<String>) -> Self {
        RenderError::TypeMismatch {
            expected,
            found: found.kind(),
            context: context.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TemplateFileError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Syntax {
        path: String,
        #[source]
        source: SyntaxError,
    },
}

/// A parsed piece of template source.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub source: String,
    pub nodes: Vec<Node>,
}

impl Fragment {
    fn parse(source: &str, base: usize) -> Result<Self, SyntaxError> {
        Ok(Fragment {
            source: source.to_owned(),
            nodes: parser::parse_nodes(source, base)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub source: String,
    pub body: Fragment,
    pub answer_choices: Option<Vec<Fragment>>,
}

/// Variable bindings plus the seed for the `choice` filter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderContext {
    pub bindings: BTreeMap<String, Value>,
    pub rng_seed: u64,
}

impl RenderContext {
    pub fn new(rng_seed: u64) -> Self {
        RenderContext {
            bindings: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.bindings.insert(name.into(), value.into());
        self
    }

    pub fn bind(&mut self, name: impl Into<String>, value: impl Into<Value>) {
        self.bindings.insert(name.into(), value.into());
    }

    /// Binds every key of a JSON object.
    pub fn from_json_object(map: &serde_json::Map<String, serde_json::Value>, rng_seed: u64) -> Self {
        RenderContext {
            bindings: map.iter().map(|(k, v)| (k.clone(), Value::from(v))).collect(),
            rng_seed,
        }
    }
}

/// Parses template source, splitting off a trailing answer-choices block.
pub fn parse_template(source: &str) -> Result<Template, SyntaxError> {
    let (body_src, choices) = match find_choices_marker(source) {
        Some((line_start, choices_start)) => {
            let body_end = if line_start > 0 && source.as_bytes()[line_start - 1] == b'\n' {
                let end = line_start - 1;
                if end > 0 && source.as_bytes()[end - 1] == b'\r' {
                    end - 1
                } else {
                    end
                }
            } else {
                line_start
            };
            (&source[..body_end], Some((choices_start, &source[choices_start..])))
        }
        None => (source, None),
    };

    let body = Fragment::parse(body_src, 0)?;
    let answer_choices = match choices {
        None => None,
        Some((start, text)) => {
            if text.trim().is_empty() {
                return Err(SyntaxError::new(start, "empty answer_choices block"));
            }
            let mut fragments = Vec::new();
            let mut offset = start;
            for piece in text.split(CHOICE_SEPARATOR) {
                fragments.push(Fragment::parse(piece, offset)?);
                offset += piece.len() + CHOICE_SEPARATOR.len();
            }
            Some(fragments)
        }
    };
    Ok(Template {
        source: source.to_owned(),
        body,
        answer_choices,
    })
}

/// Returns (start of marker line, start of choices text).
fn find_choices_marker(source: &str) -> Option<(usize, usize)> {
    let mut line_start = 0;
    for line in source.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if content.trim_end() == ANSWER_CHOICES_MARKER {
            return Some((line_start, line_start + line.len()));
        }
        line_start += line.len();
    }
    None
}

/// Reads and parses a template file. A single trailing newline is not part of
/// the template.
pub fn load_template_file(path: impl AsRef<FsPath>) -> Result<Template, TemplateFileError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|source| TemplateFileError::Io {
        path: shown.clone(),
        source,
    })?;
    let text = raw.strip_suffix('\n').unwrap_or(&raw);
    let text = text.strip_suffix('\r').unwrap_or(text);
    parse_template(text).map_err(|source| TemplateFileError::Syntax { path: shown, source })
}

impl Template {
    /// Literal text segments of the body, in source order.
    pub fn literal_segments(&self) -> Vec<&str> {
        fn walk<'n>(nodes: &'n [Node], out: &mut Vec<&'n str>) {
            for node in nodes {
                match node {
                    Node::Text(t) => out.push(t),
                    Node::Output(_) => {}
                    Node::If { then, otherwise, .. } => {
                        walk(then, out);
                        if let Some(o) = otherwise {
                            walk(o, out);
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body.nodes, &mut out);
        out
    }

    /// Root names of every variable the template (body and choices) reads.
    pub fn variables(&self) -> Vec<String> {
        fn expr_vars(expr: &Expr, out: &mut Vec<String>) {
            operand_vars(&expr.operand, out);
        }
        fn operand_vars(op: &Operand, out: &mut Vec<String>) {
            match op {
                Operand::Path(p) => path_vars(p, out),
                Operand::List(items) => items.iter().for_each(|i| operand_vars(i, out)),
                _ => {}
            }
        }
        fn path_vars(p: &Path, out: &mut Vec<String>) {
            if !out.contains(&p.root) {
                out.push(p.root.clone());
            }
            for seg in &p.segments {
                if let Segment::Lookup(inner) = seg {
                    path_vars(inner, out);
                }
            }
        }
        fn walk(nodes: &[Node], out: &mut Vec<String>) {
            for node in nodes {
                match node {
                    Node::Text(_) => {}
                    Node::Output(e) => expr_vars(e, out),
                    Node::If { cond, then, otherwise } => {
                        expr_vars(&cond.lhs, out);
                        if let Some(rhs) = &cond.rhs {
                            expr_vars(rhs, out);
                        }
                        walk(then, out);
                        if let Some(o) = otherwise {
                            walk(o, out);
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body.nodes, &mut out);
        for choice in self.answer_choices.iter().flatten() {
            walk(&choice.nodes, &mut out);
        }
        out
    }

    pub fn has_choices(&self) -> bool {
        self.answer_choices.is_some()
    }
}

// The body and the choices draw from independent streams so adding choices to
// a template never changes how its body renders.
const CHOICES_STREAM: u64 = 1;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Renders the template body. When the template carries answer choices and
/// `answer_choices` is not already bound, the rendered choices are bound
/// under that name first.
pub fn render(template: &Template, ctx: &RenderContext) -> Result<String, RenderError> {
    let mut out = String::new();
    if template.answer_choices.is_some() && !ctx.bindings.contains_key("answer_choices") {
        let choices = render_choices(template, ctx)?;
        let mut extended = ctx.clone();
        extended.bind("answer_choices", choices);
        render::Renderer::new(&extended, rng_for(ctx.rng_seed, 0)).render_nodes(&template.body.nodes, &mut out)?;
    } else {
        render::Renderer::new(ctx, rng_for(ctx.rng_seed, 0)).render_nodes(&template.body.nodes, &mut out)?;
    }
    Ok(out)
}

/// Renders the answer choices in declaration order, each trimmed.
pub fn render_choices(template: &Template, ctx: &RenderContext) -> Result<Vec<String>, RenderError> {
    let choices = template.answer_choices.as_ref().ok_or(RenderError::NoChoices)?;
    let mut renderer = render::Renderer::new(ctx, rng_for(ctx.rng_seed, CHOICES_STREAM));
    choices
        .iter()
        .map(|choice| {
            let mut out = String::new();
            renderer.render_nodes(&choice.nodes, &mut out)?;
            Ok(out.trim().to_owned())
        })
        .collect()
}
