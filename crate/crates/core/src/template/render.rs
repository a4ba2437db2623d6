use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ast::{Condition, Expr, Filter, Node, Operand, Path, Segment};
use super::value::Value;
use super::{RenderContext, RenderError};

pub(crate) struct Renderer<'a> {
    ctx: &'a RenderContext,
    rng: ChaCha8Rng,
}

impl<'a> Renderer<'a> {
    pub(crate) fn new(ctx: &'a RenderContext, rng: ChaCha8Rng) -> Self {
        Renderer { ctx, rng }
    }

    pub(crate) fn render_nodes(&mut self, nodes: &[Node], out: &mut String) -> Result<(), RenderError> {
        for node in nodes {
            match node {
                Node::Text(text) => out.push_str(text),
                Node::Output(expr) => {
                    let value = self.eval(expr)?;
                    out.push_str(&value.to_string());
                }
                Node::If { cond, then, otherwise } => {
                    if self.test(cond)? {
                        self.render_nodes(then, out)?;
                    } else if let Some(otherwise) = otherwise {
                        self.render_nodes(otherwise, out)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn test(&mut self, cond: &Condition) -> Result<bool, RenderError> {
        let lhs = self.eval(&cond.lhs)?;
        match &cond.rhs {
            Some(rhs) => {
                let rhs = self.eval(rhs)?;
                Ok(lhs.loose_eq(&rhs))
            }
            None => Ok(lhs.is_truthy()),
        }
    }

    fn eval(&mut self, expr: &Expr) -> Result<Value, RenderError> {
        let mut value = self.operand(&expr.operand)?;
        for filter in &expr.filters {
            value = self.apply(filter, value)?;
        }
        Ok(value)
    }

    fn operand(&self, operand: &Operand) -> Result<Value, RenderError> {
        match operand {
            Operand::Path(path) => self.lookup(path).cloned(),
            Operand::Str(s) => Ok(Value::Str(s.clone())),
            Operand::Int(i) => Ok(Value::Int(*i)),
            Operand::List(items) => items.iter().map(|item| self.operand(item)).collect::<Result<_, _>>().map(Value::List),
            Operand::Range(a, b) => Ok(Value::List((*a..*b).map(Value::Int).collect())),
        }
    }

    fn lookup(&self, path: &Path) -> Result<&'a Value, RenderError> {
        let mut current = self
            .ctx
            .bindings
            .get(&path.root)
            .ok_or_else(|| RenderError::MissingVariable(path.root.clone()))?;
        for (depth, seg) in path.segments.iter().enumerate() {
            let shown = || {
                Path {
                    root: path.root.clone(),
                    segments: path.segments[..=depth].to_vec(),
                }
                .to_string()
            };
            current = match seg {
                Segment::Attr(key) | Segment::Key(key) => match current {
                    Value::Map(map) => map.get(key).ok_or_else(|| RenderError::MissingVariable(shown()))?,
                    other => return Err(RenderError::type_mismatch("map", other, shown())),
                },
                Segment::Index(i) => index_list(current, *i, shown)?,
                Segment::Lookup(inner) => match self.lookup(inner)? {
                    Value::Int(i) => index_list(current, *i, shown)?,
                    Value::Str(key) => match current {
                        Value::Map(map) => map.get(key).ok_or_else(|| RenderError::MissingVariable(shown()))?,
                        other => return Err(RenderError::type_mismatch("map", other, shown())),
                    },
                    other => return Err(RenderError::type_mismatch("int or string key", other, inner.to_string())),
                },
            };
        }
        Ok(current)
    }

    fn apply(&mut self, filter: &Filter, value: Value) -> Result<Value, RenderError> {
        match filter {
            Filter::Join(sep) => match value {
                Value::List(items) => Ok(Value::Str(
                    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(sep),
                )),
                other => Err(RenderError::type_mismatch("list", &other, "join")),
            },
            Filter::Choice => match value {
                Value::List(mut items) => {
                    if items.is_empty() {
                        return Err(RenderError::EmptyChoice);
                    }
                    let pick = self.rng.random_range(0..items.len());
                    Ok(items.swap_remove(pick))
                }
                other => Err(RenderError::type_mismatch("list", &other, "choice")),
            },
            Filter::MostFrequent => match value {
                Value::List(items) => Ok(Value::List(most_frequent(items))),
                other => Err(RenderError::type_mismatch("list", &other, "most_frequent")),
            },
        }
    }
}

fn index_list(value: &Value, index: i64, shown: impl Fn() -> String) -> Result<&Value, RenderError> {
    match value {
        Value::List(items) => {
            let len = items.len() as i64;
            let resolved = if index < 0 { index + len } else { index };
            if resolved < 0 || resolved >= len {
                return Err(RenderError::IndexOutOfRange { path: shown(), index, len: items.len() });
            }
            Ok(&items[resolved as usize])
        }
        other => Err(RenderError::type_mismatch("list", other, shown())),
    }
}

/// Distinct modal elements of `items`, in order of first occurrence.
pub(crate) fn most_frequent(items: Vec<Value>) -> Vec<Value> {
    let mut counts: Vec<(Value, usize)> = Vec::new();
    for item in items {
        match counts.iter_mut().find(|(v, _)| *v == item) {
            Some((_, n)) => *n += 1,
            None => counts.push((item, 1)),
        }
    }
    let max = counts.iter().map(|(_, n)| *n).max().unwrap_or(0);
    counts.into_iter().filter(|(_, n)| *n == max).map(|(v, _)| v).collect()
}
