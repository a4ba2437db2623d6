//! Syntax tree for the template language.
//!
//! Every node serializes back to template source through `Display`; parsing
//! that output yields a structurally equal tree.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Text(String),
    Output(Expr),
    If {
        cond: Condition,
        then: Vec<Node>,
        otherwise: Option<Vec<Node>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub operand: Operand,
    pub filters: Vec<Filter>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Path(Path),
    Str(String),
    Int(i64),
    List(Vec<Operand>),
    Range(i64, i64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub root: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Attr(String),
    Key(String),
    Index(i64),
    Lookup(Path),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Filter {
    Join(String),
    Choice,
    MostFrequent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub lhs: Expr,
    pub rhs: Option<Expr>,
}

impl Path {
    pub fn variable(name: &str) -> Self {
        Path {
            root: name.to_owned(),
            segments: Vec::new(),
        }
    }
}

pub(crate) fn write_str_literal(s: &str, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            '\r' => f.write_str("\\r")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.root)?;
        for seg in &self.segments {
            match seg {
                Segment::Attr(name) => write!(f, ".{name}")?,
                Segment::Key(key) => {
                    f.write_str("[")?;
                    write_str_literal(key, f)?;
                    f.write_str("]")?;
                }
                Segment::Index(i) => write!(f, "[{i}]")?,
                Segment::Lookup(path) => write!(f, "[{path}]")?,
            }
        }
        Ok(())
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Path(p) => write!(f, "{p}"),
            Operand::Str(s) => write_str_literal(s, f),
            Operand::Int(i) => write!(f, "{i}"),
            Operand::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
            Operand::Range(a, b) => write!(f, "range({a}, {b})"),
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Filter::Join(sep) => {
                f.write_str("join(")?;
                write_str_literal(sep, f)?;
                f.write_str(")")
            }
            Filter::Choice => f.write_str("choice"),
            Filter::MostFrequent => f.write_str("most_frequent"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.operand)?;
        for filter in &self.filters {
            write!(f, " | {filter}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.lhs)?;
        if let Some(rhs) = &self.rhs {
            write!(f, " == {rhs}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Text(text) => f.write_str(text),
            Node::Output(expr) => write!(f, "{{{{ {expr} }}}}"),
            Node::If { cond, then, otherwise } => {
                write!(f, "{{% if {cond} %}}")?;
                for node in then {
                    write!(f, "{node}")?;
                }
                if let Some(otherwise) = otherwise {
                    f.write_str("{% else %}")?;
                    for node in otherwise {
                        write!(f, "{node}")?;
                    }
                }
                f.write_str("{% endif %}")
            }
        }
    }
}

/// Serializes a node list back to template source.
pub fn to_source(nodes: &[Node]) -> String {
    nodes.iter().map(|n| n.to_string()).collect()
}
