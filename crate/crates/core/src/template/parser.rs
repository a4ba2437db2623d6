use super::ast::{Condition, Expr, Filter, Node, Operand, Path, Segment};
use super::SyntaxError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Dot,
    Comma,
    Pipe,
    LBracket,
    RBracket,
    LParen,
    RParen,
    EqEq,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TagKind {
    Output,
    Statement,
}

struct Tag {
    kind: TagKind,
    /// Byte offset of the opening delimiter.
    start: usize,
    tokens: Vec<(usize, Tok)>,
}

enum Piece {
    Text(String),
    Tag(Tag),
}

/// Parses a template body (no `answer_choices:` handling) into nodes.
/// `base` is added to every reported offset.
pub(crate) fn parse_nodes(src: &str, base: usize) -> Result<Vec<Node>, SyntaxError> {
    let pieces = split_pieces(src, base)?;
    let mut iter = pieces.into_iter().peekable();
    let (nodes, end) = parse_block(&mut iter, None)?;
    if let Some((offset, keyword)) = end {
        return Err(SyntaxError::new(offset, format!("unexpected `{{% {keyword} %}}` without matching `if`")));
    }
    Ok(nodes)
}

type Pieces = std::iter::Peekable<std::vec::IntoIter<Piece>>;

/// Parses until EOF or a block-closing statement. Returns the nodes and, if a
/// closing statement (`else`/`endif`) stopped the block, its offset and keyword.
/// Nodes up to a closing tag, and that tag's offset and keyword.
type Block = (Vec<Node>, Option<(usize, String)>);

fn parse_block(pieces: &mut Pieces, open: Option<usize>) -> Result<Block, SyntaxError> {
    let mut nodes = Vec::new();
    while let Some(piece) = pieces.next() {
        match piece {
            Piece::Text(text) => nodes.push(Node::Text(text)),
            Piece::Tag(tag) if tag.kind == TagKind::Output => {
                let mut cur = Cursor::new(&tag.tokens, tag.start);
                let expr = cur.expr()?;
                cur.finish()?;
                nodes.push(Node::Output(expr));
            }
            Piece::Tag(tag) => {
                let mut cur = Cursor::new(&tag.tokens, tag.start);
                let keyword = cur.ident()?;
                match keyword.as_str() {
                    "if" => {
                        let cond = cur.condition()?;
                        cur.finish()?;
                        let (then, end) = parse_block(pieces, Some(tag.start))?;
                        let otherwise = match end.as_ref().map(|(_, k)| k.as_str()) {
                            Some("endif") => None,
                            Some("else") => {
                                let (body, end) = parse_block(pieces, Some(tag.start))?;
                                match end {
                                    Some((_, k)) if k == "endif" => Some(body),
                                    Some((offset, k)) => {
                                        return Err(SyntaxError::new(offset, format!("unexpected `{k}` after `else`")))
                                    }
                                    None => return Err(SyntaxError::new(tag.start, "unclosed `if` block")),
                                }
                            }
                            _ => return Err(SyntaxError::new(tag.start, "unclosed `if` block")),
                        };
                        nodes.push(Node::If { cond, then, otherwise });
                    }
                    "else" | "endif" => {
                        cur.finish()?;
                        if open.is_none() {
                            return Err(SyntaxError::new(
                                tag.start,
                                format!("unexpected `{{% {keyword} %}}` without matching `if`"),
                            ));
                        }
                        return Ok((nodes, Some((tag.start, keyword))));
                    }
                    other => return Err(SyntaxError::new(tag.start, format!("unsupported statement `{other}`"))),
                }
            }
        }
    }
    Ok((nodes, None))
}

fn split_pieces(src: &str, base: usize) -> Result<Vec<Piece>, SyntaxError> {
    let bytes = src.as_bytes();
    let mut pieces = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i + 1 < bytes.len() {
        let kind = match (bytes[i], bytes[i + 1]) {
            (b'{', b'{') => TagKind::Output,
            (b'{', b'%') => TagKind::Statement,
            _ => {
                i += 1;
                continue;
            }
        };
        if text_start < i {
            pieces.push(Piece::Text(src[text_start..i].to_owned()));
        }
        let (tokens, end) = lex_tag(src, i + 2, kind, base + i, base)?;
        pieces.push(Piece::Tag(Tag {
            kind,
            start: base + i,
            tokens,
        }));
        i = end;
        text_start = end;
    }
    if text_start < src.len() {
        pieces.push(Piece::Text(src[text_start..].to_owned()));
    }
    Ok(pieces)
}

/// Lexes the inside of a tag starting at `pos`; returns the tokens and the
/// byte position just past the closing delimiter.
fn lex_tag(
    src: &str,
    mut pos: usize,
    kind: TagKind,
    open_offset: usize,
    base: usize,
) -> Result<(Vec<(usize, Tok)>, usize), SyntaxError> {
    let bytes = src.as_bytes();
    let close = match kind {
        TagKind::Output => b'}',
        TagKind::Statement => b'%',
    };
    let mut tokens = Vec::new();
    loop {
        while pos < bytes.len() && (bytes[pos] as char).is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            let what = if kind == TagKind::Output { "`{{`" } else { "`{%`" };
            return Err(SyntaxError::new(open_offset, format!("unclosed {what}")));
        }
        let b = bytes[pos];
        let at = base + pos;
        if b == close && bytes.get(pos + 1) == Some(&b'}') {
            return Ok((tokens, pos + 2));
        }
        let tok = match b {
            b'.' => Tok::Dot,
            b',' => Tok::Comma,
            b'|' => Tok::Pipe,
            b'[' => Tok::LBracket,
            b']' => Tok::RBracket,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'=' if bytes.get(pos + 1) == Some(&b'=') => {
                pos += 2;
                tokens.push((at, Tok::EqEq));
                continue;
            }
            b'"' | b'\'' => {
                let (s, end) = lex_string(src, pos, base)?;
                tokens.push((at, Tok::Str(s)));
                pos = end;
                continue;
            }
            b'-' | b'0'..=b'9' => {
                let start = pos;
                pos += 1;
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
                let text = &src[start..pos];
                let value = text
                    .parse::<i64>()
                    .map_err(|_| SyntaxError::new(at, format!("invalid integer `{text}`")))?;
                tokens.push((at, Tok::Int(value)));
                continue;
            }
            b if b == b'_' || b.is_ascii_alphabetic() => {
                let start = pos;
                while pos < bytes.len() && (bytes[pos] == b'_' || bytes[pos].is_ascii_alphanumeric()) {
                    pos += 1;
                }
                tokens.push((at, Tok::Ident(src[start..pos].to_owned())));
                continue;
            }
            _ => {
                let c = src[pos..].chars().next().unwrap_or('?');
                return Err(SyntaxError::new(at, format!("unexpected character `{c}`")));
            }
        };
        tokens.push((at, tok));
        pos += 1;
    }
}

fn lex_string(src: &str, start: usize, base: usize) -> Result<(String, usize), SyntaxError> {
    let quote = src.as_bytes()[start] as char;
    let mut out = String::new();
    let mut chars = src[start + 1..].char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            c if c == quote => return Ok((out, start + 1 + i + c.len_utf8())),
            '\\' => match chars.next() {
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((_, 'r')) => out.push('\r'),
                Some((_, c)) => out.push(c),
                None => break,
            },
            c => out.push(c),
        }
    }
    Err(SyntaxError::new(base + start, "unterminated string literal"))
}

struct Cursor<'a> {
    tokens: &'a [(usize, Tok)],
    pos: usize,
    tag_start: usize,
}

impl<'a> Cursor<'a> {
    fn new(tokens: &'a [(usize, Tok)], tag_start: usize) -> Self {
        Cursor { tokens, pos: 0, tag_start }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|(o, _)| *o).unwrap_or(self.tag_start)
    }

    fn next(&mut self) -> Option<Tok> {
        let tok = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), SyntaxError> {
        let offset = self.offset();
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => Err(SyntaxError::new(offset, format!("expected {what}"))),
        }
    }

    fn finish(&self) -> Result<(), SyntaxError> {
        match self.peek() {
            None => Ok(()),
            Some(tok) => Err(SyntaxError::new(self.offset(), format!("unexpected token {tok:?}"))),
        }
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        let offset = self.offset();
        match self.next() {
            Some(Tok::Ident(name)) => Ok(name),
            _ => Err(SyntaxError::new(offset, "expected identifier")),
        }
    }

    fn int(&mut self) -> Result<i64, SyntaxError> {
        let offset = self.offset();
        match self.next() {
            Some(Tok::Int(i)) => Ok(i),
            _ => Err(SyntaxError::new(offset, "expected integer")),
        }
    }

    fn condition(&mut self) -> Result<Condition, SyntaxError> {
        let lhs = self.expr()?;
        let rhs = if self.peek() == Some(&Tok::EqEq) {
            self.next();
            Some(self.expr()?)
        } else {
            None
        };
        Ok(Condition { lhs, rhs })
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        let operand = self.operand()?;
        let mut filters = Vec::new();
        while self.peek() == Some(&Tok::Pipe) {
            self.next();
            filters.push(self.filter()?);
        }
        Ok(Expr { operand, filters })
    }

    fn filter(&mut self) -> Result<Filter, SyntaxError> {
        let offset = self.offset();
        let name = self.ident()?;
        match name.as_str() {
            "join" => {
                self.expect(Tok::LParen, "`(` after `join`")?;
                let sep_offset = self.offset();
                let sep = match self.next() {
                    Some(Tok::Str(s)) => s,
                    _ => return Err(SyntaxError::new(sep_offset, "`join` takes one string argument")),
                };
                self.expect(Tok::RParen, "`)`")?;
                Ok(Filter::Join(sep))
            }
            "choice" => Ok(Filter::Choice),
            "most_frequent" => Ok(Filter::MostFrequent),
            other => Err(SyntaxError::new(offset, format!("unknown filter `{other}`"))),
        }
    }

    fn operand(&mut self) -> Result<Operand, SyntaxError> {
        let offset = self.offset();
        match self.next() {
            Some(Tok::Str(s)) => Ok(Operand::Str(s)),
            Some(Tok::Int(i)) => Ok(Operand::Int(i)),
            Some(Tok::LBracket) => {
                let mut items = Vec::new();
                if self.peek() == Some(&Tok::RBracket) {
                    self.next();
                    return Ok(Operand::List(items));
                }
                loop {
                    let item_offset = self.offset();
                    let item = self.operand()?;
                    if matches!(item, Operand::Range(..)) {
                        return Err(SyntaxError::new(item_offset, "`range` is not allowed inside a list literal"));
                    }
                    items.push(item);
                    let sep_offset = self.offset();
                    match self.next() {
                        Some(Tok::Comma) => continue,
                        Some(Tok::RBracket) => break,
                        _ => return Err(SyntaxError::new(sep_offset, "expected `,` or `]` in list literal")),
                    }
                }
                Ok(Operand::List(items))
            }
            Some(Tok::Ident(name)) if name == "range" && self.peek() == Some(&Tok::LParen) => {
                self.next();
                let start = self.int()?;
                self.expect(Tok::Comma, "`,` in `range`")?;
                let end = self.int()?;
                self.expect(Tok::RParen, "`)` closing `range`")?;
                Ok(Operand::Range(start, end))
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    return Err(SyntaxError::new(offset, format!("unknown function `{name}`")));
                }
                self.path_rest(name).map(Operand::Path)
            }
            Some(tok) => Err(SyntaxError::new(offset, format!("unexpected token {tok:?}"))),
            None => Err(SyntaxError::new(offset, "expected expression")),
        }
    }

    fn path_rest(&mut self, root: String) -> Result<Path, SyntaxError> {
        let mut segments = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Dot) => {
                    self.next();
                    segments.push(Segment::Attr(self.ident()?));
                }
                Some(Tok::LBracket) => {
                    self.next();
                    let offset = self.offset();
                    let seg = match self.next() {
                        Some(Tok::Str(key)) => Segment::Key(key),
                        Some(Tok::Int(i)) => Segment::Index(i),
                        Some(Tok::Ident(name)) => Segment::Lookup(self.path_rest(name)?),
                        _ => return Err(SyntaxError::new(offset, "expected key, index, or variable inside `[]`")),
                    };
                    self.expect(Tok::RBracket, "`]`")?;
                    segments.push(seg);
                }
                _ => break,
            }
        }
        Ok(Path { root, segments })
    }
}
