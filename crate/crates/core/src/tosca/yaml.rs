//! Reader for the YAML subset used by deployment templates.
//!
//! Supported: block mappings and sequences (including compact `- key: v`
//! items), single- and multi-line flow collections, plain/single/double
//! quoted scalars, `|` and `>` block scalars, comments and a leading `---`.
//! Anchors, aliases, tags, directives and multi-document streams are
//! rejected with a positioned error.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

const MAX_DEPTH: usize = 64;

/// 1-based line and column.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Scalar { value: String, quoted: bool, pos: Pos },
    Map { entries: Vec<Entry>, pos: Pos },
    Seq { items: Vec<Node>, pos: Pos },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub key_pos: Pos,
    pub value: Node,
}

impl Node {
    pub fn pos(&self) -> Pos {
        match self {
            Node::Scalar { pos, .. } | Node::Map { pos, .. } | Node::Seq { pos, .. } => *pos,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Node::Scalar { value, quoted: false, .. } if is_null_text(value))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Node::Scalar { .. } => "scalar",
            Node::Map { .. } => "mapping",
            Node::Seq { .. } => "sequence",
        }
    }
}

pub(crate) fn is_null_text(s: &str) -> bool {
    matches!(s, "" | "~" | "null" | "Null" | "NULL")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntaxError {
    pub pos: Pos,
    pub message: String,
}

fn err<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T, SyntaxError> {
    Err(SyntaxError { pos: Pos { line, column }, message: message.into() })
}

#[derive(Copy, Clone, Debug)]
struct Line<'a> {
    no: usize,
    indent: usize,
    text: &'a str,
}

impl Line<'_> {
    fn col(&self) -> usize {
        self.indent + 1
    }
}

/// Parses a whole document. An empty document yields a null scalar.
pub fn parse(src: &str) -> Result<Node, SyntaxError> {
    let src = src.strip_prefix('\u{feff}').unwrap_or(src);
    let raw: Vec<&str> = src.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let mut lines = Vec::new();
    let mut seen_content = false;
    for (i, l) in raw.iter().enumerate() {
        let no = i + 1;
        let indent = l.len() - l.trim_start_matches(' ').len();
        let rest = &l[indent..];
        if rest.starts_with('\t') && !strip_comment(rest).trim().is_empty() {
            return err(no, indent + 1, "tab characters are not allowed in indentation");
        }
        let text = strip_comment(rest).trim_end_matches([' ', '\t']);
        if text.is_empty() {
            continue;
        }
        if indent == 0 && (text == "---" || text.starts_with("--- ")) {
            if seen_content {
                return err(no, 1, "multiple documents are not supported");
            }
            let after = text[3..].trim_start();
            if !after.is_empty() {
                return err(no, 5, "content after document marker is not supported");
            }
            continue;
        }
        if indent == 0 && text == "..." {
            break;
        }
        if indent == 0 && text.starts_with('%') {
            return err(no, 1, "directives are not supported");
        }
        seen_content = true;
        lines.push(Line { no, indent, text });
    }
    let mut p = Parser { raw, lines, idx: 0, over: None };
    if p.peek().is_none() {
        return Ok(Node::Scalar { value: String::new(), quoted: false, pos: Pos { line: 1, column: 1 } });
    }
    let root = p.node(0, 0)?;
    if let Some(l) = p.peek() {
        return err(l.no, l.col(), "unexpected content after document root");
    }
    Ok(root)
}

/// Removes a trailing comment: `#` at the start or after whitespace,
/// outside quoted scalars.
fn strip_comment(s: &str) -> &str {
    let bytes = s.as_bytes();
    let mut quote: Option<u8> = None;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let prev = if i == 0 { b' ' } else { bytes[i - 1] };
        match quote {
            Some(b'"') => {
                if c == b'\\' {
                    i += 1;
                } else if c == b'"' {
                    quote = None;
                }
            }
            Some(_) => {
                if c == b'\'' {
                    if bytes.get(i + 1) == Some(&b'\'') {
                        i += 1;
                    } else {
                        quote = None;
                    }
                }
            }
            None => {
                if c == b'#' && (prev == b' ' || prev == b'\t' || i == 0) {
                    return &s[..i];
                }
                if (c == b'"' || c == b'\'') && matches!(prev, b' ' | b'[' | b'{' | b',') {
                    quote = Some(c);
                }
            }
        }
        i += 1;
    }
    s
}

fn is_seq_item(text: &str) -> bool {
    text == "-" || text.starts_with("- ")
}

/// Splits `key: rest` in block context, returning the end of the key and
/// the byte offset just past the colon.
fn split_mapping(text: &str) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut i = 0;
    if matches!(bytes.first(), Some(b'"') | Some(b'\'')) {
        let q = bytes[0];
        i = 1;
        while i < bytes.len() {
            if q == b'"' && bytes[i] == b'\\' {
                i += 2;
                continue;
            }
            if bytes[i] == q {
                if q == b'\'' && bytes.get(i + 1) == Some(&b'\'') {
                    i += 2;
                    continue;
                }
                break;
            }
            i += 1;
        }
        i += 1;
        let after = text.get(i..)?;
        let trimmed = after.trim_start_matches(' ');
        let j = i + (after.len() - trimmed.len());
        if trimmed.starts_with(':') && (trimmed.len() == 1 || trimmed.as_bytes()[1] == b' ') {
            return Some((i, j + 1));
        }
        return None;
    }
    if matches!(bytes.first(), Some(b'{') | Some(b'[')) {
        return None;
    }
    while i < bytes.len() {
        if bytes[i] == b':' && (i + 1 == bytes.len() || bytes[i + 1] == b' ') {
            return Some((i, i + 1));
        }
        i += 1;
    }
    None
}

struct Parser<'a> {
    raw: Vec<&'a str>,
    lines: Vec<Line<'a>>,
    idx: usize,
    /// Replacement for the current line (compact sequence items).
    over: Option<Line<'a>>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<Line<'a>> {
        self.over.or_else(|| self.lines.get(self.idx).copied())
    }

    fn advance(&mut self) {
        if self.over.take().is_none() {
            self.idx += 1;
        }
    }

    fn node(&mut self, min_indent: usize, depth: usize) -> Result<Node, SyntaxError> {
        let l = self.peek().expect("caller checked for a line");
        if depth > MAX_DEPTH {
            return err(l.no, l.col(), "nesting too deep");
        }
        if l.indent < min_indent {
            return err(l.no, l.col(), "bad indentation");
        }
        if is_seq_item(l.text) {
            self.seq(l.indent, depth)
        } else if split_mapping(l.text).is_some() {
            self.map(l.indent, depth)
        } else {
            self.advance();
            let v = self.inline(l.text, l.no, l.col(), depth)?;
            if let Some(n) = self.peek() {
                if n.indent > l.indent {
                    return err(n.no, n.col(), "unexpected indentation after scalar");
                }
            }
            Ok(v)
        }
    }

    fn seq(&mut self, indent: usize, depth: usize) -> Result<Node, SyntaxError> {
        let first = self.peek().expect("sequence start");
        let pos = Pos { line: first.no, column: first.col() };
        let mut items = Vec::new();
        while let Some(l) = self.peek() {
            if l.indent != indent || !is_seq_item(l.text) {
                if l.indent > indent {
                    return err(l.no, l.col(), "bad indentation in sequence");
                }
                break;
            }
            let rest = l.text[1..].trim_start_matches(' ');
            if rest.is_empty() {
                self.advance();
                match self.peek() {
                    Some(n) if n.indent > indent => items.push(self.node(indent + 1, depth + 1)?),
                    _ => items.push(null_at(l.no, l.col() + 1)),
                }
            } else {
                let off = l.text.len() - rest.len();
                self.advance();
                self.over = Some(Line { no: l.no, indent: indent + off, text: rest });
                items.push(self.node(indent + off, depth + 1)?);
            }
        }
        Ok(Node::Seq { items, pos })
    }

    fn map(&mut self, indent: usize, depth: usize) -> Result<Node, SyntaxError> {
        let first = self.peek().expect("mapping start");
        let pos = Pos { line: first.no, column: first.col() };
        let mut entries = Vec::new();
        while let Some(l) = self.peek() {
            if l.indent < indent {
                break;
            }
            if l.indent > indent {
                return err(l.no, l.col(), "bad indentation in mapping");
            }
            let Some((key_end, colon)) = split_mapping(l.text) else {
                if is_seq_item(l.text) {
                    return err(l.no, l.col(), "sequence item where a mapping entry was expected");
                }
                return err(l.no, l.col(), "expected a mapping entry `key: value`");
            };
            let key_pos = Pos { line: l.no, column: l.col() };
            let key_text = &l.text[..key_end];
            let key = if key_text.starts_with('"') || key_text.starts_with('\'') {
                let chars: Vec<(char, Pos)> = positioned(key_text, l.no, l.col());
                let mut c = Cursor { chars: &chars, i: 0, end: Pos { line: l.no, column: l.col() + key_text.len() } };
                match c.quoted()? {
                    Node::Scalar { value, .. } => value,
                    _ => unreachable!(),
                }
            } else {
                let k = key_text.trim_end();
                if k.is_empty() {
                    return err(l.no, l.col(), "empty mapping key");
                }
                check_plain_start(k, l.no, l.col())?;
                k.to_string()
            };
            let rest_raw = &l.text[colon..];
            let rest = rest_raw.trim_start_matches(' ');
            let rest_col = l.col() + colon + (rest_raw.len() - rest.len());
            self.advance();
            let value = if rest.is_empty() {
                match self.peek() {
                    Some(n) if n.indent > indent => self.node(indent + 1, depth + 1)?,
                    Some(n) if n.indent == indent && is_seq_item(n.text) => self.seq(indent, depth + 1)?,
                    _ => null_at(l.no, rest_col),
                }
            } else if rest.starts_with('|') || rest.starts_with('>') {
                self.block_scalar(rest, l.no, rest_col, indent)?
            } else {
                let v = self.inline(rest, l.no, rest_col, depth)?;
                if let Some(n) = self.peek() {
                    if n.indent > indent {
                        return err(n.no, n.col(), "unexpected indentation (multi-line plain scalars are not supported)");
                    }
                }
                v
            };
            entries.push(Entry { key, key_pos, value });
        }
        Ok(Node::Map { entries, pos })
    }

    fn block_scalar(&mut self, header: &str, no: usize, col: usize, parent_indent: usize) -> Result<Node, SyntaxError> {
        let literal = header.starts_with('|');
        let chomp = match &header[1..] {
            "" => 0,
            "-" => -1,
            "+" => 1,
            _ => return err(no, col + 1, "unsupported block scalar header"),
        };
        let mut body: Vec<&str> = Vec::new();
        let mut content_indent: Option<usize> = None;
        let mut last = no;
        let mut i = no; // raw index of the next line (0-based = no)
        while i < self.raw.len() {
            let r = self.raw[i];
            let ind = r.len() - r.trim_start_matches(' ').len();
            let blank = r.trim().is_empty();
            if blank {
                body.push("");
                i += 1;
                continue;
            }
            let ci = *content_indent.get_or_insert(ind);
            if ind <= parent_indent || ind < ci {
                break;
            }
            body.push(&r[ci..]);
            last = i + 1;
            i += 1;
        }
        // trailing blank lines belong to the scalar only for keep chomping
        let mut trailing = 0;
        while body.last() == Some(&"") {
            body.pop();
            trailing += 1;
        }
        while self.peek().map(|l| l.no <= last).unwrap_or(false) {
            self.advance();
        }
        let mut value = String::new();
        if literal {
            for (k, b) in body.iter().enumerate() {
                if k > 0 {
                    value.push('\n');
                }
                value.push_str(b);
            }
        } else {
            let mut prev_blank = true;
            for b in &body {
                if b.is_empty() {
                    value.push('\n');
                    prev_blank = true;
                } else {
                    if !prev_blank {
                        value.push(' ');
                    }
                    value.push_str(b);
                    prev_blank = false;
                }
            }
        }
        if !body.is_empty() {
            match chomp {
                0 => value.push('\n'),
                1 => {
                    value.push('\n');
                    for _ in 0..trailing {
                        value.push('\n');
                    }
                }
                _ => {}
            }
        }
        Ok(Node::Scalar { value, quoted: true, pos: Pos { line: no, column: col } })
    }

    /// A value that starts on the current line after a key or dash.
    fn inline(&mut self, text: &str, no: usize, col: usize, depth: usize) -> Result<Node, SyntaxError> {
        let first = text.as_bytes()[0];
        if first == b'{' || first == b'[' {
            let mut chars = positioned(text, no, col);
            let mut balance = flow_balance(text);
            let mut end = Pos { line: no, column: col + text.chars().count() };
            while balance > 0 {
                let Some(n) = self.lines.get(self.idx).copied() else {
                    return err(end.line, end.column, "unterminated flow collection");
                };
                self.idx += 1;
                chars.push((' ', end));
                chars.extend(positioned(n.text, n.no, n.col()));
                balance += flow_balance(n.text);
                end = Pos { line: n.no, column: n.col() + n.text.chars().count() };
            }
            let mut c = Cursor { chars: &chars, i: 0, end };
            let v = c.value(depth)?;
            c.skip_ws();
            if let Some((ch, p)) = c.peek_pos() {
                return err(p.line, p.column, format!("unexpected `{ch}` after flow collection"));
            }
            return Ok(v);
        }
        if first == b'"' || first == b'\'' {
            let chars = positioned(text, no, col);
            let end = Pos { line: no, column: col + text.chars().count() };
            let mut c = Cursor { chars: &chars, i: 0, end };
            let v = c.quoted()?;
            c.skip_ws();
            if let Some((_, p)) = c.peek_pos() {
                return err(p.line, p.column, "unexpected content after quoted scalar");
            }
            return Ok(v);
        }
        check_plain_start(text, no, col)?;
        if let Some(k) = text.find(": ") {
            return err(no, col + k, "mapping values are not allowed here");
        }
        Ok(Node::Scalar { value: text.to_string(), quoted: false, pos: Pos { line: no, column: col } })
    }
}

fn null_at(line: usize, column: usize) -> Node {
    Node::Scalar { value: String::new(), quoted: false, pos: Pos { line, column } }
}

fn check_plain_start(text: &str, no: usize, col: usize) -> Result<(), SyntaxError> {
    match text.as_bytes()[0] {
        b'&' => err(no, col, "anchors are not supported"),
        b'*' => err(no, col, "aliases are not supported"),
        b'!' => err(no, col, "tags are not supported"),
        b'%' | b'@' | b'`' => err(no, col, "reserved indicator at start of plain scalar"),
        b'|' | b'>' => err(no, col, "block scalar not allowed here"),
        b'}' | b']' | b',' => err(no, col, "unexpected flow indicator"),
        _ => Ok(()),
    }
}

/// Net count of open flow brackets, ignoring quoted text.
fn flow_balance(text: &str) -> i64 {
    let mut b = 0;
    let mut quote: Option<char> = None;
    let mut escape = false;
    for c in text.chars() {
        if let Some(q) = quote {
            if escape {
                escape = false;
            } else if q == '"' && c == '\\' {
                escape = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            '{' | '[' => b += 1,
            '}' | ']' => b -= 1,
            _ => {}
        }
    }
    b
}

fn positioned(text: &str, line: usize, col: usize) -> Vec<(char, Pos)> {
    text.chars().enumerate().map(|(i, c)| (c, Pos { line, column: col + i })).collect()
}

struct Cursor<'c> {
    chars: &'c [(char, Pos)],
    i: usize,
    end: Pos,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.i).map(|c| c.0)
    }

    fn peek_pos(&self) -> Option<(char, Pos)> {
        self.chars.get(self.i).copied()
    }

    fn pos(&self) -> Pos {
        self.chars.get(self.i).map(|c| c.1).unwrap_or(self.end)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(' ') | Some('\t')) {
            self.i += 1;
        }
    }

    fn fail<T>(&self, msg: &str) -> Result<T, SyntaxError> {
        let p = self.pos();
        err(p.line, p.column, msg)
    }

    fn value(&mut self, depth: usize) -> Result<Node, SyntaxError> {
        if depth > MAX_DEPTH {
            return self.fail("nesting too deep");
        }
        self.skip_ws();
        match self.peek() {
            None => self.fail("unterminated flow collection"),
            Some('{') => self.flow_map(depth),
            Some('[') => self.flow_seq(depth),
            Some('"') | Some('\'') => self.quoted(),
            Some(_) => self.plain(false),
        }
    }

    fn flow_map(&mut self, depth: usize) -> Result<Node, SyntaxError> {
        let pos = self.pos();
        self.i += 1;
        let mut entries = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return self.fail("unterminated flow collection"),
                Some('}') => {
                    self.i += 1;
                    break;
                }
                _ => {}
            }
            let key_pos = self.pos();
            let key = match self.peek() {
                Some('"') | Some('\'') => self.quoted()?,
                Some('{') | Some('[') => return self.fail("complex mapping keys are not supported"),
                _ => self.plain(true)?,
            };
            let Node::Scalar { value: key, .. } = key else { unreachable!() };
            self.skip_ws();
            let value = match self.peek() {
                Some(':') => {
                    self.i += 1;
                    self.skip_ws();
                    match self.peek() {
                        Some(',') | Some('}') => Node::Scalar { value: String::new(), quoted: false, pos: self.pos() },
                        _ => self.value(depth + 1)?,
                    }
                }
                Some(',') | Some('}') => Node::Scalar { value: String::new(), quoted: false, pos: self.pos() },
                None => return self.fail("unterminated flow collection"),
                Some(_) => return self.fail("expected `:` in flow mapping"),
            };
            entries.push(Entry { key, key_pos, value });
            self.skip_ws();
            match self.peek() {
                Some(',') => self.i += 1,
                Some('}') => {}
                None => return self.fail("unterminated flow collection"),
                Some(_) => return self.fail("expected `,` or `}` in flow mapping"),
            }
        }
        Ok(Node::Map { entries, pos })
    }

    fn flow_seq(&mut self, depth: usize) -> Result<Node, SyntaxError> {
        let pos = self.pos();
        self.i += 1;
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return self.fail("unterminated flow collection"),
                Some(']') => {
                    self.i += 1;
                    break;
                }
                _ => {}
            }
            items.push(self.value(depth + 1)?);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.i += 1,
                Some(']') => {}
                None => return self.fail("unterminated flow collection"),
                Some(_) => return self.fail("expected `,` or `]` in flow sequence"),
            }
        }
        Ok(Node::Seq { items, pos })
    }

    fn plain(&mut self, is_key: bool) -> Result<Node, SyntaxError> {
        let pos = self.pos();
        if let Some(c) = self.peek() {
            if matches!(c, '&' | '*' | '!' | '%' | '@' | '`' | '|' | '>') {
                return self.fail("unsupported indicator in flow scalar");
            }
        }
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if matches!(c, ',' | '}' | ']' | '{' | '[') {
                break;
            }
            if c == ':' {
                let next = self.chars.get(self.i + 1).map(|c| c.0);
                if is_key || matches!(next, None | Some(' ') | Some(',') | Some('}') | Some(']')) {
                    break;
                }
            }
            s.push(c);
            self.i += 1;
        }
        let s = s.trim_end();
        if s.is_empty() {
            return self.fail("expected a scalar");
        }
        Ok(Node::Scalar { value: s.to_string(), quoted: false, pos })
    }

    fn quoted(&mut self) -> Result<Node, SyntaxError> {
        let pos = self.pos();
        let q = self.peek().expect("quote");
        self.i += 1;
        let mut s = String::new();
        loop {
            let Some(c) = self.peek() else {
                return err(pos.line, pos.column, "unterminated quoted scalar");
            };
            self.i += 1;
            if c == q {
                if q == '\'' && self.peek() == Some('\'') {
                    self.i += 1;
                    s.push('\'');
                    continue;
                }
                break;
            }
            if q == '"' && c == '\\' {
                let Some(e) = self.peek() else {
                    return err(pos.line, pos.column, "unterminated quoted scalar");
                };
                self.i += 1;
                match e {
                    'n' => s.push('\n'),
                    't' => s.push('\t'),
                    'r' => s.push('\r'),
                    '0' => s.push('\0'),
                    '"' => s.push('"'),
                    '\\' => s.push('\\'),
                    '/' => s.push('/'),
                    ' ' => s.push(' '),
                    'u' => {
                        let mut code = 0u32;
                        for _ in 0..4 {
                            let d = self.peek().and_then(|c| c.to_digit(16));
                            let Some(d) = d else {
                                return self.fail("bad \\u escape");
                            };
                            code = code * 16 + d;
                            self.i += 1;
                        }
                        match char::from_u32(code) {
                            Some(ch) => s.push(ch),
                            None => return self.fail("bad \\u escape"),
                        }
                    }
                    _ => return self.fail("unknown escape sequence"),
                }
                continue;
            }
            s.push(c);
        }
        Ok(Node::Scalar { value: s, quoted: true, pos })
    }
}
