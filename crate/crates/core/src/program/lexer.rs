//! Tokenizer for the program dialect.
//!
//! Produces a flat token stream with explicit `Newline`, `Indent` and
//! `Dedent` tokens. Newlines inside brackets are ignored (implicit line
//! joining) and a trailing backslash joins physical lines. Indentation
//! widths must return to a level seen before; anything else is an
//! indentation fault.

use super::{ErrorLabel, ParseError};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Int(i64),
    Float(f64),
    Str(String),
    /// Raw body of an f-string; split into parts by the parser.
    FStr(String),
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

const OPS: &[&str] = &[
    "**=", "//=", "->", "**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "+", "-", "*", "/", "%", "<",
    ">", "=", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    Lexer::new(src).run()
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: u32,
    line_start: usize,
    depth: usize,
    indents: Vec<u32>,
    out: Vec<Token>,
}

fn err(line: u32, col: u32, message: impl Into<String>) -> ParseError {
    ParseError { line, col, message: message.into(), label: None }
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src, pos: 0, line: 1, line_start: 0, depth: 0, indents: vec![0], out: Vec::new() }
    }

    fn col(&self) -> u32 {
        (self.src[self.line_start..self.pos].chars().count() + 1) as u32
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.line_start = self.pos;
        }
        Some(c)
    }

    fn push(&mut self, tok: Tok, line: u32, col: u32) {
        self.out.push(Token { tok, line, col });
    }

    fn run(mut self) -> Result<Vec<Token>, ParseError> {
        let mut at_line_start = true;
        loop {
            if at_line_start && self.depth == 0 {
                if !self.indentation()? {
                    break;
                }
                at_line_start = false;
            }
            let Some(c) = self.peek() else { break };
            let (line, col) = (self.line, self.col());
            match c {
                ' ' | '\t' | '\r' | '\x0c' => {
                    self.bump();
                }
                '#' => self.skip_comment(),
                '\\' if matches!(self.peek_at(1), Some('\n')) => {
                    self.bump();
                    self.bump();
                }
                '\\' if self.peek_at(1) == Some('\r') && self.peek_at(2) == Some('\n') => {
                    self.bump();
                    self.bump();
                    self.bump();
                }
                '\n' => {
                    self.bump();
                    if self.depth == 0 {
                        if !matches!(self.out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
                            self.push(Tok::Newline, line, col);
                        }
                        at_line_start = true;
                    }
                }
                c if c.is_ascii_digit() || (c == '.' && self.peek_at(1).is_some_and(|d| d.is_ascii_digit())) => {
                    let tok = self.number()?;
                    self.push(tok, line, col);
                }
                c if c == '_' || c.is_alphabetic() => {
                    let start = self.pos;
                    while self.peek().is_some_and(|c| c == '_' || c.is_alphanumeric()) {
                        self.bump();
                    }
                    let word = &self.src[start..self.pos];
                    if let Some(q @ ('\'' | '"')) = self.peek() {
                        let lower = word.to_ascii_lowercase();
                        if matches!(lower.as_str(), "f" | "r" | "rf" | "fr" | "b" | "rb" | "br" | "u") {
                            if lower.contains('b') {
                                return Err(err(line, col, "bytes literals are not supported"));
                            }
                            let raw = lower.contains('r');
                            let body = self.string(q, raw)?;
                            let tok = if lower.contains('f') { Tok::FStr(body) } else { Tok::Str(body) };
                            self.push(tok, line, col);
                            continue;
                        }
                    }
                    self.push(Tok::Name(word.to_string()), line, col);
                }
                '\'' | '"' => {
                    let body = self.string(c, false)?;
                    self.push(Tok::Str(body), line, col);
                }
                _ => {
                    let rest = &self.src[self.pos..];
                    let Some(op) = OPS.iter().find(|op| rest.starts_with(**op)) else {
                        return Err(err(line, col, format!("invalid character {c:?}")));
                    };
                    for _ in 0..op.len() {
                        self.bump();
                    }
                    match *op {
                        "(" | "[" | "{" => self.depth += 1,
                        ")" | "]" | "}" => {
                            if self.depth == 0 {
                                return Err(err(line, col, format!("unmatched '{op}'")));
                            }
                            self.depth -= 1;
                        }
                        _ => {}
                    }
                    self.push(Tok::Op(op), line, col);
                }
            }
        }
        let (line, col) = (self.line, self.col());
        if self.depth > 0 {
            return Err(err(line, col, "unexpected end of input inside brackets"));
        }
        if !matches!(self.out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
            self.push(Tok::Newline, line, col);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(Tok::Dedent, line, col);
        }
        self.push(Tok::Eof, line, col);
        Ok(self.out)
    }

    fn skip_comment(&mut self) {
        while self.peek().is_some_and(|c| c != '\n') {
            self.bump();
        }
    }

    /// Measures the indentation of the next non-blank line and emits
    /// `Indent`/`Dedent` tokens. Returns false at end of input.
    fn indentation(&mut self) -> Result<bool, ParseError> {
        loop {
            let mut width = 0u32;
            while let Some(c) = self.peek() {
                match c {
                    ' ' => width += 1,
                    '\t' => width = (width / 8 + 1) * 8,
                    '\x0c' | '\r' => {}
                    _ => break,
                }
                self.bump();
            }
            match self.peek() {
                None => return Ok(false),
                Some('\n') => {
                    self.bump();
                    continue;
                }
                Some('#') => {
                    self.skip_comment();
                    continue;
                }
                Some(_) => {}
            }
            let (line, col) = (self.line, self.col());
            let current = *self.indents.last().expect("indent stack never empty");
            if width > current {
                self.indents.push(width);
                self.push(Tok::Indent, line, col);
            } else if width < current {
                while *self.indents.last().expect("indent stack never empty") > width {
                    self.indents.pop();
                    self.push(Tok::Dedent, line, col);
                }
                if *self.indents.last().expect("indent stack never empty") != width {
                    return Err(ParseError {
                        line,
                        col,
                        message: "unindent does not match any outer indentation level".into(),
                        label: Some(ErrorLabel::IndentationError),
                    });
                }
            }
            return Ok(true);
        }
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let (line, col) = (self.line, self.col());
        let start = self.pos;
        if self.peek() == Some('0') && matches!(self.peek_at(1), Some('x' | 'X')) {
            self.bump();
            self.bump();
            let digits_start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_hexdigit() || c == '_') {
                self.bump();
            }
            let digits: String = self.src[digits_start..self.pos].chars().filter(|c| *c != '_').collect();
            return i64::from_str_radix(&digits, 16)
                .map(Tok::Int)
                .map_err(|_| err(line, col, "invalid hexadecimal literal"));
        }
        let mut is_float = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == '_' {
                self.bump();
            } else if c == '.' && !is_float {
                is_float = true;
                self.bump();
            } else if matches!(c, 'e' | 'E')
                && (self.peek_at(1).is_some_and(|d| d.is_ascii_digit())
                    || (matches!(self.peek_at(1), Some('+' | '-'))
                        && self.peek_at(2).is_some_and(|d| d.is_ascii_digit())))
            {
                is_float = true;
                self.bump();
                if matches!(self.peek(), Some('+' | '-')) {
                    self.bump();
                }
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.bump();
                }
                break;
            } else {
                break;
            }
        }
        if self.peek().is_some_and(|c| c == '_' || c.is_alphanumeric()) {
            return Err(err(line, col, "invalid numeric literal"));
        }
        let text: String = self.src[start..self.pos].chars().filter(|c| *c != '_').collect();
        if is_float {
            text.parse::<f64>().map(Tok::Float).map_err(|_| err(line, col, "invalid float literal"))
        } else {
            text.parse::<i64>().map(Tok::Int).map_err(|_| err(line, col, "integer literal too large"))
        }
    }

    fn string(&mut self, quote: char, raw: bool) -> Result<String, ParseError> {
        let (line, col) = (self.line, self.col());
        let triple = self.peek_at(1) == Some(quote) && self.peek_at(2) == Some(quote);
        let open = if triple { 3 } else { 1 };
        for _ in 0..open {
            self.bump();
        }
        let mut out = String::new();
        loop {
            let Some(c) = self.peek() else {
                return Err(err(line, col, "unterminated string literal"));
            };
            if c == quote {
                if !triple {
                    self.bump();
                    return Ok(out);
                }
                if self.peek_at(1) == Some(quote) && self.peek_at(2) == Some(quote) {
                    self.bump();
                    self.bump();
                    self.bump();
                    return Ok(out);
                }
            }
            if c == '\n' && !triple {
                return Err(err(line, col, "unterminated string literal"));
            }
            self.bump();
            if c != '\\' {
                out.push(c);
                continue;
            }
            let Some(e) = self.bump() else {
                return Err(err(line, col, "unterminated string literal"));
            };
            if raw {
                out.push('\\');
                out.push(e);
                continue;
            }
            match e {
                '\n' => {}
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                '0' => out.push('\0'),
                '\\' => out.push('\\'),
                '\'' => out.push('\''),
                '"' => out.push('"'),
                'x' | 'u' => {
                    let n = if e == 'x' { 2 } else { 4 };
                    let mut code = 0u32;
                    for _ in 0..n {
                        let d = self.bump().and_then(|d| d.to_digit(16));
                        let Some(d) = d else {
                            return Err(err(line, col, "truncated escape sequence"));
                        };
                        code = code * 16 + d;
                    }
                    let Some(ch) = char::from_u32(code) else {
                        return Err(err(line, col, "invalid escape sequence"));
                    };
                    out.push(ch);
                }
                other => {
                    out.push('\\');
                    out.push(other);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn indent_and_dedent() {
        let toks = kinds("def f(x):\n  if x:\n    return 1\n  return 2\n");
        let indents = toks.iter().filter(|t| **t == Tok::Indent).count();
        let dedents = toks.iter().filter(|t| **t == Tok::Dedent).count();
        assert_eq!((indents, dedents), (2, 2));
        assert_eq!(toks.last(), Some(&Tok::Eof));
    }

    #[test]
    fn brackets_join_lines() {
        let toks = kinds("x = [\n  1,\n    2\n]\n");
        assert_eq!(toks.iter().filter(|t| **t == Tok::Newline).count(), 1);
        assert!(!toks.contains(&Tok::Indent));
    }

    #[test]
    fn inconsistent_dedent_is_indentation_error() {
        let e = tokenize("def f():\n   x = 1\n  return x\n").unwrap_err();
        assert_eq!(e.label, Some(ErrorLabel::IndentationError));
        assert_eq!(e.line, 3);
    }

    #[test]
    fn strings_and_escapes() {
        assert_eq!(kinds(r#"'a\'b' "c\n""#)[..2], [Tok::Str("a'b".into()), Tok::Str("c\n".into())]);
        assert_eq!(kinds("f'{x}!'")[0], Tok::FStr("{x}!".into()));
        assert_eq!(kinds("'''a\nb'''")[0], Tok::Str("a\nb".into()));
        assert!(tokenize("'abc").is_err());
    }

    #[test]
    fn numbers() {
        assert_eq!(
            kinds("12 1.5 1e3 .5 0x1f")[..5],
            [Tok::Int(12), Tok::Float(1.5), Tok::Float(1000.0), Tok::Float(0.5), Tok::Int(31)]
        );
        assert!(tokenize("99999999999999999999").is_err());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let toks = kinds("# head\n\nx = 1  # tail\n\n   # indented comment\ny = 2\n");
        assert!(!toks.contains(&Tok::Indent));
        assert_eq!(toks.iter().filter(|t| **t == Tok::Newline).count(), 2);
    }
}
