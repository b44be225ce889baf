//! Shared tokenizer for the text formats (trees, automata, transducers, queries).
//!
//! All formats are whitespace-insensitive token streams; `#` starts a comment
//! that runs to the end of the line. Errors carry 1-based line and column.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.msg)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    LParen,
    RParen,
    Comma,
    Arrow,
    /// `@` followed by digits.
    Value(String),
    /// Identifier, number, or `^`/`:`-joined form such as `h^z` or `1:a`.
    Word(String),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
            Token::Comma => write!(f, ","),
            Token::Arrow => write!(f, "->"),
            Token::Value(v) => write!(f, "@{v}"),
            Token::Word(w) => write!(f, "{w}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Token,
    pub line: usize,
    pub col: usize,
}

pub fn error(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError { line, col, msg: msg.into() }
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == ':' || c == '^'
}

pub fn tokenize(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        match c {
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
            }
            c if c.is_whitespace() => {
                chars.next();
                if c == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
            }
            '(' => {
                chars.next();
                col += 1;
                out.push(Spanned { tok: Token::LParen, line: tl, col: tc });
            }
            ')' => {
                chars.next();
                col += 1;
                out.push(Spanned { tok: Token::RParen, line: tl, col: tc });
            }
            ',' => {
                chars.next();
                col += 1;
                out.push(Spanned { tok: Token::Comma, line: tl, col: tc });
            }
            '-' => {
                chars.next();
                col += 1;
                match chars.peek() {
                    Some('>') => {
                        chars.next();
                        col += 1;
                        out.push(Spanned { tok: Token::Arrow, line: tl, col: tc });
                    }
                    _ => return Err(error(tl, tc, "expected '->'")),
                }
            }
            '@' => {
                chars.next();
                col += 1;
                let mut digits = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() {
                        digits.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                if digits.is_empty() {
                    return Err(error(tl, tc, "expected digits after '@'"));
                }
                out.push(Spanned { tok: Token::Value(digits), line: tl, col: tc });
            }
            c if is_word_char(c) => {
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if is_word_char(c) {
                        word.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push(Spanned { tok: Token::Word(word), line: tl, col: tc });
            }
            c => return Err(error(tl, tc, format!("unexpected character '{c}'"))),
        }
    }
    Ok(out)
}

/// Cursor over a token stream with positioned errors.
pub struct Tokens {
    toks: Vec<Spanned>,
    pos: usize,
    /// Position of end-of-input, for errors past the last token.
    end: (usize, usize),
}

impl Tokens {
    pub fn new(src: &str) -> Result<Self, ParseError> {
        let toks = tokenize(src)?;
        let end = toks
            .last()
            .map(|s| (s.line, s.col + s.tok.to_string().len()))
            .unwrap_or((1, 1));
        Ok(Tokens { toks, pos: 0, end })
    }

    pub fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    pub fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub fn here(&self) -> (usize, usize) {
        self.peek().map(|s| (s.line, s.col)).unwrap_or(self.end)
    }

    pub fn err(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        error(line, col, msg)
    }

    pub fn expect(&mut self, want: &Token) -> Result<Spanned, ParseError> {
        match self.next() {
            Some(s) if &s.tok == want => Ok(s),
            Some(s) => Err(error(s.line, s.col, format!("expected '{want}', found '{}'", s.tok))),
            None => Err(self.err(format!("expected '{want}', found end of input"))),
        }
    }

    pub fn expect_word(&mut self) -> Result<(String, usize, usize), ParseError> {
        match self.next() {
            Some(Spanned { tok: Token::Word(w), line, col }) => Ok((w, line, col)),
            Some(s) => Err(error(s.line, s.col, format!("expected identifier, found '{}'", s.tok))),
            None => Err(self.err("expected identifier, found end of input")),
        }
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub fn expect_end(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("trailing input"))
        }
    }
}
