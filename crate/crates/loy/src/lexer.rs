//! Tokenizer for Loy source text.
//!
//! Newlines are kept as tokens: depends sources and modifies paths are
//! line-terminated lists, so the parser needs to see line breaks there.

use crate::span::Span;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    // Keywords
    Class,
    Ext,
    Invariant,
    Depends,
    Requires,
    Ensures,
    Modifies,
    All,
    Exists,
    No,
    Some,
    And,
    Or,
    Implies,
    Not,
    Set,
    // Punctuation
    LBrace,
    RBrace,
    LParen,
    RParen,
    Colon,
    Comma,
    Dot,
    Prime,
    Equals,
    Bar,
    Arrow, // <-
    Semi,
    Newline,
    Ident(String),
    Eof,
}

impl TokenKind {
    pub fn keyword(word: &str) -> Option<TokenKind> {
        Some(match word {
            "class" => TokenKind::Class,
            "ext" => TokenKind::Ext,
            "invariant" => TokenKind::Invariant,
            "depends" => TokenKind::Depends,
            "requires" => TokenKind::Requires,
            "ensures" => TokenKind::Ensures,
            "modifies" => TokenKind::Modifies,
            "all" => TokenKind::All,
            "exists" => TokenKind::Exists,
            "no" => TokenKind::No,
            "some" => TokenKind::Some,
            "and" => TokenKind::And,
            "or" => TokenKind::Or,
            "implies" => TokenKind::Implies,
            "not" => TokenKind::Not,
            "set" => TokenKind::Set,
            _ => return None,
        })
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Class => "class",
            TokenKind::Ext => "ext",
            TokenKind::Invariant => "invariant",
            TokenKind::Depends => "depends",
            TokenKind::Requires => "requires",
            TokenKind::Ensures => "ensures",
            TokenKind::Modifies => "modifies",
            TokenKind::All => "all",
            TokenKind::Exists => "exists",
            TokenKind::No => "no",
            TokenKind::Some => "some",
            TokenKind::And => "and",
            TokenKind::Or => "or",
            TokenKind::Implies => "implies",
            TokenKind::Not => "not",
            TokenKind::Set => "set",
            TokenKind::LBrace => "{",
            TokenKind::RBrace => "}",
            TokenKind::LParen => "(",
            TokenKind::RParen => ")",
            TokenKind::Colon => ":",
            TokenKind::Comma => ",",
            TokenKind::Dot => ".",
            TokenKind::Prime => "'",
            TokenKind::Equals => "=",
            TokenKind::Bar => "|",
            TokenKind::Arrow => "<-",
            TokenKind::Semi => ";",
            TokenKind::Newline => "newline",
            TokenKind::Ident(name) => return write!(f, "{name}"),
            TokenKind::Eof => "end of input",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexError {
    #[error("{span}: unexpected character `{ch}`")]
    UnexpectedChar { ch: char, span: Span },
}

/// Tokenize Loy source. `//` starts a line comment.
pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let mut tokens = Vec::new();
    let mut chars = source.chars().peekable();
    let mut line: u32 = 1;
    let mut col: u32 = 1;

    macro_rules! push {
        ($kind:expr, $span:expr) => {
            tokens.push(Token { kind: $kind, span: $span })
        };
    }

    while let Some(&ch) = chars.peek() {
        let span = Span::new(line, col);
        match ch {
            '\n' => {
                chars.next();
                push!(TokenKind::Newline, span);
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '/' => {
                chars.next();
                col += 1;
                if chars.peek() == Some(&'/') {
                    // comment runs to end of line; the newline itself is kept
                    while let Some(&c) = chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        chars.next();
                        col += 1;
                    }
                } else {
                    return Err(LexError::UnexpectedChar { ch: '/', span });
                }
            }
            '{' | '}' | '(' | ')' | ':' | ',' | '.' | '\'' | '=' | '|' | ';' => {
                chars.next();
                col += 1;
                let kind = match ch {
                    '{' => TokenKind::LBrace,
                    '}' => TokenKind::RBrace,
                    '(' => TokenKind::LParen,
                    ')' => TokenKind::RParen,
                    ':' => TokenKind::Colon,
                    ',' => TokenKind::Comma,
                    '.' => TokenKind::Dot,
                    '\'' => TokenKind::Prime,
                    '=' => TokenKind::Equals,
                    '|' => TokenKind::Bar,
                    ';' => TokenKind::Semi,
                    _ => unreachable!(),
                };
                push!(kind, span);
            }
            '<' => {
                chars.next();
                col += 1;
                if chars.peek() == Some(&'-') {
                    chars.next();
                    col += 1;
                    push!(TokenKind::Arrow, span);
                } else {
                    return Err(LexError::UnexpectedChar { ch: '<', span });
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        word.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                let kind = TokenKind::keyword(&word).unwrap_or(TokenKind::Ident(word));
                push!(kind, span);
            }
            other => return Err(LexError::UnexpectedChar { ch: other, span }),
        }
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        span: Span::new(line, col),
    });
    Ok(tokens)
}
