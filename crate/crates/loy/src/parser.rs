//! Recursive descent parser for Loy.
//!
//! Concrete syntax: class bodies are brace-delimited, one clause per line or
//! semicolon-separated, `//` begins a line comment. `ext` is optional.
//! Operator precedence, tightest first: `not`, `and`, `or`, `implies`;
//! quantifier bodies extend maximally to the right.

use crate::ast::*;
use crate::lexer::{tokenize, LexError, Token, TokenKind};
use crate::span::Span;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("lexical error: {0}")]
    Lex(#[from] LexError),
    #[error("{span}: expected {expected}, found `{found}`")]
    Unexpected {
        expected: String,
        found: String,
        span: Span,
    },
    #[error("{span}: {message}")]
    Invalid { message: String, span: Span },
}

pub type ParseResult<T> = Result<T, ParseError>;

/// Parse a single source text into a specification.
pub fn parse(source: &str) -> ParseResult<LoySpec> {
    let tokens = tokenize(source)?;
    Parser::new(tokens).parse_spec()
}

/// Parse several source texts (e.g. one per `.loy` file) into one specification.
pub fn parse_files<'a>(sources: impl IntoIterator<Item = &'a str>) -> ParseResult<LoySpec> {
    let mut classes = Vec::new();
    for src in sources {
        classes.extend(parse(src)?.classes);
    }
    Ok(LoySpec { classes })
}

/// Parse a standalone formula (used for inline diagnosis targets).
pub fn parse_formula(source: &str) -> ParseResult<Formula> {
    let tokens = tokenize(source)?;
    let mut p = Parser::new(tokens);
    p.skip_newlines();
    let f = p.parse_formula()?;
    p.skip_newlines();
    p.expect(TokenKind::Eof)?;
    Ok(f)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(tokens: Vec<Token>) -> Self {
        Parser { tokens, pos: 0 }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_kind(&self) -> &TokenKind {
        &self.peek().kind
    }

    /// Kind of the nth token ahead, not counting newlines.
    fn peek_solid(&self, n: usize) -> &TokenKind {
        let mut seen = 0;
        for tok in &self.tokens[self.pos..] {
            if tok.kind == TokenKind::Newline {
                continue;
            }
            if seen == n {
                return &tok.kind;
            }
            seen += 1;
        }
        &TokenKind::Eof
    }

    fn advance(&mut self) -> Token {
        let tok = self.tokens[self.pos.min(self.tokens.len() - 1)].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        tok
    }

    fn skip_newlines(&mut self) {
        while *self.peek_kind() == TokenKind::Newline {
            self.advance();
        }
    }

    fn at_clause_end(&self) -> bool {
        matches!(
            self.peek_kind(),
            TokenKind::Newline | TokenKind::Semi | TokenKind::RBrace | TokenKind::Eof
        )
    }

    fn expect(&mut self, kind: TokenKind) -> ParseResult<Token> {
        if *self.peek_kind() == kind {
            Ok(self.advance())
        } else {
            Err(self.unexpected(&kind.to_string()))
        }
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let tok = self.peek();
        ParseError::Unexpected {
            expected: expected.to_string(),
            found: tok.kind.to_string(),
            span: tok.span,
        }
    }

    fn parse_ident(&mut self, what: &str) -> ParseResult<Ident> {
        match self.peek_kind().clone() {
            TokenKind::Ident(name) => {
                let tok = self.advance();
                Ok(Ident::new(name, tok.span))
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn parse_spec(&mut self) -> ParseResult<LoySpec> {
        let mut classes = Vec::new();
        self.skip_newlines();
        while *self.peek_kind() != TokenKind::Eof {
            classes.push(self.parse_class()?);
            self.skip_newlines();
        }
        Ok(LoySpec { classes })
    }

    fn parse_class(&mut self) -> ParseResult<ClassSpec> {
        self.expect(TokenKind::Class)?;
        let name = self.parse_ident("class name")?;
        let superclass = if *self.peek_kind() == TokenKind::Ext {
            self.advance();
            Some(self.parse_ident("superclass name")?)
        } else {
            None
        };
        self.skip_newlines();
        self.expect(TokenKind::LBrace)?;

        let mut fields = Vec::new();
        let mut depends = Vec::new();
        let mut invariants = Vec::new();
        let mut methods = Vec::new();

        loop {
            self.skip_newlines();
            match self.peek_kind() {
                TokenKind::RBrace => {
                    self.advance();
                    break;
                }
                TokenKind::Semi => {
                    self.advance();
                }
                TokenKind::Depends => depends.push(self.parse_depends()?),
                TokenKind::Invariant => {
                    self.advance();
                    invariants.push(self.parse_formula()?);
                }
                TokenKind::Ident(_) => {
                    // `name :` is a field; `name (` or `Ret name (` is a method
                    match self.peek_solid(1) {
                        TokenKind::Colon => fields.push(self.parse_field_decl(true)?),
                        TokenKind::LParen => methods.push(self.parse_method(None)?),
                        TokenKind::Ident(_) if *self.peek_solid(2) == TokenKind::LParen => {
                            let ret = self.parse_ident("return class")?;
                            self.skip_newlines();
                            methods.push(self.parse_method(Some(ret))?);
                        }
                        _ => return Err(self.unexpected("`:` or `(` after identifier")),
                    }
                }
                _ => return Err(self.unexpected("class body item or `}`")),
            }
        }

        Ok(ClassSpec {
            name,
            superclass,
            fields,
            depends,
            invariants,
            methods,
        })
    }

    fn parse_field_decl(&mut self, allow_set: bool) -> ParseResult<FieldDecl> {
        let name = self.parse_ident("field name")?;
        self.expect(TokenKind::Colon)?;
        let multiplicity = if *self.peek_kind() == TokenKind::Set {
            let tok = self.advance();
            if !allow_set {
                return Err(ParseError::Invalid {
                    message: "set-valued parameters are not allowed".into(),
                    span: tok.span,
                });
            }
            Multiplicity::Set
        } else {
            Multiplicity::Scalar
        };
        let target = self.parse_ident("class name")?;
        Ok(FieldDecl {
            name,
            target,
            multiplicity,
        })
    }

    fn parse_depends(&mut self) -> ParseResult<DependsClause> {
        self.expect(TokenKind::Depends)?;
        let dependent = self.parse_ident("field name")?;
        self.expect(TokenKind::Arrow)?;
        let mut sources = vec![self.parse_ident("source field name")?];
        // sources run to the end of the line (or `;` / `}`)
        while !self.at_clause_end() {
            sources.push(self.parse_ident("source field name")?);
        }
        Ok(DependsClause { dependent, sources })
    }

    fn parse_method(&mut self, return_class: Option<Ident>) -> ParseResult<MethodSpec> {
        let name = self.parse_ident("method name")?;
        self.expect(TokenKind::LParen)?;
        let mut params = Vec::new();
        self.skip_newlines();
        if *self.peek_kind() != TokenKind::RParen {
            loop {
                params.push(self.parse_field_decl(false)?);
                self.skip_newlines();
                if *self.peek_kind() == TokenKind::Comma {
                    self.advance();
                    self.skip_newlines();
                } else {
                    break;
                }
            }
        }
        self.expect(TokenKind::RParen)?;

        let mut requires = Vec::new();
        let mut ensures = Vec::new();
        let mut modifies = Vec::new();
        loop {
            self.skip_newlines();
            match self.peek_kind() {
                TokenKind::Requires => {
                    self.advance();
                    requires.push(self.parse_formula()?);
                }
                TokenKind::Ensures => {
                    self.advance();
                    ensures.push(self.parse_formula()?);
                }
                TokenKind::Modifies => {
                    self.advance();
                    modifies.push(self.parse_field_path()?);
                    while !self.at_clause_end() {
                        modifies.push(self.parse_field_path()?);
                    }
                }
                _ => break,
            }
        }

        Ok(MethodSpec {
            return_class,
            name,
            params,
            requires,
            ensures,
            modifies,
        })
    }

    fn parse_field_path(&mut self) -> ParseResult<FieldPath> {
        let mut segments = vec![self.parse_ident("field name")?];
        while *self.peek_kind() == TokenKind::Dot {
            self.advance();
            segments.push(self.parse_ident("field name")?);
        }
        Ok(FieldPath { segments })
    }

    // --- formulas ---

    fn parse_formula(&mut self) -> ParseResult<Formula> {
        self.parse_implies()
    }

    fn parse_implies(&mut self) -> ParseResult<Formula> {
        let lhs = self.parse_or()?;
        if *self.peek_kind() == TokenKind::Implies {
            self.advance();
            let rhs = self.parse_implies()?; // right-associative
            Ok(Formula::Implies(Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn parse_or(&mut self) -> ParseResult<Formula> {
        let first = self.parse_and()?;
        if *self.peek_kind() != TokenKind::Or {
            return Ok(first);
        }
        let mut parts = vec![first];
        while *self.peek_kind() == TokenKind::Or {
            self.advance();
            parts.push(self.parse_and()?);
        }
        Ok(Formula::Or(parts))
    }

    fn parse_and(&mut self) -> ParseResult<Formula> {
        let first = self.parse_unary()?;
        if *self.peek_kind() != TokenKind::And {
            return Ok(first);
        }
        let mut parts = vec![first];
        while *self.peek_kind() == TokenKind::And {
            self.advance();
            parts.push(self.parse_unary()?);
        }
        Ok(Formula::And(parts))
    }

    fn parse_unary(&mut self) -> ParseResult<Formula> {
        match self.peek_kind() {
            TokenKind::Not => {
                self.advance();
                Ok(Formula::Not(Box::new(self.parse_unary()?)))
            }
            TokenKind::All | TokenKind::Exists => {
                let is_all = *self.peek_kind() == TokenKind::All;
                self.advance();
                let var = self.parse_ident("quantified variable")?;
                self.expect(TokenKind::Colon)?;
                let class = self.parse_ident("class name")?;
                self.expect(TokenKind::Bar)?;
                let body = Box::new(self.parse_formula()?);
                Ok(if is_all {
                    Formula::All { var, class, body }
                } else {
                    Formula::Exists { var, class, body }
                })
            }
            TokenKind::No => {
                self.advance();
                Ok(Formula::No(self.parse_expr()?))
            }
            TokenKind::Some => {
                self.advance();
                Ok(Formula::Some(self.parse_expr()?))
            }
            TokenKind::LParen => {
                self.advance();
                self.skip_newlines();
                let f = self.parse_formula()?;
                self.skip_newlines();
                self.expect(TokenKind::RParen)?;
                Ok(f)
            }
            TokenKind::Ident(_) => {
                let lhs = self.parse_expr()?;
                self.expect(TokenKind::Equals)?;
                let rhs = self.parse_expr()?;
                Ok(Formula::Equal(lhs, rhs))
            }
            _ => Err(self.unexpected("formula")),
        }
    }

    fn parse_expr(&mut self) -> ParseResult<Expr> {
        let ident = self.parse_ident("expression")?;
        let primed = self.eat_prime();
        let mut expr = Expr::Name { ident, primed };
        while *self.peek_kind() == TokenKind::Dot {
            self.advance();
            let field = self.parse_ident("field name")?;
            let primed = self.eat_prime();
            expr = Expr::Field {
                base: Box::new(expr),
                field,
                primed,
            };
        }
        Ok(expr)
    }

    fn eat_prime(&mut self) -> bool {
        if *self.peek_kind() == TokenKind::Prime {
            self.advance();
            true
        } else {
            false
        }
    }
}
