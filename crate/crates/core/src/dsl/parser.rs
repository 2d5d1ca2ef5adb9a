//! Lexer and recursive-descent parser.

use thiserror::Error;

use super::ast::{BinOp, Expr, Program, ProgramKind, UnaryOp, RESERVED};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Let,
    Return,
    If,
    And,
    Or,
    Not,
    LParen,
    RParen,
    Comma,
    Semi,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", tok_text(other)),
        }
    }
}

fn tok_text(t: &Tok) -> &'static str {
    match t {
        Tok::Let => "let",
        Tok::Return => "return",
        Tok::If => "if",
        Tok::And => "and",
        Tok::Or => "or",
        Tok::Not => "not",
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::Comma => ",",
        Tok::Semi => ";",
        Tok::Assign => "=",
        Tok::Plus => "+",
        Tok::Minus => "-",
        Tok::Star => "*",
        Tok::Slash => "/",
        Tok::Lt => "<",
        Tok::Le => "<=",
        Tok::Gt => ">",
        Tok::Ge => ">=",
        Tok::EqEq => "==",
        _ => "",
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, column, message: String| ParseError { line, column, message };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let peek = chars.get(i + 1).copied();
        let mut adv = 1;
        let tok = if c.is_ascii_digit() || (c == '.' && peek.is_some_and(|p| p.is_ascii_digit())) {
            let start = i;
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                    j = k;
                }
            }
            let text: String = chars[start..j].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| err(l0, c0, format!("malformed number `{text}`")))?;
            if !v.is_finite() {
                return Err(err(l0, c0, format!("number `{text}` is out of range")));
            }
            adv = j - i;
            Tok::Num(v)
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            adv = j - i;
            match word.as_str() {
                "let" => Tok::Let,
                "return" => Tok::Return,
                "if" => Tok::If,
                "and" => Tok::And,
                "or" => Tok::Or,
                "not" => Tok::Not,
                _ => Tok::Ident(word),
            }
        } else {
            let mut two = |t| {
                adv = 2;
                t
            };
            match (c, peek) {
                ('<', Some('=')) => two(Tok::Le),
                ('>', Some('=')) => two(Tok::Ge),
                ('=', Some('=')) => two(Tok::EqEq),
                ('&', Some('&')) => two(Tok::And),
                ('|', Some('|')) => two(Tok::Or),
                ('<', _) => Tok::Lt,
                ('>', _) => Tok::Gt,
                ('=', _) => Tok::Assign,
                ('!', _) => Tok::Not,
                ('(', _) => Tok::LParen,
                (')', _) => Tok::RParen,
                (',', _) => Tok::Comma,
                (';', _) => Tok::Semi,
                ('+', _) => Tok::Plus,
                ('-', _) => Tok::Minus,
                ('*', _) => Tok::Star,
                ('/', _) => Tok::Slash,
                _ => return Err(err(l0, c0, format!("unexpected character `{c}`"))),
            }
        };
        out.push(Token { tok, line: l0, column: c0 });
        i += adv;
        col += adv;
    }
    out.push(Token { tok: Tok::Eof, line, column: col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error_at(t: &Token, message: String) -> ParseError {
        ParseError {
            line: t.line,
            column: t.column,
            message,
        }
    }

    fn expect(&mut self, want: Tok, context: &str) -> Result<Token, ParseError> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(Self::error_at(
                &t,
                format!("expected `{}` {context}, found {}", tok_text(&want), t.tok.describe()),
            ))
        }
    }

    fn ident(&mut self, context: &str) -> Result<String, ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) => Ok(s),
            ref other if RESERVED.contains(&tok_text(other)) => Err(Self::error_at(
                &t,
                format!("reserved word `{}` cannot be used as {context}", tok_text(other)),
            )),
            ref other => Err(Self::error_at(
                &t,
                format!("expected {context}, found {}", other.describe()),
            )),
        }
    }

    fn program(&mut self, kind: ProgramKind) -> Result<Program, ParseError> {
        let mut bindings = Vec::new();
        loop {
            let t = self.peek().clone();
            match t.tok {
                Tok::Let => {
                    self.next();
                    let name = self.ident("a binding name")?;
                    self.expect(Tok::Assign, "after the binding name")?;
                    let e = self.expr()?;
                    self.expect(Tok::Semi, "after the binding")?;
                    bindings.push((name, e));
                }
                Tok::Return => {
                    self.next();
                    let result = self.expr()?;
                    self.expect(Tok::Semi, "after the return expression")?;
                    let end = self.next();
                    if end.tok != Tok::Eof {
                        return Err(Self::error_at(
                            &end,
                            format!("unexpected {} after `return`", end.tok.describe()),
                        ));
                    }
                    return Ok(Program { kind, bindings, result });
                }
                Tok::Eof => return Err(Self::error_at(&t, "missing `return` statement".to_string())),
                ref other => {
                    return Err(Self::error_at(
                        &t,
                        format!("expected `let` or `return`, found {}", other.describe()),
                    ))
                }
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn binop(t: &Tok) -> Option<BinOp> {
        Some(match t {
            Tok::Or => BinOp::Or,
            Tok::And => BinOp::And,
            Tok::EqEq => BinOp::Eq,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::Plus => BinOp::Add,
            Tok::Minus => BinOp::Sub,
            Tok::Star => BinOp::Mul,
            Tok::Slash => BinOp::Div,
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = Self::binop(&self.peek().tok) {
            if op.precedence() < min_prec {
                break;
            }
            self.next();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().tok {
            Tok::Minus => {
                self.next();
                Ok(Expr::unary(UnaryOp::Neg, self.unary()?))
            }
            Tok::Not => {
                self.next();
                Ok(Expr::unary(UnaryOp::Not, self.unary()?))
            }
            _ => self.primary(),
        }
    }

    fn args(&mut self, open: &Token) -> Result<Vec<Expr>, ParseError> {
        let unclosed = |t: &Token| {
            if t.tok == Tok::Eof {
                Self::error_at(open, "unclosed `(`: input ended inside the argument list".to_string())
            } else {
                Self::error_at(t, format!("expected `,` or `)` in argument list, found {}", t.tok.describe()))
            }
        };
        let mut args = Vec::new();
        if self.peek().tok == Tok::RParen {
            self.next();
            return Ok(args);
        }
        loop {
            if self.peek().tok == Tok::Eof {
                return Err(unclosed(self.peek()));
            }
            args.push(self.expr()?);
            let t = self.next();
            match t.tok {
                Tok::Comma => continue,
                Tok::RParen => return Ok(args),
                _ => return Err(unclosed(&t)),
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Ident(ref name) => {
                if self.peek().tok == Tok::LParen {
                    let open = self.next();
                    let args = self.args(&open)?;
                    Ok(Expr::Call(name.clone(), args))
                } else {
                    Ok(Expr::Ident(name.clone()))
                }
            }
            Tok::If => {
                let open = self.expect(Tok::LParen, "after `if`")?;
                let args = self.args(&open)?;
                match <[Expr; 3]>::try_from(args) {
                    Ok([c, a, b]) => Ok(Expr::if_(c, a, b)),
                    Err(args) => Err(Self::error_at(
                        &t,
                        format!("`if` takes 3 arguments (condition, then, else), got {}", args.len()),
                    )),
                }
            }
            Tok::LParen => {
                if self.peek().tok == Tok::Eof {
                    return Err(Self::error_at(&t, "unclosed `(` at end of input".to_string()));
                }
                let e = self.expr()?;
                let close = self.next();
                if close.tok != Tok::RParen {
                    return Err(if close.tok == Tok::Eof {
                        Self::error_at(&t, "unclosed `(` at end of input".to_string())
                    } else {
                        Self::error_at(&close, format!("expected `)`, found {}", close.tok.describe()))
                    });
                }
                Ok(e)
            }
            Tok::Let | Tok::Return | Tok::And | Tok::Or | Tok::Not => Err(Self::error_at(
                &t,
                format!("reserved word `{}` cannot start an expression", tok_text(&t.tok)),
            )),
            ref other => Err(Self::error_at(
                &t,
                format!("expected an expression, found {}", other.describe()),
            )),
        }
    }
}

/// Parses a program body; `#` comments are ignored.
pub fn parse(source: &str, kind: ProgramKind) -> Result<Program, ParseError> {
    let toks = lex(source)?;
    Parser { toks, pos: 0 }.program(kind)
}

/// Reads the `# kind: reward|eval` header comment, if present.
pub fn header_kind(source: &str) -> Option<Result<ProgramKind, String>> {
    for line in source.lines() {
        let l = line.trim();
        if l.is_empty() {
            continue;
        }
        let body = l.strip_prefix('#')?.trim();
        if let Some(k) = body.strip_prefix("kind:") {
            return Some(k.trim().parse());
        }
    }
    None
}

/// Parses a program file, taking its kind from the header line.
pub fn parse_file(source: &str) -> Result<Program, ParseError> {
    let kind = match header_kind(source) {
        Some(Ok(k)) => k,
        Some(Err(msg)) => return Err(ParseError { line: 1, column: 1, message: msg }),
        None => {
            return Err(ParseError {
                line: 1,
                column: 1,
                message: "missing `# kind: reward|eval` header".to_string(),
            })
        }
    };
    parse(source, kind)
}
