//! A small, total expression language for generated reward and
//! valid-state programs.
//!
//! ```text
//! program := ("let" IDENT "=" expr ";")* "return" expr ";"
//! ```
//!
//! Expressions are single-typed reals. Comparisons and `and`/`or`/`not`
//! yield 1.0 or 0.0; `and`, `or` and `if(c, a, b)` evaluate lazily. Calls
//! are limited to a fixed set of built-ins. There are no loops or
//! user-defined functions, so every program terminates.

mod ast;
mod machine;
mod parser;
mod printer;
mod validate;

pub use ast::{BinOp, Expr, Func, Program, ProgramKind, UnaryOp, FUNCS, RESERVED};
pub use machine::{CompiledProgram, EvalError};
pub use parser::{header_kind, parse, parse_file, ParseError};
pub use printer::{print_expr, print_program, to_source};
pub use validate::{validate, ValidationError};

/// Short grammar reference handed to code-generating models.
pub const GRAMMAR_REFERENCE: &str = "\
Programs are written in a small expression language:

    let <name> = <expr>;      (zero or more bindings, each may use earlier ones)
    return <expr>;            (exactly one, last)

Expressions use real numbers only. Available:
  literals        1, 0.5, 2e-3
  arithmetic      + - * /  and unary minus
  comparisons     < <= > >= ==   (yield 1 or 0)
  logic           and, or, not   (yield 1 or 0; a value is true when non-zero)
  conditional     if(cond, then_value, else_value)
  functions       abs(x) min(a, b) max(a, b) exp(x) log(x) sqrt(x) tanh(x)
                  sin(x) cos(x) clip(x, lo, hi) sq(x)
Lines starting with # are comments. There are no loops, assignments to
existing names, or user-defined functions. Division by zero, log of a
non-positive value and sqrt of a negative value are errors.
An eval program must return a 0/1-valued expression: a comparison, an
and/or/not combination, or if(...) whose branches are 0 or 1. Eval programs
may read state features only, not actions.";
