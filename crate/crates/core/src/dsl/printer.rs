use std::fmt::Write as _;

use super::ast::{Expr, Program, UnaryOp};

/// Minimal-parenthesis rendering that parses back to the same tree.
pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Num(v) => {
            let _ = write!(out, "{v:?}");
        }
        Expr::Ident(name) => out.push_str(name),
        Expr::Unary(op, inner) => {
            out.push_str(match op {
                UnaryOp::Neg => "-",
                UnaryOp::Not => "not ",
            });
            if matches!(**inner, Expr::Binary(..)) {
                out.push('(');
                write_expr(out, inner);
                out.push(')');
            } else {
                write_expr(out, inner);
            }
        }
        Expr::Binary(op, l, r) => {
            let p = op.precedence();
            let wrap = |out: &mut String, child: &Expr, needs: bool| {
                if needs {
                    out.push('(');
                    write_expr(out, child);
                    out.push(')');
                } else {
                    write_expr(out, child);
                }
            };
            let left_needs = matches!(**l, Expr::Binary(lop, ..) if lop.precedence() < p);
            let right_needs = matches!(**r, Expr::Binary(rop, ..) if rop.precedence() <= p);
            wrap(out, l, left_needs);
            let _ = write!(out, " {} ", op.symbol());
            wrap(out, r, right_needs);
        }
        Expr::If(c, a, b) => {
            out.push_str("if(");
            write_expr(out, c);
            out.push_str(", ");
            write_expr(out, a);
            out.push_str(", ");
            write_expr(out, b);
            out.push(')');
        }
        Expr::Call(name, args) => {
            out.push_str(name);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a);
            }
            out.push(')');
        }
    }
}

/// Program body, one statement per line.
pub fn print_program(p: &Program) -> String {
    let mut s = String::new();
    for (name, e) in &p.bindings {
        let _ = writeln!(s, "let {name} = {};", print_expr(e));
    }
    let _ = writeln!(s, "return {};", print_expr(&p.result));
    s
}

/// Program file text with its `# kind:` header.
pub fn to_source(p: &Program) -> String {
    format!("# kind: {}\n{}", p.kind, print_program(p))
}
