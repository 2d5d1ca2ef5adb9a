//! Test-only helpers: an independent tree-walking interpreter for the
//! expression language and a random program generator.

#![allow(dead_code)]

use std::collections::HashMap;

use oodrecover_core::dsl::{print_expr, BinOp, Expr, Program, ProgramKind, UnaryOp};
use rand::Rng;

/// Naive interpreter: recursive descent over the tree with a name map.
/// Errors carry the printed failing subexpression.
pub fn reference_eval(p: &Program, inputs: &HashMap<String, f64>) -> Result<f64, String> {
    let mut env = inputs.clone();
    for (name, e) in &p.bindings {
        let v = walk(e, &env)?;
        env.insert(name.clone(), v);
    }
    walk(&p.result, &env)
}

fn bool01(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn finite(v: f64, e: &Expr) -> Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(print_expr(e))
    }
}

fn walk(e: &Expr, env: &HashMap<String, f64>) -> Result<f64, String> {
    match e {
        Expr::Num(v) => Ok(*v),
        Expr::Ident(n) => Ok(*env.get(n).expect("validated identifier")),
        Expr::Unary(UnaryOp::Neg, x) => Ok(-walk(x, env)?),
        Expr::Unary(UnaryOp::Not, x) => Ok(bool01(walk(x, env)? == 0.0)),
        Expr::Binary(BinOp::And, l, r) => {
            if walk(l, env)? == 0.0 {
                Ok(0.0)
            } else {
                Ok(bool01(walk(r, env)? != 0.0))
            }
        }
        Expr::Binary(BinOp::Or, l, r) => {
            if walk(l, env)? != 0.0 {
                Ok(1.0)
            } else {
                Ok(bool01(walk(r, env)? != 0.0))
            }
        }
        Expr::Binary(op, l, r) => {
            let a = walk(l, env)?;
            let b = walk(r, env)?;
            let v = match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div if b == 0.0 => return Err(print_expr(e)),
                BinOp::Div => a / b,
                BinOp::Lt => bool01(a < b),
                BinOp::Le => bool01(a <= b),
                BinOp::Gt => bool01(a > b),
                BinOp::Ge => bool01(a >= b),
                BinOp::Eq => bool01(a == b),
                BinOp::And | BinOp::Or => unreachable!(),
            };
            finite(v, e)
        }
        Expr::If(c, a, b) => {
            if walk(c, env)? != 0.0 {
                walk(a, env)
            } else {
                walk(b, env)
            }
        }
        Expr::Call(name, args) => {
            let vals = args.iter().map(|a| walk(a, env)).collect::<Result<Vec<_>, _>>()?;
            let x = vals[0];
            let v = match name.as_str() {
                "abs" => x.abs(),
                "min" => {
                    if x <= vals[1] {
                        x
                    } else {
                        vals[1]
                    }
                }
                "max" => {
                    if x >= vals[1] {
                        x
                    } else {
                        vals[1]
                    }
                }
                "exp" => x.exp(),
                "log" if x <= 0.0 => return Err(print_expr(e)),
                "log" => x.ln(),
                "sqrt" if x < 0.0 => return Err(print_expr(e)),
                "sqrt" => x.sqrt(),
                "tanh" => x.tanh(),
                "sin" => x.sin(),
                "cos" => x.cos(),
                "clip" if vals[1] > vals[2] => return Err(print_expr(e)),
                "clip" => {
                    let (lo, hi) = (vals[1], vals[2]);
                    match (x < lo, x > hi) {
                        (true, _) => lo,
                        (_, true) => hi,
                        _ => x,
                    }
                }
                "sq" => x * x,
                other => panic!("unvalidated function {other}"),
            };
            finite(v, e)
        }
    }
}

const UNARY_FUNCS: [&str; 8] = ["abs", "exp", "log", "sqrt", "tanh", "sin", "cos", "sq"];

/// Random program over the given identifiers. Eval programs get a
/// 0/1-shaped result and never read `action_names`.
pub fn random_program<R: Rng>(
    rng: &mut R,
    kind: ProgramKind,
    view_names: &[String],
    action_names: &[String],
) -> Program {
    let mut names: Vec<String> = view_names.to_vec();
    if kind == ProgramKind::Reward {
        names.extend_from_slice(action_names);
    }
    let mut bindings = Vec::new();
    for i in 0..rng.random_range(0..4) {
        let e = random_expr(rng, &names, 3);
        let name = format!("v{i}");
        bindings.push((name.clone(), e));
        names.push(name);
    }
    let result = match kind {
        ProgramKind::Reward => random_expr(rng, &names, 4),
        ProgramKind::Eval => random_bool(rng, &names, 3),
    };
    Program { kind, bindings, result }
}

fn random_literal<R: Rng>(rng: &mut R) -> Expr {
    match rng.random_range(0..4) {
        0 => Expr::Num(0.0),
        1 => Expr::Num(1.0),
        2 => Expr::Num(rng.random_range(0..10) as f64 * 0.5),
        _ => Expr::Num(rng.random_range(-3.0..3.0f64).abs()),
    }
}

pub fn random_expr<R: Rng>(rng: &mut R, names: &[String], depth: usize) -> Expr {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.6) && !names.is_empty() {
            Expr::Ident(names[rng.random_range(0..names.len())].clone())
        } else {
            random_literal(rng)
        };
    }
    let d = depth - 1;
    match rng.random_range(0..10) {
        0 => Expr::unary(UnaryOp::Neg, random_expr(rng, names, d)),
        1 | 2 => {
            let ops = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div];
            Expr::binary(ops[rng.random_range(0..4)], random_expr(rng, names, d), random_expr(rng, names, d))
        }
        3 => Expr::if_(random_bool(rng, names, d), random_expr(rng, names, d), random_expr(rng, names, d)),
        4 | 5 => Expr::call(
            UNARY_FUNCS[rng.random_range(0..UNARY_FUNCS.len())],
            vec![random_expr(rng, names, d)],
        ),
        6 => Expr::call(
            if rng.random_bool(0.5) { "min" } else { "max" },
            vec![random_expr(rng, names, d), random_expr(rng, names, d)],
        ),
        7 => Expr::call(
            "clip",
            vec![
                random_expr(rng, names, d),
                Expr::unary(UnaryOp::Neg, Expr::Num(1.0)),
                Expr::Num(rng.random_range(0..3) as f64),
            ],
        ),
        8 => random_bool(rng, names, d),
        _ => Expr::binary(BinOp::Mul, random_literal(rng), random_expr(rng, names, d)),
    }
}

pub fn random_bool<R: Rng>(rng: &mut R, names: &[String], depth: usize) -> Expr {
    let d = depth.saturating_sub(1);
    match rng.random_range(0..6) {
        0 | 1 => {
            let ops = [BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge, BinOp::Eq];
            Expr::binary(ops[rng.random_range(0..5)], random_expr(rng, names, d), random_expr(rng, names, d))
        }
        2 if depth > 0 => Expr::binary(
            if rng.random_bool(0.5) { BinOp::And } else { BinOp::Or },
            random_bool(rng, names, d),
            random_bool(rng, names, d),
        ),
        3 if depth > 0 => Expr::unary(UnaryOp::Not, random_expr(rng, names, d)),
        4 => Expr::if_(
            random_bool(rng, names, d),
            Expr::Num(rng.random_range(0..2) as f64),
            Expr::Num(rng.random_range(0..2) as f64),
        ),
        _ => Expr::binary(BinOp::Lt, random_expr(rng, names, d), Expr::Num(rng.random_range(0.0..2.0))),
    }
}

/// Inputs in a moderate range, with exact zeros mixed in so that domain
/// errors occur.
pub fn random_inputs<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.random_range(0..8) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(-4.0..4.0),
        })
        .collect()
}

pub fn input_map(names: &[String], values: &[f64]) -> HashMap<String, f64> {
    names.iter().cloned().zip(values.iter().copied()).collect()
}
