//! Validated programs compiled to a slot-addressed stack machine.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::ast::{BinOp, Expr, Func, Program, ProgramKind, UnaryOp};
use super::printer::{print_expr, to_source};
use super::validate::{validate, ValidationError};
use crate::types::FieldSchema;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} in `{expr}`")]
pub struct EvalError {
    pub message: String,
    /// Printed form of the failing subexpression.
    pub expr: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Load(usize),
    Store(usize),
    Neg,
    Not,
    Bin(BinOp),
    Call(Func),
    /// Pops; jumps when the popped value is zero.
    JumpIfZero(usize),
    /// Pops; jumps when the popped value is non-zero.
    JumpIfNonZero(usize),
    Jump(usize),
    /// Replaces the top of stack with 1.0 if non-zero, else 0.0.
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Instr {
    op: Op,
    /// Index into `sources` for instructions that can fail.
    src: usize,
}

/// A program that passed validation, ready for repeated evaluation.
/// Inputs are the reward-view values followed by the action values.
#[derive(Debug, Clone)]
pub struct CompiledProgram {
    program: Program,
    view: Arc<FieldSchema>,
    action: Arc<FieldSchema>,
    code: Vec<Instr>,
    sources: Vec<String>,
    n_slots: usize,
    max_stack: usize,
}

struct Compiler {
    slots: HashMap<String, usize>,
    code: Vec<Instr>,
    sources: Vec<String>,
}

impl Compiler {
    fn emit(&mut self, op: Op) -> usize {
        self.code.push(Instr { op, src: usize::MAX });
        self.code.len() - 1
    }

    fn emit_checked(&mut self, op: Op, e: &Expr) {
        self.sources.push(print_expr(e));
        self.code.push(Instr { op, src: self.sources.len() - 1 });
    }

    fn patch(&mut self, at: usize) {
        let target = self.code.len();
        match &mut self.code[at].op {
            Op::JumpIfZero(t) | Op::JumpIfNonZero(t) | Op::Jump(t) => *t = target,
            _ => unreachable!("patching a non-jump"),
        }
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Num(v) => {
                self.emit(Op::Const(*v));
            }
            Expr::Ident(name) => {
                let slot = self.slots[name.as_str()];
                self.emit(Op::Load(slot));
            }
            Expr::Unary(UnaryOp::Neg, inner) => {
                self.expr(inner);
                self.emit(Op::Neg);
            }
            Expr::Unary(UnaryOp::Not, inner) => {
                self.expr(inner);
                self.emit(Op::Not);
            }
            Expr::Binary(BinOp::And, l, r) => {
                self.expr(l);
                let short = self.emit(Op::JumpIfZero(0));
                self.expr(r);
                self.emit(Op::Truth);
                let done = self.emit(Op::Jump(0));
                self.patch(short);
                self.emit(Op::Const(0.0));
                self.patch(done);
            }
            Expr::Binary(BinOp::Or, l, r) => {
                self.expr(l);
                let short = self.emit(Op::JumpIfNonZero(0));
                self.expr(r);
                self.emit(Op::Truth);
                let done = self.emit(Op::Jump(0));
                self.patch(short);
                self.emit(Op::Const(1.0));
                self.patch(done);
            }
            Expr::Binary(op, l, r) => {
                self.expr(l);
                self.expr(r);
                self.emit_checked(Op::Bin(*op), e);
            }
            Expr::If(c, a, b) => {
                self.expr(c);
                let to_else = self.emit(Op::JumpIfZero(0));
                self.expr(a);
                let done = self.emit(Op::Jump(0));
                self.patch(to_else);
                self.expr(b);
                self.patch(done);
            }
            Expr::Call(name, args) => {
                let f = Func::from_name(name).expect("validated call");
                for a in args {
                    self.expr(a);
                }
                self.emit_checked(Op::Call(f), e);
            }
        }
    }
}

fn truth(v: f64) -> f64 {
    if v != 0.0 {
        1.0
    } else {
        0.0
    }
}

fn apply_bin(op: BinOp, a: f64, b: f64) -> Result<f64, &'static str> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err("division by zero");
            }
            a / b
        }
        BinOp::Lt => (a < b) as u8 as f64,
        BinOp::Le => (a <= b) as u8 as f64,
        BinOp::Gt => (a > b) as u8 as f64,
        BinOp::Ge => (a >= b) as u8 as f64,
        BinOp::Eq => (a == b) as u8 as f64,
        BinOp::And | BinOp::Or => unreachable!("logical operators compile to jumps"),
    })
}

fn apply_call(f: Func, args: &[f64]) -> Result<f64, &'static str> {
    let x = args[0];
    Ok(match f {
        Func::Abs => x.abs(),
        // Explicit comparisons keep signed zeros deterministic: ties return
        // the first argument.
        Func::Min => {
            if args[1] < x {
                args[1]
            } else {
                x
            }
        }
        Func::Max => {
            if args[1] > x {
                args[1]
            } else {
                x
            }
        }
        Func::Exp => x.exp(),
        Func::Log => {
            if x <= 0.0 {
                return Err("log of a non-positive value");
            }
            x.ln()
        }
        Func::Sqrt => {
            if x < 0.0 {
                return Err("sqrt of a negative value");
            }
            x.sqrt()
        }
        Func::Tanh => x.tanh(),
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Clip => {
            let (lo, hi) = (args[1], args[2]);
            if lo > hi {
                return Err("clip lower bound exceeds upper bound");
            }
            if x < lo {
                lo
            } else if x > hi {
                hi
            } else {
                x
            }
        }
        Func::Sq => x * x,
    })
}

impl CompiledProgram {
    /// Validates `program` against the schemas and compiles it.
    pub fn new(
        program: Program,
        view: Arc<FieldSchema>,
        action: Arc<FieldSchema>,
    ) -> Result<Self, Vec<ValidationError>> {
        validate(&program, &view, &action)?;
        let mut c = Compiler {
            slots: HashMap::new(),
            code: Vec::new(),
            sources: Vec::new(),
        };
        for (i, name) in view.names().chain(action.names()).enumerate() {
            c.slots.insert(name.to_string(), i);
        }
        let mut next = view.len() + action.len();
        for (name, e) in &program.bindings {
            c.expr(e);
            c.emit(Op::Store(next));
            c.slots.insert(name.clone(), next);
            next += 1;
        }
        c.expr(&program.result);
        let Compiler { code, sources, .. } = c;
        let max_stack = stack_depth(&code);
        Ok(Self {
            program,
            view,
            action,
            code,
            sources,
            n_slots: next,
            max_stack,
        })
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn kind(&self) -> ProgramKind {
        self.program.kind
    }

    pub fn view_schema(&self) -> &Arc<FieldSchema> {
        &self.view
    }

    pub fn action_schema(&self) -> &Arc<FieldSchema> {
        &self.action
    }

    pub fn source(&self) -> String {
        to_source(&self.program)
    }

    /// Raw program value. Eval programs may pass an empty action slice.
    pub fn evaluate(&self, view: &[f64], action: &[f64]) -> Result<f64, EvalError> {
        self.evaluate_counted(view, action, &mut 0)
    }

    /// As [`CompiledProgram::evaluate`], adding the number of executed
    /// instructions to `steps`. Jumps only go forward, so this never exceeds
    /// [`CompiledProgram::code_len`].
    pub fn evaluate_counted(&self, view: &[f64], action: &[f64], steps: &mut usize) -> Result<f64, EvalError> {
        let input_err = |message: String| EvalError { message, expr: "<inputs>".to_string() };
        if view.len() != self.view.len() {
            return Err(input_err(format!(
                "expected {} reward-view values, got {}",
                self.view.len(),
                view.len()
            )));
        }
        let needs_action = self.kind() == ProgramKind::Reward;
        if needs_action && action.len() != self.action.len() {
            return Err(input_err(format!(
                "expected {} action values, got {}",
                self.action.len(),
                action.len()
            )));
        }
        if let Some(v) = view.iter().chain(action).find(|v| !v.is_finite()) {
            return Err(input_err(format!("non-finite input value {v}")));
        }
        let mut slots = vec![0.0; self.n_slots];
        slots[..view.len()].copy_from_slice(view);
        if needs_action {
            slots[view.len()..view.len() + action.len()].copy_from_slice(action);
        }
        let mut stack: Vec<f64> = Vec::with_capacity(self.max_stack);
        let mut pc = 0;
        while pc < self.code.len() {
            let ins = self.code[pc];
            pc += 1;
            *steps += 1;
            let fail = |message: &str| EvalError {
                message: message.to_string(),
                expr: self.sources[ins.src].clone(),
            };
            match ins.op {
                Op::Const(v) => stack.push(v),
                Op::Load(i) => stack.push(slots[i]),
                Op::Store(i) => slots[i] = stack.pop().expect("stack underflow"),
                Op::Neg => {
                    let v = stack.last_mut().expect("stack underflow");
                    *v = -*v;
                }
                Op::Not => {
                    let v = stack.last_mut().expect("stack underflow");
                    *v = if *v == 0.0 { 1.0 } else { 0.0 };
                }
                Op::Truth => {
                    let v = stack.last_mut().expect("stack underflow");
                    *v = truth(*v);
                }
                Op::Bin(op) => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.pop().expect("stack underflow");
                    let r = apply_bin(op, a, b).map_err(fail)?;
                    if !r.is_finite() {
                        return Err(fail("non-finite result"));
                    }
                    stack.push(r);
                }
                Op::Call(f) => {
                    let n = f.arity();
                    let at = stack.len() - n;
                    let r = apply_call(f, &stack[at..]).map_err(fail)?;
                    if !r.is_finite() {
                        return Err(fail("non-finite result"));
                    }
                    stack.truncate(at);
                    stack.push(r);
                }
                Op::JumpIfZero(t) => {
                    if stack.pop().expect("stack underflow") == 0.0 {
                        pc = t;
                    }
                }
                Op::JumpIfNonZero(t) => {
                    if stack.pop().expect("stack underflow") != 0.0 {
                        pc = t;
                    }
                }
                Op::Jump(t) => pc = t,
            }
        }
        debug_assert_eq!(stack.len(), 1);
        Ok(stack.pop().expect("result on stack"))
    }

    /// Reward value at `(view of s_{t+1}, a_t)`.
    pub fn eval_reward(&self, view: &[f64], action: &[f64]) -> Result<f64, EvalError> {
        assert_eq!(self.kind(), ProgramKind::Reward, "eval_reward on an eval program");
        self.evaluate(view, action)
    }

    /// Valid-state flag at the view of `s_t`; exactly 0 or 1.
    pub fn eval_flag(&self, view: &[f64]) -> Result<u8, EvalError> {
        assert_eq!(self.kind(), ProgramKind::Eval, "eval_flag on a reward program");
        Ok((self.evaluate(view, &[])? != 0.0) as u8)
    }

    /// Instruction count; a hard bound on evaluation steps since jumps only
    /// go forward.
    pub fn code_len(&self) -> usize {
        self.code.len()
    }
}

/// Upper bound on stack depth, ignoring jump structure.
fn stack_depth(code: &[Instr]) -> usize {
    let mut depth: isize = 0;
    let mut max = 0;
    for ins in code {
        depth += match ins.op {
            Op::Const(_) | Op::Load(_) => 1,
            Op::Store(_) | Op::Bin(_) | Op::JumpIfZero(_) | Op::JumpIfNonZero(_) => -1,
            Op::Call(f) => 1 - f.arity() as isize,
            _ => 0,
        };
        max = max.max(depth.max(0) as usize);
    }
    max + 1
}
