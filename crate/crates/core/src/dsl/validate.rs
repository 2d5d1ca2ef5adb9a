use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::ast::{Expr, Func, Program, ProgramKind, UnaryOp, FUNCS};
use crate::types::FieldSchema;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("unknown identifier `{name}`")]
    UnknownIdentifier { name: String },
    #[error("unknown function `{name}`; allowed functions: {}", allowed_functions())]
    UnknownFunction { name: String },
    #[error("`{func}` takes {expected} argument(s), got {actual}")]
    Arity { func: String, expected: usize, actual: usize },
    #[error("`{name}` is bound more than once")]
    DuplicateBinding { name: String },
    #[error("binding `{name}` shadows an input field of the same name")]
    ShadowsInput { name: String },
    #[error("eval programs may only read state features; `{name}` is an action field")]
    ActionInEval { name: String },
    #[error(
        "eval program must return a 0/1-valued expression: a comparison, an and/or/not combination, \
         if(...) whose branches are 0/1-valued, or the literal 0 or 1"
    )]
    NonBooleanEval,
}

fn allowed_functions() -> String {
    FUNCS.iter().map(|f| f.name()).collect::<Vec<_>>().join(", ")
}

/// Checks names, calls and (for eval programs) the 0/1 result shape.
/// Reports every problem found, not just the first.
pub fn validate(
    program: &Program,
    view: &FieldSchema,
    action: &FieldSchema,
) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();
    let inputs: HashSet<&str> = view.names().collect();
    let actions: HashSet<&str> = action.names().collect();
    let mut bound: HashMap<&str, bool> = HashMap::new();
    for (name, e) in &program.bindings {
        check_expr(e, program.kind, &inputs, &actions, &bound, &mut errors);
        if inputs.contains(name.as_str()) || actions.contains(name.as_str()) {
            errors.push(ValidationError::ShadowsInput { name: name.clone() });
        }
        if bound.contains_key(name.as_str()) {
            errors.push(ValidationError::DuplicateBinding { name: name.clone() });
        } else {
            bound.insert(name, is_boolean(e, &bound));
        }
    }
    check_expr(&program.result, program.kind, &inputs, &actions, &bound, &mut errors);
    if program.kind == ProgramKind::Eval && !is_boolean(&program.result, &bound) {
        errors.push(ValidationError::NonBooleanEval);
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn check_expr(
    e: &Expr,
    kind: ProgramKind,
    inputs: &HashSet<&str>,
    actions: &HashSet<&str>,
    bound: &HashMap<&str, bool>,
    errors: &mut Vec<ValidationError>,
) {
    let rec = |e: &Expr, errors: &mut Vec<ValidationError>| check_expr(e, kind, inputs, actions, bound, errors);
    match e {
        Expr::Num(_) => {}
        Expr::Ident(name) => {
            let n = name.as_str();
            if bound.contains_key(n) || inputs.contains(n) {
            } else if actions.contains(n) {
                if kind == ProgramKind::Eval {
                    errors.push(ValidationError::ActionInEval { name: name.clone() });
                }
            } else {
                errors.push(ValidationError::UnknownIdentifier { name: name.clone() });
            }
        }
        Expr::Unary(_, inner) => rec(inner, errors),
        Expr::Binary(_, l, r) => {
            rec(l, errors);
            rec(r, errors);
        }
        Expr::If(c, a, b) => {
            rec(c, errors);
            rec(a, errors);
            rec(b, errors);
        }
        Expr::Call(name, args) => {
            match Func::from_name(name) {
                None => errors.push(ValidationError::UnknownFunction { name: name.clone() }),
                Some(f) if f.arity() != args.len() => errors.push(ValidationError::Arity {
                    func: name.clone(),
                    expected: f.arity(),
                    actual: args.len(),
                }),
                Some(_) => {}
            }
            for a in args {
                rec(a, errors);
            }
        }
    }
}

/// Syntactic guarantee that `e` evaluates to exactly 0 or 1.
fn is_boolean(e: &Expr, bound: &HashMap<&str, bool>) -> bool {
    match e {
        Expr::Num(v) => *v == 0.0 || *v == 1.0,
        Expr::Binary(op, ..) => op.is_comparison() || op.is_logical(),
        Expr::Unary(UnaryOp::Not, _) => true,
        Expr::Unary(UnaryOp::Neg, _) => false,
        Expr::If(_, a, b) => is_boolean(a, bound) && is_boolean(b, bound),
        Expr::Ident(name) => bound.get(name.as_str()).copied().unwrap_or(false),
        Expr::Call(..) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use crate::envs::make;

    fn check(src: &str, kind: ProgramKind) -> Result<(), Vec<ValidationError>> {
        let env = make("cartpole").unwrap();
        let spec = env.spec();
        validate(&parse(src, kind).unwrap(), &spec.reward_view_schema, &spec.action_schema)
    }

    #[test]
    fn unknown_identifier_is_named() {
        let errs = check("return theta_dot_fake;", ProgramKind::Reward).unwrap_err();
        assert_eq!(errs, vec![ValidationError::UnknownIdentifier { name: "theta_dot_fake".into() }]);
        assert!(errs[0].to_string().contains("theta_dot_fake"));
    }

    #[test]
    fn eval_result_shape() {
        assert_eq!(
            check("return abs_theta;", ProgramKind::Eval).unwrap_err(),
            vec![ValidationError::NonBooleanEval]
        );
        check("return if(abs_theta < 0.5, 1, 0);", ProgramKind::Eval).unwrap();
        check("let ok = abs_theta <= 0.5; return ok and abs_theta_dot <= 2;", ProgramKind::Eval).unwrap();
        check("let ok = abs_theta; return ok;", ProgramKind::Eval).unwrap_err();
        check("return if(x < 0, 2, 0);", ProgramKind::Eval).unwrap_err();
        check("return 1;", ProgramKind::Eval).unwrap();
    }

    #[test]
    fn calls_and_bindings() {
        let errs = check("return foo(1) + abs(1, 2);", ProgramKind::Reward).unwrap_err();
        assert!(matches!(&errs[0], ValidationError::UnknownFunction { name } if name == "foo"));
        assert!(matches!(&errs[1], ValidationError::Arity { expected: 1, actual: 2, .. }));
        let errs = check("let a = 1; let a = 2; let theta = 3; return a;", ProgramKind::Reward).unwrap_err();
        assert_eq!(errs.len(), 2);
        assert!(check("let a = b; let b = 1; return a;", ProgramKind::Reward).is_err());
    }

    #[test]
    fn actions_only_in_reward_programs() {
        check("return -sq(force);", ProgramKind::Reward).unwrap();
        let errs = check("return force < 0;", ProgramKind::Eval).unwrap_err();
        assert!(matches!(&errs[0], ValidationError::ActionInEval { .. }));
    }
}
