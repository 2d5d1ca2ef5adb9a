mod common;

use std::sync::Arc;

use common::{input_map, random_inputs, random_program, reference_eval};
use oodrecover_core::dsl::{parse, print_program, CompiledProgram, ProgramKind};
use oodrecover_core::envs::make;
use oodrecover_core::types::FieldSchema;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn schemas() -> (Arc<FieldSchema>, Arc<FieldSchema>) {
    let env = make("flipbot").unwrap();
    let spec = env.spec();
    (spec.reward_view_schema.clone(), spec.action_schema.clone())
}

fn names(s: &FieldSchema) -> Vec<String> {
    s.names().map(str::to_string).collect()
}

#[test]
fn compiled_matches_reference_on_random_programs() {
    let (view, action) = schemas();
    let (vn, an) = (names(&view), names(&action));
    let mut all = vn.clone();
    all.extend(an.iter().cloned());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut ok, mut errs) = (0, 0);
    for i in 0..2000 {
        let kind = if i % 2 == 0 { ProgramKind::Reward } else { ProgramKind::Eval };
        let prog = random_program(&mut rng, kind, &vn, &an);
        let compiled = CompiledProgram::new(prog.clone(), view.clone(), action.clone())
            .unwrap_or_else(|e| panic!("generated program failed validation: {e:?}\n{}", print_program(&prog)));
        for _ in 0..5 {
            let inputs = random_inputs(&mut rng, all.len());
            let (v, a) = inputs.split_at(vn.len());
            let fast = compiled.evaluate(v, a);
            let slow = reference_eval(&prog, &input_map(&all, &inputs));
            match (&fast, &slow) {
                (Ok(x), Ok(y)) => {
                    assert_eq!(x.to_bits(), y.to_bits(), "{}", print_program(&prog));
                    ok += 1;
                }
                (Err(e), Err(expr)) => {
                    assert_eq!(&e.expr, expr, "{}", print_program(&prog));
                    errs += 1;
                }
                _ => panic!("disagreement {fast:?} vs {slow:?}\n{}", print_program(&prog)),
            }
        }
    }
    assert!(ok > 5000 && errs > 50, "ok {ok} errs {errs}");
}

#[test]
fn eval_programs_yield_zero_or_one() {
    let (view, action) = schemas();
    let vn = names(&view);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..2000 {
        let prog = random_program(&mut rng, ProgramKind::Eval, &vn, &[]);
        let compiled = CompiledProgram::new(prog, view.clone(), action.clone()).unwrap();
        for _ in 0..5 {
            let v = random_inputs(&mut rng, vn.len());
            if let Ok(raw) = compiled.evaluate(&v, &[]) {
                assert!(raw == 0.0 || raw == 1.0, "raw eval value {raw}");
                assert_eq!(compiled.eval_flag(&v).unwrap() as f64, raw);
            }
        }
    }
}

#[test]
fn evaluation_is_bounded_by_code_length() {
    let (view, action) = schemas();
    let (vn, an) = (names(&view), names(&action));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let prog = random_program(&mut rng, ProgramKind::Reward, &vn, &an);
        let compiled = CompiledProgram::new(prog, view.clone(), action.clone()).unwrap();
        let inputs = random_inputs(&mut rng, vn.len() + an.len());
        let mut steps = 0;
        let first = compiled.evaluate_counted(&inputs[..vn.len()], &inputs[vn.len()..], &mut steps);
        assert!(steps <= compiled.code_len());
        let again = compiled.evaluate(&inputs[..vn.len()], &inputs[vn.len()..]);
        assert_eq!(first.map(f64::to_bits), again.map(f64::to_bits));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn print_parse_round_trip(seed in any::<u64>(), eval in any::<bool>()) {
        let (view, action) = schemas();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = if eval { ProgramKind::Eval } else { ProgramKind::Reward };
        let prog = random_program(&mut rng, kind, &names(&view), &names(&action));
        let printed = print_program(&prog);
        let reparsed = parse(&printed, kind).unwrap();
        prop_assert_eq!(&reparsed, &prog);
        prop_assert_eq!(print_program(&reparsed), printed);
    }

    #[test]
    fn parser_never_panics(src in "[a-z0-9_ ();,=<>!&|+*/.#-]{0,60}") {
        let _ = parse(&src, ProgramKind::Reward);
    }
}
