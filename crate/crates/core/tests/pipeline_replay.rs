mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use oodrecover_core::dsl::{parse_file, ProgramKind};
use oodrecover_core::envs::{make, Environment, SceneDocument};
use oodrecover_core::pipeline::*;
use oodrecover_core::types::StateVector;

fn fixture_dir(env: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(env)
}

fn fixture(env: &str) -> (Box<dyn Environment>, SceneDocument, RecordedClient) {
    let dir = fixture_dir(env);
    (
        make(env).unwrap(),
        SceneDocument::load(&dir).unwrap(),
        RecordedClient::load(&dir.join(TRANSCRIPT_FILE)).unwrap(),
    )
}

fn canned(env: &str, file: &str) -> String {
    std::fs::read_to_string(fixture_dir(env).join(file)).unwrap().trim().to_string()
}

fn state(env: &dyn Environment, v: Vec<f64>) -> StateVector {
    StateVector::new(v, env.spec().state_schema.clone()).unwrap()
}

#[test]
fn recorded_ood_description_matches_fixture() {
    let (_, snap, mut client) = fixture("cartpole");
    assert!(snap.text.contains("hanging downward below the cart"));
    let cfg = PipelineConfig::default();
    let mut s = Session::new(&mut client, &cfg);
    let d = s.describe_ood(&snap).unwrap();
    assert_eq!(d, canned("cartpole", "ood.txt"));
    assert!(d.contains("hanging straight down below the cart"));
    assert_eq!(s.transcript.exchanges.len(), 1);
}

#[test]
fn unrecorded_prompt_is_a_deterministic_error() {
    let (_, mut snap, mut client) = fixture("cartpole");
    snap.text.push_str("Extra line.\n");
    let cfg = PipelineConfig::default();
    let mut s = Session::new(&mut client, &cfg);
    let e1 = s.describe_ood(&snap).unwrap_err().to_string();
    let e2 = s.describe_ood(&snap).unwrap_err().to_string();
    assert!(e1.contains("unrecorded prompt"), "{e1}");
    assert_eq!(e1, e2);
    assert_eq!(s.transcript.exchanges.len(), 2);
}

#[test]
fn behavior_reasoning_preconditions_and_logging() {
    let mut client = ScriptedClient::new(["swing the pole up"]);
    let cfg = PipelineConfig::default();
    {
        let mut s = Session::new(&mut client, &cfg);
        let e = s.reason_behavior("  ", "balance").unwrap_err();
        assert!(matches!(e, PipelineError::EmptyInput { what: "d_ood", .. }), "{e}");
        assert!(s.transcript.exchanges.is_empty());
        let d = s.reason_behavior("hanging", "balance").unwrap();
        assert_eq!(d, "swing the pole up");
        assert_eq!(s.transcript.exchanges.len(), 1);
        let prompt = &s.transcript.exchanges[0].request.messages[1].content;
        let valid = prompt.find("identify a valid state").unwrap();
        let behavior = prompt.find("describe the behavior").unwrap();
        assert!(valid < behavior);
    }
    assert_eq!(client.seen.len(), 1);
}

#[test]
fn empty_responses_are_retried_and_logged() {
    let mut client = ScriptedClient::new(["", "  \n", "pole below cart"]);
    let cfg = PipelineConfig::default();
    let (env, snap, _) = fixture("cartpole");
    let _ = env;
    let mut s = Session::new(&mut client, &cfg);
    assert_eq!(s.describe_ood(&snap).unwrap(), "pole below cart");
    assert_eq!(s.transcript.exchanges.len(), 3);
    assert_eq!(s.transcript.exchanges.iter().map(|e| e.attempt).collect::<Vec<_>>(), [1, 2, 3]);

    let mut client = ScriptedClient::new(["", "", "", "late"]);
    let mut s = Session::new(&mut client, &cfg);
    let e = s.describe_ood(&snap).unwrap_err();
    assert!(matches!(e, PipelineError::EmptyResponse { attempts: 3, .. }), "{e}");
    assert_eq!(s.transcript.exchanges.len(), 3);
}

#[test]
fn fixture_programs_validate_and_separate_valid_from_ood() {
    let (env, _, _) = fixture("cartpole");
    let spec = env.spec();
    let code = canned("cartpole", "code.txt");
    let (reward, eval) = compile_reply(&code, &spec.reward_view_schema, &spec.action_schema).unwrap();
    let names: Vec<String> = spec.reward_view_schema.names().map(String::from).collect();
    for (theta, want) in [(std::f64::consts::PI, 0u8), (0.0, 1u8)] {
        let view = env.reward_view_values(state(env.as_ref(), vec![0.0, 0.0, theta, 0.0]).values());
        assert_eq!(eval.eval_flag(&view).unwrap(), want);
        // Independent interpreter agrees.
        let r = common::reference_eval(eval.program(), &common::input_map(&names, &view)).unwrap();
        assert_eq!(r, want as f64);
    }
    let view = env.reward_view_values(&[0.0, 0.0, 0.0, 0.0]);
    assert_eq!(reward.eval_reward(&view, &[0.0]).unwrap(), 1.0);
}

#[test]
fn missing_eval_block_triggers_retry() {
    let (env, _, _) = fixture("cartpole");
    let spec = env.spec();
    let good = canned("cartpole", "code.txt");
    let mut client = ScriptedClient::new(["```reward\nreturn cos_theta;\n```".to_string(), good]);
    let cfg = PipelineConfig::default();
    let mut s = Session::new(&mut client, &cfg);
    let out = s
        .generate_code("swing up", "env", &spec.reward_view_schema, &spec.action_schema)
        .unwrap();
    assert_eq!(out.eval.kind(), ProgramKind::Eval);
    assert_eq!(s.transcript.exchanges.len(), 2);
    let retry = &s.transcript.exchanges[1].request.messages;
    assert_eq!(retry.len(), 4);
    assert!(retry[3].content.contains("missing ```eval code block"), "{}", retry[3].content);
}

#[test]
fn unknown_identifier_is_fed_back() {
    let (env, _, _) = fixture("cartpole");
    let spec = env.spec();
    let bad = "```reward\nreturn height;\n```\n```eval\nreturn abs_theta < 0.5;\n```";
    let mut client = ScriptedClient::new([bad, bad, bad]);
    let cfg = PipelineConfig::default();
    let mut s = Session::new(&mut client, &cfg);
    let e = s
        .generate_code("swing up", "env", &spec.reward_view_schema, &spec.action_schema)
        .unwrap_err();
    match &e {
        PipelineError::CodeRejected { errors } => {
            assert_eq!(errors.len(), 3);
            assert!(errors[0][0].contains("height"), "{:?}", errors[0]);
        }
        other => panic!("{other}"),
    }
    assert_eq!(s.transcript.exchanges.len(), 3);
    let last = s.transcript.exchanges[2].request.messages.last().unwrap();
    assert!(last.content.contains("unknown identifier") && last.content.contains("height"), "{}", last.content);
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn end_to_end_replay_is_byte_identical() {
    for env_name in ["cartpole", "flipbot"] {
        let mut dirs = Vec::new();
        let tmp = tempfile::tempdir().unwrap();
        for run in 0..2 {
            let (env, snap, mut client) = fixture(env_name);
            let out = tmp.path().join(format!("run{run}"));
            let a = run_pipeline(&mut client, env.as_ref(), &snap, &PipelineConfig::default(), &out).unwrap();
            assert_eq!(a.transcript.exchanges.len(), 3);
            assert!(a.transcript.exchanges.iter().all(|e| e.request.temperature == 0.0));
            dirs.push(out);
        }
        let a = dir_contents(&dirs[0]);
        let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            [D_ENV_FILE, D_OOD_FILE, D_RECOVERY_FILE, EVAL_FILE, REWARD_FILE, TRANSCRIPT_FILE]
        );
        assert_eq!(a, dir_contents(&dirs[1]), "{env_name}");
        // Persisted programs parse back to the validated ones.
        let text = std::fs::read_to_string(dirs[0].join(EVAL_FILE)).unwrap();
        assert_eq!(parse_file(&text).unwrap().kind, ProgramKind::Eval);
    }
}

#[test]
fn abort_in_phase_two_keeps_phase_one() {
    let (env, snap, _) = fixture("cartpole");
    let mut client = ScriptedClient::new(["the pole hangs down"]);
    let tmp = tempfile::tempdir().unwrap();
    let e = run_pipeline(&mut client, env.as_ref(), &snap, &PipelineConfig::default(), tmp.path()).unwrap_err();
    assert_eq!(e.phase(), Some(Phase::BehaviorReasoning));
    assert!(e.to_string().starts_with("behavior-reasoning"), "{e}");
    assert_eq!(std::fs::read_to_string(tmp.path().join(D_OOD_FILE)).unwrap(), "the pole hangs down\n");
    assert!(!tmp.path().join(D_RECOVERY_FILE).exists());
    let t = Transcript::from_jsonl(&std::fs::read_to_string(tmp.path().join(TRANSCRIPT_FILE)).unwrap()).unwrap();
    assert_eq!(t.exchanges.len(), 2);
    assert!(t.exchanges[1].error.is_some());
    assert!(tmp.path().join(ABORT_FILE).exists());
}

/// Minimal chat-completions endpoint: answers each request with the next
/// canned reply and keeps the request bodies.
fn mock_server(replies: Vec<String>) -> (String, Arc<Mutex<Vec<String>>>, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    let handle = std::thread::spawn(move || {
        for reply in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            seen.lock().unwrap().push(String::from_utf8(body).unwrap());
            let payload = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}).to_string();
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            )
            .unwrap();
        }
    });
    (url, bodies, handle)
}

#[test]
fn live_requests_carry_zero_temperature() {
    let (env, snap, _) = fixture("cartpole");
    let replies = ["ood.txt", "behavior.txt", "code.txt"].map(|f| canned("cartpole", f)).to_vec();
    let (url, bodies, handle) = mock_server(replies);
    let mut client = LiveClient::new(url, Some("sk-test-secret".to_string()));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        attach_image: true,
        ..Default::default()
    };
    let a = run_pipeline(&mut client, env.as_ref(), &snap, &cfg, tmp.path()).unwrap();
    handle.join().unwrap();
    let bodies = bodies.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    for b in bodies.iter() {
        let v: serde_json::Value = serde_json::from_str(b).unwrap();
        assert_eq!(v["temperature"].as_f64(), Some(0.0));
    }
    let first: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    let parts = first["messages"][1]["content"].as_array().unwrap();
    assert!(parts[0]["text"].as_str().unwrap().contains("hanging downward"));
    assert!(parts[1]["image_url"]["url"].as_str().unwrap().starts_with("data:image/svg+xml;base64,"));
    assert_eq!(a.d_ood, canned("cartpole", "ood.txt"));
    assert!(!client.http_log.join("\n").contains("sk-test-secret"));
}
