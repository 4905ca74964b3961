use std::cell::RefCell;
use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use oracle_forge::corpus::{gen_chain_task, CorruptionModel};
use oracle_forge::gateway::http::{
    ChatTransport, HttpBackend, HttpSettings, PromptAssets, ReqwestTransport, TransportResponse,
};
use oracle_forge::gateway::{
    DefectKind, EvalVerdict, Gateway, GatewayError, GenerationContext, ScriptedBackend, Telemetry,
    TranslationResult, EVALUATION_TEMPERATURE,
};
use oracle_forge::template::serialize_step;
use serde_json::{json, Value};

type Reply = Result<TransportResponse, String>;

/// Replays canned replies in order and records every request body.
#[derive(Default)]
struct Canned {
    replies: Mutex<VecDeque<Reply>>,
    seen: Mutex<Vec<Value>>,
}

impl Canned {
    fn new(replies: Vec<Reply>) -> Arc<Self> {
        Arc::new(Canned {
            replies: Mutex::new(replies.into()),
            seen: Mutex::default(),
        })
    }
}

impl ChatTransport for Canned {
    fn post(&self, body: &Value) -> Reply {
        self.seen.lock().unwrap().push(body.clone());
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err("no more canned replies".into()))
    }
}

fn ok(contents: &[&str]) -> Reply {
    let choices: Vec<Value> = contents
        .iter()
        .map(|c| json!({"message": {"role": "assistant", "content": c}}))
        .collect();
    Ok(TransportResponse {
        status: 200,
        body: json!({ "choices": choices }).to_string(),
    })
}

fn status(code: u16) -> Reply {
    Ok(TransportResponse {
        status: code,
        body: "busy".into(),
    })
}

thread_local! {
    static SLEPT: RefCell<Vec<Duration>> = const { RefCell::new(Vec::new()) };
}

fn record_sleep(d: Duration) {
    SLEPT.with(|s| s.borrow_mut().push(d));
}

fn slept() -> Vec<Duration> {
    SLEPT.with(|s| s.take())
}

fn prompts() -> Arc<PromptAssets> {
    Arc::new(PromptAssets {
        stage1: "EXAMPLES".into(),
        generate: "GENERATE".into(),
        translate: "TRANSLATE".into(),
        precision: "PRECISION".into(),
        feasibility: "FEASIBILITY".into(),
    })
}

fn gateway(transport: Arc<dyn ChatTransport>) -> (Gateway, Arc<Telemetry>) {
    let telemetry = Arc::new(Telemetry::default());
    let settings = HttpSettings {
        backoff_base_ms: 100,
        ..HttpSettings::default()
    };
    let backend =
        HttpBackend::new(transport, settings, prompts(), telemetry.clone()).with_sleep(record_sleep);
    (Gateway::uniform(Arc::new(backend), telemetry.clone()), telemetry)
}

fn ctx() -> GenerationContext {
    GenerationContext {
        task_id: "t".into(),
        question: "Max is a wumpus. Every wumpus is a yumpus.\n\nTrue or false: Max is a yumpus."
            .into(),
        prior_steps: Vec::new(),
        few_shot_asset: "EXAMPLES".into(),
        temperature: 1.0,
        seed: 42,
    }
}

fn first_step_text() -> String {
    let task = gen_chain_task(1, 0, 0).unwrap();
    serialize_step(&task.ground_truth_steps()[0]).unwrap()
}

#[test]
fn retries_with_doubling_backoff_then_succeeds() {
    let step = first_step_text();
    let canned = Canned::new(vec![status(429), status(503), Err("reset".into()), ok(&[&step])]);
    let (gw, telemetry) = gateway(canned.clone());
    let got = gw.generate_candidates(&ctx(), 1).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(
        slept(),
        [100, 200, 400].map(Duration::from_millis).to_vec()
    );
    assert_eq!(telemetry.snapshot().retries, 3);
    assert_eq!(canned.seen.lock().unwrap().len(), 4);
}

#[test]
fn exhausted_retries_are_backend_unavailable() {
    let canned = Canned::new((0..10).map(|_| status(500)).collect());
    let (gw, telemetry) = gateway(canned.clone());
    let err = gw.generate_candidates(&ctx(), 3).unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnavailable { attempts: 6, .. }), "{err}");
    assert_eq!(canned.seen.lock().unwrap().len(), 6);
    assert_eq!(slept().len(), 5);
    let snap = telemetry.snapshot();
    assert_eq!((snap.backend_errors, snap.retries), (1, 5));
}

#[test]
fn client_errors_are_not_retried() {
    let canned = Canned::new(vec![status(401), ok(&["unused"])]);
    let (gw, _) = gateway(canned.clone());
    let err = gw.generate_candidates(&ctx(), 1).unwrap_err();
    assert!(matches!(err, GatewayError::Rejected { status: 401, .. }));
    assert_eq!(canned.seen.lock().unwrap().len(), 1);
    assert!(slept().is_empty());
}

#[test]
fn generation_request_shape_and_candidate_filtering() {
    let step = first_step_text();
    let two = format!("{step}{step}");
    let broken = step.replacen("<RULE>", "", 1);
    let canned = Canned::new(vec![ok(&[&step, &two, &broken, "FINAL ANSWER: true"])]);
    let (gw, telemetry) = gateway(canned.clone());
    let got = gw.generate_candidates(&ctx(), 4).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].backend_id, "http");
    let snap = telemetry.snapshot();
    assert_eq!((snap.candidates_requested, snap.candidates_accepted, snap.candidates_discarded), (4, 1, 3));

    let body = &canned.seen.lock().unwrap()[0];
    assert_eq!(body["n"], 4);
    assert_eq!(body["seed"], 42);
    assert_eq!(body["temperature"], 1.0);
    assert_eq!(body["messages"][0]["role"], "system");
    let system = body["messages"][0]["content"].as_str().unwrap();
    assert!(system.contains("GENERATE") && system.contains("EXAMPLES"));
    assert!(body["messages"][1]["content"].as_str().unwrap().contains("True or false"));
}

#[test]
fn judgments_use_the_low_temperature_and_parse_yes_no() {
    let canned = Canned::new(vec![ok(&["YES"]), ok(&["no."])]);
    let (gw, _) = gateway(canned.clone());
    let step = gen_chain_task(1, 0, 0).unwrap().ground_truth_steps().remove(0);
    let v = gw.evaluate(&step, &ctx());
    assert_eq!(v, EvalVerdict { precision_pass: true, feasibility_pass: false });
    let seen = canned.seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    for body in seen.iter() {
        assert_eq!(body["temperature"], EVALUATION_TEMPERATURE);
    }
    assert_eq!(seen[0]["messages"][0]["content"], "PRECISION");
    assert_eq!(seen[1]["messages"][0]["content"], "FEASIBILITY");
}

#[test]
fn unparseable_judgment_fails_both_and_is_counted() {
    let canned = Canned::new(vec![ok(&["probably"]), ok(&["YES"])]);
    let (gw, telemetry) = gateway(canned);
    let step = gen_chain_task(1, 0, 0).unwrap().ground_truth_steps().remove(0);
    assert_eq!(gw.evaluate(&step, &ctx()), EvalVerdict::FAILED);
    assert_eq!(telemetry.snapshot().evaluations_failed, 1);
}

#[test]
fn translation_replies() {
    let step = gen_chain_task(1, 0, 0).unwrap().ground_truth_steps().remove(0);
    let canned = Canned::new(vec![
        ok(&["```kbl\nfact wumpus(max).\nrule yumpus(X) :- wumpus(X).\n```"]),
        ok(&["UNTRANSLATABLE"]),
        ok(&["rule a(X) :- b(X).\nrule c(X) :- a(X)."]),
        ok(&["rule a(X) :- not b(X)."]),
        ok(&["fact p(a).\nrule q(X) :- p(X, Y)."]),
    ]);
    let (gw, telemetry) = gateway(canned);
    let kinds: Vec<Option<DefectKind>> = (0..5)
        .map(|_| gw.translate(&step, &ctx()).unwrap().defect().map(|d| d.kind))
        .collect();
    assert_eq!(
        kinds,
        [
            None,
            Some(DefectKind::TooComplex),
            Some(DefectKind::Shape),
            Some(DefectKind::UnsafeRule),
            Some(DefectKind::ArityMismatch),
        ]
    );
    assert_eq!(telemetry.snapshot().translations_malformed, 4);
}

/// A one-shot HTTP server; returns the raw request it saw.
fn serve_once(reply_body: String) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
            reply_body.len(),
            reply_body
        )
        .unwrap();
        head + &String::from_utf8(body).unwrap()
    });
    (url, handle)
}

#[test]
fn reqwest_transport_talks_to_a_real_socket() {
    let reply = json!({"choices": [{"message": {"content": "YES"}}]}).to_string();
    let (url, server) = serve_once(reply);
    let transport =
        ReqwestTransport::new(&url, Some("sk-test".into()), Duration::from_secs(10)).unwrap();
    let resp = transport.post(&json!({"model": "m"})).unwrap();
    assert_eq!(resp.status, 200);
    assert!(resp.body.contains("YES"));
    let request = server.join().unwrap().to_ascii_lowercase();
    assert!(request.starts_with("post /v1/chat/completions"));
    assert!(request.contains("authorization: bearer sk-test"));
    assert!(request.ends_with("{\"model\":\"m\"}"));
}

#[test]
fn scripted_backend_is_deterministic_per_seed() {
    let task = Arc::new(gen_chain_task(4, 2, 8).unwrap());
    let model = CorruptionModel {
        p_format_break: 0.3,
        ..CorruptionModel::uniform(0.4)
    };
    let run = |seed| {
        let telemetry = Arc::new(Telemetry::default());
        let gw = Gateway::uniform(Arc::new(ScriptedBackend::new(task.clone(), model)), telemetry);
        let c = GenerationContext { seed, ..ctx() };
        let cands = gw.generate_candidates(&c, 8).unwrap();
        let trans: Vec<TranslationResult> =
            cands.iter().map(|s| gw.translate(&s.step, &c).unwrap()).collect();
        (cands, trans)
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1).0, run(2).0);
}
