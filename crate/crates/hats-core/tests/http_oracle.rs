//! HTTP oracle adapter tests against a local mock endpoint: wire schemas,
//! contiguous-selection trimming, the execute loop, and refinement plumbing.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use serde_json::{json, Value};

use hats_core::alignment::{recall, ExecutionSequence, ReferenceSequence};
use hats_core::env::{load_environment, EnvironmentGraph, Path, UiAction};
use hats_core::oracle::{HttpOracle, Oracle};

/// One-shot HTTP responder: serves `responses` in order, records each
/// request as `(path, auth header, body json)`.
struct MockEndpoint {
    endpoint: String,
    requests: mpsc::Receiver<(String, Option<String>, Value)>,
    handle: Option<thread::JoinHandle<()>>,
}

impl MockEndpoint {
    fn serve(responses: Vec<Value>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        let handle = thread::spawn(move || {
            for response in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let path = request_line
                    .split_whitespace()
                    .nth(1)
                    .unwrap_or_default()
                    .to_string();
                let mut content_length = 0usize;
                let mut auth = None;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end().to_string();
                    if line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = Some(line.split_once(':').unwrap().1.trim().to_string());
                    }
                }
                let mut body = vec![0u8; content_length];
                reader.read_exact(&mut body).unwrap();
                let parsed: Value = serde_json::from_slice(&body).unwrap();
                tx.send((path, auth, parsed)).unwrap();

                let payload = response.to_string();
                let reply = format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    payload.len(),
                    payload
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        Self {
            endpoint,
            requests: rx,
            handle: Some(handle),
        }
    }

    fn next_request(&self) -> (String, Option<String>, Value) {
        self.requests
            .recv_timeout(std::time::Duration::from_secs(5))
            .expect("request arrives")
    }
}

impl Drop for MockEndpoint {
    fn drop(&mut self) {
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// Chain a -> b -> c with one button per screen.
fn env() -> EnvironmentGraph {
    let doc = r#"{
      "root_state": "a",
      "states": [
        { "id": "a", "app": "Demo", "elements": [
           { "id": "go1", "role": "button", "label": "First" } ] },
        { "id": "b", "app": "Demo", "elements": [
           { "id": "go2", "role": "button", "label": "Second" } ] },
        { "id": "c", "app": "Demo", "terminal": true, "elements": [] }
      ],
      "transitions": [
        { "id": "t1", "from": "a", "action": { "kind": "tap", "target": "go1" }, "to": "b" },
        { "id": "t2", "from": "b", "action": { "kind": "tap", "target": "go2" }, "to": "c" }
      ]
    }"#;
    load_environment(doc.as_bytes()).unwrap()
}

fn walked_path(env: &EnvironmentGraph) -> Path {
    let mut path = Path::new("a");
    for (state, action) in [("a", UiAction::tap("go1")), ("b", UiAction::tap("go2"))] {
        let to = env.apply(state, &action, &path).unwrap();
        path.push(action, to);
    }
    path
}

#[test]
fn select_subsequence_sends_trajectory_and_trims_selection() {
    let env = env();
    let mock = MockEndpoint::serve(vec![json!({
        "task_instruction": "In Demo: tap 'First'.",
        // 1 then 3 is non-contiguous and 3 is out of range: trims to [1].
        "selected_step_ids": [1, 3]
    })]);
    let oracle = HttpOracle::new(&mock.endpoint, Some("secret-token".into())).unwrap();
    let path = walked_path(&env);
    let reference = oracle.select_subsequence(&path, &env).unwrap();

    let (route, auth, body) = mock.next_request();
    assert_eq!(route, "/synthesize");
    assert_eq!(auth.as_deref(), Some("Bearer secret-token"));
    assert_eq!(body["prompt_template_id"], "instruction_generation");
    let trajectory = body["trajectory"].as_array().unwrap();
    assert_eq!(trajectory.len(), 2);
    assert_eq!(trajectory[0]["action"]["kind"], "tap");
    assert_eq!(trajectory[0]["state"]["id"], "a");
    assert!(trajectory[0]["state"]["elements"].is_array());

    assert_eq!(reference.len(), 1);
    assert_eq!(reference.start_state, "b");
    assert_eq!(reference.steps[0].0, UiAction::tap("go2"));
}

#[test]
fn synthesize_builds_structured_steps_from_the_reference() {
    let env = env();
    let mock = MockEndpoint::serve(vec![json!({
        "task_instruction": "In Demo: press both buttons.",
        "selected_step_ids": [0, 1]
    })]);
    let oracle = HttpOracle::new(&mock.endpoint, None).unwrap();
    let path = walked_path(&env);
    let reference = ReferenceSequence {
        steps: path.steps.clone(),
        start_state: "a".into(),
        source_intent: None,
    };
    let instruction = oracle.synthesize_instruction(&reference, &env).unwrap();
    let (_, auth, _) = mock.next_request();
    assert_eq!(auth, None, "no token, no authorization header");
    assert_eq!(instruction.text, "In Demo: press both buttons.");
    assert_eq!(instruction.revision, 0);
    assert_eq!(instruction.provenance, "http");
    assert_eq!(instruction.structured_steps.len(), 2);
    assert_eq!(
        instruction.structured_steps[0]
            .target
            .as_ref()
            .unwrap()
            .value,
        "First"
    );
}

#[test]
fn execute_drives_the_action_loop_until_null() {
    let env = env();
    let mock = MockEndpoint::serve(vec![
        json!({ "action": { "kind": "tap", "target": "go1" } }),
        json!({ "action": { "kind": "tap", "target": "go2" } }),
    ]);
    let oracle = HttpOracle::new(&mock.endpoint, None).unwrap();
    let path = walked_path(&env);
    let reference = ReferenceSequence {
        steps: path.steps.clone(),
        start_state: "a".into(),
        source_intent: None,
    };
    let instruction = hats_core::oracle::Instruction {
        text: "In Demo: press both buttons.".into(),
        structured_steps: hats_core::oracle::descriptors_from_reference(&reference, &env).unwrap(),
        revision: 0,
        provenance: "http".into(),
    };
    let execution = oracle.execute_instruction(&instruction, "a", &env).unwrap();

    let (route, _, body) = mock.next_request();
    assert_eq!(route, "/execute");
    assert_eq!(body["instruction"], "In Demo: press both buttons.");
    assert_eq!(body["state"]["id"], "a");
    assert_eq!(body["history"].as_array().unwrap().len(), 0);
    let (_, _, body) = mock.next_request();
    assert_eq!(body["state"]["id"], "b");
    assert_eq!(body["history"].as_array().unwrap().len(), 1);

    // Two applied actions and then the terminal screen stops the loop
    // without a third request.
    assert!(execution.completed);
    assert_eq!(execution.steps.len(), 2);
    let report = recall(&env, &reference, &execution).unwrap();
    assert_eq!(report.recall, 1.0);
}

#[test]
fn execute_flags_inapplicable_actions() {
    let env = env();
    let mock = MockEndpoint::serve(vec![json!({ "action": { "kind": "back" } })]);
    let oracle = HttpOracle::new(&mock.endpoint, None).unwrap();
    let instruction = hats_core::oracle::Instruction {
        text: "In Demo: go back.".into(),
        structured_steps: Vec::new(),
        revision: 0,
        provenance: "http".into(),
    };
    let execution = oracle.execute_instruction(&instruction, "a", &env).unwrap();
    assert!(!execution.completed);
    assert!(execution.steps.is_empty());
}

#[test]
fn refine_sends_matched_indices_and_bumps_revision() {
    let env = env();
    let mock = MockEndpoint::serve(vec![json!({
        "refined_high_level_instruction": "In Demo: tap 'First', then tap 'Second'."
    })]);
    let oracle = HttpOracle::new(&mock.endpoint, None).unwrap();
    let path = walked_path(&env);
    let reference = ReferenceSequence {
        steps: path.steps.clone(),
        start_state: "a".into(),
        source_intent: None,
    };
    // Execution that reproduced only the first step.
    let execution = ExecutionSequence {
        steps: vec![path.steps[0].clone()],
        start_state: "a".into(),
        completed: true,
    };
    let instruction = hats_core::oracle::Instruction {
        text: "In Demo: press both buttons.".into(),
        structured_steps: hats_core::oracle::descriptors_from_reference(&reference, &env).unwrap(),
        revision: 0,
        provenance: "http".into(),
    };
    let refined = oracle
        .refine_instruction(&instruction, &reference, &execution, &env)
        .unwrap();

    let (route, _, body) = mock.next_request();
    assert_eq!(route, "/refine");
    assert_eq!(body["matched_exploration_id"], json!([0]));
    assert_eq!(body["matched_gui_agent_id"], json!([0]));
    assert_eq!(body["reference"].as_array().unwrap().len(), 2);
    assert_eq!(body["execution"].as_array().unwrap().len(), 1);

    assert_eq!(refined.instruction.revision, 1);
    assert!(!refined.exhausted);
    assert_eq!(
        refined.instruction.text,
        "In Demo: tap 'First', then tap 'Second'."
    );
}

#[test]
fn transport_failures_surface_as_oracle_errors() {
    let env = env();
    // Nothing is listening on this port.
    let oracle = HttpOracle::new("http://127.0.0.1:1", None).unwrap();
    let path = walked_path(&env);
    let err = oracle.select_subsequence(&path, &env).unwrap_err();
    assert!(matches!(err, hats_core::oracle::OracleError::Transport(_)));
}
