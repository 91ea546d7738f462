//! HTTP oracle adapter: forwards the instruction lifecycle to a remote
//! endpoint speaking a small JSON protocol, one POST route per operation.
//!
//! - `POST /synthesize` `{ trajectory, prompt_template_id }` ->
//!   `{ task_instruction, selected_step_ids }`
//! - `POST /execute` `{ instruction, state, history }` -> `{ action }`,
//!   looped; a `null` action ends the episode.
//! - `POST /refine` `{ instruction, matched_exploration_id,
//!   matched_gui_agent_id, reference, execution }` ->
//!   `{ refined_high_level_instruction }`
//!
//! The prompt texts the template ids refer to ship under `prompts/`; the
//! adapter never inspects them. Responses come from a live model, so this
//! oracle makes no determinism guarantees.

use serde::{Deserialize, Serialize};

use crate::alignment::{recall, ExecutionSequence, ReferenceSequence};
use crate::env::{EnvironmentGraph, Path, StateId, UiAction, UiElement};

use super::{descriptors_from_reference, Instruction, Oracle, OracleError, Refinement};

/// Blocking HTTP adapter for a remote instruction oracle.
#[derive(Debug)]
pub struct HttpOracle {
    endpoint: String,
    bearer_token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpOracle {
    pub fn new(
        endpoint: impl Into<String>,
        bearer_token: Option<String>,
    ) -> Result<Self, OracleError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            bearer_token,
            client,
        })
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        route: &str,
        body: &Req,
    ) -> Result<Resp, OracleError> {
        let url = format!("{}/{route}", self.endpoint);
        let mut request = self.client.post(&url).json(body);
        if let Some(token) = &self.bearer_token {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .map_err(|e| OracleError::Transport(format!("POST {url}: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            return Err(OracleError::Transport(format!(
                "POST {url}: status {status}"
            )));
        }
        response
            .json::<Resp>()
            .map_err(|e| OracleError::Protocol(format!("POST {url}: {e}")))
    }

    fn wire_steps(&self, steps: &[(UiAction, StateId)], env: &EnvironmentGraph) -> Vec<WireStep> {
        steps
            .iter()
            .map(|(action, state)| WireStep {
                action: action.clone(),
                state: wire_state(state, env),
            })
            .collect()
    }
}

fn wire_state(id: &str, env: &EnvironmentGraph) -> WireState {
    match env.state(id) {
        Some(s) => WireState {
            id: s.id.clone(),
            app: s.app.clone(),
            elements: s.elements.clone(),
        },
        None => WireState {
            id: id.to_string(),
            app: String::new(),
            elements: Vec::new(),
        },
    }
}

/// Longest run of indices that are in range and contiguous (each exactly one
/// past the previous); earliest run wins ties.
fn longest_contiguous_run(ids: &[usize], len: usize) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < ids.len() {
        if ids[i] >= len {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < ids.len() && ids[j + 1] == ids[j] + 1 && ids[j + 1] < len {
            j += 1;
        }
        let run = (ids[i], j - i + 1);
        if best.is_none_or(|(_, bl)| run.1 > bl) {
            best = Some(run);
        }
        i = j + 1;
    }
    best
}

impl Oracle for HttpOracle {
    fn select_subsequence(
        &self,
        path: &Path,
        env: &EnvironmentGraph,
    ) -> Result<ReferenceSequence, OracleError> {
        if path.is_empty() {
            return Err(OracleError::EmptyPath);
        }
        let request = SynthesizeRequest {
            trajectory: self.wire_steps(&path.executed_steps(), env),
            prompt_template_id: "instruction_generation".to_string(),
        };
        let response: SynthesizeResponse = self.post("synthesize", &request)?;
        match longest_contiguous_run(&response.selected_step_ids, path.len()) {
            Some((start, len)) => Ok(ReferenceSequence {
                steps: path.steps[start..start + len].to_vec(),
                start_state: path.pre_state(start).clone(),
                source_intent: None,
            }),
            // Nothing usable selected: fall back to the whole path.
            None => Ok(ReferenceSequence {
                steps: path.steps.clone(),
                start_state: path.origin.clone(),
                source_intent: None,
            }),
        }
    }

    fn synthesize_instruction(
        &self,
        reference: &ReferenceSequence,
        env: &EnvironmentGraph,
    ) -> Result<Instruction, OracleError> {
        if reference.is_empty() {
            return Err(OracleError::EmptyReference);
        }
        let request = SynthesizeRequest {
            trajectory: self.wire_steps(&reference.executed_steps(), env),
            prompt_template_id: "instruction_generation".to_string(),
        };
        let response: SynthesizeResponse = self.post("synthesize", &request)?;
        if response.task_instruction.trim().is_empty() {
            return Err(OracleError::Protocol(
                "synthesize returned an empty task_instruction".into(),
            ));
        }
        Ok(Instruction {
            text: response.task_instruction,
            structured_steps: descriptors_from_reference(reference, env)?,
            revision: 0,
            provenance: self.name().to_string(),
        })
    }

    /// Drive the remote action loop against the environment, serialized as
    /// an element list per screen, for at most `structured steps + 2`
    /// actions. A `null` action or a terminal screen ends the episode; an
    /// inapplicable action fails completion.
    fn execute_instruction(
        &self,
        instruction: &Instruction,
        start: &str,
        env: &EnvironmentGraph,
    ) -> Result<ExecutionSequence, OracleError> {
        if env.state(start).is_none() {
            return Err(OracleError::UnknownStartState(start.to_string()));
        }
        let budget = instruction.structured_steps.len() + 2;
        let mut path = Path::new(start.to_string());
        let mut completed = true;
        for _ in 0..budget {
            let cur = path.end_state().clone();
            if env.state(&cur).map(|s| s.terminal).unwrap_or(false) {
                break;
            }
            let request = ExecuteRequest {
                instruction: instruction.text.clone(),
                state: wire_state(&cur, env),
                history: path
                    .steps
                    .iter()
                    .map(|(action, state)| HistoryStep {
                        action: action.clone(),
                        state: state.clone(),
                    })
                    .collect(),
            };
            let response: ExecuteResponse = self.post("execute", &request)?;
            let Some(action) = response.action else {
                break; // remote signalled completion
            };
            match env.apply(&cur, &action, &path) {
                Ok(to) => path.push(action, to),
                Err(_) => {
                    completed = false;
                    break;
                }
            }
        }
        Ok(ExecutionSequence {
            steps: path.steps,
            start_state: start.to_string(),
            completed,
        })
    }

    fn refine_instruction(
        &self,
        instruction: &Instruction,
        reference: &ReferenceSequence,
        execution: &ExecutionSequence,
        env: &EnvironmentGraph,
    ) -> Result<Refinement, OracleError> {
        let report = recall(env, reference, execution)?;
        let request = RefineRequest {
            instruction: instruction.text.clone(),
            matched_exploration_id: report.matched_reference_indices.into_iter().collect(),
            matched_gui_agent_id: report.matched_execution_indices.into_iter().collect(),
            reference: self.wire_steps(&reference.executed_steps(), env),
            execution: self.wire_steps(&execution.executed_steps(), env),
        };
        let response: RefineResponse = self.post("refine", &request)?;
        Ok(Refinement {
            instruction: Instruction {
                text: response.refined_high_level_instruction,
                structured_steps: instruction.structured_steps.clone(),
                revision: instruction.revision + 1,
                provenance: self.name().to_string(),
            },
            exhausted: false,
        })
    }

    fn name(&self) -> &str {
        "http"
    }
}

// Wire protocol bodies.

#[derive(Debug, Serialize)]
struct WireStep {
    action: UiAction,
    state: WireState,
}

#[derive(Debug, Serialize)]
struct WireState {
    id: StateId,
    app: String,
    elements: Vec<UiElement>,
}

#[derive(Debug, Serialize)]
struct SynthesizeRequest {
    trajectory: Vec<WireStep>,
    prompt_template_id: String,
}

#[derive(Debug, Deserialize)]
struct SynthesizeResponse {
    task_instruction: String,
    #[serde(default)]
    selected_step_ids: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct ExecuteRequest {
    instruction: String,
    state: WireState,
    history: Vec<HistoryStep>,
}

#[derive(Debug, Serialize)]
struct HistoryStep {
    action: UiAction,
    state: StateId,
}

#[derive(Debug, Deserialize)]
struct ExecuteResponse {
    action: Option<UiAction>,
}

#[derive(Debug, Serialize)]
struct RefineRequest {
    instruction: String,
    matched_exploration_id: Vec<usize>,
    matched_gui_agent_id: Vec<usize>,
    reference: Vec<WireStep>,
    execution: Vec<WireStep>,
}

#[derive(Debug, Deserialize)]
struct RefineResponse {
    refined_high_level_instruction: String,
}
