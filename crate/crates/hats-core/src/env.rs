//! Simulated GUI environment: a finite, deterministic state graph.
//!
//! States carry an ordered element list (the "screen"), transitions are a
//! deterministic function of `(state, action)`, and semantic ambiguity is
//! modeled explicitly: transitions can be annotated with ambiguity tags,
//! sequential dependencies are expressed as prerequisite transition ids that
//! must appear earlier on the current path, and visual ambiguity is also
//! *derived* from duplicate visible labels at audit time.
//!
//! The graph is immutable after loading and all operations here are pure
//! functions of their inputs, so it can be shared read-only across workers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::Read;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque state identifier, unique across an environment.
pub type StateId = String;
/// Opaque transition identifier.
pub type TransitionId = String;
/// Opaque element identifier, unique within a state.
pub type ElementId = String;

/// Trim surrounding whitespace and case-fold. This is the single text
/// normalization used for action equality, label resolution and matching.
pub fn normalize_text(s: &str) -> String {
    s.trim().to_lowercase()
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Widget role of a screen element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementRole {
    Button,
    TextField,
    ListItem,
    Icon,
    Toggle,
    Container,
}

/// One element of a screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UiElement {
    pub id: ElementId,
    pub role: ElementRole,
    #[serde(default)]
    pub label: String,
    #[serde(default = "default_true")]
    pub visible: bool,
    #[serde(default = "default_true")]
    pub clickable: bool,
}

fn default_true() -> bool {
    true
}

/// One screen of the environment, with a stable element order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UiState {
    pub id: StateId,
    #[serde(default)]
    pub app: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub terminal: bool,
    #[serde(default)]
    pub elements: Vec<UiElement>,
}

impl UiState {
    pub fn element(&self, id: &str) -> Option<&UiElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    /// Position of an element in the stable element order.
    pub fn element_position(&self, id: &str) -> Option<usize> {
        self.elements.iter().position(|e| e.id == id)
    }

    /// Resolve a target key against this screen the way a replaying agent
    /// would: first as a label among visible elements (unique match
    /// required), then as an exact element id.
    pub fn resolve_target(&self, key: &str) -> TargetResolution<'_> {
        let wanted = normalize_text(key);
        if !wanted.is_empty() {
            let mut matches = self
                .elements
                .iter()
                .filter(|e| e.visible && normalize_text(&e.label) == wanted);
            if let Some(first) = matches.next() {
                return if matches.next().is_some() {
                    TargetResolution::Ambiguous
                } else {
                    TargetResolution::Unique(first)
                };
            }
        }
        match self.element(key) {
            Some(e) => TargetResolution::Unique(e),
            None => TargetResolution::NotFound,
        }
    }
}

/// Outcome of resolving a target label/id on a screen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetResolution<'a> {
    Unique(&'a UiElement),
    Ambiguous,
    NotFound,
}

/// Atomic action kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Tap,
    Type,
    Scroll,
    Back,
    LongPress,
    Swipe,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActionKind::Tap => "tap",
            ActionKind::Type => "type",
            ActionKind::Scroll => "scroll",
            ActionKind::Back => "back",
            ActionKind::LongPress => "long_press",
            ActionKind::Swipe => "swipe",
        };
        f.write_str(s)
    }
}

/// Scroll/swipe direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        };
        f.write_str(s)
    }
}

/// A concrete UI action. Structural equality normalizes the typed text
/// (trim + case-fold); target ids are opaque and compared exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UiAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ElementId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

impl UiAction {
    pub fn tap(target: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::Tap,
            target: Some(target.into()),
            text: None,
            direction: None,
        }
    }

    pub fn long_press(target: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::LongPress,
            target: Some(target.into()),
            text: None,
            direction: None,
        }
    }

    pub fn type_text(target: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::Type,
            target: Some(target.into()),
            text: Some(text.into()),
            direction: None,
        }
    }

    pub fn back() -> Self {
        Self {
            kind: ActionKind::Back,
            target: None,
            text: None,
            direction: None,
        }
    }

    pub fn scroll(direction: Direction) -> Self {
        Self {
            kind: ActionKind::Scroll,
            target: None,
            text: None,
            direction: Some(direction),
        }
    }

    pub fn scroll_in(target: impl Into<String>, direction: Direction) -> Self {
        Self {
            kind: ActionKind::Scroll,
            target: Some(target.into()),
            text: None,
            direction: Some(direction),
        }
    }

    pub fn swipe(direction: Direction) -> Self {
        Self {
            kind: ActionKind::Swipe,
            target: None,
            text: None,
            direction: Some(direction),
        }
    }

    fn normalized_text(&self) -> Option<String> {
        self.text.as_deref().map(normalize_text)
    }

    /// Field-presence rules for each kind; `Err` names the violated rule.
    pub fn check_shape(&self) -> Result<(), String> {
        let need_target = matches!(
            self.kind,
            ActionKind::Tap | ActionKind::Type | ActionKind::LongPress
        );
        if need_target && self.target.is_none() {
            return Err(format!("{} requires a target", self.kind));
        }
        if self.kind == ActionKind::Back && self.target.is_some() {
            return Err("back takes no target".into());
        }
        match self.kind {
            ActionKind::Type => {
                if self.text.is_none() {
                    return Err("type requires text".into());
                }
            }
            _ => {
                if self.text.is_some() {
                    return Err(format!(
                        "text is only valid on type, found on {}",
                        self.kind
                    ));
                }
            }
        }
        match self.kind {
            ActionKind::Scroll | ActionKind::Swipe => {
                if self.direction.is_none() {
                    return Err(format!("{} requires a direction", self.kind));
                }
            }
            _ => {
                if self.direction.is_some() {
                    return Err(format!(
                        "direction is only valid on scroll/swipe, found on {}",
                        self.kind
                    ));
                }
            }
        }
        Ok(())
    }
}

impl PartialEq for UiAction {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.target == other.target
            && self.direction == other.direction
            && self.normalized_text() == other.normalized_text()
    }
}

impl Eq for UiAction {}

impl Hash for UiAction {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind.hash(state);
        self.target.hash(state);
        self.direction.hash(state);
        self.normalized_text().hash(state);
    }
}

impl fmt::Display for UiAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if let Some(t) = &self.target {
            write!(f, " {t}")?;
        }
        if let Some(d) = &self.direction {
            write!(f, " {d}")?;
        }
        if let Some(s) = &self.text {
            write!(f, " {s:?}")?;
        }
        Ok(())
    }
}

/// Kinds of semantic ambiguity a transition can exhibit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguityTag {
    ContextDependency,
    SequentialDependency,
    VisualAmbiguity,
}

impl fmt::Display for AmbiguityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AmbiguityTag::ContextDependency => "context_dependency",
            AmbiguityTag::SequentialDependency => "sequential_dependency",
            AmbiguityTag::VisualAmbiguity => "visual_ambiguity",
        };
        f.write_str(s)
    }
}

/// One deterministic transition `(from, action) -> to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub id: TransitionId,
    pub from: StateId,
    pub action: UiAction,
    pub to: StateId,
    #[serde(default)]
    pub ambiguity: BTreeSet<AmbiguityTag>,
    /// Transition ids that must appear earlier on the current path for this
    /// transition to fire.
    #[serde(default)]
    pub requires: Vec<TransitionId>,
}

/// A named ground-truth intent: a connected chain of transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSegment {
    pub id: String,
    pub description: String,
    pub transitions: Vec<TransitionId>,
    #[serde(default)]
    pub category: String,
}

/// A trajectory through the environment: the origin state and the ordered
/// `(action, resulting state)` pairs taken from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub origin: StateId,
    pub steps: Vec<(UiAction, StateId)>,
}

impl Path {
    pub fn new(origin: impl Into<StateId>) -> Self {
        Self {
            origin: origin.into(),
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State the path currently ends in.
    pub fn end_state(&self) -> &StateId {
        self.steps.last().map(|(_, s)| s).unwrap_or(&self.origin)
    }

    /// State in which step `i` was executed.
    pub fn pre_state(&self, i: usize) -> &StateId {
        if i == 0 {
            &self.origin
        } else {
            &self.steps[i - 1].1
        }
    }

    pub fn push(&mut self, action: UiAction, to: StateId) {
        self.steps.push((action, to));
    }

    /// Re-pair each action with the state it was executed in, the
    /// convention used by the ambiguity auditor and the emitted corpus.
    pub fn executed_steps(&self) -> Vec<(UiAction, StateId)> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, (a, _))| (a.clone(), self.pre_state(i).clone()))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Environment graph
// ---------------------------------------------------------------------------

/// The loaded, validated environment.
#[derive(Debug, Clone)]
pub struct EnvironmentGraph {
    environment_id: String,
    root_state: StateId,
    states: BTreeMap<StateId, UiState>,
    transitions: Vec<Transition>,
    by_id: BTreeMap<TransitionId, usize>,
    outgoing: BTreeMap<StateId, Vec<usize>>,
    intents: Vec<IntentSegment>,
}

impl EnvironmentGraph {
    pub fn environment_id(&self) -> &str {
        &self.environment_id
    }

    pub fn with_environment_id(mut self, id: impl Into<String>) -> Self {
        self.environment_id = id.into();
        self
    }

    pub fn root_state(&self) -> &StateId {
        &self.root_state
    }

    pub fn state(&self, id: &str) -> Option<&UiState> {
        self.states.get(id)
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn transition_by_id(&self, id: &str) -> Option<&Transition> {
        self.by_id.get(id).map(|&i| &self.transitions[i])
    }

    pub fn intents(&self) -> &[IntentSegment] {
        &self.intents
    }

    pub fn intent(&self, id: &str) -> Option<&IntentSegment> {
        self.intents.iter().find(|i| i.id == id)
    }

    /// The unique transition fired by `action` in `state`, if any.
    pub fn transition_for(&self, state: &str, action: &UiAction) -> Option<&Transition> {
        self.outgoing.get(state).and_then(|ids| {
            ids.iter()
                .map(|&i| &self.transitions[i])
                .find(|t| &t.action == action)
        })
    }

    /// Transition ids fired along `path`, resolved by walking it from its
    /// origin. Errors if some step has no matching transition.
    pub fn fired_transitions(&self, path: &Path) -> Result<Vec<&Transition>, StepError> {
        let mut out = Vec::with_capacity(path.len());
        let mut cur = path.origin.clone();
        for (action, to) in &path.steps {
            let t = self.lookup_step(&cur, action)?;
            debug_assert_eq!(&t.to, to, "path inconsistent with environment");
            out.push(t);
            cur = t.to.clone();
        }
        Ok(out)
    }

    fn lookup_step(&self, state: &str, action: &UiAction) -> Result<&Transition, StepError> {
        if !self.states.contains_key(state) {
            return Err(StepError::UnknownState(state.to_string()));
        }
        self.transition_for(state, action)
            .ok_or_else(|| StepError::InvalidAction {
                state: state.to_string(),
                reason: format!("no transition for `{action}`"),
            })
    }

    /// Actions legal in `state` given the history recorded in `path`:
    /// transitions from `state` whose prerequisites all appear in `path`,
    /// ordered by target element position (untargeted actions last),
    /// declaration order breaking ties.
    pub fn valid_actions(&self, state: &str, path: &Path) -> Result<Vec<UiAction>, StepError> {
        let ui = self
            .states
            .get(state)
            .ok_or_else(|| StepError::UnknownState(state.to_string()))?;
        let fired: BTreeSet<&str> = self
            .fired_transitions(path)?
            .iter()
            .map(|t| t.id.as_str())
            .collect();
        let mut candidates: Vec<&Transition> = self
            .outgoing
            .get(state)
            .map(|ids| ids.iter().map(|&i| &self.transitions[i]).collect())
            .unwrap_or_default();
        candidates.retain(|t| t.requires.iter().all(|r| fired.contains(r.as_str())));
        candidates.sort_by_key(|t| {
            t.action
                .target
                .as_deref()
                .and_then(|id| ui.element_position(id))
                .unwrap_or(usize::MAX)
        });
        Ok(candidates.into_iter().map(|t| t.action.clone()).collect())
    }

    /// Deterministic step function. Fails with `InvalidAction` when no
    /// transition matches or a prerequisite is unmet; `UnknownState` is a
    /// distinct error.
    pub fn apply(&self, state: &str, action: &UiAction, path: &Path) -> Result<StateId, StepError> {
        let t = self.lookup_step(state, action)?;
        if !t.requires.is_empty() {
            let fired: BTreeSet<&str> = self
                .fired_transitions(path)?
                .iter()
                .map(|t| t.id.as_str())
                .collect();
            if let Some(missing) = t.requires.iter().find(|r| !fired.contains(r.as_str())) {
                return Err(StepError::InvalidAction {
                    state: state.to_string(),
                    reason: format!(
                        "transition `{}` requires `{missing}` earlier on the path",
                        t.id
                    ),
                });
            }
        }
        Ok(t.to.clone())
    }

    /// Union of ambiguity tags over a trajectory of `(action, state the
    /// action was executed in)` pairs. Visual ambiguity is additionally
    /// derived when a traversed action's target element shares a visible,
    /// non-empty label with another element of the same state.
    pub fn audit_ambiguity(
        &self,
        steps: &[(UiAction, StateId)],
    ) -> Result<BTreeSet<AmbiguityTag>, AuditError> {
        let mut tags = BTreeSet::new();
        for (i, (action, state)) in steps.iter().enumerate() {
            let t = self
                .lookup_step(state, action)
                .map_err(|_| AuditError::NoTransition {
                    step: i,
                    state: state.clone(),
                })?;
            tags.extend(t.ambiguity.iter().copied());
            if let (Some(target), Some(ui)) = (action.target.as_deref(), self.state(state)) {
                if let Some(el) = ui.element(target) {
                    let label = normalize_text(&el.label);
                    if !label.is_empty()
                        && ui.elements.iter().any(|other| {
                            other.id != el.id
                                && other.visible
                                && normalize_text(&other.label) == label
                        })
                    {
                        tags.insert(AmbiguityTag::VisualAmbiguity);
                    }
                }
            }
        }
        Ok(tags)
    }

    /// Full re-validation pass over the built graph; a loaded graph always
    /// reports zero findings.
    pub fn validate(&self) -> Vec<ValidationIssue> {
        let mut findings = Vec::new();

        if !self.states.contains_key(&self.root_state) {
            findings.push(ValidationIssue::UnknownRootState {
                root: self.root_state.clone(),
            });
        }

        for (id, state) in &self.states {
            if id.is_empty() {
                findings.push(ValidationIssue::EmptyStateId);
            }
            let mut seen = BTreeSet::new();
            for el in &state.elements {
                if el.id.is_empty() {
                    findings.push(ValidationIssue::EmptyElementId { state: id.clone() });
                } else if !seen.insert(el.id.as_str()) {
                    findings.push(ValidationIssue::DuplicateElementId {
                        state: id.clone(),
                        element: el.id.clone(),
                    });
                }
            }
        }

        let mut seen_ids: BTreeSet<&str> = BTreeSet::new();
        let mut seen_keys: Vec<(&str, &UiAction, &str)> = Vec::new();
        for t in &self.transitions {
            if !seen_ids.insert(&t.id) {
                findings.push(ValidationIssue::DuplicateTransitionId {
                    transition: t.id.clone(),
                });
            }
            for (endpoint, which) in [(&t.from, "from"), (&t.to, "to")] {
                if !self.states.contains_key(endpoint) {
                    findings.push(ValidationIssue::DanglingStateRef {
                        transition: t.id.clone(),
                        which,
                        state: endpoint.clone(),
                    });
                }
            }
            if let Some((_, _, earlier)) = seen_keys
                .iter()
                .find(|(from, action, _)| *from == t.from && *action == &t.action)
            {
                findings.push(ValidationIssue::DuplicateStateAction {
                    state: t.from.clone(),
                    transition: t.id.clone(),
                    earlier: earlier.to_string(),
                });
            } else {
                seen_keys.push((&t.from, &t.action, &t.id));
            }
            if let Err(reason) = t.action.check_shape() {
                findings.push(ValidationIssue::MalformedAction {
                    transition: t.id.clone(),
                    reason,
                });
            }
            if let (Some(target), Some(from)) = (t.action.target.as_deref(), self.state(&t.from)) {
                match from.element(target) {
                    None => findings.push(ValidationIssue::UnknownActionTarget {
                        transition: t.id.clone(),
                        element: target.to_string(),
                    }),
                    Some(el) => {
                        if t.action.kind == ActionKind::Type && el.role != ElementRole::TextField {
                            findings.push(ValidationIssue::TypeTargetNotTextField {
                                transition: t.id.clone(),
                                element: target.to_string(),
                            });
                        }
                    }
                }
            }
            let tagged = t.ambiguity.contains(&AmbiguityTag::SequentialDependency);
            if tagged && t.requires.is_empty() {
                findings.push(ValidationIssue::SequentialTagWithoutPrereq {
                    transition: t.id.clone(),
                });
            }
            if !tagged && !t.requires.is_empty() {
                findings.push(ValidationIssue::PrereqWithoutSequentialTag {
                    transition: t.id.clone(),
                });
            }
            for r in &t.requires {
                if !self.by_id.contains_key(r) {
                    findings.push(ValidationIssue::UnknownPrerequisite {
                        transition: t.id.clone(),
                        prerequisite: r.clone(),
                    });
                }
            }
        }

        findings.extend(self.prerequisite_cycles());
        findings.extend(self.unreachable_states());

        for intent in &self.intents {
            if intent.transitions.is_empty() {
                findings.push(ValidationIssue::EmptyIntent {
                    intent: intent.id.clone(),
                });
                continue;
            }
            let mut prev_to: Option<&StateId> = None;
            for tid in &intent.transitions {
                match self.transition_by_id(tid) {
                    None => {
                        findings.push(ValidationIssue::UnknownIntentTransition {
                            intent: intent.id.clone(),
                            transition: tid.clone(),
                        });
                        prev_to = None;
                    }
                    Some(t) => {
                        if let Some(expected) = prev_to {
                            if expected != &t.from {
                                findings.push(ValidationIssue::DisconnectedIntent {
                                    intent: intent.id.clone(),
                                    at: tid.clone(),
                                });
                            }
                        }
                        prev_to = Some(&t.to);
                    }
                }
            }
        }

        findings
    }

    fn prerequisite_cycles(&self) -> Vec<ValidationIssue> {
        // DFS over the requires relation; a back edge means the transition
        // can never fire (each prerequisite must appear strictly earlier).
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        fn visit<'a>(
            env: &'a EnvironmentGraph,
            tid: &'a str,
            marks: &mut BTreeMap<&'a str, Mark>,
            trail: &mut Vec<&'a str>,
            findings: &mut Vec<ValidationIssue>,
        ) {
            marks.insert(tid, Mark::Open);
            trail.push(tid);
            let reqs = env
                .by_id
                .get(tid)
                .map(|&i| env.transitions[i].requires.as_slice())
                .unwrap_or(&[]);
            for dep in reqs {
                let Some(&dep_idx) = env.by_id.get(dep.as_str()) else {
                    continue; // dangling, reported elsewhere
                };
                let dep_id = env.transitions[dep_idx].id.as_str();
                match marks.get(dep_id) {
                    Some(Mark::Open) => {
                        let start = trail.iter().position(|&t| t == dep_id).unwrap_or(0);
                        let mut cycle: Vec<TransitionId> =
                            trail[start..].iter().map(|t| t.to_string()).collect();
                        cycle.push(dep_id.to_string());
                        findings.push(ValidationIssue::PrerequisiteCycle { transitions: cycle });
                    }
                    Some(Mark::Done) => {}
                    None => visit(env, dep_id, marks, trail, findings),
                }
            }
            trail.pop();
            marks.insert(tid, Mark::Done);
        }

        let mut marks = BTreeMap::new();
        let mut findings = Vec::new();
        for t in &self.transitions {
            if !marks.contains_key(t.id.as_str()) {
                visit(self, &t.id, &mut marks, &mut Vec::new(), &mut findings);
            }
        }
        findings
    }

    fn unreachable_states(&self) -> Vec<ValidationIssue> {
        let mut reached: BTreeSet<&str> = BTreeSet::new();
        let mut queue: VecDeque<&str> = VecDeque::new();
        if self.states.contains_key(&self.root_state) {
            reached.insert(self.root_state.as_str());
            queue.push_back(self.root_state.as_str());
        }
        while let Some(s) = queue.pop_front() {
            if let Some(ids) = self.outgoing.get(s) {
                for &i in ids {
                    let to = self.transitions[i].to.as_str();
                    if self.states.contains_key(to) && reached.insert(to) {
                        queue.push_back(to);
                    }
                }
            }
        }
        self.states
            .keys()
            .filter(|id| !reached.contains(id.as_str()))
            .map(|id| ValidationIssue::UnreachableState { state: id.clone() })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// On-disk environment document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvDocument {
    root_state: StateId,
    states: Vec<UiState>,
    #[serde(default)]
    transitions: Vec<Transition>,
    #[serde(default)]
    intents: Vec<IntentSegment>,
}

/// Parse and fully validate an environment from a JSON byte stream.
pub fn load_environment<R: Read>(source: R) -> Result<EnvironmentGraph, LoadError> {
    let doc: EnvDocument = serde_json::from_reader(source)?;

    // Duplicate state ids disappear once the map is built, so catch them on
    // the raw document.
    let mut findings = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &doc.states {
        if !seen.insert(s.id.as_str()) {
            findings.push(ValidationIssue::DuplicateStateId {
                state: s.id.clone(),
            });
        }
    }

    let mut by_id = BTreeMap::new();
    let mut outgoing: BTreeMap<StateId, Vec<usize>> = BTreeMap::new();
    for (i, t) in doc.transitions.iter().enumerate() {
        by_id.entry(t.id.clone()).or_insert(i);
        outgoing.entry(t.from.clone()).or_default().push(i);
    }

    let graph = EnvironmentGraph {
        environment_id: "env".to_string(),
        root_state: doc.root_state,
        states: doc.states.into_iter().map(|s| (s.id.clone(), s)).collect(),
        transitions: doc.transitions,
        by_id,
        outgoing,
        intents: doc.intents,
    };

    findings.extend(graph.validate());
    if findings.is_empty() {
        Ok(graph)
    } else {
        Err(LoadError::Invalid(findings))
    }
}

/// Load from a file, using the file stem as the environment id.
pub fn load_environment_file(path: impl AsRef<FsPath>) -> Result<EnvironmentGraph, LoadError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(LoadError::Io)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "env".to_string());
    Ok(load_environment(file)?.with_environment_id(id))
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// A single validation finding; every variant names the offending id.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationIssue {
    #[error("duplicate state id `{state}`")]
    DuplicateStateId { state: StateId },
    #[error("empty state id")]
    EmptyStateId,
    #[error("state `{state}` has an element with an empty id")]
    EmptyElementId { state: StateId },
    #[error("state `{state}` has duplicate element id `{element}`")]
    DuplicateElementId { state: StateId, element: ElementId },
    #[error("root state `{root}` does not exist")]
    UnknownRootState { root: StateId },
    #[error("transition `{transition}` references unknown {which}-state `{state}`")]
    DanglingStateRef {
        transition: TransitionId,
        which: &'static str,
        state: StateId,
    },
    #[error("duplicate transition id `{transition}`")]
    DuplicateTransitionId { transition: TransitionId },
    #[error("transition `{transition}` duplicates the (state, action) key of `{earlier}` in state `{state}`")]
    DuplicateStateAction {
        state: StateId,
        transition: TransitionId,
        earlier: TransitionId,
    },
    #[error("transition `{transition}` has a malformed action: {reason}")]
    MalformedAction {
        transition: TransitionId,
        reason: String,
    },
    #[error("transition `{transition}` targets unknown element `{element}`")]
    UnknownActionTarget {
        transition: TransitionId,
        element: ElementId,
    },
    #[error("transition `{transition}` types into `{element}`, which is not a text-field")]
    TypeTargetNotTextField {
        transition: TransitionId,
        element: ElementId,
    },
    #[error(
        "transition `{transition}` is tagged sequential_dependency but lists no prerequisites"
    )]
    SequentialTagWithoutPrereq { transition: TransitionId },
    #[error(
        "transition `{transition}` lists prerequisites but is not tagged sequential_dependency"
    )]
    PrereqWithoutSequentialTag { transition: TransitionId },
    #[error("transition `{transition}` requires unknown transition `{prerequisite}`")]
    UnknownPrerequisite {
        transition: TransitionId,
        prerequisite: TransitionId,
    },
    #[error("prerequisite cycle through {transitions:?}")]
    PrerequisiteCycle { transitions: Vec<TransitionId> },
    #[error("state `{state}` is unreachable from the root")]
    UnreachableState { state: StateId },
    #[error("intent `{intent}` references unknown transition `{transition}`")]
    UnknownIntentTransition {
        intent: String,
        transition: TransitionId,
    },
    #[error("intent `{intent}` is not a connected path at transition `{at}`")]
    DisconnectedIntent { intent: String, at: TransitionId },
    #[error("intent `{intent}` lists no transitions")]
    EmptyIntent { intent: String },
}

/// Loader failure: malformed document or validation findings.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("environment parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("environment read error: {0}")]
    Io(std::io::Error),
    #[error("environment failed validation: {}", format_findings(.0))]
    Invalid(Vec<ValidationIssue>),
}

fn format_findings(findings: &[ValidationIssue]) -> String {
    findings
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Step-level failure of `valid_actions`/`apply`.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("unknown state `{0}`")]
    UnknownState(StateId),
    #[error("invalid action in state `{state}`: {reason}")]
    InvalidAction { state: StateId, reason: String },
}

/// Audit failure: a trajectory step matching no transition.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("trajectory step {step} matches no transition from state `{state}`")]
    NoTransition { step: usize, state: StateId },
}
