//! The search tree over the environment: per-edge value/visit statistics,
//! UCB selection, expansion, and reward backpropagation.
//!
//! Node identity is per tree path, not per environment state: prerequisite
//! gating makes identical states behave differently depending on history, so
//! a child is owned by the specific edge that created it. Edges keep a
//! running mean `q_value` over backpropagated rewards and a `visit_count`;
//! selection scores an edge as
//! `Q(v,a) + c * sqrt(ln(N(v)+1) / (N(v,a)+1))` with `N(v)` the node's visit
//! total, ties broken by stable child order.

use serde::Serialize;
use thiserror::Error;

use crate::env::{EnvironmentGraph, Path, StateId, StepError, UiAction};

/// Index of a node in the tree arena.
pub type NodeId = usize;

/// Per-edge statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EdgeStats {
    pub q_value: f64,
    pub visit_count: u64,
}

/// An outgoing edge: the action taken and the child it leads to.
#[derive(Debug, Clone)]
pub struct ChildEdge {
    pub action: UiAction,
    pub child: NodeId,
    pub stats: EdgeStats,
}

/// One node of the search tree.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub id: NodeId,
    pub state: StateId,
    pub incoming_action: Option<UiAction>,
    pub depth: usize,
    /// Expanded edges in insertion order.
    pub children: Vec<ChildEdge>,
    /// Legal actions not yet expanded, in the stable order `valid_actions`
    /// produced at node creation time.
    pub untried_actions: Vec<UiAction>,
}

impl TreeNode {
    pub fn fully_expanded(&self) -> bool {
        self.untried_actions.is_empty()
    }

    /// `N(v)`: total visits across this node's edges.
    pub fn visit_total(&self) -> u64 {
        self.children.iter().map(|c| c.stats.visit_count).sum()
    }

    pub fn edge(&self, action: &UiAction) -> Option<&ChildEdge> {
        self.children.iter().find(|c| &c.action == action)
    }
}

/// Arena-backed search tree; one instance per run, single writer.
#[derive(Debug, Default)]
pub struct ActionTree {
    nodes: Vec<TreeNode>,
}

impl ActionTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> Option<&TreeNode> {
        self.nodes.first()
    }

    /// Root node for the environment's root state, created on first call and
    /// reused afterwards (statistics preserved).
    pub fn get_or_create_root(&mut self, env: &EnvironmentGraph) -> Result<NodeId, TreeError> {
        if self.nodes.is_empty() {
            let root_state = env.root_state().clone();
            let untried = env.valid_actions(&root_state, &Path::new(root_state.clone()))?;
            self.nodes.push(TreeNode {
                id: 0,
                state: root_state,
                incoming_action: None,
                depth: 0,
                children: Vec::new(),
                untried_actions: untried,
            });
        }
        Ok(0)
    }

    /// UCB argmax over the node's edges. Requires a fully expanded node with
    /// at least one child; ties pick the first child in stable order.
    pub fn ucb_select(&self, node: NodeId, c: f64) -> Result<(UiAction, NodeId), TreeError> {
        let n = self.node(node);
        if !n.fully_expanded() {
            return Err(TreeError::NotFullyExpanded { node });
        }
        if n.children.is_empty() {
            return Err(TreeError::NoChildren { node });
        }
        let total = n.visit_total() as f64;
        let mut best: Option<(&ChildEdge, f64)> = None;
        for edge in &n.children {
            let bonus = c * ((total + 1.0).ln() / (edge.stats.visit_count as f64 + 1.0)).sqrt();
            let score = edge.stats.q_value + bonus;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((edge, score));
            }
        }
        let (edge, _) = best.expect("non-empty children");
        Ok((edge.action.clone(), edge.child))
    }

    /// Expand the first untried action (stable order): apply it, create the
    /// child node, extend `path`, and return `(child, action)`.
    pub fn expand(
        &mut self,
        node: NodeId,
        env: &EnvironmentGraph,
        path: &mut Path,
    ) -> Result<(NodeId, UiAction), TreeError> {
        if self.node(node).fully_expanded() {
            return Err(TreeError::FullyExpanded { node });
        }
        let action = self.nodes[node].untried_actions.remove(0);
        let from = self.nodes[node].state.clone();
        let to = env.apply(&from, &action, path)?;
        path.push(action.clone(), to.clone());
        let untried = env.valid_actions(&to, path)?;
        let child_id = self.nodes.len();
        let depth = self.nodes[node].depth + 1;
        self.nodes.push(TreeNode {
            id: child_id,
            state: to,
            incoming_action: Some(action.clone()),
            depth,
            children: Vec::new(),
            untried_actions: untried,
        });
        self.nodes[node].children.push(ChildEdge {
            action: action.clone(),
            child: child_id,
            stats: EdgeStats::default(),
        });
        Ok((child_id, action))
    }

    /// Incremental-mean update along the tree edges of `steps`, root first:
    /// `N += 1` then `Q += (r - Q) / N`. Every step must correspond to an
    /// existing edge.
    pub fn backpropagate(
        &mut self,
        steps: &[(UiAction, StateId)],
        reward: f64,
    ) -> Result<(), TreeError> {
        if !(reward >= 0.0 && reward.is_finite()) {
            return Err(TreeError::BadReward { reward });
        }
        if self.nodes.is_empty() {
            if steps.is_empty() {
                return Ok(());
            }
            return Err(TreeError::MissingEdge { step: 0 });
        }
        // Resolve the edge chain first so a bad path leaves stats untouched.
        let mut chain = Vec::with_capacity(steps.len());
        let mut cur = 0;
        for (i, (action, _)) in steps.iter().enumerate() {
            let Some(pos) = self.nodes[cur]
                .children
                .iter()
                .position(|e| &e.action == action)
            else {
                return Err(TreeError::MissingEdge { step: i });
            };
            chain.push((cur, pos));
            cur = self.nodes[cur].children[pos].child;
        }
        for (node, pos) in chain {
            let stats = &mut self.nodes[node].children[pos].stats;
            stats.visit_count += 1;
            stats.q_value += (reward - stats.q_value) / stats.visit_count as f64;
        }
        Ok(())
    }

    /// Serializable snapshot for `--dump-tree`.
    pub fn dump(&self) -> TreeDump {
        TreeDump {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDump {
                    id: n.id,
                    state: n.state.clone(),
                    depth: n.depth,
                    incoming_action: n.incoming_action.clone(),
                    untried: n.untried_actions.len(),
                    edges: n
                        .children
                        .iter()
                        .map(|e| EdgeDump {
                            action: e.action.clone(),
                            child: e.child,
                            q: e.stats.q_value,
                            n: e.stats.visit_count,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TreeDump {
    pub nodes: Vec<NodeDump>,
}

#[derive(Debug, Serialize)]
pub struct NodeDump {
    pub id: NodeId,
    pub state: StateId,
    pub depth: usize,
    pub incoming_action: Option<UiAction>,
    pub untried: usize,
    pub edges: Vec<EdgeDump>,
}

#[derive(Debug, Serialize)]
pub struct EdgeDump {
    pub action: UiAction,
    pub child: NodeId,
    pub q: f64,
    pub n: u64,
}

/// Tree contract violations and propagated environment errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("ucb_select requires node {node} to be fully expanded")]
    NotFullyExpanded { node: NodeId },
    #[error("ucb_select called on leaf node {node}")]
    NoChildren { node: NodeId },
    #[error("expand called on fully expanded node {node}")]
    FullyExpanded { node: NodeId },
    #[error("path step {step} has no matching tree edge")]
    MissingEdge { step: usize },
    #[error("reward {reward} is not a finite non-negative value")]
    BadReward { reward: f64 },
    #[error(transparent)]
    Env(#[from] StepError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::load_environment;

    /// Root with three buttons, each leading to its own leaf.
    fn env3() -> EnvironmentGraph {
        let doc = r#"{
          "root_state": "s0",
          "states": [
            { "id": "s0", "elements": [
               { "id": "a", "role": "button", "label": "A" },
               { "id": "b", "role": "button", "label": "B" },
               { "id": "c", "role": "button", "label": "C" } ] },
            { "id": "sa", "elements": [] },
            { "id": "sb", "elements": [] },
            { "id": "sc", "elements": [] }
          ],
          "transitions": [
            { "id": "ta", "from": "s0", "action": { "kind": "tap", "target": "a" }, "to": "sa" },
            { "id": "tb", "from": "s0", "action": { "kind": "tap", "target": "b" }, "to": "sb" },
            { "id": "tc", "from": "s0", "action": { "kind": "tap", "target": "c" }, "to": "sc" }
          ]
        }"#;
        load_environment(doc.as_bytes()).unwrap()
    }

    fn seeded_node(q_n: &[(f64, u64)]) -> ActionTree {
        // Builds a root whose children carry the given (Q, N) pairs.
        let env = env3();
        let mut tree = ActionTree::new();
        let root = tree.get_or_create_root(&env).unwrap();
        for _ in q_n {
            tree.expand(root, &env, &mut Path::new("s0")).unwrap();
        }
        for (i, &(q, n)) in q_n.iter().enumerate() {
            tree.nodes[0].children[i].stats = EdgeStats {
                q_value: q,
                visit_count: n,
            };
        }
        tree.nodes[0].untried_actions.clear();
        tree
    }

    #[test]
    fn root_is_idempotent_and_counts_untried() {
        let env = env3();
        let mut tree = ActionTree::new();
        let r1 = tree.get_or_create_root(&env).unwrap();
        let node = tree.node(r1);
        assert_eq!(node.depth, 0);
        assert!(node.children.is_empty());
        assert_eq!(node.untried_actions.len(), 3);
        let r2 = tree.get_or_create_root(&env).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(tree.len(), 1);
    }

    #[test]
    fn expand_pops_untried_in_stable_order() {
        let env = env3();
        let mut tree = ActionTree::new();
        let root = tree.get_or_create_root(&env).unwrap();
        let mut path = Path::new("s0");
        let (_, first) = tree.expand(root, &env, &mut path).unwrap();
        assert_eq!(first, UiAction::tap("a"));
        assert_eq!(tree.node(root).untried_actions.len(), 2);
        assert_eq!(path.len(), 1);
        let mut path = Path::new("s0");
        let (_, second) = tree.expand(root, &env, &mut path).unwrap();
        assert_eq!(second, UiAction::tap("b"));
        let mut path = Path::new("s0");
        let (child, _) = tree.expand(root, &env, &mut path).unwrap();
        assert_eq!(tree.node(child).depth, 1);
        assert!(matches!(
            tree.expand(root, &env, &mut Path::new("s0")),
            Err(TreeError::FullyExpanded { .. })
        ));
    }

    #[test]
    fn ucb_requires_fully_expanded_node() {
        let env = env3();
        let mut tree = ActionTree::new();
        let root = tree.get_or_create_root(&env).unwrap();
        assert!(matches!(
            tree.ucb_select(root, 1.0),
            Err(TreeError::NotFullyExpanded { .. })
        ));
    }

    #[test]
    fn pure_exploitation_picks_max_q() {
        let tree = seeded_node(&[(5.0, 10), (1.0, 10)]);
        let (action, _) = tree.ucb_select(0, 0.0).unwrap();
        assert_eq!(action, UiAction::tap("a"));
    }

    #[test]
    fn exploration_bonus_prefers_rarely_visited() {
        let tree = seeded_node(&[(1.0, 100), (1.0, 1)]);
        let (action, _) = tree.ucb_select(0, 1.0).unwrap();
        assert_eq!(action, UiAction::tap("b"));
    }

    /// Q=(0.9, 1.2), N=(3, 9), N(v)=12, c=1.4. Direct evaluation of the
    /// selection rule gives scores
    /// 0.9 + 1.4*sqrt(ln 13 / 4)  = 2.0210823...
    /// 1.2 + 1.4*sqrt(ln 13 / 10) = 1.9090348...
    /// so the first action wins.
    #[test]
    fn ucb_frozen_arithmetic() {
        let tree = seeded_node(&[(0.9, 3), (1.2, 9)]);
        let s1 = 0.9 + 1.4 * (13f64.ln() / 4.0).sqrt();
        let s2 = 1.2 + 1.4 * (13f64.ln() / 10.0).sqrt();
        assert!((s1 - 2.021_082_3).abs() < 1e-6);
        assert!((s2 - 1.909_034_8).abs() < 1e-6);
        assert!(s1 > s2);
        let (action, _) = tree.ucb_select(0, 1.4).unwrap();
        assert_eq!(action, UiAction::tap("a"));
    }

    #[test]
    fn ties_break_by_stable_child_order() {
        let tree = seeded_node(&[(1.0, 4), (1.0, 4), (1.0, 4)]);
        let (action, _) = tree.ucb_select(0, 1.0).unwrap();
        assert_eq!(action, UiAction::tap("a"));
    }

    #[test]
    fn first_backprop_sets_the_mean() {
        let env = env3();
        let mut tree = ActionTree::new();
        let root = tree.get_or_create_root(&env).unwrap();
        let mut path = Path::new("s0");
        tree.expand(root, &env, &mut path).unwrap();
        tree.backpropagate(&path.steps, 4.0).unwrap();
        let stats = tree.node(root).children[0].stats;
        assert_eq!(
            stats,
            EdgeStats {
                q_value: 4.0,
                visit_count: 1
            }
        );
        tree.backpropagate(&path.steps, 2.0).unwrap();
        let stats = tree.node(root).children[0].stats;
        assert_eq!(
            stats,
            EdgeStats {
                q_value: 3.0,
                visit_count: 2
            }
        );
    }

    #[test]
    fn sequential_rewards_equal_batch_mean() {
        let env = env3();
        let mut tree = ActionTree::new();
        let root = tree.get_or_create_root(&env).unwrap();
        let mut path = Path::new("s0");
        tree.expand(root, &env, &mut path).unwrap();
        for r in [1.0, 100.0, 0.5] {
            tree.backpropagate(&path.steps, r).unwrap();
        }
        let stats = tree.node(root).children[0].stats;
        assert_eq!(stats.visit_count, 3);
        assert!((stats.q_value - 101.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn backprop_without_edge_names_the_step() {
        let env = env3();
        let mut tree = ActionTree::new();
        let root = tree.get_or_create_root(&env).unwrap();
        let mut path = Path::new("s0");
        tree.expand(root, &env, &mut path).unwrap();
        let steps = vec![
            path.steps[0].clone(),
            (UiAction::tap("zz"), "sb".to_string()),
        ];
        assert_eq!(
            tree.backpropagate(&steps, 1.0),
            Err(TreeError::MissingEdge { step: 1 })
        );
        // And the failed call touched nothing.
        assert_eq!(tree.node(root).children[0].stats.visit_count, 0);
    }

    #[test]
    fn constant_q_shift_preserves_argmax() {
        let base = [(0.3, 7), (0.9, 2), (0.5, 5)];
        let tree = seeded_node(&base);
        let (before, _) = tree.ucb_select(0, 1.4).unwrap();
        let shifted: Vec<(f64, u64)> = base.iter().map(|&(q, n)| (q + 17.5, n)).collect();
        let tree = seeded_node(&shifted);
        let (after, _) = tree.ucb_select(0, 1.4).unwrap();
        assert_eq!(before, after);
    }
}
