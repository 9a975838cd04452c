//! Time Petri Nets and their discrete-time reachability graphs.
//!
//! Transitions carry static integer firing intervals `[eft, lft]` (`lft` may
//! be unbounded). The graph is built under strong single-server semantics
//! with unit time steps: a transition may fire once its clock is inside its
//! interval, and time may only advance (a `tick` edge) while no enabled
//! transition sits at its latest firing time. States are deduplicated by
//! `(marking, clocks)` value, so identical nets always rebuild the identical
//! graph with identical state indexing.
//!
//! Clocks of transitions with unbounded `lft` saturate at `eft`: beyond that
//! point further waiting cannot change what is firable, so the quotient keeps
//! the state space finite without affecting reachability.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TpnError {
    #[error("duplicate place id `{0}`")]
    DuplicatePlace(String),
    #[error("duplicate transition id `{0}`")]
    DuplicateTransition(String),
    #[error("{context} references unknown place `{place}`")]
    UnknownPlace { place: String, context: String },
    #[error("transition `{id}` has eft {eft} > lft {lft}")]
    BadInterval { id: String, eft: u32, lft: u32 },
    #[error("net too large: {0}")]
    TooLarge(String),
    #[error("state space exceeds max_states = {max_states}")]
    StateSpaceOverflow { max_states: usize },
}

#[derive(Debug, Error)]
pub enum PredicateError {
    #[error("predicate syntax error at byte {at}: {msg}")]
    Syntax { at: usize, msg: String },
    #[error("predicate references unknown place `{0}`")]
    UnknownPlace(String),
}

/// A timed transition with its static firing interval and arc multisets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Transition {
    pub id: String,
    pub eft: u32,
    /// Latest firing time; `None` encodes an unbounded interval (JSON `null`).
    pub lft: Option<u32>,
    #[serde(default)]
    pub input_arcs: BTreeMap<String, u32>,
    #[serde(default)]
    pub output_arcs: BTreeMap<String, u32>,
}

/// A Time Petri Net: places, timed transitions, and the initial marking.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TimePetriNet {
    pub places: Vec<String>,
    pub transitions: Vec<Transition>,
    pub initial_marking: BTreeMap<String, u32>,
}

impl TimePetriNet {
    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("net serialization cannot fail")
    }

    /// Checks referential integrity, id uniqueness and interval sanity.
    fn compile(&self) -> Result<CompiledNet, TpnError> {
        if self.places.len() > u16::MAX as usize {
            return Err(TpnError::TooLarge(format!("{} places", self.places.len())));
        }
        if self.transitions.len() > u16::MAX as usize {
            return Err(TpnError::TooLarge(format!(
                "{} transitions",
                self.transitions.len()
            )));
        }
        let mut place_index: HashMap<&str, u16> = HashMap::new();
        for (i, p) in self.places.iter().enumerate() {
            if place_index.insert(p, i as u16).is_some() {
                return Err(TpnError::DuplicatePlace(p.clone()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        let mut compiled = Vec::with_capacity(self.transitions.len());
        for t in &self.transitions {
            if !seen.insert(t.id.as_str()) {
                return Err(TpnError::DuplicateTransition(t.id.clone()));
            }
            if let Some(lft) = t.lft {
                if t.eft > lft {
                    return Err(TpnError::BadInterval {
                        id: t.id.clone(),
                        eft: t.eft,
                        lft,
                    });
                }
            }
            let resolve = |arcs: &BTreeMap<String, u32>, kind: &str| {
                arcs.iter()
                    .filter(|(_, &m)| m > 0)
                    .map(|(p, &m)| {
                        place_index
                            .get(p.as_str())
                            .map(|&i| (i, m))
                            .ok_or_else(|| TpnError::UnknownPlace {
                                place: p.clone(),
                                context: format!("{kind} arc of transition `{}`", t.id),
                            })
                    })
                    .collect::<Result<Vec<_>, _>>()
            };
            compiled.push(CompiledTransition {
                eft: t.eft,
                lft: t.lft,
                inputs: resolve(&t.input_arcs, "input")?,
                outputs: resolve(&t.output_arcs, "output")?,
            });
        }
        for p in self.initial_marking.keys() {
            if !place_index.contains_key(p.as_str()) {
                return Err(TpnError::UnknownPlace {
                    place: p.clone(),
                    context: "initial marking".into(),
                });
            }
        }
        let mut consumers = vec![Vec::new(); self.places.len()];
        for (ti, t) in compiled.iter().enumerate() {
            for &(p, _) in &t.inputs {
                consumers[p as usize].push(ti as u16);
            }
        }
        let mut initial: Vec<(u16, u32)> = self
            .initial_marking
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(p, &c)| (place_index[p.as_str()], c))
            .collect();
        initial.sort_unstable();
        Ok(CompiledNet {
            transitions: compiled,
            consumers,
            initial,
        })
    }
}

struct CompiledTransition {
    eft: u32,
    lft: Option<u32>,
    inputs: Vec<(u16, u32)>,
    outputs: Vec<(u16, u32)>,
}

impl CompiledTransition {
    /// Saturation point for the stored clock value.
    fn clock_cap(&self) -> u32 {
        self.lft.unwrap_or(self.eft)
    }
}

struct CompiledNet {
    transitions: Vec<CompiledTransition>,
    /// place index -> transitions consuming from it
    consumers: Vec<Vec<u16>>,
    initial: Vec<(u16, u32)>,
}

type Marking = Vec<(u16, u32)>;

fn marking_count(m: &Marking, place: u16) -> u32 {
    match m.binary_search_by_key(&place, |&(p, _)| p) {
        Ok(i) => m[i].1,
        Err(_) => 0,
    }
}

fn marking_sub(m: &Marking, arcs: &[(u16, u32)]) -> Marking {
    let mut out = m.clone();
    for &(p, mult) in arcs {
        let i = out
            .binary_search_by_key(&p, |&(q, _)| q)
            .expect("subtracting from empty place");
        out[i].1 -= mult;
    }
    out.retain(|&(_, c)| c > 0);
    out
}

fn marking_add(m: &Marking, arcs: &[(u16, u32)]) -> Marking {
    let mut out = m.clone();
    for &(p, mult) in arcs {
        match out.binary_search_by_key(&p, |&(q, _)| q) {
            Ok(i) => out[i].1 += mult,
            Err(i) => out.insert(i, (p, mult)),
        }
    }
    out
}

fn is_enabled(net: &CompiledNet, m: &Marking, t: u16) -> bool {
    net.transitions[t as usize]
        .inputs
        .iter()
        .all(|&(p, mult)| marking_count(m, p) >= mult)
}

/// One reachable state: the marking plus a clock per enabled transition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphState {
    /// Non-empty places only, sorted by place index.
    marking: Vec<(u16, u32)>,
    /// One entry per enabled transition, sorted by transition index.
    clocks: Vec<(u16, u32)>,
}

/// Label on a reachability-graph edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeLabel {
    /// A transition firing, by transition index.
    Fire(u16),
    /// A unit time advance.
    Tick,
}

/// Explicit reachability graph with transition-labeled and tick edges.
#[derive(Debug, PartialEq)]
pub struct ReachabilityGraph {
    place_names: Vec<String>,
    transition_names: Vec<String>,
    states: Vec<GraphState>,
    out: Vec<Vec<(EdgeLabel, u32)>>,
    edge_count: usize,
    firing_edge_count: usize,
}

impl ReachabilityGraph {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Total edge count, tick edges included.
    pub fn num_edges(&self) -> usize {
        self.edge_count
    }

    pub fn num_firing_edges(&self) -> usize {
        self.firing_edge_count
    }

    /// Index of the initial state (always 0).
    pub fn initial(&self) -> usize {
        0
    }

    pub fn edges_from(&self, state: usize) -> &[(EdgeLabel, u32)] {
        &self.out[state]
    }

    pub fn transition_name(&self, index: u16) -> &str {
        &self.transition_names[index as usize]
    }

    pub fn transition_names(&self) -> &[String] {
        &self.transition_names
    }

    pub fn place_index(&self, name: &str) -> Option<u16> {
        self.place_names.iter().position(|p| p == name).map(|i| i as u16)
    }

    /// Token count of `place` in `state`.
    pub fn tokens(&self, state: usize, place: u16) -> u32 {
        marking_count(&self.states[state].marking, place)
    }

    pub fn marking_entries(&self, state: usize) -> impl Iterator<Item = (&str, u32)> {
        self.states[state]
            .marking
            .iter()
            .map(|&(p, c)| (self.place_names[p as usize].as_str(), c))
    }

    pub fn clock_entries(&self, state: usize) -> impl Iterator<Item = (&str, u32)> {
        self.states[state]
            .clocks
            .iter()
            .map(|&(t, c)| (self.transition_names[t as usize].as_str(), c))
    }

    /// A state with no outgoing edge of any kind.
    pub fn is_deadlock(&self, state: usize) -> bool {
        self.out[state].is_empty()
    }

    /// States satisfying the predicate; the empty set is a valid result.
    pub fn find_violation_states(
        &self,
        predicate: &StatePredicate,
    ) -> Result<BTreeSet<usize>, PredicateError> {
        let bound = match predicate {
            StatePredicate::Deadlock => None,
            StatePredicate::Marking(expr) => Some(expr.bind(self)?),
        };
        Ok((0..self.states.len())
            .filter(|&s| match &bound {
                None => self.is_deadlock(s),
                Some(b) => b.eval(&self.states[s].marking),
            })
            .collect())
    }

    /// Graphviz rendering; firing edges carry the transition id, tick edges
    /// are labeled with the tau symbol. `highlight` states get a double border.
    pub fn to_dot(&self, highlight: &BTreeSet<usize>) -> String {
        use std::fmt::Write;
        let mut dot = String::from("digraph reachability {\n  rankdir=LR;\n");
        let _ = writeln!(dot, "  s0 [style=bold];");
        for &s in highlight {
            let _ = writeln!(dot, "  s{s} [peripheries=2];");
        }
        for (src, edges) in self.out.iter().enumerate() {
            for &(label, dst) in edges {
                let text = match label {
                    EdgeLabel::Fire(t) => self.transition_names[t as usize].as_str(),
                    EdgeLabel::Tick => "τ",
                };
                let _ = writeln!(dot, "  s{src} -> s{dst} [label=\"{text}\"];");
            }
        }
        dot.push_str("}\n");
        dot
    }

    /// Test/fixture constructor for an abstract labeled graph.
    ///
    /// States are synthesized (one distinct marking per index); edges use the
    /// given transition-name table. Used to encode literature graphs whose
    /// underlying net is not available.
    pub fn from_edges(
        num_states: usize,
        transition_names: Vec<String>,
        edges: &[(usize, Option<usize>, usize)],
    ) -> Self {
        let place_names = vec!["state".to_string()];
        let states = (0..num_states)
            .map(|i| GraphState {
                marking: vec![(0u16, i as u32 + 1)],
                clocks: Vec::new(),
            })
            .collect();
        let mut out = vec![Vec::new(); num_states];
        let mut firing = 0;
        for &(src, label, dst) in edges {
            let l = match label {
                Some(t) => {
                    assert!(t < transition_names.len());
                    firing += 1;
                    EdgeLabel::Fire(t as u16)
                }
                None => EdgeLabel::Tick,
            };
            out[src].push((l, dst as u32));
        }
        Self {
            place_names,
            transition_names,
            states,
            out,
            edge_count: edges.len(),
            firing_edge_count: firing,
        }
    }
}

/// Builds the reachability graph by breadth-first exploration.
///
/// Fails with [`TpnError::StateSpaceOverflow`] rather than truncating: a
/// truncated graph would silently corrupt downstream trace statistics.
pub fn build_reachability_graph(
    net: &TimePetriNet,
    max_states: usize,
) -> Result<ReachabilityGraph, TpnError> {
    let compiled = net.compile()?;
    let n_transitions = compiled.transitions.len();

    let initial_clocks: Vec<(u16, u32)> = (0..n_transitions as u16)
        .filter(|&t| is_enabled(&compiled, &compiled.initial, t))
        .map(|t| (t, 0))
        .collect();
    let initial = GraphState {
        marking: compiled.initial.clone(),
        clocks: initial_clocks,
    };

    let mut index: HashMap<GraphState, u32> = HashMap::new();
    let mut states = vec![initial.clone()];
    let mut out: Vec<Vec<(EdgeLabel, u32)>> = vec![Vec::new()];
    index.insert(initial, 0);
    let mut queue = VecDeque::from([0u32]);
    let mut edge_count = 0usize;
    let mut firing_edge_count = 0usize;

    while let Some(si) = queue.pop_front() {
        let state = states[si as usize].clone();
        let mut successors: Vec<(EdgeLabel, GraphState)> = Vec::new();

        // firing successors, in transition declaration order
        for &(t, clock) in &state.clocks {
            let tr = &compiled.transitions[t as usize];
            if clock < tr.eft {
                continue;
            }
            successors.push((EdgeLabel::Fire(t), fire(&compiled, &state, t)));
        }

        // tick successor: only while no enabled transition is at its lft
        let any_enabled = !state.clocks.is_empty();
        let tick_blocked = state
            .clocks
            .iter()
            .any(|&(t, c)| compiled.transitions[t as usize].lft == Some(c));
        if any_enabled && !tick_blocked {
            let clocks = state
                .clocks
                .iter()
                .map(|&(t, c)| (t, (c + 1).min(compiled.transitions[t as usize].clock_cap())))
                .collect();
            successors.push((
                EdgeLabel::Tick,
                GraphState {
                    marking: state.marking.clone(),
                    clocks,
                },
            ));
        }

        for (label, succ) in successors {
            let next_index = states.len() as u32;
            let target = match index.get(&succ) {
                Some(&i) => i,
                None => {
                    if states.len() >= max_states {
                        return Err(TpnError::StateSpaceOverflow { max_states });
                    }
                    states.push(succ.clone());
                    out.push(Vec::new());
                    index.insert(succ, next_index);
                    queue.push_back(next_index);
                    next_index
                }
            };
            out[si as usize].push((label, target));
            edge_count += 1;
            if matches!(label, EdgeLabel::Fire(_)) {
                firing_edge_count += 1;
            }
        }
    }

    Ok(ReachabilityGraph {
        place_names: net.places.clone(),
        transition_names: net.transitions.iter().map(|t| t.id.clone()).collect(),
        states,
        out,
        edge_count,
        firing_edge_count,
    })
}

/// Fires `t` from `state`: standard intermediate-marking persistence — a
/// transition keeps its clock iff it stays enabled both in `m - pre(t)` and
/// in the new marking; the fired transition itself always resets.
fn fire(net: &CompiledNet, state: &GraphState, t: u16) -> GraphState {
    let tr = &net.transitions[t as usize];
    let m_int = marking_sub(&state.marking, &tr.inputs);
    let m_new = marking_add(&m_int, &tr.outputs);

    // Only consumers of places touched by the firing can change enabledness.
    let mut candidates: Vec<u16> = tr
        .inputs
        .iter()
        .chain(tr.outputs.iter())
        .flat_map(|&(p, _)| net.consumers[p as usize].iter().copied())
        .collect();
    candidates.sort_unstable();
    candidates.dedup();

    let was_enabled =
        |t2: u16| state.clocks.binary_search_by_key(&t2, |&(x, _)| x).is_ok();
    let old_clock = |t2: u16| {
        state
            .clocks
            .binary_search_by_key(&t2, |&(x, _)| x)
            .map(|i| state.clocks[i].1)
            .unwrap()
    };

    let mut clocks: Vec<(u16, u32)> = Vec::with_capacity(state.clocks.len() + 1);
    let mut ci = 0usize; // cursor into candidates
    for t2 in 0..net.transitions.len() as u16 {
        let is_candidate = loop {
            match candidates.get(ci) {
                Some(&c) if c < t2 => ci += 1,
                Some(&c) => break c == t2,
                None => break false,
            }
        };
        let enabled_new = if is_candidate {
            is_enabled(net, &m_new, t2)
        } else {
            was_enabled(t2)
        };
        if !enabled_new {
            continue;
        }
        let persists = t2 != t
            && was_enabled(t2)
            && is_enabled(net, &m_int, t2);
        clocks.push((t2, if persists { old_clock(t2) } else { 0 }));
    }

    GraphState {
        marking: m_new,
        clocks,
    }
}

// ---------------------------------------------------------------------------
// State predicates
// ---------------------------------------------------------------------------

/// Built-in violation predicates over graph states.
#[derive(Debug, Clone)]
pub enum StatePredicate {
    /// No outgoing edge of any kind.
    Deadlock,
    /// Boolean expression over place token counts.
    Marking(MarkingExpr),
}

impl StatePredicate {
    /// `deadlock`, or a marking expression such as `held >= 1 && pool == 0`.
    pub fn parse(text: &str) -> Result<Self, PredicateError> {
        if text.trim() == "deadlock" {
            Ok(StatePredicate::Deadlock)
        } else {
            Ok(StatePredicate::Marking(MarkingExpr::parse(text)?))
        }
    }
}

/// Comparison operator in a marking expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Eq,
    Ne,
    Le,
    Ge,
    Lt,
    Gt,
}

#[derive(Debug, Clone)]
enum ExprNode {
    Cmp { place: String, op: CmpOp, value: u32 },
    And(Box<ExprNode>, Box<ExprNode>),
    Or(Box<ExprNode>, Box<ExprNode>),
    Not(Box<ExprNode>),
}

/// A parsed boolean expression over place token counts.
///
/// Grammar: `or := and ('||' and)*`, `and := unary ('&&' unary)*`,
/// `unary := '!' unary | '(' or ')' | place cmp integer`.
#[derive(Debug, Clone)]
pub struct MarkingExpr {
    root: ExprNode,
}

impl MarkingExpr {
    pub fn parse(text: &str) -> Result<Self, PredicateError> {
        let mut p = ExprParser {
            bytes: text.as_bytes(),
            pos: 0,
        };
        let root = p.parse_or()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(PredicateError::Syntax {
                at: p.pos,
                msg: "trailing input".into(),
            });
        }
        Ok(Self { root })
    }

    fn bind(&self, graph: &ReachabilityGraph) -> Result<BoundExpr, PredicateError> {
        fn walk(
            node: &ExprNode,
            graph: &ReachabilityGraph,
        ) -> Result<BoundNode, PredicateError> {
            Ok(match node {
                ExprNode::Cmp { place, op, value } => BoundNode::Cmp {
                    place: graph
                        .place_index(place)
                        .ok_or_else(|| PredicateError::UnknownPlace(place.clone()))?,
                    op: *op,
                    value: *value,
                },
                ExprNode::And(a, b) => {
                    BoundNode::And(Box::new(walk(a, graph)?), Box::new(walk(b, graph)?))
                }
                ExprNode::Or(a, b) => {
                    BoundNode::Or(Box::new(walk(a, graph)?), Box::new(walk(b, graph)?))
                }
                ExprNode::Not(a) => BoundNode::Not(Box::new(walk(a, graph)?)),
            })
        }
        Ok(BoundExpr {
            root: walk(&self.root, graph)?,
        })
    }
}

enum BoundNode {
    Cmp { place: u16, op: CmpOp, value: u32 },
    And(Box<BoundNode>, Box<BoundNode>),
    Or(Box<BoundNode>, Box<BoundNode>),
    Not(Box<BoundNode>),
}

struct BoundExpr {
    root: BoundNode,
}

impl BoundExpr {
    fn eval(&self, marking: &Marking) -> bool {
        fn walk(node: &BoundNode, marking: &Marking) -> bool {
            match node {
                BoundNode::Cmp { place, op, value } => {
                    let tokens = marking_count(marking, *place);
                    match op {
                        CmpOp::Eq => tokens == *value,
                        CmpOp::Ne => tokens != *value,
                        CmpOp::Le => tokens <= *value,
                        CmpOp::Ge => tokens >= *value,
                        CmpOp::Lt => tokens < *value,
                        CmpOp::Gt => tokens > *value,
                    }
                }
                BoundNode::And(a, b) => walk(a, marking) && walk(b, marking),
                BoundNode::Or(a, b) => walk(a, marking) || walk(b, marking),
                BoundNode::Not(a) => !walk(a, marking),
            }
        }
        walk(&self.root, marking)
    }
}

struct ExprParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ExprParser<'_> {
    fn skip_ws(&mut self) {
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.bytes[self.pos..].starts_with(token.as_bytes()) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn parse_or(&mut self) -> Result<ExprNode, PredicateError> {
        let mut node = self.parse_and()?;
        while self.eat("||") {
            node = ExprNode::Or(Box::new(node), Box::new(self.parse_and()?));
        }
        Ok(node)
    }

    fn parse_and(&mut self) -> Result<ExprNode, PredicateError> {
        let mut node = self.parse_unary()?;
        while self.eat("&&") {
            node = ExprNode::And(Box::new(node), Box::new(self.parse_unary()?));
        }
        Ok(node)
    }

    fn parse_unary(&mut self) -> Result<ExprNode, PredicateError> {
        if self.eat("!") {
            return Ok(ExprNode::Not(Box::new(self.parse_unary()?)));
        }
        if self.eat("(") {
            let inner = self.parse_or()?;
            if !self.eat(")") {
                return Err(PredicateError::Syntax {
                    at: self.pos,
                    msg: "expected `)`".into(),
                });
            }
            return Ok(inner);
        }
        self.parse_cmp()
    }

    fn parse_cmp(&mut self) -> Result<ExprNode, PredicateError> {
        let place = self.parse_ident()?;
        let op = if self.eat("==") {
            CmpOp::Eq
        } else if self.eat("!=") {
            CmpOp::Ne
        } else if self.eat("<=") {
            CmpOp::Le
        } else if self.eat(">=") {
            CmpOp::Ge
        } else if self.eat("<") {
            CmpOp::Lt
        } else if self.eat(">") {
            CmpOp::Gt
        } else {
            return Err(PredicateError::Syntax {
                at: self.pos,
                msg: "expected comparison operator".into(),
            });
        };
        let value = self.parse_uint()?;
        Ok(ExprNode::Cmp { place, op, value })
    }

    fn parse_ident(&mut self) -> Result<String, PredicateError> {
        self.skip_ws();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|&b| {
            b.is_ascii_alphanumeric() || b == b'_' || b == b'.' || b == b'-'
        }) {
            self.pos += 1;
        }
        if self.pos == start || self.bytes[start].is_ascii_digit() {
            return Err(PredicateError::Syntax {
                at: start,
                msg: "expected place identifier".into(),
            });
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn parse_uint(&mut self) -> Result<u32, PredicateError> {
        self.skip_ws();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(PredicateError::Syntax {
                at: start,
                msg: "expected integer".into(),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| PredicateError::Syntax {
                at: start,
                msg: "integer out of range".into(),
            })
    }
}
