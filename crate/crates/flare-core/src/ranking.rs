//! Error traces and suspicious-transition ranking.
//!
//! For each violation state, the error trace collects the outgoing firing
//! labels of every state lying on some path from the initial state to the
//! violation. A transition's fault contribution is `C_F = TC * ITC`, the
//! within-trace relative frequency weighted by a corpus-level rarity factor,
//! and transitions are ranked by it.
//!
//! Traces are computed on the tick-condensed graph: maximal chains connected
//! by tick edges collapse into one logical state, and same-label edges into
//! the same condensed target count once. Waiting one unit or five is the same
//! decision point, so this keeps trace statistics invariant under the tick
//! granularity (rescaling every interval by a constant does not move any
//! `C_F`), and tick-connected violation states count as one violation.

use crate::tpn::{EdgeLabel, ReachabilityGraph};
use serde::Serialize;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RankingError {
    #[error("error trace is empty")]
    EmptyTrace,
    #[error("no error traces given")]
    EmptyTraceSet,
    #[error("transition `{0}` appears in no trace")]
    UnknownTransition(String),
    #[error("distributions have different sizes ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("{which} is not a distribution (sum {sum})")]
    NotADistribution { which: &'static str, sum: f64 },
}

/// Multiset of transition labels contributing to one violation.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTrace {
    /// Representative raw state index of the violation.
    pub violation_state: usize,
    /// transition index -> occurrence count, sorted by transition index
    counts: Vec<(u16, u32)>,
    total: u32,
}

impl ErrorTrace {
    pub fn count(&self, transition: u16) -> u32 {
        match self.counts.binary_search_by_key(&transition, |&(t, _)| t) {
            Ok(i) => self.counts[i].1,
            Err(_) => 0,
        }
    }

    /// Total multiset size |pi|.
    pub fn len(&self) -> u32 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, u32)> + '_ {
        self.counts.iter().copied()
    }

    /// Builds a trace directly from (transition, count) pairs.
    pub fn from_counts(violation_state: usize, counts: &[(u16, u32)]) -> Self {
        let mut counts: Vec<(u16, u32)> = counts.iter().copied().filter(|&(_, c)| c > 0).collect();
        counts.sort_unstable();
        let total = counts.iter().map(|&(_, c)| c).sum();
        Self {
            violation_state,
            counts,
            total,
        }
    }
}

/// Tick-condensed view of a reachability graph.
struct Condensed {
    /// raw state -> component id (dense, in order of first appearance)
    comp: Vec<u32>,
    n_comps: usize,
    /// distinct (label, target component) firing edges per component
    edges: Vec<Vec<(u16, u32)>>,
    /// reverse adjacency over firing edges, deduplicated
    rev: Vec<Vec<u32>>,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

impl Condensed {
    fn build(graph: &ReachabilityGraph) -> Self {
        let n = graph.num_states();
        let mut parent: Vec<u32> = (0..n as u32).collect();
        for s in 0..n {
            for &(label, d) in graph.edges_from(s) {
                if label == EdgeLabel::Tick {
                    let a = find(&mut parent, s as u32);
                    let b = find(&mut parent, d);
                    if a != b {
                        parent[b as usize] = a;
                    }
                }
            }
        }
        let mut comp = vec![u32::MAX; n];
        let mut n_comps = 0usize;
        for s in 0..n {
            let root = find(&mut parent, s as u32) as usize;
            if comp[root] == u32::MAX {
                comp[root] = n_comps as u32;
                n_comps += 1;
            }
            comp[s] = comp[root];
        }
        let mut edges: Vec<Vec<(u16, u32)>> = vec![Vec::new(); n_comps];
        for s in 0..n {
            for &(label, d) in graph.edges_from(s) {
                if let EdgeLabel::Fire(t) = label {
                    edges[comp[s] as usize].push((t, comp[d as usize]));
                }
            }
        }
        let mut rev: Vec<Vec<u32>> = vec![Vec::new(); n_comps];
        for (c, list) in edges.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            for &(_, d) in list.iter() {
                rev[d as usize].push(c as u32);
            }
        }
        for list in &mut rev {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            comp,
            n_comps,
            edges,
            rev,
        }
    }

    /// Components from which `target` is reachable, excluding `target`.
    fn ancestors(&self, target: u32) -> Vec<bool> {
        let mut seen = vec![false; self.n_comps];
        let mut stack = vec![target];
        while let Some(c) = stack.pop() {
            for &p in &self.rev[c as usize] {
                if !seen[p as usize] {
                    seen[p as usize] = true;
                    stack.push(p);
                }
            }
        }
        seen[target as usize] = false;
        seen
    }
}

/// Extracts one error trace per (tick-condensed) violation state.
///
/// An empty violation set yields an empty list; it is not an error.
pub fn extract_error_traces(
    graph: &ReachabilityGraph,
    violations: &BTreeSet<usize>,
) -> Vec<ErrorTrace> {
    if violations.is_empty() {
        return Vec::new();
    }
    let cond = Condensed::build(graph);
    // representative (smallest) raw violation state per violating component
    let mut rep: Vec<(u32, usize)> = Vec::new();
    let mut seen: BTreeSet<u32> = BTreeSet::new();
    for &v in violations {
        let c = cond.comp[v];
        if seen.insert(c) {
            rep.push((c, v));
        }
    }

    rep.into_iter()
        .map(|(cv, v)| {
            let contributing = cond.ancestors(cv);
            let mut counts: Vec<(u16, u32)> = Vec::new();
            for (c, on_path) in contributing.iter().enumerate() {
                if !on_path {
                    continue;
                }
                for &(t, _) in &cond.edges[c] {
                    match counts.binary_search_by_key(&t, |&(x, _)| x) {
                        Ok(i) => counts[i].1 += 1,
                        Err(i) => counts.insert(i, (t, 1)),
                    }
                }
            }
            let total = counts.iter().map(|&(_, c)| c).sum();
            ErrorTrace {
                violation_state: v,
                counts,
                total,
            }
        })
        .collect()
}

/// TC: within-trace relative frequency of `transition`, `count / |pi|`.
pub fn transition_contribution(trace: &ErrorTrace, transition: u16) -> Result<f64, RankingError> {
    if trace.total == 0 {
        return Err(RankingError::EmptyTrace);
    }
    Ok(trace.count(transition) as f64 / trace.total as f64)
}

/// ITC: smoothed corpus rarity, `ln(|traces| / n_t) + 1`.
///
/// The `+1` keeps a single-trace corpus from collapsing every weight to zero.
pub fn inverse_trace_contribution(
    traces: &[ErrorTrace],
    transition: u16,
) -> Result<f64, RankingError> {
    if traces.is_empty() {
        return Err(RankingError::EmptyTraceSet);
    }
    let n_t = traces.iter().filter(|tr| tr.count(transition) > 0).count();
    if n_t == 0 {
        return Err(RankingError::UnknownTransition(transition.to_string()));
    }
    Ok((traces.len() as f64 / n_t as f64).ln() + 1.0)
}

/// One ranked transition with its score breakdown.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RankEntry {
    pub transition: String,
    pub cf: f64,
    pub tc_mean: f64,
    pub itc: f64,
}

/// Transitions ordered by fault contribution, highest first; ties broken by
/// transition id ascending.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SuspicionRanking {
    pub entries: Vec<RankEntry>,
}

impl SuspicionRanking {
    /// 0-based rank of a transition, if it was ranked.
    pub fn position_of(&self, transition: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.transition == transition)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `rank,transition,cf,tc_mean,itc` rows, rank 0 = most suspicious.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,transition,cf,tc_mean,itc\n");
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i, e.transition, e.cf, e.tc_mean, e.itc
            ));
        }
        out
    }
}

/// Ranks every transition that appears in at least one trace by
/// `C_F(t) = mean_i TC(t, pi_i) * ITC(t)`.
pub fn rank_transitions(
    graph: &ReachabilityGraph,
    traces: &[ErrorTrace],
) -> Result<SuspicionRanking, RankingError> {
    if traces.is_empty() {
        return Err(RankingError::EmptyTraceSet);
    }
    if traces.iter().any(|t| t.total == 0) {
        return Err(RankingError::EmptyTrace);
    }
    let mut present: BTreeSet<u16> = BTreeSet::new();
    for tr in traces {
        present.extend(tr.iter().map(|(t, _)| t));
    }
    let mut entries: Vec<RankEntry> = present
        .into_iter()
        .map(|t| {
            let tc_sum: f64 = traces
                .iter()
                .map(|tr| tr.count(t) as f64 / tr.total as f64)
                .sum();
            let tc_mean = tc_sum / traces.len() as f64;
            let itc = inverse_trace_contribution(traces, t).expect("t is present");
            RankEntry {
                transition: graph.transition_name(t).to_string(),
                cf: tc_mean * itc,
                tc_mean,
                itc,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.cf.partial_cmp(&a.cf)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.transition.cmp(&b.transition))
    });
    Ok(SuspicionRanking { entries })
}

/// EXAM outcome: how much of the ranking must be examined to reach a fault.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct ExamResult {
    /// `(rank_of_first_fault + 1) / total_ranked`; 1.0 when not found.
    pub exam_score: f64,
    /// 0-based rank of the first truly faulty entry; `total_ranked` when
    /// no faulty transition was ranked at all.
    pub rank_of_first_fault: usize,
    pub total_ranked: usize,
    pub not_found: bool,
}

/// Scores a ranking against the ground-truth faulty set.
pub fn exam_score(ranking: &SuspicionRanking, faulty: &BTreeSet<String>) -> ExamResult {
    let total_ranked = ranking.entries.len();
    match ranking
        .entries
        .iter()
        .position(|e| faulty.contains(&e.transition))
    {
        Some(rank) => ExamResult {
            exam_score: (rank + 1) as f64 / total_ranked as f64,
            rank_of_first_fault: rank,
            total_ranked,
            not_found: false,
        },
        None => ExamResult {
            exam_score: 1.0,
            rank_of_first_fault: total_ranked,
            total_ranked,
            not_found: true,
        },
    }
}

/// Kullback-Leibler divergence `sum_i P(i) ln(P(i)/Q(i))` in nats.
///
/// Conventions: `0 ln(0/q) = 0` and `p ln(p/0) = +inf` (returned as
/// `f64::INFINITY`).
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, RankingError> {
    if p.len() != q.len() {
        return Err(RankingError::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    for (which, dist) in [("P", p), ("Q", q)] {
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || dist.iter().any(|&x| x < 0.0) {
            return Err(RankingError::NotADistribution { which, sum });
        }
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tpn::{build_reachability_graph, StatePredicate, TimePetriNet, Transition};
    use std::collections::BTreeMap;

    /// Branching five-state violation example: four states feed the
    /// violation, one side state belongs to a correct trace only.
    fn branching_fixture() -> ReachabilityGraph {
        let names = (0..7).map(|i| format!("t{i}")).collect();
        // 0..3 = on-path states, 4 = violation, 5 = correct branch,
        // 6..10 = correct terminals
        ReachabilityGraph::from_edges(
            11,
            names,
            &[
                (0, Some(0), 1),
                (0, Some(1), 6),
                (1, Some(2), 2),
                (1, Some(1), 7),
                (1, Some(5), 8),
                (2, Some(4), 5),
                (2, Some(2), 3),
                (3, Some(3), 4),
                (3, Some(4), 9),
                (5, Some(6), 10),
            ],
        )
    }

    fn counts_by_name(graph: &ReachabilityGraph, trace: &ErrorTrace) -> BTreeMap<String, u32> {
        trace
            .iter()
            .map(|(t, c)| (graph.transition_name(t).to_string(), c))
            .collect()
    }

    #[test]
    fn branching_fixture_trace_multiset() {
        let g = branching_fixture();
        let traces = extract_error_traces(&g, &BTreeSet::from([4]));
        assert_eq!(traces.len(), 1);
        let got = counts_by_name(&g, &traces[0]);
        let want: BTreeMap<String, u32> = [
            ("t0", 1u32),
            ("t1", 2),
            ("t2", 2),
            ("t3", 1),
            ("t4", 2),
            ("t5", 1),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        assert_eq!(got, want);
        assert_eq!(traces[0].len(), 9);
    }

    #[test]
    fn linear_chain_trace() {
        let g = ReachabilityGraph::from_edges(
            3,
            vec!["a".into(), "b".into()],
            &[(0, Some(0), 1), (1, Some(1), 2)],
        );
        let traces = extract_error_traces(&g, &BTreeSet::from([2]));
        assert_eq!(traces.len(), 1);
        let got = counts_by_name(&g, &traces[0]);
        assert_eq!(got.get("a"), Some(&1));
        assert_eq!(got.get("b"), Some(&1));
        assert_eq!(traces[0].len(), 2);
    }

    #[test]
    fn empty_violation_set_is_ok() {
        let g = branching_fixture();
        assert!(extract_error_traces(&g, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn tc_values() {
        let g = branching_fixture();
        let traces = extract_error_traces(&g, &BTreeSet::from([4]));
        let tc = |name: &str| {
            let idx = g
                .transition_names()
                .iter()
                .position(|n| n == name)
                .unwrap() as u16;
            transition_contribution(&traces[0], idx).unwrap()
        };
        assert!((tc("t1") - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(tc("t6"), 0.0, "absent transition has zero contribution");

        let single = ErrorTrace::from_counts(0, &[(0, 1)]);
        assert_eq!(transition_contribution(&single, 0).unwrap(), 1.0);

        let empty = ErrorTrace::from_counts(0, &[]);
        assert_eq!(
            transition_contribution(&empty, 0),
            Err(RankingError::EmptyTrace)
        );
    }

    #[test]
    fn itc_values() {
        let one = vec![ErrorTrace::from_counts(0, &[(0, 2)])];
        assert_eq!(inverse_trace_contribution(&one, 0).unwrap(), 1.0);

        let four: Vec<ErrorTrace> = (0..4)
            .map(|i| {
                if i < 2 {
                    ErrorTrace::from_counts(i, &[(0, 1), (1, 1)])
                } else {
                    ErrorTrace::from_counts(i, &[(1, 1)])
                }
            })
            .collect();
        let itc = inverse_trace_contribution(&four, 0).unwrap();
        assert!((itc - (2.0f64.ln() + 1.0)).abs() < 1e-15);
        // present in all traces -> minimum weight 1
        assert_eq!(inverse_trace_contribution(&four, 1).unwrap(), 1.0);
        assert!(matches!(
            inverse_trace_contribution(&four, 9),
            Err(RankingError::UnknownTransition(_))
        ));
    }

    #[test]
    fn single_trace_ranking() {
        let g = ReachabilityGraph::from_edges(1, vec!["a".into(), "b".into()], &[]);
        let traces = vec![ErrorTrace::from_counts(0, &[(0, 3), (1, 1)])];
        let ranking = rank_transitions(&g, &traces).unwrap();
        assert_eq!(ranking.entries[0].transition, "a");
        assert!((ranking.entries[0].cf - 0.75).abs() < 1e-15);
        assert!((ranking.entries[1].cf - 0.25).abs() < 1e-15);
    }

    #[test]
    fn symmetric_traces_fall_back_to_id_order() {
        let g = ReachabilityGraph::from_edges(1, vec!["z".into(), "a".into()], &[]);
        let traces = vec![
            ErrorTrace::from_counts(0, &[(0, 1), (1, 1)]),
            ErrorTrace::from_counts(1, &[(0, 1), (1, 1)]),
        ];
        let ranking = rank_transitions(&g, &traces).unwrap();
        assert_eq!(ranking.entries[0].transition, "a");
        assert_eq!(ranking.entries[1].transition, "z");
        assert_eq!(ranking.entries[0].cf, ranking.entries[1].cf);
    }

    #[test]
    fn asymmetric_intervals_rank_equally() {
        // Two independent fire-once processes; violation: A fired, B pending.
        let net = TimePetriNet {
            places: ["pa", "pb", "da", "db"].map(String::from).to_vec(),
            transitions: vec![
                Transition {
                    id: "A".into(),
                    eft: 5,
                    lft: Some(10),
                    input_arcs: BTreeMap::from([("pa".into(), 1)]),
                    output_arcs: BTreeMap::from([("da".into(), 1)]),
                },
                Transition {
                    id: "B".into(),
                    eft: 3,
                    lft: Some(7),
                    input_arcs: BTreeMap::from([("pb".into(), 1)]),
                    output_arcs: BTreeMap::from([("db".into(), 1)]),
                },
            ],
            initial_marking: BTreeMap::from([("pa".into(), 1), ("pb".into(), 1)]),
        };
        let g = build_reachability_graph(&net, 100_000).unwrap();
        let pred = StatePredicate::parse("da >= 1 && db == 0").unwrap();
        let violations = g.find_violation_states(&pred).unwrap();
        assert!(!violations.is_empty());
        let traces = extract_error_traces(&g, &violations);
        let ranking = rank_transitions(&g, &traces).unwrap();
        let cf = |id: &str| ranking.entries[ranking.position_of(id).unwrap()].cf;
        assert!(
            (cf("A") - cf("B")).abs() < 1e-12,
            "C_F(A) = {}, C_F(B) = {}",
            cf("A"),
            cf("B")
        );
    }

    #[test]
    fn correct_branch_dilutes_other_contributions() {
        let g = branching_fixture();
        let base = extract_error_traces(&g, &BTreeSet::from([4]));

        // same fixture with one extra correct branch out of state 1
        let names = (0..8).map(|i| format!("t{i}")).collect();
        let g2 = ReachabilityGraph::from_edges(
            11,
            names,
            &[
                (0, Some(0), 1),
                (0, Some(1), 6),
                (1, Some(2), 2),
                (1, Some(1), 7),
                (1, Some(5), 8),
                (1, Some(7), 6),
                (2, Some(4), 5),
                (2, Some(2), 3),
                (3, Some(3), 4),
                (3, Some(4), 9),
                (5, Some(6), 10),
            ],
        );
        let diluted = extract_error_traces(&g2, &BTreeSet::from([4]));

        for t in 0..7u16 {
            if base[0].count(t) == 0 {
                continue;
            }
            let before = transition_contribution(&base[0], t).unwrap();
            let after = transition_contribution(&diluted[0], t).unwrap();
            assert!(after < before, "t{t}: {after} !< {before}");
        }
    }

    #[test]
    fn ranking_invariant_under_state_relabeling() {
        let g = branching_fixture();
        // same graph with all state indices reversed
        let remap = |s: usize| 10 - s;
        let names = (0..7).map(|i| format!("t{i}")).collect();
        let edges: Vec<(usize, Option<usize>, usize)> = [
            (0, 0, 1),
            (0, 1, 6),
            (1, 2, 2),
            (1, 1, 7),
            (1, 5, 8),
            (2, 4, 5),
            (2, 2, 3),
            (3, 3, 4),
            (3, 4, 9),
            (5, 6, 10),
        ]
        .iter()
        .map(|&(s, t, d)| (remap(s), Some(t), remap(d)))
        .collect();
        let g2 = ReachabilityGraph::from_edges(11, names, &edges);

        let r1 = rank_transitions(&g, &extract_error_traces(&g, &BTreeSet::from([4]))).unwrap();
        let r2 =
            rank_transitions(&g2, &extract_error_traces(&g2, &BTreeSet::from([remap(4)]))).unwrap();
        assert_eq!(r1.entries, r2.entries);
    }

    #[test]
    fn exam_scores() {
        let entries: Vec<RankEntry> = (0..20)
            .map(|i| RankEntry {
                transition: format!("t{i:02}"),
                cf: 1.0 - i as f64 / 20.0,
                tc_mean: 0.0,
                itc: 1.0,
            })
            .collect();
        let ranking = SuspicionRanking { entries };

        let first = exam_score(&ranking, &BTreeSet::from(["t00".to_string()]));
        assert_eq!(first.exam_score, 0.05);
        assert_eq!(first.rank_of_first_fault, 0);

        let last = exam_score(&ranking, &BTreeSet::from(["t19".to_string()]));
        assert_eq!(last.exam_score, 1.0);
        assert!(!last.not_found);

        let missing = exam_score(&ranking, &BTreeSet::from(["zz".to_string()]));
        assert_eq!(missing.exam_score, 1.0);
        assert!(missing.not_found);
        assert_eq!(missing.rank_of_first_fault, 20);
    }

    #[test]
    fn kl_divergence_cases() {
        let p = [0.5, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);

        let q = [0.9, 0.1];
        let got = kl_divergence(&p, &q).unwrap();
        let want = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.5108).abs() < 5e-5);

        assert_eq!(
            kl_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            f64::INFINITY
        );
        // zero mass in P contributes nothing even against zero in Q
        assert_eq!(kl_divergence(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);

        assert!(matches!(
            kl_divergence(&[1.0], &[0.5, 0.5]),
            Err(RankingError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            kl_divergence(&[0.6, 0.6], &[0.5, 0.5]),
            Err(RankingError::NotADistribution { .. })
        ));
    }

    #[test]
    fn ranking_csv_shape() {
        let g = ReachabilityGraph::from_edges(1, vec!["a".into()], &[]);
        let ranking = rank_transitions(&g, &[ErrorTrace::from_counts(0, &[(0, 2)])]).unwrap();
        let csv = ranking.to_csv();
        assert!(csv.starts_with("rank,transition,cf,tc_mean,itc\n"));
        assert!(csv.contains("0,a,1,1,1\n"));
    }
}
