//! Random process/resource test bed with injected forget-to-release faults.
//!
//! A generated system has `p` cyclic processes sharing `r` exclusive one-token
//! resources through an access matrix. Each process walks its accessed
//! resources in a loop of segments: `acquire` the segment's resource (urgent,
//! `[0,0]`), then run a timed `task`. A task releases the resource acquired by
//! the *previous* segment (the last task of a lap also releases its own),
//! so a process waiting on an acquire still holds its previous resource —
//! that hold-and-wait is what lets injected faults cascade into deadlocks.
//!
//! A forget-to-release fault deletes one release output arc from a task
//! transition; that task is the ground-truth error source. By default
//! processes acquire in a single global resource order, so a fault-free
//! system never deadlocks and every deadlock traces back to an injected
//! fault; randomized per-process order is available as a config knob and
//! additionally produces circular-wait deadlocks of its own.

use crate::ranking::{self, ExamResult};
use crate::rng::{derive_seed, stream_rng};
use crate::tpn::{build_reachability_graph, StatePredicate, TimePetriNet, TpnError, Transition};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error("invalid system spec: {0}")]
    InvalidSpec(String),
    #[error("fault_count {requested} exceeds the {available} release-owning tasks")]
    InfeasibleSpec { requested: u32, available: u32 },
}

/// Generation knobs with the test bed defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Probability that a process accesses a given resource.
    pub access_density: f64,
    /// Inclusive bounds for task firing intervals.
    pub interval_range: (u32, u32),
    /// Acquire resources in one global order (`true`) or in a random
    /// per-process order (`false`, enables fault-free circular waits).
    pub ordered_acquisition: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            access_density: 0.5,
            interval_range: (1, 10),
            ordered_acquisition: true,
        }
    }
}

/// A fully materialized system specification; `generate_case` is a pure
/// function of this value.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemSpec {
    pub processes: u32,
    pub resources: u32,
    /// `access[i][j]`: process `i` uses resource `j`; every row is non-zero.
    pub access: Vec<Vec<bool>>,
    /// Task firing intervals, one row per process, one entry per segment.
    pub intervals: Vec<Vec<(u32, u32)>>,
    pub fault_count: u32,
    pub seed: u64,
    pub ordered_acquisition: bool,
}

impl SystemSpec {
    /// Samples the access matrix and task intervals for the given shape.
    pub fn sample(
        processes: u32,
        resources: u32,
        fault_count: u32,
        config: &GeneratorConfig,
        seed: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, 0);
        let (lo, hi) = config.interval_range;
        let access: Vec<Vec<bool>> = (0..processes)
            .map(|_| {
                let mut row: Vec<bool> = (0..resources)
                    .map(|_| rng.random::<f64>() < config.access_density)
                    .collect();
                if !row.iter().any(|&b| b) {
                    let j = rng.random_range(0..resources as usize);
                    row[j] = true;
                }
                row
            })
            .collect();
        let intervals = access
            .iter()
            .map(|row| {
                row.iter()
                    .filter(|&&b| b)
                    .map(|_| {
                        let eft = rng.random_range(lo..=hi);
                        let lft = rng.random_range(eft..=hi);
                        (eft, lft)
                    })
                    .collect()
            })
            .collect();
        Self {
            processes,
            resources,
            access,
            intervals,
            fault_count,
            seed,
            ordered_acquisition: config.ordered_acquisition,
        }
    }
}

/// A generated net together with its ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedCase {
    pub spec: SystemSpec,
    pub net: TimePetriNet,
    /// Task transitions whose release arc was removed.
    pub faulty_transitions: BTreeSet<String>,
}

/// Builds the TPN for `spec` and injects its forget-to-release faults.
pub fn generate_case(spec: &SystemSpec) -> Result<GeneratedCase, TestbedError> {
    if spec.processes < 2 {
        return Err(TestbedError::InvalidSpec("need at least 2 processes".into()));
    }
    if spec.resources < 1 {
        return Err(TestbedError::InvalidSpec("need at least 1 resource".into()));
    }
    if spec.access.len() != spec.processes as usize
        || spec.access.iter().any(|r| r.len() != spec.resources as usize)
    {
        return Err(TestbedError::InvalidSpec(
            "access matrix shape mismatch".into(),
        ));
    }

    let mut order_rng = stream_rng(spec.seed, 1);
    let mut orders: Vec<Vec<u32>> = Vec::with_capacity(spec.processes as usize);
    for (i, row) in spec.access.iter().enumerate() {
        let mut used: Vec<u32> = row
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(j, _)| j as u32)
            .collect();
        if used.is_empty() {
            return Err(TestbedError::InvalidSpec(format!(
                "process {i} accesses no resource"
            )));
        }
        if spec.intervals.get(i).map(Vec::len) != Some(used.len()) {
            return Err(TestbedError::InvalidSpec(format!(
                "process {i} has {} intervals for {} segments",
                spec.intervals.get(i).map_or(0, Vec::len),
                used.len()
            )));
        }
        if !spec.ordered_acquisition {
            used.shuffle(&mut order_rng);
        }
        orders.push(used);
    }

    let mut places: Vec<String> = (0..spec.resources).map(|j| format!("r{j}")).collect();
    let mut initial_marking: BTreeMap<String, u32> =
        places.iter().map(|p| (p.clone(), 1)).collect();
    let mut transitions: Vec<Transition> = Vec::new();
    // tasks that own at least one release arc, with the resources they release
    let mut candidates: Vec<(usize, Vec<u32>)> = Vec::new();

    for (i, order) in orders.iter().enumerate() {
        let m = order.len();
        for k in 0..m {
            places.push(format!("p{i}.s{k}"));
            places.push(format!("p{i}.w{k}"));
        }
        initial_marking.insert(format!("p{i}.s0"), 1);

        for (k, &res) in order.iter().enumerate() {
            transitions.push(Transition {
                id: format!("p{i}.acq{k}.r{res}"),
                eft: 0,
                lft: Some(0),
                input_arcs: BTreeMap::from([
                    (format!("p{i}.s{k}"), 1),
                    (format!("r{res}"), 1),
                ]),
                output_arcs: BTreeMap::from([(format!("p{i}.w{k}"), 1)]),
            });

            let (eft, lft) = spec.intervals[i][k];
            let next = (k + 1) % m;
            let mut outputs = BTreeMap::from([(format!("p{i}.s{next}"), 1)]);
            let mut released = Vec::new();
            if m == 1 {
                outputs.insert(format!("r{res}"), 1);
                released.push(res);
            } else {
                if k > 0 {
                    let prev = order[k - 1];
                    outputs.insert(format!("r{prev}"), 1);
                    released.push(prev);
                }
                if k == m - 1 {
                    outputs.insert(format!("r{res}"), 1);
                    released.push(res);
                }
            }
            let task_index = transitions.len();
            transitions.push(Transition {
                id: format!("p{i}.task{k}.r{res}"),
                eft,
                lft: Some(lft),
                input_arcs: BTreeMap::from([(format!("p{i}.w{k}"), 1)]),
                output_arcs: outputs,
            });
            if !released.is_empty() {
                candidates.push((task_index, released));
            }
        }
    }

    if spec.fault_count as usize > candidates.len() {
        return Err(TestbedError::InfeasibleSpec {
            requested: spec.fault_count,
            available: candidates.len() as u32,
        });
    }

    let mut fault_rng = stream_rng(spec.seed, 2);
    let mut faulty_transitions = BTreeSet::new();
    if spec.fault_count > 0 {
        let mut picks = candidates;
        picks.shuffle(&mut fault_rng);
        for (task_index, released) in picks.into_iter().take(spec.fault_count as usize) {
            let res = released[fault_rng.random_range(0..released.len())];
            let task = &mut transitions[task_index];
            task.output_arcs.remove(&format!("r{res}"));
            faulty_transitions.insert(task.id.clone());
        }
    }

    Ok(GeneratedCase {
        spec: spec.clone(),
        net: TimePetriNet {
            places,
            transitions,
            initial_marking,
        },
        faulty_transitions,
    })
}

// ---------------------------------------------------------------------------
// Campaign harness
// ---------------------------------------------------------------------------

/// Parameter ranges of an effectiveness/efficiency campaign.
#[derive(Debug, Clone)]
pub struct CampaignParams {
    /// Inclusive process-count range, sampled uniformly per case.
    pub p_range: (u32, u32),
    /// Inclusive resource-count range.
    pub r_range: (u32, u32),
    /// Inclusive fault-count range; each count gets `cases_per_fault` cases.
    pub fault_range: (u32, u32),
    pub cases_per_fault: u32,
    pub seed: u64,
    pub max_states: usize,
    pub config: GeneratorConfig,
    /// Regeneration budget per case slot for non-deadlocking systems.
    pub max_attempts: u32,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for CampaignParams {
    fn default() -> Self {
        Self {
            p_range: (5, 20),
            r_range: (5, 20),
            fault_range: (1, 9),
            cases_per_fault: 100,
            seed: 0,
            max_states: 1_000_000,
            config: GeneratorConfig::default(),
            max_attempts: 50,
            workers: None,
        }
    }
}

/// Outcome of one campaign case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub fault_count: u32,
    pub processes: u32,
    pub resources: u32,
    pub states: usize,
    pub edges: usize,
    pub model_transitions: usize,
    pub regenerations: u32,
    /// Graph build + violation detection + trace extraction + ranking.
    pub seconds: f64,
    pub exam: Option<ExamResult>,
    pub error: Option<String>,
}

/// Per-fault-count aggregate (the efficiency/effectiveness table row).
#[derive(Debug, Clone, Serialize)]
pub struct FaultAggregate {
    pub fault_count: u32,
    pub cases: u32,
    pub errors: u32,
    pub regenerations: u32,
    pub mean_states: f64,
    pub mean_edges: f64,
    pub best_exam: f64,
    pub worst_exam: f64,
    pub mean_exam: f64,
    pub exam_variance: f64,
    pub mean_rank: f64,
    pub rank_variance: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignReport {
    pub seed: u64,
    pub cases: Vec<CaseOutcome>,
    pub aggregates: Vec<FaultAggregate>,
}

fn run_one_slot(params: &CampaignParams, fault_count: u32, slot: u32) -> CaseOutcome {
    let case_id = format!("f{fault_count}-c{slot:04}");
    let slot_seed = derive_seed(params.seed, ((fault_count as u64) << 32) | slot as u64);
    let mut outcome = CaseOutcome {
        case_id,
        fault_count,
        processes: 0,
        resources: 0,
        states: 0,
        edges: 0,
        model_transitions: 0,
        regenerations: 0,
        seconds: 0.0,
        exam: None,
        error: None,
    };

    for attempt in 0..params.max_attempts {
        let attempt_seed = derive_seed(slot_seed, attempt as u64);
        let mut shape_rng = stream_rng(attempt_seed, 9);
        let p = shape_rng.random_range(params.p_range.0..=params.p_range.1);
        let r = shape_rng.random_range(params.r_range.0..=params.r_range.1);
        let spec = SystemSpec::sample(p, r, fault_count, &params.config, attempt_seed);
        let case = match generate_case(&spec) {
            Ok(c) => c,
            Err(e) => {
                // infeasible shape for this fault count: try the next sample
                outcome.regenerations += 1;
                outcome.error = Some(e.to_string());
                continue;
            }
        };
        outcome.processes = p;
        outcome.resources = r;
        outcome.model_transitions = case.net.transitions.len();

        let started = Instant::now();
        let graph = match build_reachability_graph(&case.net, params.max_states) {
            Ok(g) => g,
            Err(e @ TpnError::StateSpaceOverflow { .. }) => {
                outcome.seconds = started.elapsed().as_secs_f64();
                outcome.error = Some(e.to_string());
                return outcome;
            }
            Err(e) => {
                outcome.error = Some(e.to_string());
                return outcome;
            }
        };
        let violations = graph
            .find_violation_states(&StatePredicate::Deadlock)
            .expect("deadlock predicate needs no places");
        if violations.is_empty() {
            outcome.regenerations += 1;
            continue;
        }
        let traces = ranking::extract_error_traces(&graph, &violations);
        let ranking = match ranking::rank_transitions(&graph, &traces) {
            Ok(rk) => rk,
            Err(e) => {
                outcome.error = Some(e.to_string());
                return outcome;
            }
        };
        outcome.seconds = started.elapsed().as_secs_f64();
        outcome.states = graph.num_states();
        outcome.edges = graph.num_edges();
        outcome.exam = Some(ranking::exam_score(&ranking, &case.faulty_transitions));
        outcome.error = None;
        return outcome;
    }

    if outcome.error.is_none() {
        outcome.error = Some(format!(
            "no deadlocking system within {} attempts",
            params.max_attempts
        ));
    }
    outcome
}

/// Generates, analyzes and scores every case in the parameter grid.
///
/// Case slots are independent and may run on a worker pool; per-slot seeds
/// are derived from the campaign seed, so the report is identical regardless
/// of scheduling (timing columns aside). Non-deadlocking systems are
/// regenerated with a fresh seed and counted; state-space overflows are
/// recorded and skipped.
pub fn run_campaign(params: &CampaignParams) -> CampaignReport {
    let slots: Vec<(u32, u32)> = (params.fault_range.0..=params.fault_range.1)
        .flat_map(|f| (0..params.cases_per_fault).map(move |c| (f, c)))
        .collect();

    let run_all = || -> Vec<CaseOutcome> {
        use rayon::prelude::*;
        slots
            .par_iter()
            .map(|&(f, c)| run_one_slot(params, f, c))
            .collect()
    };
    let cases = match params.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("worker pool")
            .install(run_all),
        None => run_all(),
    };

    let aggregates = (params.fault_range.0..=params.fault_range.1)
        .map(|f| aggregate(f, cases.iter().filter(|c| c.fault_count == f)))
        .collect();

    CampaignReport {
        seed: params.seed,
        cases,
        aggregates,
    }
}

fn aggregate<'a>(fault_count: u32, cases: impl Iterator<Item = &'a CaseOutcome>) -> FaultAggregate {
    let mut scored: Vec<&CaseOutcome> = Vec::new();
    let mut errors = 0;
    let mut regenerations = 0;
    for c in cases {
        regenerations += c.regenerations;
        if c.exam.is_some() {
            scored.push(c);
        } else {
            errors += 1;
        }
    }
    let n = scored.len() as f64;
    let mean = |f: &dyn Fn(&CaseOutcome) -> f64| -> f64 {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|c| f(c)).sum::<f64>() / n
        }
    };
    let mean_exam = mean(&|c| c.exam.unwrap().exam_score);
    let mean_rank = mean(&|c| c.exam.unwrap().rank_of_first_fault as f64);
    let var = |f: &dyn Fn(&CaseOutcome) -> f64, mu: f64| -> f64 {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|c| (f(c) - mu).powi(2)).sum::<f64>() / n
        }
    };
    FaultAggregate {
        fault_count,
        cases: scored.len() as u32,
        errors,
        regenerations,
        mean_states: mean(&|c| c.states as f64),
        mean_edges: mean(&|c| c.edges as f64),
        best_exam: scored
            .iter()
            .map(|c| c.exam.unwrap().exam_score)
            .fold(f64::INFINITY, f64::min),
        worst_exam: scored
            .iter()
            .map(|c| c.exam.unwrap().exam_score)
            .fold(f64::NEG_INFINITY, f64::max),
        mean_exam,
        exam_variance: var(&|c| c.exam.unwrap().exam_score, mean_exam),
        mean_rank,
        rank_variance: var(&|c| c.exam.unwrap().rank_of_first_fault as f64, mean_rank),
        mean_seconds: mean(&|c| c.seconds),
    }
}

impl CampaignReport {
    /// Per-case rows: `case_id,states,edges,faults,exam,rank_first,seconds`.
    pub fn cases_csv(&self) -> String {
        let mut out = String::from("case_id,states,edges,faults,exam,rank_first,seconds\n");
        for c in &self.cases {
            let (exam, rank) = match &c.exam {
                Some(e) => (e.exam_score.to_string(), e.rank_of_first_fault.to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.4}\n",
                c.case_id, c.states, c.edges, c.fault_count, exam, rank, c.seconds
            ));
        }
        out
    }

    /// Per-fault-count aggregate rows (efficiency + effectiveness columns).
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "faults,cases,errors,regens,avg_states,avg_edges,best_exam,worst_exam,mean_exam,exam_var,mean_rank,rank_var,avg_seconds\n",
        );
        for a in &self.aggregates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{:.4}\n",
                a.fault_count,
                a.cases,
                a.errors,
                a.regenerations,
                a.mean_states,
                a.mean_edges,
                a.best_exam,
                a.worst_exam,
                a.mean_exam,
                a.exam_variance,
                a.mean_rank,
                a.rank_variance,
                a.mean_seconds
            ));
        }
        out
    }
}
