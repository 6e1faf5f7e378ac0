//! Quantum network utility maximization: per-application utility shapes,
//! aggregate optimization across concurrent requests with share-scaled
//! contention, and admission control.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channels::qber_from_fidelity;
use crate::control::{make_plans, ControlKnobs, Plan, Request, Topology};
use crate::error::{Error, Result};
use crate::metrics::{secret_key_rate, SkrParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppType {
    Qkd,
    Dqc,
    Dqs,
}

/// Per-application utility shape U(R, F) = R * phi(F) gated at F_th.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UtilitySpec {
    pub app_type: AppType,
    /// Minimum usable fidelity; utility is exactly zero below it.
    pub f_threshold: f64,
    /// QKD: classical error-correction overhead.
    #[serde(default = "default_f_ec")]
    pub f_ec: f64,
    /// DQC: value of one delivered pair above threshold.
    #[serde(default = "default_value_per_pair")]
    pub value_per_pair: f64,
    /// DQS: exponential steepness c in exp(-c (1 - F)).
    #[serde(default = "default_steepness")]
    pub steepness_c: f64,
}

fn default_f_ec() -> f64 {
    1.0
}
fn default_value_per_pair() -> f64 {
    1.0
}
fn default_steepness() -> f64 {
    50.0
}

impl UtilitySpec {
    /// Default thresholds: QKD 0.85, DQC 0.95, DQS 0.99.
    pub fn default_for(app_type: AppType) -> Self {
        let f_threshold = match app_type {
            AppType::Qkd => 0.85,
            AppType::Dqc => 0.95,
            AppType::Dqs => 0.99,
        };
        UtilitySpec {
            app_type,
            f_threshold,
            f_ec: default_f_ec(),
            value_per_pair: default_value_per_pair(),
            steepness_c: default_steepness(),
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.f_threshold > 2.0 / 3.0 && self.f_threshold <= 1.0) {
            return Err(Error::Validation {
                field: format!("{field}.f_threshold"),
                message: "must be in (2/3, 1]".into(),
            });
        }
        if self.f_ec < 1.0 {
            return Err(Error::Validation {
                field: format!("{field}.f_ec"),
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Application utility of a (rate, fidelity) operating point. Zero below the
/// fidelity threshold for every shape.
pub fn utility(spec: &UtilitySpec, rate: f64, fidelity: f64) -> f64 {
    if rate <= 0.0 || fidelity < spec.f_threshold {
        return 0.0;
    }
    match spec.app_type {
        AppType::Qkd => secret_key_rate(
            SkrParams {
                q_raw_rate_hz: rate,
                f_ec: spec.f_ec,
            },
            qber_from_fidelity(fidelity),
        ),
        AppType::Dqc => spec.value_per_pair * rate,
        AppType::Dqs => rate * (-spec.steepness_c * (1.0 - fidelity)).exp(),
    }
}

/// One optimizer decision: a plan, its share-scaled operating point and its
/// utility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationEntry {
    pub plan: Plan,
    pub share: f64,
    pub rate: f64,
    pub fidelity: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Allocation {
    pub entries: BTreeMap<String, AllocationEntry>,
    pub total_utility: f64,
}

impl Allocation {
    fn recompute_total(&mut self) {
        self.total_utility = self.entries.values().map(|e| e.utility).sum();
    }
}

const SHARE_GRID_STEP: f64 = 0.1;

fn share_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 * SHARE_GRID_STEP).collect()
}

fn plans_share_resource(a: &Plan, b: &Plan) -> bool {
    a.path.links.iter().any(|l| b.path.links.contains(l))
}

/// Joint mode-count feasibility of a candidate assignment.
fn modes_feasible(assignment: &[(&Request, &Plan)], topology: &Topology) -> bool {
    let mut need: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, plan) in assignment {
        for (node, n) in &plan.required_modes {
            *need.entry(node.as_str()).or_insert(0) += n;
        }
    }
    need.iter().all(|(node, n)| {
        topology
            .nodes
            .get(*node as &str)
            .map(|s| s.memory.num_modes >= *n)
            .unwrap_or(false)
    })
}

/// Score a fully specified assignment (plan + share per request).
fn score_assignment(
    assignment: &[(&Request, &Plan)],
    shares: &[f64],
) -> (f64, Vec<(f64, f64, f64)>) {
    let mut total = 0.0;
    let mut points = Vec::with_capacity(assignment.len());
    for ((req, plan), &share) in assignment.iter().zip(shares) {
        let rate = plan.r_est * share;
        let u = utility(&req.utility, rate, plan.f_est);
        total += u;
        points.push((rate, plan.f_est, u));
    }
    (total, points)
}

/// Enumerate share vectors on the grid for a group of contending requests
/// (sum <= 1); non-contending requests get share 1 and are not enumerated.
fn share_vectors(contending: &[usize], n: usize) -> Vec<Vec<f64>> {
    if contending.is_empty() {
        return vec![vec![1.0; n]];
    }
    let grid = share_grid();
    let mut out = Vec::new();
    let mut current = vec![1.0; n];
    fn recur(
        grid: &[f64],
        contending: &[usize],
        idx: usize,
        remaining: f64,
        current: &mut Vec<f64>,
        out: &mut Vec<Vec<f64>>,
    ) {
        if idx == contending.len() {
            out.push(current.clone());
            return;
        }
        for &s in grid {
            if s <= remaining + 1e-9 {
                current[contending[idx]] = s;
                recur(grid, contending, idx + 1, remaining - s, current, out);
            }
        }
    }
    recur(&share_grid(), contending, 0, 1.0, &mut current, &mut out);
    let _ = grid;
    out
}

fn contending_indices(assignment: &[(&Request, &Plan)]) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..assignment.len() {
        let shares_any = (0..assignment.len())
            .any(|j| j != i && plans_share_resource(assignment[i].1, assignment[j].1));
        if shares_any {
            out.push(i);
        }
    }
    out
}

fn build_entries(
    assignment: &[(&Request, &Plan)],
    shares: &[f64],
    points: &[(f64, f64, f64)],
) -> Allocation {
    let mut alloc = Allocation::default();
    for (((req, plan), &share), &(rate, fidelity, u)) in
        assignment.iter().zip(shares).zip(points)
    {
        // a zero share or zero utility is not an admission
        if share <= 0.0 || u <= 0.0 {
            continue;
        }
        alloc.entries.insert(
            req.id.clone(),
            AllocationEntry {
                plan: (*plan).clone(),
                share,
                rate,
                fidelity,
                utility: u,
            },
        );
    }
    alloc.recompute_total();
    alloc
}

/// Exhaustive maximization of the aggregate utility over the discrete plan
/// grid, with contention on shared links resolved by grid-quantized time
/// shares. Requests that cannot contribute positive utility are left out of
/// the allocation (they appear with no entry).
pub fn aggregate_optimize(
    requests: &[Request],
    topology: &Topology,
    knobs: &ControlKnobs,
) -> Result<Allocation> {
    if requests.is_empty() {
        return Ok(Allocation::default());
    }
    // candidate plans per request; a request with no feasible plan simply
    // cannot be allocated
    let mut candidates: Vec<Vec<Plan>> = Vec::with_capacity(requests.len());
    for req in requests {
        candidates.push(make_plans(topology, req, knobs).unwrap_or_default());
    }
    let mut best: Option<(f64, Allocation)> = None;
    let mut plan_choice: Vec<Option<usize>> = vec![None; requests.len()];
    enumerate_assignments(
        requests,
        topology,
        &candidates,
        0,
        &mut plan_choice,
        &mut best,
    );
    Ok(best.map(|(_, a)| a).unwrap_or_default())
}

fn enumerate_assignments(
    requests: &[Request],
    topology: &Topology,
    candidates: &[Vec<Plan>],
    idx: usize,
    plan_choice: &mut Vec<Option<usize>>,
    best: &mut Option<(f64, Allocation)>,
) {
    if idx == requests.len() {
        let assignment: Vec<(&Request, &Plan)> = plan_choice
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|p| (&requests[i], &candidates[i][p])))
            .collect();
        if assignment.is_empty() {
            consider(best, Allocation::default());
            return;
        }
        if !modes_feasible(&assignment, topology) {
            return;
        }
        let contending = contending_indices(&assignment);
        for shares in share_vectors(&contending, assignment.len()) {
            let (total, points) = score_assignment(&assignment, &shares);
            let _ = total;
            consider(best, build_entries(&assignment, &shares, &points));
        }
        return;
    }
    // option: leave this request unallocated
    plan_choice[idx] = None;
    enumerate_assignments(requests, topology, candidates, idx + 1, plan_choice, best);
    for p in 0..candidates[idx].len() {
        plan_choice[idx] = Some(p);
        enumerate_assignments(requests, topology, candidates, idx + 1, plan_choice, best);
    }
    plan_choice[idx] = None;
}

fn consider(best: &mut Option<(f64, Allocation)>, candidate: Allocation) {
    let total = candidate.total_utility;
    let better = match best {
        None => true,
        Some((bt, ba)) => total > *bt + 1e-12 || (total >= *bt - 1e-12 && tie_break(&candidate, ba)),
    };
    if better {
        *best = Some((total, candidate));
    }
}

/// Deterministic preference among equal-utility allocations: more admitted
/// requests, then fewer total hops, then lower total depth, then
/// lexicographic plan paths.
fn tie_break(a: &Allocation, b: &Allocation) -> bool {
    let key = |x: &Allocation| {
        let hops: usize = x.entries.values().map(|e| e.plan.path.n_hops()).sum();
        let depth: u32 = x.entries.values().map(|e| e.plan.purification_depth).sum();
        let paths: Vec<Vec<String>> = x
            .entries
            .values()
            .map(|e| e.plan.path.nodes.clone())
            .collect();
        (std::cmp::Reverse(x.entries.len()), hops, depth, paths)
    };
    key(a) < key(b)
}

/// Ground-truth enumeration for small instances: every joint (plan, share)
/// assignment on the grid, checked directly. Provably optimal on the grid.
pub fn brute_force_allocation(
    requests: &[Request],
    topology: &Topology,
    knobs: &ControlKnobs,
) -> Result<Allocation> {
    if topology.nodes.len() > 6 || requests.len() > 3 {
        return Err(Error::InstanceTooLarge(format!(
            "{} nodes, {} requests",
            topology.nodes.len(),
            requests.len()
        )));
    }
    let mut candidates: Vec<Vec<Plan>> = Vec::with_capacity(requests.len());
    for req in requests {
        // `None` (unallocated) is modeled as an extra sentinel index
        candidates.push(make_plans(topology, req, knobs).unwrap_or_default());
    }
    let mut best = Allocation::default();
    let mut best_set = false;
    // odometer over (len+1) options per request; the last index means "skip"
    let radices: Vec<usize> = candidates.iter().map(|c| c.len() + 1).collect();
    let mut counter = vec![0usize; requests.len()];
    loop {
        let assignment: Vec<(&Request, &Plan)> = counter
            .iter()
            .enumerate()
            .filter(|(i, &c)| c < candidates[*i].len())
            .map(|(i, &c)| (&requests[i], &candidates[i][c]))
            .collect();
        if assignment.is_empty() || modes_feasible(&assignment, topology) {
            let contending = contending_indices(&assignment);
            for shares in share_vectors(&contending, assignment.len()) {
                let (_, points) = score_assignment(&assignment, &shares);
                let alloc = build_entries(&assignment, &shares, &points);
                let better = !best_set
                    || alloc.total_utility > best.total_utility + 1e-12
                    || (alloc.total_utility >= best.total_utility - 1e-12
                        && tie_break(&alloc, &best));
                if better {
                    best = alloc;
                    best_set = true;
                }
            }
        }
        // advance odometer
        let mut i = 0;
        loop {
            if i == counter.len() {
                return Ok(best);
            }
            counter[i] += 1;
            if counter[i] < radices[i] {
                break;
            }
            counter[i] = 0;
            i += 1;
        }
    }
}

/// Outcome of offering a new request to a running allocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissionDecision {
    pub accepted: bool,
    pub allocation: Allocation,
    pub reason: Option<String>,
}

/// Re-optimize with the new request included; accept only if the aggregate
/// utility does not drop and no previously admitted tenant is zeroed out.
pub fn admission_control(
    current_requests: &[Request],
    current: &Allocation,
    new_request: &Request,
    topology: &Topology,
    knobs: &ControlKnobs,
) -> Result<AdmissionDecision> {
    let mut all = current_requests.to_vec();
    all.push(new_request.clone());
    let proposed = aggregate_optimize(&all, topology, knobs)?;
    if !proposed.entries.contains_key(&new_request.id) {
        return Ok(AdmissionDecision {
            accepted: false,
            allocation: current.clone(),
            reason: Some(format!(
                "no plan with nonzero utility for `{}`",
                new_request.id
            )),
        });
    }
    if proposed.total_utility < current.total_utility - 1e-12 {
        return Ok(AdmissionDecision {
            accepted: false,
            allocation: current.clone(),
            reason: Some("aggregate utility would decrease".into()),
        });
    }
    for id in current.entries.keys() {
        let kept = proposed.entries.get(id).map(|e| e.utility > 0.0);
        if kept != Some(true) {
            return Ok(AdmissionDecision {
                accepted: false,
                allocation: current.clone(),
                reason: Some(format!("would zero admitted tenant `{id}`")),
            });
        }
    }
    Ok(AdmissionDecision {
        accepted: true,
        allocation: proposed,
        reason: None,
    })
}
