//! SDQN control plane: candidate-path computation and plan selection over
//! the (path x purification depth x scheduling mode) knob grid, plus
//! multi-tenant admission with explicit rejection reasons.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::channels::{memory_decay, t_non_eb, JitterMode, LinkParams, NoiseParams};
use crate::engine::V_FIBER_KM_PER_S;
use crate::error::{Error, Result};
use crate::link_layer::purify_depth_fold;
use crate::memory::MemoryParams;
use crate::network_layer::{estimate_path, Path, PathProfile, SchedulingMode};
use crate::qnum::{utility, UtilitySpec};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeSpec {
    pub memory: MemoryParams,
    #[serde(default)]
    pub noise: NoiseParams,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub params: LinkParams,
}

/// Node and link maps are ordered so that every iteration order, and hence
/// every controller decision, is deterministic.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Topology {
    pub nodes: BTreeMap<String, NodeSpec>,
    pub links: BTreeMap<String, LinkSpec>,
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        for (name, link) in &self.links {
            for end in [&link.a, &link.b] {
                if !self.nodes.contains_key(end) {
                    return Err(Error::Validation {
                        field: format!("topology.links.{name}"),
                        message: format!("endpoint `{end}` is not a node"),
                    });
                }
            }
            if link.a == link.b {
                return Err(Error::Validation {
                    field: format!("topology.links.{name}"),
                    message: "self-loop link".into(),
                });
            }
            link.params.validate(&format!("topology.links.{name}"))?;
        }
        for (name, node) in &self.nodes {
            node.memory.validate(&format!("topology.nodes.{name}"))?;
            node.noise.validate(&format!("topology.nodes.{name}"))?;
        }
        Ok(())
    }

    /// (neighbor, link name) pairs in deterministic order.
    pub fn neighbors(&self, node: &str) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .links
            .iter()
            .filter_map(|(name, l)| {
                if l.a == node {
                    Some((l.b.clone(), name.clone()))
                } else if l.b == node {
                    Some((l.a.clone(), name.clone()))
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        out
    }

    pub fn link(&self, name: &str) -> Option<&LinkSpec> {
        self.links.get(name)
    }

    pub fn is_connected(&self) -> bool {
        let Some(start) = self.nodes.keys().next() else {
            return true;
        };
        let mut seen = BTreeSet::new();
        let mut stack = vec![start.clone()];
        while let Some(n) = stack.pop() {
            if !seen.insert(n.clone()) {
                continue;
            }
            for (next, _) in self.neighbors(&n) {
                if !seen.contains(&next) {
                    stack.push(next);
                }
            }
        }
        seen.len() == self.nodes.len()
    }

    /// Fiber distance along a path, km.
    pub fn path_length_km(&self, path: &Path) -> f64 {
        path.links
            .iter()
            .map(|l| self.links[l].params.length_km)
            .sum()
    }
}

/// Application request handed to the controller.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Request {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub utility: UtilitySpec,
    #[serde(default = "default_weight")]
    pub priority_weight: f64,
    /// Pin the scheduling mode; both modes are explored when absent.
    #[serde(default)]
    pub scheduling: Option<SchedulingMode>,
}

fn default_weight() -> f64 {
    1.0
}

/// A controller decision for one request.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Plan {
    pub request_id: String,
    pub path: Path,
    pub purification_depth: u32,
    pub scheduling: SchedulingMode,
    /// Modes required per node (filled with concrete indices at admission).
    pub required_modes: BTreeMap<String, usize>,
    #[serde(default)]
    pub reserved_modes: BTreeMap<String, Vec<usize>>,
    pub r_est: f64,
    pub f_est: f64,
}

/// Controller knobs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ControlKnobs {
    #[serde(default = "default_k_paths")]
    pub k_paths: usize,
    #[serde(default = "default_d_max")]
    pub d_max: u32,
    /// Zero all classical control delays (the "God's-eye view" A/B flag).
    #[serde(default)]
    pub oracle_controller: bool,
    #[serde(default)]
    pub jitter_mode: JitterMode,
    #[serde(default = "default_v_fiber")]
    pub v_fiber_km_per_s: f64,
    #[serde(default)]
    pub policy: AllocationPolicy,
}

fn default_k_paths() -> usize {
    3
}
fn default_d_max() -> u32 {
    3
}
fn default_v_fiber() -> f64 {
    V_FIBER_KM_PER_S
}

impl Default for ControlKnobs {
    fn default() -> Self {
        ControlKnobs {
            k_paths: default_k_paths(),
            d_max: default_d_max(),
            oracle_controller: false,
            jitter_mode: JitterMode::default(),
            v_fiber_km_per_s: default_v_fiber(),
            policy: AllocationPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AllocationPolicy {
    /// Links on an admitted path are claimed exclusively; first claim wins.
    #[default]
    Exclusive,
    /// Contending requests share links with time-division weights.
    WeightedFair,
    /// Statistical multiplexing in arrival order, no reserved shares.
    Fcfs,
}

/// k shortest simple paths by hop count, ties broken by lexicographic node
/// sequence. Enumeration is exhaustive (tutorial-scale topologies).
pub fn candidate_paths(topology: &Topology, src: &str, dst: &str, k: usize) -> Result<Vec<Path>> {
    if !topology.nodes.contains_key(src) {
        return Err(Error::UnknownNode(src.to_string()));
    }
    if !topology.nodes.contains_key(dst) {
        return Err(Error::UnknownNode(dst.to_string()));
    }
    let mut found: Vec<Path> = Vec::new();
    let mut nodes = vec![src.to_string()];
    let mut links = Vec::new();
    let mut visited: BTreeSet<String> = BTreeSet::from([src.to_string()]);
    dfs_paths(topology, dst, &mut nodes, &mut links, &mut visited, &mut found);
    if found.is_empty() {
        return Err(Error::NoPath {
            src: src.to_string(),
            dst: dst.to_string(),
        });
    }
    found.sort_by(|a, b| a.n_hops().cmp(&b.n_hops()).then_with(|| a.nodes.cmp(&b.nodes)));
    found.truncate(k);
    Ok(found)
}

fn dfs_paths(
    topology: &Topology,
    dst: &str,
    nodes: &mut Vec<String>,
    links: &mut Vec<String>,
    visited: &mut BTreeSet<String>,
    found: &mut Vec<Path>,
) {
    let here = nodes.last().expect("non-empty").clone();
    if here == dst {
        found.push(Path {
            nodes: nodes.clone(),
            links: links.clone(),
        });
        return;
    }
    for (next, link) in topology.neighbors(&here) {
        if visited.contains(&next) {
            continue;
        }
        visited.insert(next.clone());
        nodes.push(next.clone());
        links.push(link);
        dfs_paths(topology, dst, nodes, links, visited, found);
        nodes.pop();
        links.pop();
        visited.remove(&next);
    }
}

/// Flatten a path into the parameters `estimate_path` needs.
pub fn path_profile(topology: &Topology, path: &Path, jitter: JitterMode) -> PathProfile {
    let mut profile = PathProfile {
        p_gen: Vec::new(),
        f0: Vec::new(),
        attempt_rate_hz: Vec::new(),
        p_swap_eff: Vec::new(),
        p_gate_depol: Vec::new(),
        t2_s: Vec::new(),
    };
    for link in &path.links {
        let spec = &topology.links[link];
        profile.p_gen.push(spec.params.p_gen());
        profile.f0.push(spec.params.f0_link);
        profile.attempt_rate_hz.push(spec.params.attempt_rate_hz);
    }
    for node in &path.nodes {
        profile.t2_s.push(topology.nodes[node].memory.t2_s);
    }
    for node in &path.nodes[1..path.nodes.len() - 1] {
        let noise = &topology.nodes[node].noise;
        profile.p_swap_eff.push(noise.effective_p_swap(jitter));
        profile.p_gate_depol.push(noise.p_gate_depol);
    }
    profile
}

/// Latency-coherence check for plans that hold qubits waiting: per segment,
/// the classical feedback round trip must fit inside the stored pair's
/// entanglement-preserving lifetime.
pub fn latency_coherence_ok(topology: &Topology, path: &Path, knobs: &ControlKnobs) -> Result<()> {
    if knobs.oracle_controller {
        return Ok(());
    }
    for link in &path.links {
        let spec = &topology.links[link];
        let rtt = 2.0 * spec.params.length_km / knobs.v_fiber_km_per_s;
        let t2 = topology.nodes[&spec.a]
            .memory
            .t2_s
            .min(topology.nodes[&spec.b].memory.t2_s);
        let lifetime = t_non_eb(spec.params.f0_link, t2);
        if rtt > lifetime {
            return Err(Error::LatencyCoherenceViolation {
                link: link.clone(),
                rtt_s: rtt,
                t_non_eb_s: lifetime,
            });
        }
    }
    Ok(())
}

/// Modes a plan needs at each node: one per incident path link, plus
/// purification buffering (2^depth - 1 extra halves) at both ends of every
/// link when depth > 0.
fn required_modes(path: &Path, depth: u32) -> BTreeMap<String, usize> {
    let extra = (1usize << depth) - 1;
    let mut need: BTreeMap<String, usize> = BTreeMap::new();
    for (i, node) in path.nodes.iter().enumerate() {
        let incident = if i == 0 || i == path.nodes.len() - 1 {
            1
        } else {
            2
        };
        *need.entry(node.clone()).or_insert(0) += incident * (1 + extra);
    }
    need
}

/// Cartesian product of candidate paths, purification depths and scheduling
/// modes, each scored analytically. Plans violating the latency-coherence
/// guard are dropped (the caller can distinguish this case by `guard_only`).
pub fn make_plans(
    topology: &Topology,
    request: &Request,
    knobs: &ControlKnobs,
) -> Result<Vec<Plan>> {
    let paths = candidate_paths(topology, &request.src, &request.dst, knobs.k_paths)?;
    let modes: &[SchedulingMode] = match request.scheduling {
        Some(SchedulingMode::Synchronous) => &[SchedulingMode::Synchronous],
        Some(SchedulingMode::Asynchronous) => &[SchedulingMode::Asynchronous],
        None => &[SchedulingMode::Synchronous, SchedulingMode::Asynchronous],
    };
    let mut plans = Vec::new();
    let mut guard_error = None;
    for path in &paths {
        let profile = path_profile(topology, path, knobs.jitter_mode);
        for &scheduling in modes {
            if scheduling == SchedulingMode::Asynchronous {
                if let Err(e) = latency_coherence_ok(topology, path, knobs) {
                    guard_error = Some(e);
                    continue;
                }
            }
            let (r_base, f_base) = estimate_path(&profile, scheduling);
            for depth in 0..=knobs.d_max {
                let (mut f_est, p_rounds) = purify_depth_fold(f_base, depth);
                let r_est = r_base / (1u64 << depth) as f64 * p_rounds;
                if depth > 0 && !knobs.oracle_controller {
                    // LOCC round trips hold both halves while the coincidence
                    // messages are in flight
                    let rtt = 2.0 * topology.path_length_km(path) / knobs.v_fiber_km_per_s;
                    let locc_time = depth as f64 * rtt;
                    let t2_min = path
                        .nodes
                        .iter()
                        .map(|n| topology.nodes[n].memory.t2_s)
                        .fold(f64::INFINITY, f64::min);
                    for _ in 0..2 {
                        f_est = memory_decay(f_est, locc_time, t2_min).unwrap_or(0.5);
                    }
                }
                plans.push(Plan {
                    request_id: request.id.clone(),
                    path: path.clone(),
                    purification_depth: depth,
                    scheduling,
                    required_modes: required_modes(path, depth),
                    reserved_modes: BTreeMap::new(),
                    r_est,
                    f_est,
                });
            }
        }
    }
    if plans.is_empty() {
        if let Some(e) = guard_error {
            return Err(e);
        }
        return Err(Error::NoPath {
            src: request.src.clone(),
            dst: request.dst.clone(),
        });
    }
    Ok(plans)
}

/// Deterministic plan preference for utility ties: fewer hops, then lower
/// purification depth, then lexicographic node sequence, then scheduling.
fn plan_order_key(p: &Plan) -> (usize, u32, Vec<String>, u8) {
    let sched = match p.scheduling {
        SchedulingMode::Synchronous => 0,
        SchedulingMode::Asynchronous => 1,
    };
    (p.path.n_hops(), p.purification_depth, p.path.nodes.clone(), sched)
}

/// Argmax of U(R_est, F_est) over candidate plans.
pub fn select_plan(plans: &[Plan], spec: &UtilitySpec) -> Result<Plan> {
    let mut best: Option<(f64, &Plan)> = None;
    for plan in plans {
        let u = utility(spec, plan.r_est, plan.f_est);
        let better = match &best {
            None => true,
            Some((bu, bp)) => {
                u > *bu + 1e-15
                    || ((u - *bu).abs() <= 1e-15 && plan_order_key(plan) < plan_order_key(bp))
            }
        };
        if better {
            best = Some((u, plan));
        }
    }
    let (u, plan) = best.ok_or_else(|| Error::AllZeroUtility("no plans".into()))?;
    if u <= 0.0 {
        return Err(Error::AllZeroUtility(plan.request_id.clone()));
    }
    Ok(plan.clone())
}

/// Why a request was not admitted.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum RejectReason {
    NoPath,
    MemoryFull { node: String },
    LinkBusy { link: String },
    AllZeroUtility,
    LatencyCoherenceViolation { link: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissionOutcome {
    pub admitted: Vec<Plan>,
    pub rejections: Vec<(String, RejectReason)>,
    /// Time-division share granted to each admitted request (1.0 when it
    /// shares nothing).
    pub shares: BTreeMap<String, f64>,
    /// Scores of every candidate considered, for the decision log.
    pub candidate_log: Vec<(String, Plan, f64)>,
}

/// Greedy admission in priority-weight order (ties by request id).
pub fn allocate(
    requests: &[Request],
    topology: &Topology,
    knobs: &ControlKnobs,
) -> Result<AdmissionOutcome> {
    let mut order: Vec<&Request> = requests.iter().collect();
    if knobs.policy != AllocationPolicy::Fcfs {
        order.sort_by(|a, b| {
            b.priority_weight
                .total_cmp(&a.priority_weight)
                .then_with(|| a.id.cmp(&b.id))
        });
    }
    let mut free_modes: BTreeMap<String, usize> = topology
        .nodes
        .iter()
        .map(|(n, spec)| (n.clone(), spec.memory.num_modes))
        .collect();
    let mut claimed_links: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    let mut outcome = AdmissionOutcome {
        admitted: Vec::new(),
        rejections: Vec::new(),
        shares: BTreeMap::new(),
        candidate_log: Vec::new(),
    };

    for request in order {
        let plans = match make_plans(topology, request, knobs) {
            Ok(p) => p,
            Err(Error::LatencyCoherenceViolation { link, .. }) => {
                outcome
                    .rejections
                    .push((request.id.clone(), RejectReason::LatencyCoherenceViolation { link }));
                continue;
            }
            Err(_) => {
                outcome
                    .rejections
                    .push((request.id.clone(), RejectReason::NoPath));
                continue;
            }
        };
        for plan in &plans {
            outcome.candidate_log.push((
                request.id.clone(),
                plan.clone(),
                utility(&request.utility, plan.r_est, plan.f_est),
            ));
        }
        // keep only plans that fit the remaining resources
        let feasible: Vec<Plan> = plans
            .into_iter()
            .filter(|p| {
                p.required_modes
                    .iter()
                    .all(|(n, need)| free_modes.get(n).copied().unwrap_or(0) >= *need)
            })
            .filter(|p| {
                knobs.policy != AllocationPolicy::Exclusive
                    || p.path.links.iter().all(|l| !claimed_links.contains_key(l))
            })
            .collect();
        if feasible.is_empty() {
            // report the tightest bottleneck of the best-utility plan space
            outcome.rejections.push((
                request.id.clone(),
                RejectReason::MemoryFull {
                    node: bottleneck_node(topology, request, &free_modes),
                },
            ));
            continue;
        }
        match select_plan(&feasible, &request.utility) {
            Ok(mut plan) => {
                for (node, need) in &plan.required_modes {
                    *free_modes.get_mut(node).expect("validated") -= need;
                    // concrete indices are assigned highest-free-first by the
                    // per-node bank at simulation start; record the count here
                    plan.reserved_modes.insert(node.clone(), Vec::new());
                }
                for link in &plan.path.links {
                    claimed_links
                        .entry(link.clone())
                        .or_default()
                        .push((request.id.clone(), request.priority_weight));
                }
                outcome.admitted.push(plan);
            }
            Err(Error::AllZeroUtility(_)) => {
                outcome
                    .rejections
                    .push((request.id.clone(), RejectReason::AllZeroUtility));
            }
            Err(e) => return Err(e),
        }
    }

    // time-division shares: weight ratio among requests on each shared link
    for plan in &outcome.admitted {
        let weight = requests
            .iter()
            .find(|r| r.id == plan.request_id)
            .map(|r| r.priority_weight)
            .unwrap_or(1.0);
        let mut share = 1.0f64;
        if knobs.policy == AllocationPolicy::WeightedFair {
            for link in &plan.path.links {
                let sharers = &claimed_links[link];
                if sharers.len() > 1 {
                    let total: f64 = sharers.iter().map(|(_, w)| w).sum();
                    share = share.min(weight / total);
                }
            }
        }
        outcome.shares.insert(plan.request_id.clone(), share);
    }
    Ok(outcome)
}

fn bottleneck_node(
    topology: &Topology,
    request: &Request,
    free_modes: &BTreeMap<String, usize>,
) -> String {
    // the scarcest node on any shortest path, as the rejection hint
    candidate_paths(topology, &request.src, &request.dst, 1)
        .ok()
        .and_then(|paths| {
            paths[0]
                .nodes
                .iter()
                .min_by_key(|n| free_modes.get(*n).copied().unwrap_or(0))
                .cloned()
        })
        .unwrap_or_else(|| request.src.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::Cutoff;
    use crate::qnum::{AppType, UtilitySpec};

    pub(crate) fn node_spec(t2_s: f64, num_modes: usize) -> NodeSpec {
        NodeSpec {
            memory: MemoryParams {
                t1_s: None,
                t2_s,
                num_modes,
                crosstalk_chi: 0.0,
                cutoff: Cutoff::Auto,
            },
            noise: NoiseParams {
                p_swap: 0.5,
                ..NoiseParams::default()
            },
        }
    }

    pub(crate) fn link_spec(a: &str, b: &str, length_km: f64) -> LinkSpec {
        LinkSpec {
            a: a.into(),
            b: b.into(),
            params: LinkParams {
                length_km,
                attenuation_db_per_km: 0.2,
                attempt_rate_hz: 1.0e6,
                f0_link: 0.95,
                extra_efficiency: 1.0,
            },
        }
    }

    fn square() -> Topology {
        // a - b
        // |   |
        // c - d
        let mut t = Topology::default();
        for n in ["a", "b", "c", "d"] {
            t.nodes.insert(n.into(), node_spec(10.0, 8));
        }
        t.links.insert("ab".into(), link_spec("a", "b", 10.0));
        t.links.insert("ac".into(), link_spec("a", "c", 10.0));
        t.links.insert("bd".into(), link_spec("b", "d", 10.0));
        t.links.insert("cd".into(), link_spec("c", "d", 10.0));
        t
    }

    fn ring(n: usize) -> Topology {
        let mut t = Topology::default();
        let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
        for name in &names {
            t.nodes.insert(name.clone(), node_spec(10.0, 8));
        }
        for i in 0..n {
            let a = &names[i];
            let b = &names[(i + 1) % n];
            t.links.insert(format!("l{i}"), link_spec(a, b, 10.0));
        }
        t
    }

    fn qkd_request(src: &str, dst: &str) -> Request {
        Request {
            id: "r1".into(),
            src: src.into(),
            dst: dst.into(),
            utility: UtilitySpec::default_for(AppType::Qkd),
            priority_weight: 1.0,
            scheduling: None,
        }
    }

    #[test]
    fn two_node_direct_path() {
        let mut t = Topology::default();
        t.nodes.insert("a".into(), node_spec(10.0, 4));
        t.nodes.insert("b".into(), node_spec(10.0, 4));
        t.links.insert("ab".into(), link_spec("a", "b", 10.0));
        let paths = candidate_paths(&t, "a", "b", 5).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].nodes, vec!["a", "b"]);
        assert_eq!(paths[0].n_hops(), 1);
    }

    #[test]
    fn square_opposite_corners() {
        let paths = candidate_paths(&square(), "a", "d", 5).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(paths[0].nodes, vec!["a", "b", "d"]);
        assert_eq!(paths[1].nodes, vec!["a", "c", "d"]);
    }

    #[test]
    fn ring_paths_ordered_by_hops() {
        // 5-node ring, n0 -> n2: one 2-hop path and one 3-hop path
        let paths = candidate_paths(&ring(5), "n0", "n2", 3).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(paths[0].n_hops(), 2);
        assert_eq!(paths[1].n_hops(), 3);
    }

    #[test]
    fn candidate_paths_match_exhaustive_oracle() {
        // independent oracle: collect all simple paths by brute-force
        // adjacency recursion, sort by (hops, lexicographic)
        fn oracle(t: &Topology, src: &str, dst: &str) -> Vec<Vec<String>> {
            fn recur(
                t: &Topology,
                here: &str,
                dst: &str,
                seen: &mut Vec<String>,
                out: &mut Vec<Vec<String>>,
            ) {
                if here == dst {
                    out.push(seen.clone());
                    return;
                }
                for (name, l) in &t.links {
                    let _ = name;
                    let next = if l.a == here {
                        &l.b
                    } else if l.b == here {
                        &l.a
                    } else {
                        continue;
                    };
                    if seen.contains(next) {
                        continue;
                    }
                    seen.push(next.clone());
                    recur(t, next, dst, seen, out);
                    seen.pop();
                }
            }
            let mut out = Vec::new();
            recur(t, src, dst, &mut vec![src.to_string()], &mut out);
            out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
            out
        }
        for topo in [square(), ring(5), ring(6)] {
            let (src, dst) = ("n0", "n2");
            let (src, dst) = if topo.nodes.contains_key(src) {
                (src, dst)
            } else {
                ("a", "d")
            };
            let expect = oracle(&topo, src, dst);
            let got = candidate_paths(&topo, src, dst, usize::MAX).unwrap();
            let got_nodes: Vec<Vec<String>> = got.into_iter().map(|p| p.nodes).collect();
            assert_eq!(got_nodes, expect);
        }
    }

    #[test]
    fn no_path_between_disconnected_nodes() {
        let mut t = Topology::default();
        t.nodes.insert("a".into(), node_spec(10.0, 4));
        t.nodes.insert("b".into(), node_spec(10.0, 4));
        assert!(matches!(
            candidate_paths(&t, "a", "b", 1),
            Err(Error::NoPath { .. })
        ));
        assert!(!t.is_connected());
        assert!(matches!(
            candidate_paths(&t, "a", "zzz", 1),
            Err(Error::UnknownNode(_))
        ));
    }

    #[test]
    fn make_plans_depth_zero_reproduces_estimate() {
        let t = square();
        let req = qkd_request("a", "d");
        let knobs = ControlKnobs {
            d_max: 2,
            ..ControlKnobs::default()
        };
        let plans = make_plans(&t, &req, &knobs).unwrap();
        let p0 = plans
            .iter()
            .find(|p| {
                p.purification_depth == 0
                    && p.scheduling == SchedulingMode::Synchronous
                    && p.path.nodes == vec!["a", "b", "d"]
            })
            .unwrap();
        let prof = path_profile(&t, &p0.path, JitterMode::Smooth);
        let (r, f) = estimate_path(&prof, SchedulingMode::Synchronous);
        assert_eq!((p0.r_est, p0.f_est), (r, f));
        // depth never increases rate
        for w in plans.windows(2) {
            if w[0].path == w[1].path
                && w[0].scheduling == w[1].scheduling
                && w[1].purification_depth == w[0].purification_depth + 1
            {
                assert!(w[1].r_est <= w[0].r_est);
            }
        }
    }

    #[test]
    fn depth_one_purification_scoring() {
        // start from a known base estimate and check the analytic upgrade
        let mut t = square();
        // make f0 low so the purification gain is visible
        for link in t.links.values_mut() {
            link.params.f0_link = 0.7;
        }
        let req = Request {
            scheduling: Some(SchedulingMode::Synchronous),
            ..qkd_request("a", "b")
        };
        let knobs = ControlKnobs {
            d_max: 1,
            k_paths: 1,
            oracle_controller: true,
            ..ControlKnobs::default()
        };
        let plans = make_plans(&t, &req, &knobs).unwrap();
        let d0 = plans.iter().find(|p| p.purification_depth == 0).unwrap();
        let d1 = plans.iter().find(|p| p.purification_depth == 1).unwrap();
        assert!((d1.f_est - 0.5 / 0.68).abs() < 1e-12);
        assert!((d1.r_est - d0.r_est / 2.0 * 0.68).abs() < 1e-9);
    }

    #[test]
    fn latency_guard_rejects_long_links_with_short_memories() {
        let mut t = Topology::default();
        t.nodes.insert("a".into(), node_spec(1e-6, 4)); // T2 = 1 us
        t.nodes.insert("b".into(), node_spec(1e-6, 4));
        t.links.insert("ab".into(), link_spec("a", "b", 100.0)); // RTT = 1 ms
        let knobs = ControlKnobs::default();
        let path = candidate_paths(&t, "a", "b", 1).unwrap().remove(0);
        assert!(matches!(
            latency_coherence_ok(&t, &path, &knobs),
            Err(Error::LatencyCoherenceViolation { .. })
        ));
        let oracle_knobs = ControlKnobs {
            oracle_controller: true,
            ..ControlKnobs::default()
        };
        assert!(latency_coherence_ok(&t, &path, &oracle_knobs).is_ok());
    }

    #[test]
    fn allocate_single_request() {
        let t = square();
        let req = qkd_request("a", "d");
        let out = allocate(std::slice::from_ref(&req), &t, &ControlKnobs::default()).unwrap();
        assert_eq!(out.admitted.len(), 1);
        assert!(out.rejections.is_empty());
        assert_eq!(out.shares["r1"], 1.0);
        // matches standalone selection
        let plans = make_plans(&t, &req, &ControlKnobs::default()).unwrap();
        let solo = select_plan(&plans, &req.utility).unwrap();
        assert_eq!(out.admitted[0].path, solo.path);
    }

    #[test]
    fn exclusive_bottleneck_rejects_second() {
        let mut t = Topology::default();
        t.nodes.insert("a".into(), node_spec(10.0, 4));
        t.nodes.insert("m".into(), node_spec(10.0, 2)); // bottleneck
        t.nodes.insert("b".into(), node_spec(10.0, 4));
        t.links.insert("am".into(), link_spec("a", "m", 10.0));
        t.links.insert("mb".into(), link_spec("m", "b", 10.0));
        let r1 = Request {
            id: "r1".into(),
            priority_weight: 2.0,
            ..qkd_request("a", "b")
        };
        let r2 = Request {
            id: "r2".into(),
            priority_weight: 1.0,
            ..qkd_request("a", "b")
        };
        let out = allocate(&[r1, r2], &t, &ControlKnobs::default()).unwrap();
        assert_eq!(out.admitted.len(), 1);
        assert_eq!(out.admitted[0].request_id, "r1");
        assert_eq!(out.rejections.len(), 1);
        assert!(matches!(
            out.rejections[0].1,
            RejectReason::MemoryFull { .. } | RejectReason::LinkBusy { .. }
        ));
    }

    #[test]
    fn weighted_fair_shares_follow_weights() {
        let mut t = square();
        for node in t.nodes.values_mut() {
            node.memory.num_modes = 64;
        }
        let r1 = Request {
            id: "r1".into(),
            priority_weight: 2.0,
            ..qkd_request("a", "d")
        };
        let r2 = Request {
            id: "r2".into(),
            priority_weight: 1.0,
            ..qkd_request("a", "d")
        };
        let knobs = ControlKnobs {
            policy: AllocationPolicy::WeightedFair,
            k_paths: 1,
            ..ControlKnobs::default()
        };
        let out = allocate(&[r1, r2], &t, &knobs).unwrap();
        assert_eq!(out.admitted.len(), 2);
        assert!((out.shares["r1"] - 2.0 / 3.0).abs() < 1e-12);
        assert!((out.shares["r2"] - 1.0 / 3.0).abs() < 1e-12);
    }
}
