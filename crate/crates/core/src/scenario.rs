//! Scenario configuration, hardware presets, replication orchestration, and
//! report emission.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channels::NoiseParams;
use crate::control::{make_plans, ControlKnobs, NodeSpec, Request, Topology};
use crate::error::{Error, Result};
use crate::memory::{Cutoff, MemoryParams};
use crate::metrics::{DeliveryRecord, MetricsReport};
use crate::qnum::{aggregate_optimize, Allocation};
use crate::sim::{run_sim, FlowSpec, SimOutput};

/// A complete simulation scenario as read from a JSON config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub topology: Topology,
    pub requests: Vec<Request>,
    #[serde(default)]
    pub controller: ControlKnobs,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default = "default_seed")]
    pub root_seed: u64,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_duration() -> f64 {
    1.0
}
fn default_replications() -> u32 {
    1
}
fn default_seed() -> u64 {
    1
}

/// Representative hardware platforms for memory nodes.
pub const PRESET_NAMES: [&str; 4] = [
    "trapped_ion",
    "atomic_ensemble",
    "nv_center",
    "superconducting",
];

/// Node parameters for a named hardware platform.
pub fn hardware_preset(name: &str) -> Option<NodeSpec> {
    let (t2_s, num_modes, p_swap, p_gate) = match name {
        // few long-lived qubits, deterministic local gates
        "trapped_ion" => (1.0, 10, 0.5, 0.005),
        // massive multimode buffering, short storage
        "atomic_ensemble" => (0.01, 1000, 0.5, 0.02),
        // moderate on both axes
        "nv_center" => (0.1, 8, 0.5, 0.01),
        // fast gates, very short coherence
        "superconducting" => (1e-4, 128, 0.5, 0.002),
        _ => return None,
    };
    Some(NodeSpec {
        memory: MemoryParams {
            t1_s: None,
            t2_s,
            num_modes,
            crosstalk_chi: 0.0,
            cutoff: Cutoff::Auto,
        },
        noise: NoiseParams {
            p_swap,
            p_gate_depol: p_gate,
            ..NoiseParams::default()
        },
    })
}

/// Parse and validate a scenario; errors carry the offending field path.
pub fn parse_scenario(json: &str) -> Result<Scenario> {
    let mut value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    // expand `{"preset": "..."}` node shorthand before typed decoding
    if let Some(nodes) = value
        .get_mut("topology")
        .and_then(|t| t.get_mut("nodes"))
        .and_then(|n| n.as_object_mut())
    {
        for (name, spec) in nodes.iter_mut() {
            if let Some(preset) = spec.get("preset").and_then(|p| p.as_str()) {
                let resolved = hardware_preset(preset).ok_or_else(|| Error::Validation {
                    field: format!("topology.nodes.{name}.preset"),
                    message: format!(
                        "unknown preset `{preset}` (known: {})",
                        PRESET_NAMES.join(", ")
                    ),
                })?;
                *spec = serde_json::to_value(&resolved).map_err(|e| Error::Parse(e.to_string()))?;
            }
        }
    }
    let scenario: Scenario =
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    validate_scenario(&scenario)?;
    Ok(scenario)
}

pub fn validate_scenario(s: &Scenario) -> Result<()> {
    s.topology.validate()?;
    if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
        return Err(Error::Validation {
            field: "duration_s".into(),
            message: "must be positive and finite".into(),
        });
    }
    if s.replications == 0 {
        return Err(Error::Validation {
            field: "replications".into(),
            message: "must be at least 1".into(),
        });
    }
    if s.requests.is_empty() {
        return Err(Error::Validation {
            field: "requests".into(),
            message: "at least one request is required".into(),
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for (i, req) in s.requests.iter().enumerate() {
        let at = |f: &str| format!("requests[{i}].{f}");
        if !seen.insert(&req.id) {
            return Err(Error::Validation {
                field: at("id"),
                message: format!("duplicate request id `{}`", req.id),
            });
        }
        for (field, node) in [("src", &req.src), ("dst", &req.dst)] {
            if !s.topology.nodes.contains_key(node) {
                return Err(Error::Validation {
                    field: at(field),
                    message: format!("unknown node `{node}`"),
                });
            }
        }
        if req.src == req.dst {
            return Err(Error::Validation {
                field: at("dst"),
                message: "src and dst must differ".into(),
            });
        }
        req.utility.validate(&at("utility"))?;
        if req.priority_weight.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Validation {
                field: at("priority_weight"),
                message: "must be positive".into(),
            });
        }
    }
    Ok(())
}

/// One controller decision, flattened for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decision {
    pub request_id: String,
    pub admitted: bool,
    pub path: String,
    pub purification_depth: u32,
    pub scheduling: String,
    pub share: f64,
    pub rate_estimate_hz: f64,
    pub fidelity_estimate: f64,
    pub utility_estimate: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub seed: u64,
    pub report: MetricsReport,
    pub deliveries: Vec<DeliveryRecord>,
}

/// Mean / standard deviation / 95% confidence half-width across
/// replications.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
    pub ci95: f64,
}

pub fn stat_of(samples: &[f64]) -> Stat {
    if samples.is_empty() {
        return Stat::default();
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let stddev = var.sqrt();
    Stat {
        mean,
        stddev,
        ci95: 1.96 * stddev / n.sqrt(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestSummary {
    pub request_id: String,
    pub delivered_pairs: Stat,
    pub effective_eps: Stat,
    pub fidelity_mean: Stat,
    pub skr_bits_per_s: Stat,
    pub utility: Stat,
    pub quantum_delay_s: Stat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub scenario_name: String,
    pub config_sha256: String,
    pub duration_s: f64,
    pub root_seed: u64,
    pub aggregate_utility_estimate: f64,
    pub decisions: Vec<Decision>,
    pub replications: Vec<ReplicationResult>,
    pub per_request: Vec<RequestSummary>,
}

fn describe_decisions(
    scenario: &Scenario,
    allocation: &Allocation,
    knobs: &ControlKnobs,
) -> Vec<Decision> {
    let mut out = Vec::new();
    for req in &scenario.requests {
        if let Some(entry) = allocation.entries.get(&req.id) {
            out.push(Decision {
                request_id: req.id.clone(),
                admitted: true,
                path: entry.plan.path.nodes.join("-"),
                purification_depth: entry.plan.purification_depth,
                scheduling: format!("{:?}", entry.plan.scheduling).to_lowercase(),
                share: entry.share,
                rate_estimate_hz: entry.rate,
                fidelity_estimate: entry.fidelity,
                utility_estimate: entry.utility,
                reason: String::new(),
            });
        } else {
            // re-derive why the optimizer could not place this request
            let reason = match make_plans(&scenario.topology, req, knobs) {
                Err(e) => e.to_string(),
                Ok(plans) if plans.is_empty() => "no feasible path".into(),
                Ok(_) => "no plan with positive utility under contention".into(),
            };
            out.push(Decision {
                request_id: req.id.clone(),
                admitted: false,
                path: String::new(),
                purification_depth: 0,
                scheduling: String::new(),
                share: 0.0,
                rate_estimate_hz: 0.0,
                fidelity_estimate: 0.0,
                utility_estimate: 0.0,
                reason,
            });
        }
    }
    out
}

/// Run the control plane once, then execute the admitted flows for each
/// replication with seeds `root_seed`, `root_seed + 1`, ...
pub fn run_scenario(scenario: &Scenario, config_bytes: &[u8]) -> Result<ScenarioRun> {
    validate_scenario(scenario)?;
    let knobs = &scenario.controller;
    let allocation = aggregate_optimize(&scenario.requests, &scenario.topology, knobs)?;
    let decisions = describe_decisions(scenario, &allocation, knobs);
    let flows: Vec<FlowSpec> = scenario
        .requests
        .iter()
        .filter_map(|req| {
            allocation.entries.get(&req.id).map(|entry| FlowSpec {
                plan: entry.plan.clone(),
                utility: req.utility.clone(),
                share: entry.share,
            })
        })
        .collect();
    let mut replications = Vec::with_capacity(scenario.replications as usize);
    for i in 0..scenario.replications {
        let seed = scenario.root_seed.wrapping_add(i as u64);
        let out: SimOutput = run_sim(&scenario.topology, &flows, scenario.duration_s, seed, knobs)?;
        replications.push(ReplicationResult {
            seed,
            report: out.report,
            deliveries: out.deliveries,
        });
    }
    let per_request = summarize(scenario, &replications);
    Ok(ScenarioRun {
        scenario_name: scenario.name.clone(),
        config_sha256: hex_sha256(config_bytes),
        duration_s: scenario.duration_s,
        root_seed: scenario.root_seed,
        aggregate_utility_estimate: allocation.total_utility,
        decisions,
        replications,
        per_request,
    })
}

fn summarize(scenario: &Scenario, reps: &[ReplicationResult]) -> Vec<RequestSummary> {
    scenario
        .requests
        .iter()
        .map(|req| {
            let pick = |f: &dyn Fn(&crate::metrics::RequestMetrics) -> f64| -> Vec<f64> {
                reps.iter()
                    .flat_map(|r| {
                        r.report
                            .per_request
                            .iter()
                            .filter(|m| m.request_id == req.id)
                            .map(f)
                    })
                    .collect()
            };
            RequestSummary {
                request_id: req.id.clone(),
                delivered_pairs: stat_of(&pick(&|m| m.delivered_pairs as f64)),
                effective_eps: stat_of(&pick(&|m| m.effective_eps)),
                fidelity_mean: stat_of(&pick(&|m| m.fidelity_mean)),
                skr_bits_per_s: stat_of(&pick(&|m| m.skr_bits_per_s)),
                utility: stat_of(&pick(&|m| m.utility)),
                quantum_delay_s: stat_of(&pick(&|m| m.mean_quantum_delay_s)),
            }
        })
        .collect()
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Output format selection for `emit_report`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Structured,
    Both,
}

const METRICS_HEADER: &str = "replication,seed,request_id,delivered_pairs,effective_eps,\
fidelity_mean,fidelity_min,skr_bits_per_s,utility,delay_total_s,delay_transmission_s,\
delay_generation_s,delay_protocol_s,pairs_created,pairs_consumed_swap,pairs_consumed_purify,\
pairs_delivered,pairs_discarded_cutoff,pairs_invalidated_partner,swap_failures,\
purify_failures,blocked_reservations,peak_mode_occupancy";

/// Render the per-replication, per-request metrics table. Row order and
/// float rendering are fully deterministic, so identical runs produce
/// byte-identical output.
pub fn metrics_csv(run: &ScenarioRun) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (i, rep) in run.replications.iter().enumerate() {
        for m in &rep.report.per_request {
            let r = &rep.report;
            out.push_str(&format!(
                "{i},{seed},{id},{dp},{eps},{fm},{fmin},{skr},{ut},{dt},{dtr},{dg},{dpq},\
{pc},{ps},{pp},{pd},{pdc},{pip},{sf},{pf},{br},{pmo}\n",
                seed = rep.seed,
                id = m.request_id,
                dp = m.delivered_pairs,
                eps = m.effective_eps,
                fm = m.fidelity_mean,
                fmin = m.fidelity_min,
                skr = m.skr_bits_per_s,
                ut = m.utility,
                dt = m.mean_quantum_delay_s,
                dtr = m.delay.transmission_s,
                dg = m.delay.generation_s,
                dpq = m.delay.protocol_s,
                pc = r.pairs_created,
                ps = r.pairs_consumed_swap,
                pp = r.pairs_consumed_purify,
                pd = r.pairs_delivered,
                pdc = r.pairs_discarded_cutoff,
                pip = r.pairs_invalidated_partner,
                sf = r.swap_failures,
                pf = r.purify_failures,
                br = r.blocked_reservations,
                pmo = r.peak_mode_occupancy,
            ));
        }
    }
    out
}

pub fn decisions_csv(run: &ScenarioRun) -> String {
    let mut out = String::from(
        "request_id,admitted,path,purification_depth,scheduling,share,\
rate_estimate_hz,fidelity_estimate,utility_estimate,reason\n",
    );
    for d in &run.decisions {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},\"{}\"\n",
            d.request_id,
            d.admitted,
            d.path,
            d.purification_depth,
            d.scheduling,
            d.share,
            d.rate_estimate_hz,
            d.fidelity_estimate,
            d.utility_estimate,
            d.reason.replace('"', "'"),
        ));
    }
    out
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    scenario_name: &'a str,
    config_sha256: &'a str,
    duration_s: f64,
    root_seed: u64,
    replications: usize,
    aggregate_utility_estimate: f64,
    decisions: &'a [Decision],
    per_request: &'a [RequestSummary],
    pair_ledger_closed: bool,
}

pub fn summary_json(run: &ScenarioRun) -> Result<String> {
    let doc = SummaryDoc {
        scenario_name: &run.scenario_name,
        config_sha256: &run.config_sha256,
        duration_s: run.duration_s,
        root_seed: run.root_seed,
        replications: run.replications.len(),
        aggregate_utility_estimate: run.aggregate_utility_estimate,
        decisions: &run.decisions,
        per_request: &run.per_request,
        pair_ledger_closed: run.replications.iter().all(|r| r.report.pairs_reconcile()),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse(e.to_string()))
}

/// Write the selected artifacts into `dir` (created if missing).
pub fn emit_report(run: &ScenarioRun, dir: &FsPath, format: ReportFormat) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut write = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path)?;
        f.write_all(contents.as_bytes())?;
        written.push(path.display().to_string());
        Ok(())
    };
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        write("metrics.csv", metrics_csv(run))?;
        write("decisions.csv", decisions_csv(run))?;
    }
    if matches!(format, ReportFormat::Structured | ReportFormat::Both) {
        write("summary.json", summary_json(run)?)?;
    }
    Ok(written)
}

/// Apply one scalar override at a dotted JSON path (used by parameter
/// sweeps), e.g. `topology.links.ab.length_km`.
pub fn override_config(json: &str, dotted_path: &str, value: &str) -> Result<String> {
    let mut root: serde_json::Value =
        serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    let pointer = format!("/{}", dotted_path.replace('.', "/"));
    let Some(slot) = root.pointer_mut(&pointer) else {
        return Err(Error::Validation {
            field: dotted_path.into(),
            message: "no element at that path".into(),
        });
    };
    *slot = serde_json::from_str(value)
        .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    serde_json::to_string(&root).map_err(|e| Error::Parse(e.to_string()))
}

/// Example scenario map shipped with the binary: (name, JSON body).
pub fn builtin_examples() -> BTreeMap<&'static str, &'static str> {
    let mut m = BTreeMap::new();
    m.insert(
        "two_node_qkd",
        include_str!("../examples/two_node_qkd.json"),
    );
    m.insert(
        "repeater_chain",
        include_str!("../examples/repeater_chain.json"),
    );
    m.insert(
        "metro_qnum",
        include_str!("../examples/metro_qnum.json"),
    );
    m.insert(
        "long_haul_guard",
        include_str!("../examples/long_haul_guard.json"),
    );
    m
}
