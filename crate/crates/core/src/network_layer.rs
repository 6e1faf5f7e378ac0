//! Entanglement swapping at repeaters, end-to-end path composition and
//! analytic chain estimators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{memory_decay, swap_fidelity};
use crate::error::{Error, Result};
use crate::link_layer::EntangledPair;

/// Simple path through the topology: `nodes[i] -- links[i] -- nodes[i+1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<String>,
    pub links: Vec<String>,
}

impl Path {
    pub fn n_hops(&self) -> usize {
        self.links.len()
    }
}

/// Scheduling discipline along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchedulingMode {
    /// All links attempt in lockstep; any failure restarts the whole slot,
    /// so qubits are never held waiting.
    #[default]
    Synchronous,
    /// Links generate independently; swaps fire as soon as the two adjacent
    /// segments are available, with memories holding the early arrivals.
    Asynchronous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapResult {
    pub success: bool,
    pub out_pair: Option<EntangledPair>,
    pub correction_bits: (u8, u8),
}

/// Entanglement swap at a repeater: consumes both input pairs, succeeds with
/// probability `p_swap_eff`, composes fidelities through the Werner formula.
pub fn swap_at<R: Rng + ?Sized>(
    repeater: &str,
    pair_a: &EntangledPair,
    pair_b: &EntangledPair,
    p_swap_eff: f64,
    p_gate_depol: f64,
    rng: &mut R,
) -> Result<SwapResult> {
    let far_a = pair_a
        .other_end(repeater)
        .ok_or_else(|| Error::WrongEndpoints(repeater.to_string()))?;
    let far_b = pair_b
        .other_end(repeater)
        .ok_or_else(|| Error::WrongEndpoints(repeater.to_string()))?;
    if !rng.gen_bool(p_swap_eff.clamp(0.0, 1.0)) {
        return Ok(SwapResult {
            success: false,
            out_pair: None,
            correction_bits: (0, 0),
        });
    }
    // outcome bits are uniform for Werner inputs
    let bits = (rng.gen::<bool>() as u8, rng.gen::<bool>() as u8);
    Ok(SwapResult {
        success: true,
        out_pair: Some(EntangledPair {
            id: pair_a.id.min(pair_b.id),
            node_a: far_a.to_string(),
            node_b: far_b.to_string(),
            fidelity: swap_fidelity(pair_a.fidelity, pair_b.fidelity, p_gate_depol),
            created_at: pair_a.created_at.max(pair_b.created_at),
            hops_composed: pair_a.hops_composed + pair_b.hops_composed,
        }),
        correction_bits: bits,
    })
}

/// Single-shot success probability of an N-hop chain:
/// product of link probabilities times p_swap^(N-1).
pub fn chain_success_probability(p_links: &[f64], p_swap: f64) -> f64 {
    debug_assert!(!p_links.is_empty());
    let links: f64 = p_links.iter().product();
    links * p_swap.powi(p_links.len() as i32 - 1)
}

/// Everything `estimate_path` needs to know about a candidate path,
/// flattened from the topology.
#[derive(Debug, Clone)]
pub struct PathProfile {
    /// Per-link generation success probability per attempt.
    pub p_gen: Vec<f64>,
    /// Per-link fresh-pair fidelity.
    pub f0: Vec<f64>,
    /// Per-link attempt rate, Hz.
    pub attempt_rate_hz: Vec<f64>,
    /// Effective BSM success probability at each interior repeater.
    pub p_swap_eff: Vec<f64>,
    /// Gate depolarization at each interior repeater.
    pub p_gate_depol: Vec<f64>,
    /// Coherence time at each node along the path (len = links + 1).
    pub t2_s: Vec<f64>,
}

impl PathProfile {
    pub fn n_hops(&self) -> usize {
        self.p_gen.len()
    }

    /// Common slot rate: the slowest attempt rate along the path.
    pub fn slot_rate_hz(&self) -> f64 {
        self.attempt_rate_hz
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    fn fold_fidelity(&self, fidelities: &[f64]) -> f64 {
        let mut f = fidelities[0];
        for (i, &next) in fidelities.iter().enumerate().skip(1) {
            f = swap_fidelity(f, next, self.p_gate_depol[i - 1]);
        }
        f
    }
}

/// Expected slots until both of two links (per-slot success p1, p2) have
/// succeeded at least once: E[max(G1, G2)].
pub fn expected_slots_two_links(p1: f64, p2: f64) -> f64 {
    1.0 / p1 + 1.0 / p2 - 1.0 / (p1 + p2 - p1 * p2)
}

/// (rate estimate, fidelity estimate) for a candidate path under a
/// scheduling policy. Synchronous is closed-form; asynchronous uses the
/// exact two-link expectation for N = 2 and a seeded slot-level Monte Carlo
/// for longer chains.
pub fn estimate_path(profile: &PathProfile, policy: SchedulingMode) -> (f64, f64) {
    let n = profile.n_hops();
    let slot_rate = profile.slot_rate_hz();
    if n == 1 {
        // single hop: both policies agree, nothing waits
        return (slot_rate * profile.p_gen[0], profile.f0[0]);
    }
    let p_swap_all: f64 = profile.p_swap_eff.iter().product();
    match policy {
        SchedulingMode::Synchronous => {
            let p_chain = chain_success_probability(&profile.p_gen, 1.0) * p_swap_all;
            (slot_rate * p_chain, profile.fold_fidelity(&profile.f0))
        }
        SchedulingMode::Asynchronous => {
            let e_slots = if n == 2 {
                expected_slots_two_links(profile.p_gen[0], profile.p_gen[1])
            } else {
                monte_carlo_expected_slots(profile, 20_000)
            };
            let rate = slot_rate / e_slots * p_swap_all;
            // charge each link's halves with decay over its expected wait
            let slot_dt = 1.0 / slot_rate;
            let fidelities: Vec<f64> = (0..n)
                .map(|i| {
                    let wait = (e_slots - 1.0 / profile.p_gen[i]).max(0.0) * slot_dt;
                    let mut f = profile.f0[i];
                    for node in [i, i + 1] {
                        f = memory_decay(f, wait, profile.t2_s[node]).unwrap_or(0.5);
                    }
                    f
                })
                .collect();
            (rate, profile.fold_fidelity(&fidelities))
        }
    }
}

/// Slot-level Monte Carlo of the asynchronous all-links-ready waiting time
/// (swap failures are factored analytically by the caller).
fn monte_carlo_expected_slots(profile: &PathProfile, trials: u32) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x5107_e57a);
    let n = profile.n_hops();
    let mut total_slots = 0u64;
    for _ in 0..trials {
        let mut ready = vec![false; n];
        let mut slots = 0u64;
        while !ready.iter().all(|&r| r) {
            slots += 1;
            for (i, r) in ready.iter_mut().enumerate() {
                if !*r {
                    *r = rng.gen::<f64>() < profile.p_gen[i];
                }
            }
        }
        total_slots += slots;
    }
    total_slots as f64 / trials as f64
}
