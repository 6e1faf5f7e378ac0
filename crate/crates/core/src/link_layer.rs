//! Elementary entanglement generation with heralding, plus link-level
//! purification (pairwise BBPSSW tournament).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{purify_step_asym, LinkParams};
use crate::engine::SimTime;
use crate::error::{Error, Result};

/// A heralded two-node Werner-parameterized entangled pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntangledPair {
    pub id: u64,
    pub node_a: String,
    pub node_b: String,
    pub fidelity: f64,
    pub created_at: SimTime,
    /// Number of elementary links composed into this pair (1 for fresh).
    pub hops_composed: u32,
}

impl EntangledPair {
    pub fn elementary(
        id: u64,
        node_a: impl Into<String>,
        node_b: impl Into<String>,
        fidelity: f64,
        created_at: SimTime,
    ) -> Self {
        EntangledPair {
            id,
            node_a: node_a.into(),
            node_b: node_b.into(),
            fidelity,
            created_at,
            hops_composed: 1,
        }
    }

    pub fn connects(&self, node: &str) -> bool {
        self.node_a == node || self.node_b == node
    }

    /// The endpoint other than `node`.
    pub fn other_end(&self, node: &str) -> Option<&str> {
        if self.node_a == node {
            Some(&self.node_b)
        } else if self.node_b == node {
            Some(&self.node_a)
        } else {
            None
        }
    }
}

/// Result of one generation attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationOutcome {
    pub success: bool,
    /// When both ends know (midpoint-herald model: attempt + L/v one-way).
    pub herald_time: SimTime,
}

/// Which classical notification pattern heralds a fresh pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeraldModel {
    /// Midpoint photon source: one-way classical delay L/v.
    #[default]
    Midpoint,
    /// Sender-side source with end-to-end confirmation: round trip 2L/v.
    RoundTrip,
}

impl HeraldModel {
    pub fn delay_s(&self, length_km: f64, v_fiber_km_per_s: f64) -> f64 {
        match self {
            HeraldModel::Midpoint => length_km / v_fiber_km_per_s,
            HeraldModel::RoundTrip => 2.0 * length_km / v_fiber_km_per_s,
        }
    }
}

/// One Bernoulli(p_gen) generation attempt at time `now`.
pub fn attempt_generation<R: Rng + ?Sized>(
    link: &LinkParams,
    now: SimTime,
    herald: HeraldModel,
    v_fiber_km_per_s: f64,
    rng: &mut R,
) -> GenerationOutcome {
    let success = rng.gen::<f64>() < link.p_gen();
    GenerationOutcome {
        success,
        herald_time: now + herald.delay_s(link.length_km, v_fiber_km_per_s),
    }
}

/// Analytic mean generation rate, ignoring heralding dead-time.
pub fn expected_link_rate(link: &LinkParams) -> f64 {
    link.attempt_rate_hz * link.p_gen()
}

/// Why a purification batch failed.
#[derive(Debug, Clone, PartialEq)]
pub struct PurifyFailure {
    pub round: u32,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurifyOutcome {
    pub result: std::result::Result<EntangledPair, PurifyFailure>,
    /// LOCC rounds executed (each costs one classical round trip).
    pub rounds: u32,
    /// Pairs consumed (all inputs, success or not).
    pub consumed: usize,
}

/// Pairwise purification tournament over 2^depth pairs sharing endpoints.
///
/// Each round sorts survivors by fidelity and couples neighbours, so inputs
/// with matched fidelity meet. Any single BBPSSW failure aborts the whole
/// batch; all input pairs are consumed regardless of outcome.
pub fn run_purification<R: Rng + ?Sized>(
    mut pairs: Vec<EntangledPair>,
    depth: u32,
    rng: &mut R,
) -> Result<PurifyOutcome> {
    let need = 1usize << depth;
    if pairs.len() != need {
        return Err(Error::BadParameter(format!(
            "purification depth {depth} needs {need} pairs, got {}",
            pairs.len()
        )));
    }
    let (a, b) = (pairs[0].node_a.clone(), pairs[0].node_b.clone());
    if pairs
        .iter()
        .any(|p| !(p.node_a == a && p.node_b == b) && !(p.node_a == b && p.node_b == a))
    {
        return Err(Error::BadParameter(
            "purification inputs must share endpoints".into(),
        ));
    }
    let consumed = pairs.len();
    let mut round = 0u32;
    while pairs.len() > 1 {
        round += 1;
        pairs.sort_by(|x, y| x.fidelity.total_cmp(&y.fidelity));
        let mut next = Vec::with_capacity(pairs.len() / 2);
        for couple in pairs.chunks(2) {
            let (kept, sacrificed) = (&couple[0], &couple[1]);
            let (f_out, p_success) = purify_step_asym(kept.fidelity, sacrificed.fidelity);
            if rng.gen::<f64>() >= p_success {
                return Ok(PurifyOutcome {
                    result: Err(PurifyFailure {
                        round,
                        cause: "coincidence check failed".into(),
                    }),
                    rounds: round,
                    consumed,
                });
            }
            next.push(EntangledPair {
                id: kept.id,
                node_a: kept.node_a.clone(),
                node_b: kept.node_b.clone(),
                fidelity: f_out,
                created_at: kept.created_at.max(sacrificed.created_at),
                hops_composed: kept.hops_composed,
            });
        }
        pairs = next;
    }
    Ok(PurifyOutcome {
        result: Ok(pairs.pop().expect("one survivor")),
        rounds: round,
        consumed,
    })
}

/// Analytic counterpart of `run_purification` for symmetric inputs:
/// depth-fold of the BBPSSW recursion. Returns (output fidelity,
/// probability that the whole tournament succeeds).
pub fn purify_depth_fold(f0: f64, depth: u32) -> (f64, f64) {
    let mut f = f0;
    let mut p_total = 1.0;
    for round in 0..depth {
        let (f_next, p) = crate::channels::purify_step(f);
        // a round at depth d runs 2^(depth-1-round) parallel couples,
        // all of which must succeed under the abort-batch policy
        let couples = 1u32 << (depth - 1 - round);
        p_total *= p.powi(couples as i32);
        f = f_next;
    }
    (f, p_total)
}
