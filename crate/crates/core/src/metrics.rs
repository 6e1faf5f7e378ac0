//! End-to-end performance formulas (Effective EPS, SKR, PLOB capacity, QEC
//! scaling) plus per-run report aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs for the secret-key-rate bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SkrParams {
    /// Raw transmission rate q, bits (sifted pairs) per second.
    pub q_raw_rate_hz: f64,
    /// Classical error-correction overhead, >= 1.
    pub f_ec: f64,
}

/// Inputs for the heuristic logical-error-rate scaling law.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QecParams {
    pub p_phys: f64,
    pub p_threshold: f64,
    /// Code distance, odd, >= 3.
    pub distance: u32,
    pub prefactor: f64,
}

/// Effective delivered-pairs-per-second estimate:
/// EGR * P_swap^(N-1) * eta^N / overhead, with unit proportionality constant.
pub fn effective_eps(
    egr: f64,
    p_swap: f64,
    n_hops: u32,
    eta_link: f64,
    overhead: f64,
) -> Result<f64> {
    if overhead < 1.0 {
        return Err(Error::BadParameter(format!(
            "protocol overhead {overhead} must be >= 1"
        )));
    }
    if n_hops == 0 {
        return Err(Error::BadParameter("n_hops must be >= 1".into()));
    }
    Ok(egr * p_swap.powi(n_hops as i32 - 1) * eta_link.powi(n_hops as i32) / overhead)
}

/// Binary Shannon entropy with the h(0) = h(1) = 0 endpoint convention.
pub fn binary_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -q * q.log2() - (1.0 - q) * (1.0 - q).log2()
}

/// BB84 secret-key-rate lower bound, clamped at zero:
/// max(0, q (1 - (1 + f_EC) h(QBER))).
pub fn secret_key_rate(params: SkrParams, qber: f64) -> f64 {
    let h = binary_entropy(qber);
    (params.q_raw_rate_hz * (1.0 - (1.0 + params.f_ec) * h)).max(0.0)
}

/// PLOB capacity of a pure-loss channel: -log2(1 - eta) bits/use.
/// Returns (exact, small-eta linear approximation 1.44 eta).
pub fn plob_capacity(eta: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::BadParameter(format!(
            "transmissivity {eta} must be in [0, 1)"
        )));
    }
    let exact = -(1.0 - eta).log2();
    let approx = eta / std::f64::consts::LN_2;
    Ok((exact, approx))
}

/// Heuristic surface-code logical error rate P_L = C (p/p_th)^((d+1)/2).
pub fn logical_error_rate(params: QecParams) -> f64 {
    let ratio = params.p_phys / params.p_threshold;
    params.prefactor * ratio.powf((params.distance as f64 + 1.0) / 2.0)
}

/// Latency decomposition of one delivered end-to-end pair.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct DelayBreakdown {
    /// Photon flight time on the quantum channel.
    pub transmission_s: f64,
    /// One source emission period for the successful attempt.
    pub generation_s: f64,
    /// Everything else: probabilistic retries, heralding waits, LOCC rounds.
    pub protocol_s: f64,
}

impl DelayBreakdown {
    pub fn total(&self) -> f64 {
        self.transmission_s + self.generation_s + self.protocol_s
    }
}

/// One delivered end-to-end pair as seen by the metrics layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub request_id: String,
    pub delivered_at_s: f64,
    pub fidelity: f64,
    pub delay: DelayBreakdown,
}

/// Mean latency decomposition across a batch of deliveries.
pub fn quantum_delay_breakdown(deliveries: &[DeliveryRecord]) -> DelayBreakdown {
    if deliveries.is_empty() {
        return DelayBreakdown::default();
    }
    let n = deliveries.len() as f64;
    let mut sum = DelayBreakdown::default();
    for d in deliveries {
        sum.transmission_s += d.delay.transmission_s;
        sum.generation_s += d.delay.generation_s;
        sum.protocol_s += d.delay.protocol_s;
    }
    DelayBreakdown {
        transmission_s: sum.transmission_s / n,
        generation_s: sum.generation_s / n,
        protocol_s: sum.protocol_s / n,
    }
}

/// Per-request metrics for one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestMetrics {
    pub request_id: String,
    pub delivered_pairs: u64,
    pub effective_eps: f64,
    pub mean_quantum_delay_s: f64,
    pub delay: DelayBreakdown,
    pub fidelity_mean: f64,
    pub fidelity_min: f64,
    pub skr_bits_per_s: f64,
    pub utility: f64,
}

/// Aggregated counters for one simulation instance.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub duration_s: f64,
    pub per_request: Vec<RequestMetrics>,
    pub pairs_created: u64,
    pub pairs_consumed_swap: u64,
    pub pairs_consumed_purify: u64,
    pub pairs_delivered: u64,
    pub pairs_discarded_cutoff: u64,
    pub pairs_invalidated_partner: u64,
    pub swap_failures: u64,
    pub purify_failures: u64,
    pub blocked_reservations: u64,
    pub peak_mode_occupancy: u64,
}

impl MetricsReport {
    /// Pair-conservation check: every created pair must end in exactly one
    /// terminal bucket.
    pub fn pairs_reconcile(&self) -> bool {
        self.pairs_created
            == self.pairs_consumed_swap
                + self.pairs_consumed_purify
                + self.pairs_delivered
                + self.pairs_discarded_cutoff
                + self.pairs_invalidated_partner
    }
}
