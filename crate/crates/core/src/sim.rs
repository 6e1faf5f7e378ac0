//! Discrete-event execution of admitted flows over a topology.
//!
//! Two scheduling policies are simulated:
//!
//! * **Synchronous**: time is sliced into slots at the slowest attempt rate
//!   along the path. Every link (re)tries from scratch each slot and the
//!   end-to-end attempt succeeds only if all links and all swaps succeed in
//!   the same slot; pairs that do not make it are discarded at the slot
//!   boundary. With purification depth d, each link fires 2^d parallel-mode
//!   attempts per slot and must win all of them plus the distillation
//!   tournament.
//!
//! * **Asynchronous**: each link generates independently with heralded
//!   confirmation, successful pairs are parked in memory (and decohere
//!   there), purification tournaments run once a link has buffered its
//!   batch, swaps fire as soon as two adjacent segments are usable, and
//!   cutoff sweeps discard halves that out-lived their usefulness.
//!
//! Every elementary pair is accounted to exactly one terminal bucket so that
//! `MetricsReport::pairs_reconcile` holds by construction.

use std::collections::BTreeMap;

use rand::Rng;

use crate::channels::{memory_decay, purify_step_asym, qber_from_fidelity, swap_fidelity, t_non_eb};
use crate::control::{ControlKnobs, Plan, Topology};
use crate::engine::{Engine, EventKind, SimTime};
use crate::error::{Error, Result};
use crate::link_layer::HeraldModel;
use crate::memory::Cutoff;
use crate::metrics::{
    secret_key_rate, DelayBreakdown, DeliveryRecord, MetricsReport, RequestMetrics, SkrParams,
};
use crate::network_layer::{PathProfile, SchedulingMode};
use crate::qnum::{utility, UtilitySpec};

/// One admitted flow handed to the simulator: the plan chosen by the control
/// plane plus the time share granted on contended links.
#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub plan: Plan,
    pub utility: UtilitySpec,
    pub share: f64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: MetricsReport,
    pub deliveries: Vec<DeliveryRecord>,
    pub events_processed: usize,
}

/// A raw heralded link pair waiting in memory.
#[derive(Debug, Clone, Copy)]
struct RawPair {
    created_at: SimTime,
    stored_at: SimTime,
    fidelity_at_store: f64,
    deadline: SimTime,
}

/// A usable entangled segment spanning path nodes `lo..=hi` (links
/// `lo..hi`). After each swap two segments merge into one.
#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: usize,
    hi: usize,
    fidelity: f64,
    /// Time at which `fidelity` was last brought current.
    at: SimTime,
    /// Classical-correction gate: not swappable/deliverable before this.
    usable_at: SimTime,
    deadline: SimTime,
    oldest_created: SimTime,
    /// Accumulated photon flight time of the constituent links.
    transmission_s: f64,
}

struct FlowState {
    request_id: String,
    spec: UtilitySpec,
    mode: SchedulingMode,
    profile: PathProfile,
    node_names: Vec<String>,
    link_lengths_km: Vec<f64>,
    link_rtt_s: Vec<f64>,
    herald_delay_s: Vec<f64>,
    attempt_dt_s: Vec<f64>,
    depth: u32,
    batch: usize,
    mode_cap: BTreeMap<String, usize>,
    // async state
    buffers: Vec<Vec<RawPair>>,
    locked: Vec<bool>,
    in_flight: Vec<bool>,
    segments: Vec<Segment>,
    occupancy: BTreeMap<String, usize>,
    // sync state
    slot_dt_s: f64,
    // per-flow tallies
    deliveries: Vec<DeliveryRecord>,
}

impl FlowState {
    fn n_links(&self) -> usize {
        self.profile.p_gen.len()
    }

    fn link_covered(&self, link: usize) -> bool {
        self.segments.iter().any(|s| s.lo <= link && link < s.hi)
    }

    fn decay_both_ends(&self, f: f64, dt: f64, lo: usize, hi: usize) -> f64 {
        let mut out = f;
        for node in [lo, hi] {
            out = memory_decay(out, dt, self.profile.t2_s[node]).unwrap_or(0.5);
        }
        out
    }

    fn segment_fidelity_now(&self, seg: &Segment, now: SimTime) -> f64 {
        self.decay_both_ends(seg.fidelity, now - seg.at, seg.lo, seg.hi)
    }

    /// Deadline for state stored across nodes `lo` and `hi` with fidelity
    /// `f` as of `now`: fixed cutoff if configured, otherwise the time at
    /// which the state stops being entanglement-breaking-free.
    fn deadline_for(&self, f: f64, now: SimTime, lo: usize, hi: usize, cutoffs: &[Cutoff]) -> f64 {
        let t2 = self.profile.t2_s[lo].min(self.profile.t2_s[hi]);
        let auto = t_non_eb(f, t2 / 2.0); // halved: both ends dephase
        let horizon = match (cutoffs[lo], cutoffs[hi]) {
            (Cutoff::Fixed(x), Cutoff::Fixed(y)) => x.min(y).min(auto),
            (Cutoff::Fixed(x), Cutoff::Auto) | (Cutoff::Auto, Cutoff::Fixed(x)) => x.min(auto),
            (Cutoff::Auto, Cutoff::Auto) => auto,
        };
        now + horizon.max(0.0)
    }
}

struct Sim {
    flows: Vec<FlowState>,
    cutoffs: Vec<Vec<Cutoff>>,
    report: MetricsReport,
    global_occupancy: BTreeMap<String, usize>,
}

impl Sim {
    fn occupy(&mut self, flow: usize, node: usize, delta: i64) {
        let name = self.flows[flow].node_names[node].clone();
        let f = self.flows[flow].occupancy.entry(name.clone()).or_insert(0);
        *f = (*f as i64 + delta).max(0) as usize;
        let g = self.global_occupancy.entry(name).or_insert(0);
        *g = (*g as i64 + delta).max(0) as usize;
        self.report.peak_mode_occupancy = self.report.peak_mode_occupancy.max(*g as u64);
    }

    fn mem_available(&self, flow: usize, node: usize) -> bool {
        let fs = &self.flows[flow];
        let name = &fs.node_names[node];
        let used = fs.occupancy.get(name).copied().unwrap_or(0);
        used < fs.mode_cap.get(name).copied().unwrap_or(usize::MAX)
    }

    /// Run one distillation tournament over `inputs` (fidelities already
    /// current). Returns Some(kept fidelity) on success. Updates the
    /// consumed/failure tallies; the caller settles the surviving pair.
    fn tournament<R: Rng + ?Sized>(&mut self, inputs: &[f64], rng: &mut R) -> Option<f64> {
        let n = inputs.len();
        debug_assert!(n.is_power_of_two());
        if n == 1 {
            return Some(inputs[0]);
        }
        let mut pool: Vec<f64> = inputs.to_vec();
        pool.sort_by(|a, b| b.partial_cmp(a).expect("finite fidelities"));
        while pool.len() > 1 {
            let mut next = Vec::with_capacity(pool.len() / 2);
            for pair in pool.chunks(2) {
                let (f_out, p) = purify_step_asym(pair[0], pair[1]);
                if rng.gen::<f64>() < p {
                    next.push(f_out);
                } else {
                    // batch aborted: every input that is not the eventual
                    // survivor was consumed by purification
                    self.report.pairs_consumed_purify += n as u64;
                    self.report.purify_failures += 1;
                    return None;
                }
            }
            pool = next;
        }
        self.report.pairs_consumed_purify += (n - 1) as u64;
        Some(pool[0])
    }

    // ---- asynchronous machinery ----

    fn on_generation_attempt(&mut self, engine: &mut Engine, flow: usize, link: usize) {
        let now = engine.clock();
        let (skip, dt, p_gen, herald_d, node_a) = {
            let fs = &self.flows[flow];
            let skip = fs.in_flight[link]
                || fs.locked[link]
                || fs.link_covered(link)
                || fs.buffers[link].len() >= fs.batch;
            (
                skip,
                fs.attempt_dt_s[link],
                fs.profile.p_gen[link],
                fs.herald_delay_s[link],
                fs.node_names[link].clone(),
            )
        };
        if !skip && !(self.mem_available(flow, link) && self.mem_available(flow, link + 1)) {
            self.report.blocked_reservations += 1;
        } else if !skip {
            let success = {
                let rng = engine.stream(&node_a, &format!("gen:{flow}:{link}"));
                rng.gen::<f64>() < p_gen
            };
            if success {
                self.flows[flow].in_flight[link] = true;
                self.report.pairs_created += 1;
                let f0 = self.flows[flow].profile.f0[link];
                engine
                    .schedule(
                        now + herald_d,
                        EventKind::HeraldArrival {
                            flow,
                            link,
                            fidelity: f0,
                        },
                    )
                    .expect("future herald");
            }
        }
        engine
            .schedule(now + dt, EventKind::GenerationAttempt { flow, link })
            .expect("future attempt");
    }

    fn on_herald(&mut self, engine: &mut Engine, flow: usize, link: usize, fidelity: f64) {
        let now = engine.clock();
        self.flows[flow].in_flight[link] = false;
        let deadline = {
            let fs = &self.flows[flow];
            fs.deadline_for(fidelity, now, link, link + 1, &self.cutoffs[flow])
        };
        let herald_d = self.flows[flow].herald_delay_s[link];
        self.flows[flow].buffers[link].push(RawPair {
            created_at: now - herald_d,
            stored_at: now,
            fidelity_at_store: fidelity,
            deadline,
        });
        self.occupy(flow, link, 1);
        self.occupy(flow, link + 1, 1);
        let (full, depth, rtt) = {
            let fs = &self.flows[flow];
            (
                fs.buffers[link].len() >= fs.batch,
                fs.depth,
                fs.link_rtt_s[link],
            )
        };
        if full {
            if depth == 0 {
                self.settle_link_pair(engine, flow, link);
            } else {
                self.flows[flow].locked[link] = true;
                engine
                    .schedule(
                        now + depth as f64 * rtt,
                        EventKind::PurifyTrigger { flow, link },
                    )
                    .expect("future purify");
            }
        }
    }

    /// Convert the buffered batch on `link` into a usable segment (depth 0
    /// fast path: single pair, no tournament).
    fn settle_link_pair(&mut self, engine: &mut Engine, flow: usize, link: usize) {
        let now = engine.clock();
        let raw = self.flows[flow].buffers[link].pop().expect("buffered pair");
        let fs = &self.flows[flow];
        let fidelity = fs.decay_both_ends(
            raw.fidelity_at_store,
            now - raw.stored_at,
            link,
            link + 1,
        );
        let deadline = fs.deadline_for(fidelity, now, link, link + 1, &self.cutoffs[flow]);
        let trans = fs.herald_delay_s[link];
        self.flows[flow].segments.push(Segment {
            lo: link,
            hi: link + 1,
            fidelity,
            at: now,
            usable_at: now,
            deadline,
            oldest_created: raw.created_at,
            transmission_s: trans,
        });
        self.try_merges(engine, flow);
    }

    fn on_purify_trigger(&mut self, engine: &mut Engine, flow: usize, link: usize) {
        let now = engine.clock();
        self.flows[flow].locked[link] = false;
        let batch: Vec<RawPair> = std::mem::take(&mut self.flows[flow].buffers[link]);
        let n = batch.len();
        // free every input half; the survivor re-occupies below
        for _ in 0..n {
            self.occupy(flow, link, -1);
            self.occupy(flow, link + 1, -1);
        }
        let inputs: Vec<f64> = {
            let fs = &self.flows[flow];
            batch
                .iter()
                .map(|r| fs.decay_both_ends(r.fidelity_at_store, now - r.stored_at, link, link + 1))
                .collect()
        };
        let node = self.flows[flow].node_names[link].clone();
        let kept = {
            let mut rng = engine.stream(&node, &format!("purify:{flow}:{link}")).clone();
            let kept = self.tournament(&inputs, &mut rng);
            *engine.stream(&node, &format!("purify:{flow}:{link}")) = rng;
            kept
        };
        if let Some(fidelity) = kept {
            self.occupy(flow, link, 1);
            self.occupy(flow, link + 1, 1);
            let oldest = batch
                .iter()
                .map(|r| r.created_at)
                .fold(f64::INFINITY, f64::min);
            let fs = &self.flows[flow];
            let deadline = fs.deadline_for(fidelity, now, link, link + 1, &self.cutoffs[flow]);
            let trans = fs.herald_delay_s[link];
            self.flows[flow].segments.push(Segment {
                lo: link,
                hi: link + 1,
                fidelity,
                at: now,
                usable_at: now,
                deadline,
                oldest_created: oldest,
                transmission_s: trans,
            });
            self.try_merges(engine, flow);
        }
    }

    /// Greedily swap every pair of adjacent, currently usable segments, then
    /// schedule wake-ups for merges that are gated on classical corrections
    /// and deliveries for full-path segments.
    fn try_merges(&mut self, engine: &mut Engine, flow: usize) {
        let now = engine.clock();
        loop {
            self.flows[flow]
                .segments
                .sort_by_key(|a| a.lo);
            let adj = {
                let segs = &self.flows[flow].segments;
                (0..segs.len().saturating_sub(1)).find(|&i| {
                    segs[i].hi == segs[i + 1].lo
                        && segs[i].usable_at <= now
                        && segs[i + 1].usable_at <= now
                })
            };
            let Some(i) = adj else { break };
            let right = self.flows[flow].segments.remove(i + 1);
            let left = self.flows[flow].segments.remove(i);
            let m = left.hi;
            let node = self.flows[flow].node_names[m].clone();
            let (p_swap, p_gate) = {
                let fs = &self.flows[flow];
                (fs.profile.p_swap_eff[m - 1], fs.profile.p_gate_depol[m - 1])
            };
            let success = {
                let rng = engine.stream(&node, &format!("swap:{flow}"));
                rng.gen::<f64>() < p_swap
            };
            // the BSM consumes both memory slots at the repeater either way
            self.occupy(flow, m, -2);
            if success {
                let fs = &self.flows[flow];
                let fa = fs.segment_fidelity_now(&left, now);
                let fb = fs.segment_fidelity_now(&right, now);
                let fidelity = swap_fidelity(fa, fb, p_gate);
                self.report.pairs_consumed_swap += 1;
                // merged pair is usable only after the correction bits reach
                // the farther end of the merged span
                let pos = self.node_positions(flow);
                let corr_km = (pos[m] - pos[left.lo]).max(pos[right.hi] - pos[m]);
                let usable_at = now + corr_km / engine.v_fiber_km_per_s;
                let fs = &self.flows[flow];
                let deadline = fs.deadline_for(fidelity, now, left.lo, right.hi, &self.cutoffs[flow]);
                let merged = Segment {
                    lo: left.lo,
                    hi: right.hi,
                    fidelity,
                    at: now,
                    usable_at,
                    deadline,
                    oldest_created: left.oldest_created.min(right.oldest_created),
                    transmission_s: left.transmission_s + right.transmission_s,
                };
                self.flows[flow].segments.push(merged);
                if usable_at > now {
                    engine
                        .schedule(usable_at, EventKind::SwapTrigger { flow, node: m })
                        .expect("future trigger");
                }
            } else {
                self.report.swap_failures += 1;
                self.report.pairs_consumed_swap += 2;
                self.occupy(flow, left.lo, -1);
                self.occupy(flow, right.hi, -1);
            }
        }
        // wake up when a correction-gated adjacency becomes actionable
        let pending: Vec<(SimTime, usize)> = {
            let segs = &self.flows[flow].segments;
            (0..segs.len().saturating_sub(1))
                .filter(|&i| segs[i].hi == segs[i + 1].lo)
                .map(|i| (segs[i].usable_at.max(segs[i + 1].usable_at), segs[i].hi))
                .filter(|&(t, _)| t > now)
                .collect()
        };
        for (t, node) in pending {
            engine
                .schedule(t, EventKind::SwapTrigger { flow, node })
                .expect("future trigger");
        }
        let n = self.flows[flow].n_links();
        let full = self.flows[flow]
            .segments
            .iter()
            .find(|s| s.lo == 0 && s.hi == n)
            .copied();
        if let Some(seg) = full {
            if seg.usable_at <= now {
                self.deliver(engine, flow, seg);
            } else {
                engine
                    .schedule(seg.usable_at, EventKind::Delivery { flow, fidelity: 0.0 })
                    .expect("future delivery");
            }
        }
    }

    fn on_delivery_due(&mut self, engine: &mut Engine, flow: usize) {
        let now = engine.clock();
        let n = self.flows[flow].n_links();
        let full = self.flows[flow]
            .segments
            .iter()
            .position(|s| s.lo == 0 && s.hi == n && s.usable_at <= now);
        if let Some(i) = full {
            let seg = self.flows[flow].segments[i];
            self.deliver(engine, flow, seg);
        }
    }

    fn deliver(&mut self, engine: &mut Engine, flow: usize, seg: Segment) {
        let now = engine.clock();
        let n = self.flows[flow].n_links();
        self.flows[flow]
            .segments
            .retain(|s| !(s.lo == 0 && s.hi == n));
        let fidelity = self.flows[flow].segment_fidelity_now(&seg, now);
        self.occupy(flow, 0, -1);
        self.occupy(flow, n, -1);
        self.report.pairs_delivered += 1;
        let total = (now - seg.oldest_created).max(0.0);
        let trans = seg.transmission_s.min(total);
        let gen_est: f64 = {
            let fs = &self.flows[flow];
            fs.attempt_dt_s.iter().copied().fold(0.0, f64::max)
        };
        let generation = gen_est.min(total - trans);
        let protocol = (total - trans - generation).max(0.0);
        let record = DeliveryRecord {
            request_id: self.flows[flow].request_id.clone(),
            delivered_at_s: now,
            fidelity,
            delay: DelayBreakdown {
                transmission_s: trans,
                generation_s: generation,
                protocol_s: protocol,
            },
        };
        self.flows[flow].deliveries.push(record);
        let _ = engine;
    }

    fn on_cutoff_sweep(&mut self, engine: &mut Engine, flow: usize) {
        let now = engine.clock();
        let n_links = self.flows[flow].n_links();
        for link in 0..n_links {
            if self.flows[flow].locked[link] {
                continue; // tournament in flight owns these pairs
            }
            let expired: Vec<usize> = self.flows[flow].buffers[link]
                .iter()
                .enumerate()
                .filter(|(_, r)| r.deadline <= now)
                .map(|(i, _)| i)
                .collect();
            for &i in expired.iter().rev() {
                self.flows[flow].buffers[link].remove(i);
                self.occupy(flow, link, -1);
                self.occupy(flow, link + 1, -1);
                self.report.pairs_discarded_cutoff += 1;
            }
        }
        let expired_segs: Vec<usize> = self.flows[flow]
            .segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.deadline <= now)
            .map(|(i, _)| i)
            .collect();
        for &i in expired_segs.iter().rev() {
            let seg = self.flows[flow].segments.remove(i);
            self.occupy(flow, seg.lo, -1);
            self.occupy(flow, seg.hi, -1);
            self.report.pairs_discarded_cutoff += 1;
        }
        let _ = engine;
    }

    // ---- synchronous machinery ----

    fn on_slot_tick(&mut self, engine: &mut Engine, flow: usize) {
        let now = engine.clock();
        let (n, batch, slot_dt) = {
            let fs = &self.flows[flow];
            (fs.n_links(), fs.batch, fs.slot_dt_s)
        };
        let mut ready: Vec<Option<f64>> = vec![None; n];
        // pairs from this slot that never enter a tournament or swap expire
        // with the slot boundary
        let mut leftover = 0u64;
        #[allow(clippy::needless_range_loop)]
        for link in 0..n {
            let p = self.flows[flow].profile.p_gen[link];
            let f0 = self.flows[flow].profile.f0[link];
            let node = self.flows[flow].node_names[link].clone();
            let successes = {
                let rng = engine.stream(&node, &format!("gen:{flow}:{link}"));
                (0..batch).filter(|_| rng.gen::<f64>() < p).count()
            };
            self.report.pairs_created += successes as u64;
            if successes == batch {
                // all parallel modes fired: distill down to one pair
                let kept = {
                    let mut rng = engine
                        .stream(&node, &format!("purify:{flow}:{link}"))
                        .clone();
                    let kept = self.tournament(&vec![f0; batch], &mut rng);
                    *engine.stream(&node, &format!("purify:{flow}:{link}")) = rng;
                    kept
                };
                ready[link] = kept;
            } else {
                leftover += successes as u64;
            }
        }
        if ready.iter().all(|r| r.is_some()) {
            let fids: Vec<f64> = ready.iter().map(|r| r.expect("checked")).collect();
            let swaps_ok = {
                let fs = &self.flows[flow];
                let p_swaps = fs.profile.p_swap_eff.clone();
                let node0 = fs.node_names[0].clone();
                let rng = engine.stream(&node0, &format!("swap:{flow}"));
                p_swaps.iter().all(|&p| rng.gen::<f64>() < p)
            };
            if swaps_ok {
                let mut f = fids[0];
                for (i, &next) in fids.iter().enumerate().skip(1) {
                    f = swap_fidelity(f, next, self.flows[flow].profile.p_gate_depol[i - 1]);
                }
                self.report.pairs_consumed_swap += (n - 1) as u64;
                self.report.pairs_delivered += 1;
                let total = slot_dt;
                let fs = &self.flows[flow];
                let trans: f64 = fs.herald_delay_s.iter().sum::<f64>().min(total);
                let record = DeliveryRecord {
                    request_id: fs.request_id.clone(),
                    delivered_at_s: now,
                    fidelity: f,
                    delay: DelayBreakdown {
                        transmission_s: trans,
                        generation_s: total - trans,
                        protocol_s: 0.0,
                    },
                };
                self.flows[flow].deliveries.push(record);
            } else {
                self.report.swap_failures += 1;
                self.report.pairs_consumed_swap += n as u64;
            }
        } else {
            // links that did distill a survivor lose it at the slot boundary
            leftover += ready.iter().filter(|r| r.is_some()).count() as u64;
        }
        self.report.pairs_discarded_cutoff += leftover;
        engine
            .schedule(now + slot_dt, EventKind::SlotTick { flow })
            .expect("future slot");
    }

    fn node_positions(&self, flow: usize) -> Vec<f64> {
        let fs = &self.flows[flow];
        let mut pos = vec![0.0];
        for &l in &fs.link_lengths_km {
            pos.push(pos.last().copied().expect("nonempty") + l);
        }
        pos
    }
}

/// Execute the admitted flows for `duration_s` of simulated time.
pub fn run_sim(
    topology: &Topology,
    flows: &[FlowSpec],
    duration_s: f64,
    seed: u64,
    knobs: &ControlKnobs,
) -> Result<SimOutput> {
    if duration_s <= 0.0 || !duration_s.is_finite() {
        return Err(Error::Validation {
            field: "duration_s".into(),
            message: "must be positive and finite".into(),
        });
    }
    let herald = HeraldModel::Midpoint;
    let mut engine = Engine::new(seed);
    engine.v_fiber_km_per_s = knobs.v_fiber_km_per_s;
    let mut states = Vec::with_capacity(flows.len());
    let mut cutoffs = Vec::with_capacity(flows.len());
    for spec in flows {
        let plan = &spec.plan;
        let profile = crate::control::path_profile(topology, &plan.path, knobs.jitter_mode);
        let share = spec.share.clamp(0.0, 1.0);
        if share <= 0.0 {
            return Err(Error::Validation {
                field: "share".into(),
                message: "admitted flow must have a positive share".into(),
            });
        }
        let link_lengths_km: Vec<f64> = plan
            .path
            .links
            .iter()
            .map(|l| topology.links[l].params.length_km)
            .collect();
        let link_rtt_s: Vec<f64> = link_lengths_km
            .iter()
            .map(|&l| 2.0 * l / knobs.v_fiber_km_per_s)
            .collect();
        let herald_delay_s: Vec<f64> = link_lengths_km
            .iter()
            .map(|&l| herald.delay_s(l, knobs.v_fiber_km_per_s))
            .collect();
        let attempt_dt_s: Vec<f64> = profile
            .attempt_rate_hz
            .iter()
            .map(|&r| 1.0 / (r * share))
            .collect();
        let slot_dt_s = 1.0 / (profile.slot_rate_hz() * share);
        let n = profile.p_gen.len();
        cutoffs.push(
            plan.path
                .nodes
                .iter()
                .map(|name| topology.nodes[name].memory.cutoff)
                .collect::<Vec<_>>(),
        );
        states.push(FlowState {
            request_id: plan.request_id.clone(),
            spec: spec.utility.clone(),
            mode: plan.scheduling,
            node_names: plan.path.nodes.clone(),
            link_lengths_km,
            link_rtt_s,
            herald_delay_s,
            attempt_dt_s,
            depth: plan.purification_depth,
            batch: 1usize << plan.purification_depth,
            mode_cap: plan.required_modes.clone(),
            buffers: vec![Vec::new(); n],
            locked: vec![false; n],
            in_flight: vec![false; n],
            segments: Vec::new(),
            occupancy: BTreeMap::new(),
            slot_dt_s,
            profile,
            deliveries: Vec::new(),
        });
    }
    let mut sim = Sim {
        flows: states,
        cutoffs,
        report: MetricsReport {
            duration_s,
            ..MetricsReport::default()
        },
        global_occupancy: BTreeMap::new(),
    };
    // sweep often enough that discards land near their deadline, but never
    // faster than the attempt clock
    let sweep_dts: Vec<f64> = sim
        .flows
        .iter()
        .map(|fs| {
            let min_deadline: f64 = (0..fs.n_links())
                .map(|l| {
                    let t2 = fs.profile.t2_s[l].min(fs.profile.t2_s[l + 1]);
                    t_non_eb(fs.profile.f0[l], t2 / 2.0)
                })
                .fold(f64::INFINITY, f64::min);
            (min_deadline / 8.0).max(fs.slot_dt_s)
        })
        .collect();
    for (f, &sweep_dt) in sweep_dts.iter().enumerate() {
        match sim.flows[f].mode {
            SchedulingMode::Synchronous => {
                let dt = sim.flows[f].slot_dt_s;
                engine.schedule(dt, EventKind::SlotTick { flow: f })?;
            }
            SchedulingMode::Asynchronous => {
                let dts = sim.flows[f].attempt_dt_s.clone();
                for (l, &dt) in dts.iter().enumerate() {
                    engine.schedule(dt, EventKind::GenerationAttempt { flow: f, link: l })?;
                }
                if sweep_dt.is_finite() && sweep_dt <= duration_s {
                    engine.schedule(sweep_dt, EventKind::CutoffSweep { node: f })?;
                }
            }
        }
    }
    let log = engine.run_until(duration_s, |eng, event| match event.kind {
        EventKind::GenerationAttempt { flow, link } => sim.on_generation_attempt(eng, flow, link),
        EventKind::HeraldArrival { flow, link, fidelity } => {
            sim.on_herald(eng, flow, link, fidelity)
        }
        EventKind::PurifyTrigger { flow, link } => sim.on_purify_trigger(eng, flow, link),
        EventKind::SwapTrigger { flow, .. } => sim.try_merges(eng, flow),
        EventKind::Delivery { flow, .. } => sim.on_delivery_due(eng, flow),
        EventKind::SlotTick { flow } => sim.on_slot_tick(eng, flow),
        EventKind::CutoffSweep { node: flow } => {
            sim.on_cutoff_sweep(eng, flow);
            let dt = sweep_dts.get(flow).copied().unwrap_or(f64::INFINITY);
            if dt.is_finite() {
                let _ = eng.schedule(eng.clock() + dt, EventKind::CutoffSweep { node: flow });
            }
        }
        _ => {}
    })?;
    // pairs still in memory at the end of the run never reached a terminal
    // bucket; settle them as cutoff discards so the ledger closes
    for f in 0..sim.flows.len() {
        for link in 0..sim.flows[f].n_links() {
            let leftover = sim.flows[f].buffers[link].len() as u64;
            self_drain(&mut sim, f, link, leftover);
        }
        let segs: Vec<Segment> = std::mem::take(&mut sim.flows[f].segments);
        for seg in segs {
            sim.occupy(f, seg.lo, -1);
            sim.occupy(f, seg.hi, -1);
            sim.report.pairs_discarded_cutoff += 1;
        }
        // a success in flight at t_end was created but never heralded
        for l in 0..sim.flows[f].n_links() {
            if sim.flows[f].in_flight[l] {
                sim.flows[f].in_flight[l] = false;
                sim.report.pairs_discarded_cutoff += 1;
            }
        }
    }
    let mut deliveries = Vec::new();
    for fs in &mut sim.flows {
        let recs = std::mem::take(&mut fs.deliveries);
        let n = recs.len() as u64;
        let eps = n as f64 / duration_s;
        let (f_mean, f_min) = if recs.is_empty() {
            (0.0, 0.0)
        } else {
            let mean = recs.iter().map(|r| r.fidelity).sum::<f64>() / recs.len() as f64;
            let min = recs.iter().map(|r| r.fidelity).fold(f64::INFINITY, f64::min);
            (mean, min)
        };
        let delay = crate::metrics::quantum_delay_breakdown(&recs);
        let skr = if n > 0 {
            secret_key_rate(
                SkrParams {
                    q_raw_rate_hz: eps,
                    f_ec: fs.spec.f_ec,
                },
                qber_from_fidelity(f_mean),
            )
        } else {
            0.0
        };
        sim.report.per_request.push(RequestMetrics {
            request_id: fs.request_id.clone(),
            delivered_pairs: n,
            effective_eps: eps,
            mean_quantum_delay_s: delay.total(),
            delay,
            fidelity_mean: f_mean,
            fidelity_min: f_min,
            skr_bits_per_s: skr,
            utility: utility(&fs.spec, eps, f_mean),
        });
        deliveries.extend(recs);
    }
    deliveries.sort_by(|a, b| {
        a.delivered_at_s
            .partial_cmp(&b.delivered_at_s)
            .expect("finite times")
            .then_with(|| a.request_id.cmp(&b.request_id))
    });
    Ok(SimOutput {
        report: sim.report,
        deliveries,
        events_processed: log.len(),
    })
}

fn self_drain(sim: &mut Sim, flow: usize, link: usize, leftover: u64) {
    for _ in 0..leftover {
        sim.flows[flow].buffers[link].pop();
        sim.occupy(flow, link, -1);
        sim.occupy(flow, link + 1, -1);
        sim.report.pairs_discarded_cutoff += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{LinkParams, NoiseParams};
    use crate::control::{LinkSpec, NodeSpec};
    use crate::network_layer::Path;
    use crate::memory::MemoryParams;
    use crate::network_layer::SchedulingMode;
    use crate::qnum::AppType;

    fn node(t2_s: f64, num_modes: usize, p_swap: f64) -> NodeSpec {
        NodeSpec {
            memory: MemoryParams {
                t1_s: None,
                t2_s,
                num_modes,
                crosstalk_chi: 0.0,
                cutoff: Cutoff::Auto,
            },
            noise: NoiseParams {
                p_swap,
                ..NoiseParams::default()
            },
        }
    }

    fn chain_topology(names: &[&str], length_km: f64, p_gen_target: f64, p_swap: f64) -> Topology {
        // attenuation chosen so that p_gen comes out at the target
        let att = -10.0 * p_gen_target.log10() / length_km;
        let mut t = Topology::default();
        for n in names {
            t.nodes.insert((*n).into(), node(1e9, 1024, p_swap));
        }
        for w in names.windows(2) {
            t.links.insert(
                format!("{}-{}", w[0], w[1]),
                LinkSpec {
                    a: w[0].into(),
                    b: w[1].into(),
                    params: LinkParams {
                        length_km,
                        attenuation_db_per_km: att,
                        attempt_rate_hz: 1000.0,
                        f0_link: 0.95,
                        extra_efficiency: 1.0,
                    },
                },
            );
        }
        t
    }

    fn flow_over(t: &Topology, depth: u32, mode: SchedulingMode, share: f64) -> FlowSpec {
        let names: Vec<String> = t.nodes.keys().cloned().collect();
        let mut links = Vec::new();
        for w in names.windows(2) {
            links.push(format!("{}-{}", w[0], w[1]));
        }
        let mut required = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            let incident = if i == 0 || i == names.len() - 1 { 1 } else { 2 };
            required.insert(n.clone(), incident * (1usize << depth));
        }
        FlowSpec {
            plan: Plan {
                request_id: "r".into(),
                path: Path {
                    nodes: names,
                    links,
                },
                purification_depth: depth,
                scheduling: mode,
                required_modes: required,
                reserved_modes: BTreeMap::new(),
                r_est: 0.0,
                f_est: 0.0,
            },
            utility: UtilitySpec::default_for(AppType::Qkd),
            share,
        }
    }

    fn knobs() -> ControlKnobs {
        ControlKnobs {
            oracle_controller: true,
            ..ControlKnobs::default()
        }
    }

    #[test]
    fn sync_three_link_chain_delivers_at_product_rate() {
        let t = chain_topology(&["a", "b", "c", "d"], 1.0, 0.5, 1.0);
        let flow = flow_over(&t, 0, SchedulingMode::Synchronous, 1.0);
        let duration = 8.0; // 8000 slots at 1 kHz
        let out = run_sim(&t, &[flow], duration, 7, &knobs()).unwrap();
        let slots = duration * 1000.0;
        let rate = out.report.pairs_delivered as f64 / slots;
        // per-slot success 0.5^3 = 0.125; allow 4 sigma
        let sigma = (0.125 * 0.875 / slots).sqrt();
        assert!(
            (rate - 0.125).abs() < 4.0 * sigma,
            "rate {rate} vs 0.125 (sigma {sigma})"
        );
        assert!(out.report.pairs_reconcile(), "{:?}", out.report);
    }

    #[test]
    fn sync_ten_link_chain_matches_p_to_the_ten() {
        let t = chain_topology(
            &["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k"],
            1.0,
            0.9,
            1.0,
        );
        let flow = flow_over(&t, 0, SchedulingMode::Synchronous, 1.0);
        let duration = 8.0;
        let out = run_sim(&t, &[flow], duration, 11, &knobs()).unwrap();
        let slots = duration * 1000.0;
        let rate = out.report.pairs_delivered as f64 / slots;
        let expect = 0.9f64.powi(10);
        let sigma = (expect * (1.0 - expect) / slots).sqrt();
        assert!(
            (rate - expect).abs() < 4.0 * sigma,
            "rate {rate} vs {expect}"
        );
        assert!(out.report.pairs_reconcile());
    }

    #[test]
    fn async_single_link_delivers_every_success() {
        let t = chain_topology(&["a", "b"], 1.0, 0.5, 1.0);
        let flow = flow_over(&t, 0, SchedulingMode::Asynchronous, 1.0);
        let out = run_sim(&t, &[flow], 4.0, 3, &knobs()).unwrap();
        // every heralded pair on a single link is deliverable immediately
        assert!(out.report.pairs_delivered > 1500);
        assert!(out.report.pairs_reconcile(), "{:?}", out.report);
        assert_eq!(out.report.pairs_consumed_swap, 0);
        let rec = &out.deliveries[0];
        // herald flight over 1 km at 2e5 km/s
        assert!((rec.delay.transmission_s - 5e-6).abs() < 1e-12);
    }

    #[test]
    fn purification_halves_rate_and_raises_fidelity() {
        let mut t = chain_topology(&["a", "b"], 1.0, 0.8, 1.0);
        t.links.values_mut().for_each(|l| l.params.f0_link = 0.85);
        let d0 = run_sim(
            &t,
            &[flow_over(&t, 0, SchedulingMode::Asynchronous, 1.0)],
            10.0,
            5,
            &knobs(),
        )
        .unwrap();
        let d1 = run_sim(
            &t,
            &[flow_over(&t, 1, SchedulingMode::Asynchronous, 1.0)],
            10.0,
            5,
            &knobs(),
        )
        .unwrap();
        assert!(d0.report.pairs_reconcile());
        assert!(d1.report.pairs_reconcile(), "{:?}", d1.report);
        let r0 = d0.report.per_request[0].effective_eps;
        let r1 = d1.report.per_request[0].effective_eps;
        assert!(r1 <= 0.5 * r0, "depth-1 rate {r1} vs depth-0 {r0}");
        let f0 = d0.report.per_request[0].fidelity_mean;
        let f1 = d1.report.per_request[0].fidelity_mean;
        assert!(f1 > f0, "depth-1 fidelity {f1} vs depth-0 {f0}");
    }

    #[test]
    fn async_two_link_chain_reconciles_and_delivers() {
        let t = chain_topology(&["a", "b", "c"], 2.0, 0.3, 0.5);
        let flow = flow_over(&t, 0, SchedulingMode::Asynchronous, 1.0);
        let out = run_sim(&t, &[flow], 10.0, 9, &knobs()).unwrap();
        assert!(out.report.pairs_delivered > 50, "{:?}", out.report);
        assert!(out.report.swap_failures > 0);
        assert!(out.report.pairs_reconcile(), "{:?}", out.report);
    }

    #[test]
    fn cutoff_discards_under_short_coherence() {
        // T2 short enough that a waiting half routinely dies before its
        // partner link succeeds
        let mut t = chain_topology(&["a", "b", "c"], 2.0, 0.05, 1.0);
        for n in t.nodes.values_mut() {
            n.memory.t2_s = 0.02;
        }
        let flow = flow_over(&t, 0, SchedulingMode::Asynchronous, 1.0);
        let out = run_sim(&t, &[flow], 10.0, 13, &knobs()).unwrap();
        assert!(out.report.pairs_discarded_cutoff > 0, "{:?}", out.report);
        assert!(out.report.pairs_reconcile(), "{:?}", out.report);
    }

    #[test]
    fn deterministic_given_seed() {
        let t = chain_topology(&["a", "b", "c"], 2.0, 0.3, 0.5);
        let run = |seed| {
            let flow = flow_over(&t, 1, SchedulingMode::Asynchronous, 1.0);
            let out = run_sim(&t, &[flow], 5.0, seed, &knobs()).unwrap();
            serde_json::to_string(&out.deliveries).unwrap()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn share_scales_rate() {
        let t = chain_topology(&["a", "b"], 1.0, 0.5, 1.0);
        let full = run_sim(
            &t,
            &[flow_over(&t, 0, SchedulingMode::Asynchronous, 1.0)],
            8.0,
            21,
            &knobs(),
        )
        .unwrap();
        let half = run_sim(
            &t,
            &[flow_over(&t, 0, SchedulingMode::Asynchronous, 0.5)],
            8.0,
            21,
            &knobs(),
        )
        .unwrap();
        let r_full = full.report.per_request[0].effective_eps;
        let r_half = half.report.per_request[0].effective_eps;
        assert!((r_half / r_full - 0.5).abs() < 0.1, "{r_half} vs {r_full}");
    }

    #[test]
    fn rejects_nonpositive_duration() {
        let t = chain_topology(&["a", "b"], 1.0, 0.5, 1.0);
        let flow = flow_over(&t, 0, SchedulingMode::Asynchronous, 1.0);
        assert!(run_sim(&t, &[flow], 0.0, 1, &knobs()).is_err());
    }
}
