//! Multimode quantum memory per node: mode reservation, timed storage with
//! dephasing decay, cutoff policy, optional crosstalk penalty.

use serde::{Deserialize, Serialize};

use crate::channels::{memory_decay, t_non_eb};
use crate::engine::SimTime;
use crate::error::{Error, Result};

/// Cutoff policy for stored pair halves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    /// Discard once the pair's own fidelity would cross 2/3, i.e. at its
    /// t_non_eb deadline derived from the fidelity at store time.
    #[default]
    Auto,
    /// Fixed age limit in seconds.
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MemoryParams {
    /// Energy relaxation time; accepted for config completeness, the decay
    /// fast path is dephasing-only.
    #[serde(default)]
    pub t1_s: Option<f64>,
    pub t2_s: f64,
    pub num_modes: usize,
    /// Crosstalk coefficient chi; T2_eff = T2 / (1 + chi (occupancy - 1)).
    #[serde(default)]
    pub crosstalk_chi: f64,
    #[serde(default)]
    pub cutoff: Cutoff,
}

impl MemoryParams {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.t2_s <= 0.0 {
            return Err(Error::Validation {
                field: format!("{field}.t2_s"),
                message: "must be > 0".into(),
            });
        }
        if let Some(t1) = self.t1_s {
            if t1 <= 0.0 {
                return Err(Error::Validation {
                    field: format!("{field}.t1_s"),
                    message: "must be > 0".into(),
                });
            }
            if self.t2_s > 2.0 * t1 {
                return Err(Error::Validation {
                    field: format!("{field}.t2_s"),
                    message: format!(
                        "T2 = {} exceeds physical bound 2*T1 = {}",
                        self.t2_s,
                        2.0 * t1
                    ),
                });
            }
        }
        if self.num_modes == 0 {
            return Err(Error::Validation {
                field: format!("{field}.num_modes"),
                message: "must be >= 1".into(),
            });
        }
        if self.crosstalk_chi < 0.0 {
            return Err(Error::Validation {
                field: format!("{field}.crosstalk_chi"),
                message: "must be >= 0".into(),
            });
        }
        if let Cutoff::Fixed(s) = self.cutoff {
            if s <= 0.0 {
                return Err(Error::Validation {
                    field: format!("{field}.cutoff"),
                    message: "fixed cutoff must be > 0".into(),
                });
            }
        }
        Ok(())
    }

    /// Crosstalk-penalized coherence time at the given occupancy.
    pub fn t2_effective(&self, occupancy: usize) -> f64 {
        let k = occupancy.max(1) as f64;
        self.t2_s / (1.0 + self.crosstalk_chi * (k - 1.0))
    }
}

/// One stored half of an entangled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredHalf {
    pub pair_id: u64,
    pub mode_index: usize,
    pub stored_at: SimTime,
    pub fidelity_at_store: f64,
}

/// Current fidelity of a stored half under crosstalk-adjusted dephasing.
pub fn current_fidelity(
    half: &StoredHalf,
    now: SimTime,
    params: &MemoryParams,
    occupancy: usize,
) -> Result<f64> {
    memory_decay(
        half.fidelity_at_store,
        now - half.stored_at,
        params.t2_effective(occupancy),
    )
}

/// Per-node memory bank.
#[derive(Debug)]
pub struct MemoryBank {
    pub node: String,
    pub params: MemoryParams,
    modes: Vec<Option<ModeState>>,
    pub peak_occupancy: usize,
    pub discards_cutoff: u64,
    pub blocked_reservations: u64,
}

#[derive(Debug, Clone)]
struct ModeState {
    flow_id: usize,
    stored: Option<StoredHalf>,
}

impl MemoryBank {
    pub fn new(node: impl Into<String>, params: MemoryParams) -> Self {
        let n = params.num_modes;
        MemoryBank {
            node: node.into(),
            params,
            modes: vec![None; n],
            peak_occupancy: 0,
            discards_cutoff: 0,
            blocked_reservations: 0,
        }
    }

    pub fn occupancy(&self) -> usize {
        self.modes
            .iter()
            .filter(|m| m.as_ref().is_some_and(|s| s.stored.is_some()))
            .count()
    }

    pub fn reserved(&self) -> usize {
        self.modes.iter().filter(|m| m.is_some()).count()
    }

    /// Reserve the lowest-index free mode for a flow.
    pub fn reserve_mode(&mut self, flow_id: usize) -> Result<usize> {
        match self.modes.iter().position(|m| m.is_none()) {
            Some(idx) => {
                self.modes[idx] = Some(ModeState {
                    flow_id,
                    stored: None,
                });
                Ok(idx)
            }
            None => {
                self.blocked_reservations += 1;
                Err(Error::MemoryFull {
                    node: self.node.clone(),
                })
            }
        }
    }

    pub fn release_mode(&mut self, mode_index: usize) {
        if let Some(slot) = self.modes.get_mut(mode_index) {
            *slot = None;
        }
    }

    /// Store a pair half into a previously reserved mode.
    pub fn store(&mut self, mode_index: usize, half: StoredHalf) -> Result<()> {
        let slot = self.modes.get_mut(mode_index).ok_or_else(|| {
            Error::BadParameter(format!("mode {mode_index} out of range"))
        })?;
        match slot {
            Some(state) if state.stored.is_none() => {
                state.stored = Some(half);
            }
            Some(_) => {
                return Err(Error::BadParameter(format!(
                    "mode {mode_index} already holds a pair half"
                )))
            }
            None => {
                return Err(Error::NoFreeMode(format!(
                    "mode {mode_index} at {} is not reserved",
                    self.node
                )))
            }
        }
        self.peak_occupancy = self.peak_occupancy.max(self.occupancy());
        Ok(())
    }

    /// Remove and return the stored half in a mode, keeping the reservation.
    pub fn take(&mut self, mode_index: usize) -> Option<StoredHalf> {
        self.modes
            .get_mut(mode_index)
            .and_then(|m| m.as_mut())
            .and_then(|s| s.stored.take())
    }

    pub fn stored_halves(&self) -> impl Iterator<Item = &StoredHalf> {
        self.modes
            .iter()
            .filter_map(|m| m.as_ref())
            .filter_map(|s| s.stored.as_ref())
    }

    pub fn flow_of_mode(&self, mode_index: usize) -> Option<usize> {
        self.modes
            .get(mode_index)
            .and_then(|m| m.as_ref())
            .map(|s| s.flow_id)
    }

    /// Age deadline for a half stored with the given fidelity.
    pub fn deadline(&self, fidelity_at_store: f64, occupancy: usize) -> f64 {
        match self.params.cutoff {
            Cutoff::Fixed(s) => s,
            Cutoff::Auto => t_non_eb(fidelity_at_store, self.params.t2_effective(occupancy)),
        }
    }

    /// Sweep all modes, discarding halves past their deadline. Returns the
    /// discarded pair ids; the caller is responsible for notifying partners
    /// over the classical plane.
    pub fn apply_cutoff(&mut self, now: SimTime) -> Vec<u64> {
        let occupancy = self.occupancy();
        let params = self.params.clone();
        let mut discarded = Vec::new();
        for slot in self.modes.iter_mut().flatten() {
            let expired = slot.stored.as_ref().is_some_and(|h| {
                let age = now - h.stored_at;
                age > deadline_for(&params, h.fidelity_at_store, occupancy)
            });
            if expired {
                let h = slot.stored.take().expect("checked");
                discarded.push(h.pair_id);
            }
        }
        self.discards_cutoff += discarded.len() as u64;
        discarded
    }

}

fn deadline_for(params: &MemoryParams, f0: f64, occupancy: usize) -> f64 {
    match params.cutoff {
        Cutoff::Fixed(s) => s,
        Cutoff::Auto => t_non_eb(f0, params.t2_effective(occupancy)),
    }
}
