//! Closed-form physical models: fiber loss, Werner-fidelity bookkeeping under
//! noise, memory decay, swap composition and the purification recursion.
//!
//! Everything here is the "fast path"; the dense-matrix [`crate::oracle`]
//! module cross-validates each formula in the test suite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical parameters of a single elementary fiber link.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinkParams {
    /// Fiber length L in km.
    pub length_km: f64,
    /// Attenuation coefficient alpha in dB/km.
    #[serde(default = "default_alpha")]
    pub attenuation_db_per_km: f64,
    /// Entanglement generation attempt rate (source attempts per second).
    pub attempt_rate_hz: f64,
    /// Fidelity of a freshly heralded pair.
    #[serde(default = "default_f0")]
    pub f0_link: f64,
    /// Lumped source/coupling/detector efficiency.
    #[serde(default = "default_extra_eff")]
    pub extra_efficiency: f64,
}

fn default_alpha() -> f64 {
    0.2
}
fn default_f0() -> f64 {
    0.95
}
fn default_extra_eff() -> f64 {
    1.0
}

impl LinkParams {
    /// Per-attempt success probability: lumped efficiency times fiber
    /// transmissivity.
    pub fn p_gen(&self) -> f64 {
        self.extra_efficiency * fiber_transmissivity(self.length_km, self.attenuation_db_per_km)
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let check = |ok: bool, sub: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation {
                    field: format!("{field}.{sub}"),
                    message: msg.to_string(),
                })
            }
        };
        check(self.length_km > 0.0, "length_km", "must be > 0")?;
        check(
            self.attenuation_db_per_km >= 0.0,
            "attenuation_db_per_km",
            "must be >= 0",
        )?;
        check(self.attempt_rate_hz > 0.0, "attempt_rate_hz", "must be > 0")?;
        check(
            self.f0_link > 0.25 && self.f0_link <= 1.0,
            "f0_link",
            "must be in (1/4, 1]",
        )?;
        check(
            self.extra_efficiency > 0.0 && self.extra_efficiency <= 1.0,
            "extra_efficiency",
            "must be in (0, 1]",
        )?;
        Ok(())
    }
}

/// Jitter handling for the effective BSM success probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JitterMode {
    /// Gaussian overlap penalty exp(-sigma^2 / 2 tau^2).
    #[default]
    Smooth,
    /// All-or-nothing: interference is lost entirely once jitter exceeds the
    /// photon wavepacket duration.
    Hard,
}

/// Noise parameters attached to a repeater node.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NoiseParams {
    /// BSM success probability (linear optics caps this at 0.5).
    #[serde(default = "default_p_swap")]
    pub p_swap: f64,
    /// Depolarizing parameter applied at each swap (local gate noise).
    #[serde(default)]
    pub p_gate_depol: f64,
    /// Timing jitter standard deviation, seconds.
    #[serde(default)]
    pub jitter_sigma_s: f64,
    /// Photon temporal wavepacket duration, seconds.
    #[serde(default = "default_pulse_width")]
    pub pulse_width_s: f64,
}

fn default_p_swap() -> f64 {
    0.5
}
fn default_pulse_width() -> f64 {
    1e-9
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            p_swap: default_p_swap(),
            p_gate_depol: 0.0,
            jitter_sigma_s: 0.0,
            pulse_width_s: default_pulse_width(),
        }
    }
}

impl NoiseParams {
    /// Swap success probability after the jitter penalty.
    pub fn effective_p_swap(&self, mode: JitterMode) -> f64 {
        self.p_swap * jitter_swap_multiplier(self.jitter_sigma_s, self.pulse_width_s, mode)
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let check = |ok: bool, sub: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation {
                    field: format!("{field}.{sub}"),
                    message: msg.to_string(),
                })
            }
        };
        check(
            self.p_swap > 0.0 && self.p_swap <= 1.0,
            "p_swap",
            "must be in (0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.p_gate_depol),
            "p_gate_depol",
            "must be in [0, 1]",
        )?;
        check(self.jitter_sigma_s >= 0.0, "jitter_sigma_s", "must be >= 0")?;
        check(self.pulse_width_s > 0.0, "pulse_width_s", "must be > 0")?;
        Ok(())
    }
}

/// Fiber transmissivity eta = 10^(-alpha L / 10).
pub fn fiber_transmissivity(length_km: f64, alpha_db_per_km: f64) -> f64 {
    debug_assert!(length_km >= 0.0 && alpha_db_per_km >= 0.0);
    10f64.powf(-alpha_db_per_km * length_km / 10.0)
}

/// Werner fidelity after a depolarizing channel of strength p on one half:
/// F' = (1-p) F + p/4.
pub fn depolarize_fidelity(fidelity: f64, p: f64) -> f64 {
    (1.0 - p) * fidelity + p * 0.25
}

/// Dephasing decay of a stored pair: F(t) = 1/2 (1 + (2 F0 - 1) e^(-t/T2)).
///
/// F0 below 1/2 is clamped to 1/2 (the dephasing form only models decay
/// toward the 1/2 floor from above).
pub fn memory_decay(f0: f64, t: f64, t2: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::BadParameter(format!("negative storage time {t}")));
    }
    if t2 <= 0.0 {
        return Err(Error::BadParameter(format!("non-positive T2 {t2}")));
    }
    let f0 = f0.max(0.5);
    Ok(0.5 * (1.0 + (2.0 * f0 - 1.0) * (-t / t2).exp()))
}

/// Entanglement-preserving lifetime: the t solving F(t) = 2/3, i.e.
/// T_non-EB = T2 ln((2 F0 - 1) / (1/3)). Zero when the state is born at or
/// below the 2/3 classical limit.
pub fn t_non_eb(f0: f64, t2: f64) -> f64 {
    if f0 <= 2.0 / 3.0 {
        return 0.0;
    }
    t2 * ((2.0 * f0 - 1.0) * 3.0).ln()
}

/// Werner fidelity after an entanglement swap of two pairs with fidelities
/// F1 and F2, followed by local gate depolarization.
pub fn swap_fidelity(f1: f64, f2: f64, p_gate_depol: f64) -> f64 {
    let f_ideal = f1 * f2 + (1.0 - f1) * (1.0 - f2) / 3.0;
    depolarize_fidelity(f_ideal, p_gate_depol)
}

/// One BBPSSW purification round on two symmetric Werner pairs of fidelity F.
/// Returns (output fidelity, success probability).
pub fn purify_step(f: f64) -> (f64, f64) {
    let (f_out, p) = purify_step_asym(f, f);
    (f_out, p)
}

/// BBPSSW round on Werner inputs with fidelities F1, F2.
pub fn purify_step_asym(f1: f64, f2: f64) -> (f64, f64) {
    let g1 = (1.0 - f1) / 3.0;
    let g2 = (1.0 - f2) / 3.0;
    let p_success = f1 * f2 + f1 * g2 + g1 * f2 + 5.0 * g1 * g2;
    let f_out = (f1 * f2 + g1 * g2) / p_success;
    (f_out, p_success)
}

/// QBER of a Werner state measured in matching bases: Q = 2(1-F)/3.
pub fn qber_from_fidelity(f: f64) -> f64 {
    2.0 * (1.0 - f) / 3.0
}

/// Multiplier m applied to P_swap to account for timing jitter.
pub fn jitter_swap_multiplier(sigma_s: f64, tau_s: f64, mode: JitterMode) -> f64 {
    debug_assert!(sigma_s >= 0.0 && tau_s > 0.0);
    match mode {
        JitterMode::Smooth => (-sigma_s * sigma_s / (2.0 * tau_s * tau_s)).exp(),
        JitterMode::Hard => {
            if sigma_s < tau_s {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn transmissivity_basics() {
        assert_eq!(fiber_transmissivity(0.0, 0.2), 1.0);
        assert_abs_diff_eq!(fiber_transmissivity(50.0, 0.2), 0.1, epsilon = 1e-15);
        // exponent additivity
        let a = fiber_transmissivity(30.0, 0.2) * fiber_transmissivity(20.0, 0.2);
        assert_abs_diff_eq!(a, fiber_transmissivity(50.0, 0.2), epsilon = 1e-15);
    }

    #[test]
    fn depolarize_endpoints() {
        assert_eq!(depolarize_fidelity(0.8, 0.0), 0.8);
        assert_abs_diff_eq!(depolarize_fidelity(1.0, 1.0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(depolarize_fidelity(0.9, 0.1), 0.835, epsilon = 1e-15);
    }

    #[test]
    fn memory_decay_known_points() {
        assert_abs_diff_eq!(memory_decay(0.8, 0.0, 1.0).unwrap(), 0.8, epsilon = 1e-15);
        let t2 = 2.5;
        assert_abs_diff_eq!(
            memory_decay(1.0, t2 * 3f64.ln(), t2).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            memory_decay(0.8, 1.0, 1.0).unwrap(),
            0.5 * (1.0 + 0.6 / std::f64::consts::E),
            epsilon = 1e-12
        );
    }

    #[test]
    fn memory_decay_monotone_and_clamped() {
        let mut prev = 1.0;
        for i in 1..50 {
            let f = memory_decay(1.0, i as f64 * 0.1, 1.0).unwrap();
            assert!(f < prev);
            assert!(f > 0.5);
            prev = f;
        }
        // F0 = 1/2 stays at the floor; below-floor inputs clamp
        assert_eq!(memory_decay(0.5, 7.0, 1.0).unwrap(), 0.5);
        assert_eq!(memory_decay(0.3, 7.0, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn memory_decay_rejects_bad_args() {
        assert!(memory_decay(0.8, -1.0, 1.0).is_err());
        assert!(memory_decay(0.8, 1.0, 0.0).is_err());
    }

    #[test]
    fn t_non_eb_known_points() {
        assert_eq!(t_non_eb(2.0 / 3.0, 1.0), 0.0);
        assert_eq!(t_non_eb(0.5, 1.0), 0.0);
        assert_abs_diff_eq!(t_non_eb(1.0, 1.0), 3f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(t_non_eb(0.8, 1.0), 1.8f64.ln(), epsilon = 1e-15);
        // round-trip: F(T_non-EB) = 2/3
        for f0 in [0.7, 0.8, 0.9, 0.99] {
            let t = t_non_eb(f0, 3.0);
            assert_abs_diff_eq!(
                memory_decay(f0, t, 3.0).unwrap(),
                2.0 / 3.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn swap_fidelity_known_points() {
        assert_eq!(swap_fidelity(1.0, 1.0, 0.0), 1.0);
        assert_abs_diff_eq!(
            swap_fidelity(0.9, 0.9, 0.0),
            0.81 + 0.01 / 3.0,
            epsilon = 1e-15
        );
        // symmetry and monotonicity on a coarse grid
        for i in 0..=10 {
            for j in 0..=10 {
                let f1 = 0.5 + 0.05 * i as f64;
                let f2 = 0.5 + 0.05 * j as f64;
                assert_abs_diff_eq!(
                    swap_fidelity(f1, f2, 0.1),
                    swap_fidelity(f2, f1, 0.1),
                    epsilon = 1e-15
                );
                if i > 0 {
                    assert!(swap_fidelity(f1, f2, 0.1) >= swap_fidelity(f1 - 0.05, f2, 0.1));
                }
            }
        }
    }

    #[test]
    fn purify_step_known_points() {
        assert_eq!(purify_step(1.0), (1.0, 1.0));
        let (f_out, p) = purify_step(0.7);
        assert_abs_diff_eq!(p, 0.68, epsilon = 1e-12);
        assert_abs_diff_eq!(f_out, 0.5 / 0.68, epsilon = 1e-12);
        // gain for all F in (0.5, 1)
        for i in 1..50 {
            let f = 0.5 + 0.01 * i as f64;
            let (f_out, p) = purify_step(f);
            assert!(f_out > f, "no gain at F={f}");
            assert!(p > 0.0 && p <= 1.0);
        }
    }

    #[test]
    fn qber_known_points() {
        assert_eq!(qber_from_fidelity(1.0), 0.0);
        assert_abs_diff_eq!(qber_from_fidelity(0.85), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(qber_from_fidelity(0.25), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn jitter_modes() {
        assert_eq!(jitter_swap_multiplier(0.0, 1e-9, JitterMode::Smooth), 1.0);
        assert_eq!(jitter_swap_multiplier(0.0, 1e-9, JitterMode::Hard), 1.0);
        assert_eq!(jitter_swap_multiplier(2e-9, 1e-9, JitterMode::Hard), 0.0);
        assert_abs_diff_eq!(
            jitter_swap_multiplier(1e-9, 1e-9, JitterMode::Smooth),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn p_gen_from_link_params() {
        let link = LinkParams {
            length_km: 50.0,
            attenuation_db_per_km: 0.2,
            attempt_rate_hz: 1000.0,
            f0_link: 0.95,
            extra_efficiency: 1.0,
        };
        assert_abs_diff_eq!(link.p_gen(), 0.1, epsilon = 1e-15);
    }
}
