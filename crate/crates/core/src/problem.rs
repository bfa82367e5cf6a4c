//! Latency minimization problem: constraint slacks, violation penalties and
//! the min-max latency objective.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, RisConfig};
use crate::convergence::{bound_value, ConvergenceParams};
use crate::error::{Error, Result};
use crate::phy::{BandwidthAlloc, DevicePool, EvalReport, NoisePowers, Selection, Uplink};

/// Rounding allowance on the bandwidth budget; normalized allocations sum to
/// one only up to floating-point error.
pub const BANDWIDTH_TOL: f64 = 1e-9;

/// Penalty `base + scale * magnitude`, charged only when violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyTerm {
    pub base: f64,
    pub scale: f64,
}

impl PenaltyTerm {
    pub fn charge(&self, magnitude: f64) -> f64 {
        self.base + self.scale * magnitude
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyWeights {
    pub bandwidth: PenaltyTerm,
    pub accuracy: PenaltyTerm,
    pub secrecy: PenaltyTerm,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        let t = PenaltyTerm {
            base: 10.0,
            scale: 100.0,
        };
        PenaltyWeights {
            bandwidth: t,
            accuracy: t,
            secrecy: t,
        }
    }
}

impl PenaltyWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("penalty.bandwidth", self.bandwidth),
            ("penalty.accuracy", self.accuracy),
            ("penalty.secrecy", self.secrecy),
        ] {
            if !(t.base >= 0.0 && t.scale >= 0.0 && t.base.is_finite() && t.scale.is_finite()) {
                return Err(Error::config(name, "base and scale must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub selection: Selection,
    pub alloc: BandwidthAlloc,
    pub ris: RisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub channels: ChannelRealization,
    pub pool: DevicePool,
    pub noise: NoisePowers,
    pub system_bandwidth_hz: f64,
    pub convergence: ConvergenceParams,
    /// Secrecy-rate floor per participant, bps.
    pub r_min_bps: f64,
    pub penalties: PenaltyWeights,
}

/// Signed slack per constraint; negative means violated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    /// `1 - sum(b)`.
    pub bandwidth: f64,
    /// `eps - bound`; `None` when nobody participates (bound undefined).
    pub accuracy: Option<f64>,
    /// `(device, R_s - R_min)` for each participant.
    pub secrecy: Vec<(usize, f64)>,
    pub nonneg_bandwidth: bool,
    pub phases_in_range: bool,
    pub binary_selection: bool,
}

impl Slacks {
    pub fn bandwidth_ok(&self) -> bool {
        self.bandwidth >= -BANDWIDTH_TOL
    }

    pub fn accuracy_ok(&self) -> bool {
        self.accuracy.is_some_and(|s| s >= 0.0)
    }

    pub fn secrecy_ok(&self) -> bool {
        self.secrecy.iter().all(|&(_, s)| s >= 0.0)
    }

    pub fn min_secrecy(&self) -> f64 {
        self.secrecy.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min)
    }

    pub fn feasible(&self) -> bool {
        self.bandwidth_ok()
            && self.accuracy_ok()
            && self.secrecy_ok()
            && self.nonneg_bandwidth
            && self.phases_in_range
            && self.binary_selection
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub slacks: Slacks,
    pub penalty: f64,
}

impl ProblemInstance {
    pub fn num_devices(&self) -> usize {
        self.channels.num_devices()
    }

    pub fn num_elements(&self) -> usize {
        self.channels.num_elements()
    }

    pub fn uplink<'a>(&'a self, decision: &'a Decision) -> Result<Uplink<'a>> {
        if (decision.alloc.system_bandwidth_hz - self.system_bandwidth_hz).abs() > 0.0 {
            return Err(Error::Domain("allocation bandwidth differs from the instance".into()));
        }
        Uplink::new(
            &decision.selection,
            &decision.alloc,
            &decision.ris,
            &self.channels,
            &self.pool,
            self.noise,
        )
    }

    fn slacks_from(&self, decision: &Decision, report: &EvalReport) -> Slacks {
        let k = self.num_devices();
        let accuracy = bound_value(&self.convergence, k, &decision.selection)
            .ok()
            .map(|b| self.convergence.accuracy_eps - b);
        Slacks {
            bandwidth: report.bandwidth_slack,
            accuracy,
            secrecy: report
                .participants
                .iter()
                .map(|p| (p.device, p.secrecy_rate - self.r_min_bps))
                .collect(),
            nonneg_bandwidth: decision
                .selection
                .participants()
                .all(|k| decision.alloc.shares[k] >= 0.0),
            phases_in_range: decision.ris.in_range(),
            binary_selection: true,
        }
    }

    pub fn check_feasibility(&self, decision: &Decision) -> Result<Slacks> {
        let report = self.uplink(decision)?.evaluate();
        Ok(self.slacks_from(decision, &report))
    }

    /// Sum of the active penalty terms. Violation magnitudes are the budget
    /// overshoot for bandwidth, the relative overshoot of the bound for
    /// accuracy (one when the bound is undefined), and the summed relative
    /// secrecy shortfall.
    pub fn penalty(&self, slacks: &Slacks) -> f64 {
        let w = &self.penalties;
        let mut total = 0.0;
        if !slacks.bandwidth_ok() {
            total += w.bandwidth.charge(-slacks.bandwidth);
        }
        match slacks.accuracy {
            Some(s) if s >= 0.0 => {}
            Some(s) => {
                total += w.accuracy.charge(-s / self.convergence.accuracy_eps.abs().max(f64::MIN_POSITIVE));
            }
            None => total += w.accuracy.charge(1.0),
        }
        if !slacks.secrecy_ok() {
            let shortfall: f64 = slacks
                .secrecy
                .iter()
                .filter(|&&(_, s)| s < 0.0)
                .map(|&(_, s)| -s / self.r_min_bps)
                .sum();
            total += w.secrecy.charge(shortfall);
        }
        total
    }

    pub fn objective(&self, decision: &Decision) -> Result<f64> {
        Ok(self.uplink(decision)?.evaluate().round_latency)
    }

    /// Report, slacks and penalty in one pass.
    pub fn evaluate(&self, decision: &Decision) -> Result<Evaluation> {
        let report = self.uplink(decision)?.evaluate();
        let slacks = self.slacks_from(decision, &report);
        let penalty = self.penalty(&slacks);
        Ok(Evaluation {
            report,
            slacks,
            penalty,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ComplexVec;
    use crate::phy::Device;
    use num_complex::Complex64;

    fn instance(k: usize) -> ProblemInstance {
        let bs: Vec<Complex64> = (0..k).map(|i| Complex64::new(1e-5 * (1.0 + i as f64), 0.0)).collect();
        let eve = vec![Complex64::new(1e-7, 0.0); k];
        ProblemInstance {
            channels: ChannelRealization {
                h_rb: ComplexVec(vec![]),
                h_kr: vec![ComplexVec(vec![]); k],
                h_kb: bs,
                h_re: ComplexVec(vec![]),
                h_ke: eve,
            },
            pool: DevicePool::uniform(Device::default(), k),
            noise: NoisePowers::default(),
            system_bandwidth_hz: 1e7,
            convergence: ConvergenceParams {
                accuracy_eps: 1e6,
                ..ConvergenceParams::default()
            },
            r_min_bps: 2e4,
            penalties: PenaltyWeights::default(),
        }
    }

    fn decision(shares: Vec<f64>) -> Decision {
        let k = shares.len();
        Decision {
            selection: Selection::all(k),
            alloc: BandwidthAlloc::new(shares, 1e7),
            ris: RisConfig::identity(0),
        }
    }

    #[test]
    fn overshoot_bandwidth_slack() {
        let inst = instance(2);
        let s = inst.check_feasibility(&decision(vec![0.6, 0.6])).unwrap();
        assert!((s.bandwidth + 0.2).abs() < 1e-12);
        assert!(!s.bandwidth_ok());
        assert!(s.accuracy_ok() && s.secrecy_ok());
        let p = inst.penalty(&s);
        assert!((p - (10.0 + 100.0 * 0.2)).abs() < 1e-9);
    }

    #[test]
    fn satisfied_means_zero_penalty() {
        let inst = instance(3);
        let s = inst.check_feasibility(&decision(vec![0.3, 0.3, 0.4])).unwrap();
        assert!(s.feasible());
        assert_eq!(inst.penalty(&s), 0.0);
    }

    #[test]
    fn all_jammers_violate_accuracy() {
        let inst = instance(3);
        let d = Decision {
            selection: Selection::none(3),
            alloc: BandwidthAlloc::new(vec![0.0; 3], 1e7),
            ris: RisConfig::identity(0),
        };
        let s = inst.check_feasibility(&d).unwrap();
        assert_eq!(s.accuracy, None);
        assert!(!s.feasible());
        assert!((inst.penalty(&s) - 110.0).abs() < 1e-12);
        assert!(inst.objective(&d).unwrap().is_infinite());
    }

    #[test]
    fn combined_violations_add_up() {
        let mut inst = instance(2);
        inst.convergence.accuracy_eps = 0.1;
        inst.r_min_bps = 1e12;
        let d = Decision {
            selection: Selection::from_participants(2, &[0]),
            alloc: BandwidthAlloc::new(vec![1.5, 0.0], 1e7),
            ris: RisConfig::identity(0),
        };
        let s = inst.check_feasibility(&d).unwrap();
        let ev = inst.evaluate(&d).unwrap();
        // hand computation
        let bound = 2.0 * 10.0 / 101.0 + 0.2 + 0.2 * (2.0 - 2.0) / 1.0;
        let acc_mag = (bound - 0.1) / 0.1;
        let rs = ev.report.participants[0].secrecy_rate;
        let sec_mag = (1e12 - rs) / 1e12;
        let expected = (10.0 + 100.0 * 0.5) + (10.0 + 100.0 * acc_mag) + (10.0 + 100.0 * sec_mag);
        assert!((inst.penalty(&s) - expected).abs() < 1e-9 * expected);
        assert_eq!(ev.penalty, inst.penalty(&s));
    }

    #[test]
    fn feasibility_does_not_mutate() {
        let inst = instance(2);
        let d = decision(vec![0.5, 0.5]);
        let before = d.clone();
        let _ = inst.check_feasibility(&d).unwrap();
        assert_eq!(d, before);
    }

    #[test]
    fn objective_is_round_latency() {
        let inst = instance(2);
        let d = decision(vec![0.5, 0.5]);
        let ev = inst.evaluate(&d).unwrap();
        assert_eq!(inst.objective(&d).unwrap(), ev.report.round_latency);
    }

    #[test]
    fn rounding_overshoot_is_tolerated() {
        let inst = instance(3);
        let s = inst.check_feasibility(&decision(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0 + 1e-15])).unwrap();
        assert!(s.bandwidth_ok());
    }
}
