//! Exhaustive solver for tiny instances and the FBA, RDS and random-phase
//! baselines.
//!
//! The exhaustive grid is the product of all selections, a uniform phase
//! grid per element, and a lattice on the bandwidth simplex with `sum(b) = 1`.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::RisConfig;
use crate::convergence::min_participants;
use crate::error::{Error, Result};
use crate::phy::{BandwidthAlloc, Selection};
use crate::problem::{Decision, ProblemInstance};

pub const CERTIFICATE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub phase_levels: usize,
    /// Shares are multiples of `1 / bandwidth_steps`.
    pub bandwidth_steps: usize,
    pub max_devices: usize,
    pub max_elements: usize,
    /// Largest number of decisions the solver will evaluate.
    pub budget: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            phase_levels: 16,
            // divisible by 1..=4, so the equal split lies on the lattice
            bandwidth_steps: 12,
            max_devices: 4,
            max_elements: 3,
            budget: 50_000_000,
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.phase_levels == 0 {
            return Err(Error::config("grid.phase_levels", "must be >= 1"));
        }
        if self.bandwidth_steps == 0 {
            return Err(Error::config("grid.bandwidth_steps", "must be >= 1"));
        }
        Ok(())
    }

    pub fn phase(&self, level: usize) -> f64 {
        TAU * level as f64 / self.phase_levels as f64
    }

    /// Decisions in the full grid for `k` devices and `m` elements.
    pub fn count(&self, k: usize, m: usize) -> u128 {
        let phases = (self.phase_levels as u128).saturating_pow(m as u32);
        let shares: u128 = 1 + (1..=k)
            .map(|a| binomial(k, a) * binomial(self.bandwidth_steps - 1, a - 1))
            .sum::<u128>();
        phases.saturating_mul(shares)
    }

    fn check(&self, k: usize, m: usize) -> Result<()> {
        self.validate()?;
        if k > self.max_devices {
            return Err(Error::Domain(format!("{k} devices exceeds the cap of {}", self.max_devices)));
        }
        if m > self.max_elements {
            return Err(Error::Domain(format!("{m} elements exceeds the cap of {}", self.max_elements)));
        }
        let required = self.count(k, m);
        if required > self.budget as u128 {
            return Err(Error::Budget {
                required,
                budget: self.budget as u128,
            });
        }
        Ok(())
    }

    /// Every phase vector on the grid, in lexicographic level order.
    fn phase_vectors(&self, m: usize) -> Vec<RisConfig> {
        let total = self.phase_levels.pow(m as u32);
        (0..total)
            .map(|mut idx| {
                let mut levels = vec![0; m];
                for slot in levels.iter_mut().rev() {
                    *slot = idx % self.phase_levels;
                    idx /= self.phase_levels;
                }
                RisConfig::new(levels.into_iter().map(|l| self.phase(l)).collect()).expect("grid phase in range")
            })
            .collect()
    }

    /// Lattice shares for `selection`, summing to one, in lexicographic order.
    fn share_vectors(&self, selection: &Selection) -> Vec<Vec<f64>> {
        let parts: Vec<usize> = selection.participants().collect();
        let k = selection.len();
        if parts.is_empty() {
            return vec![vec![0.0; k]];
        }
        let n = self.bandwidth_steps;
        let mut out = Vec::new();
        let mut counts = vec![0usize; parts.len()];
        fn rec(i: usize, left: usize, counts: &mut [usize], out: &mut Vec<Vec<usize>>) {
            let rest = counts.len() - i - 1;
            if rest == 0 {
                counts[i] = left;
                out.push(counts.to_vec());
                return;
            }
            for c in 1..=left.saturating_sub(rest) {
                counts[i] = c;
                rec(i + 1, left - c, counts, out);
            }
        }
        if parts.len() <= n {
            let mut raw = Vec::new();
            rec(0, n, &mut counts, &mut raw);
            for c in raw {
                let mut shares = vec![0.0; k];
                for (&p, &ci) in parts.iter().zip(&c) {
                    shares[p] = ci as f64 / n as f64;
                }
                out.push(shares);
            }
        }
        out
    }
}

/// All selections of `k` devices in lexicographic order of `x` (false < true).
fn selections(k: usize) -> Vec<Selection> {
    (0..1usize << k)
        .map(|bits| Selection::new((0..k).map(|i| bits >> (k - 1 - i) & 1 == 1).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub decision: Decision,
    pub latency: f64,
    pub evaluated: u64,
    pub feasible: u64,
}

#[derive(Debug, Clone)]
enum PhaseChoice {
    Grid,
    Fixed(RisConfig),
}

#[derive(Debug, Clone, Copy)]
enum ShareChoice {
    Lattice,
    Equal,
}

struct Partial {
    best: Option<(f64, Decision)>,
    evaluated: u64,
    feasible: u64,
}

fn search(instance: &ProblemInstance, grid: &GridSpec, phases: PhaseChoice, shares: ShareChoice) -> Result<Option<OracleSolution>> {
    let k = instance.num_devices();
    let b = instance.system_bandwidth_hz;
    let phase_set = match phases {
        PhaseChoice::Grid => grid.phase_vectors(instance.num_elements()),
        PhaseChoice::Fixed(r) => vec![r],
    };
    let per_selection: Vec<Partial> = selections(k)
        .into_par_iter()
        .map(|sel| -> Result<Partial> {
            let share_set = match shares {
                ShareChoice::Lattice => grid.share_vectors(&sel),
                ShareChoice::Equal => vec![BandwidthAlloc::equal_split(&sel, b).shares],
            };
            let mut part = Partial {
                best: None,
                evaluated: 0,
                feasible: 0,
            };
            for s in &share_set {
                for ris in &phase_set {
                    let d = Decision {
                        selection: sel.clone(),
                        alloc: BandwidthAlloc::new(s.clone(), b),
                        ris: ris.clone(),
                    };
                    let ev = instance.evaluate(&d)?;
                    part.evaluated += 1;
                    if !ev.slacks.feasible() {
                        continue;
                    }
                    part.feasible += 1;
                    let lat = ev.report.round_latency;
                    if part.best.as_ref().map_or(true, |(l, _)| lat < *l) {
                        part.best = Some((lat, d));
                    }
                }
            }
            Ok(part)
        })
        .collect::<Result<_>>()?;
    let mut evaluated = 0;
    let mut feasible = 0;
    let mut best: Option<(f64, Decision)> = None;
    for p in per_selection {
        evaluated += p.evaluated;
        feasible += p.feasible;
        if let Some((l, d)) = p.best {
            if best.as_ref().map_or(true, |(bl, _)| l < *bl) {
                best = Some((l, d));
            }
        }
    }
    Ok(best.map(|(latency, decision)| OracleSolution {
        decision,
        latency,
        evaluated,
        feasible,
    }))
}

/// Feasible minimizer of the round latency over the full grid, or `None`
/// when no grid point is feasible. Ties go to the lexicographically smallest
/// `(x, b, theta)`.
pub fn exhaustive_solve(instance: &ProblemInstance, grid: &GridSpec) -> Result<Option<OracleSolution>> {
    grid.check(instance.num_devices(), instance.num_elements())?;
    search(instance, grid, PhaseChoice::Grid, ShareChoice::Lattice)
}

/// Fixed bandwidth: equal split over participants, with selection and phases
/// searched on the grid.
pub fn fba_solve(instance: &ProblemInstance, grid: &GridSpec) -> Result<Option<OracleSolution>> {
    grid.check(instance.num_devices(), instance.num_elements())?;
    search(instance, grid, PhaseChoice::Grid, ShareChoice::Equal)
}

/// Phases drawn uniformly, continuous on `[0, 2*pi)` or from `levels` grid
/// levels.
pub fn random_phases<R: Rng + ?Sized>(m: usize, levels: Option<usize>, rng: &mut R) -> RisConfig {
    match levels {
        None => RisConfig::random(m, rng),
        Some(l) => RisConfig::new((0..m).map(|_| TAU * rng.gen_range(0..l) as f64 / l as f64).collect())
            .expect("grid phase in range"),
    }
}

/// Random phases, with selection and bandwidth searched on the grid.
pub fn random_phase_solve<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    grid: &GridSpec,
    phase_levels: Option<usize>,
    rng: &mut R,
) -> Result<(RisConfig, Option<OracleSolution>)> {
    grid.check(instance.num_devices(), instance.num_elements())?;
    let ris = random_phases(instance.num_elements(), phase_levels, rng);
    let sol = search(instance, grid, PhaseChoice::Fixed(ris.clone()), ShareChoice::Lattice)?;
    Ok((ris, sol))
}

/// Random participant set of uniform size between the smallest count that
/// meets the accuracy bound and `K`; the rest jam. Equal bandwidth split and
/// random phases.
pub fn rds_solve<R: Rng + ?Sized>(instance: &ProblemInstance, phase_levels: Option<usize>, rng: &mut R) -> Decision {
    let k = instance.num_devices();
    let lo = min_participants(&instance.convergence, k).unwrap_or(k).max(1);
    let size = rng.gen_range(lo..=k);
    let chosen: Vec<usize> = sample(rng, k, size).into_vec();
    let selection = Selection::from_participants(k, &chosen);
    let alloc = BandwidthAlloc::equal_split(&selection, instance.system_bandwidth_hz);
    let ris = random_phases(instance.num_elements(), phase_levels, rng);
    Decision { selection, alloc, ris }
}

/// SHA-256 of the canonical JSON form of the instance.
pub fn instance_hash(instance: &ProblemInstance) -> Result<String> {
    let bytes = serde_json::to_vec(instance)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateOptimum {
    pub latency: f64,
    pub selection: Vec<bool>,
    pub shares: Vec<f64>,
    pub phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCertificate {
    pub schema: u32,
    pub instance_hash: String,
    pub grid: GridSpec,
    pub evaluated: u64,
    pub feasible: u64,
    /// `None` when the instance is infeasible on the grid.
    pub optimum: Option<CertificateOptimum>,
}

impl OracleCertificate {
    pub fn new(instance: &ProblemInstance, grid: &GridSpec, solution: Option<&OracleSolution>) -> Result<Self> {
        Ok(OracleCertificate {
            schema: CERTIFICATE_SCHEMA,
            instance_hash: instance_hash(instance)?,
            grid: *grid,
            evaluated: solution.map_or(grid.count(instance.num_devices(), instance.num_elements()) as u64, |s| s.evaluated),
            feasible: solution.map_or(0, |s| s.feasible),
            optimum: solution.map(|s| CertificateOptimum {
                latency: s.latency,
                selection: s.decision.selection.x.clone(),
                shares: s.decision.alloc.shares.clone(),
                phases: s.decision.ris.phases().to_vec(),
            }),
        })
    }
}
