//! Empirical check of the convergence bound on toy quadratic FedSGD tasks.

use rand::seq::index::sample;
use serde::Serialize;

use super::runner::{stream_rng, Stream};
use crate::convergence::{bound_for_count, run_toy_fl, SelectionSchedule, ToyFlTask};
use crate::error::Result;
use crate::phy::Selection;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSuite {
    pub seeds: u64,
    pub rounds: u32,
    pub num_devices: usize,
    pub dim: usize,
    pub samples_per_device: usize,
    pub spread: f64,
}

impl Default for BoundSuite {
    fn default() -> Self {
        BoundSuite {
            seeds: 50,
            rounds: 100,
            num_devices: 5,
            dim: 4,
            samples_per_device: 20,
            spread: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCase {
    pub seed: u64,
    pub participants: usize,
    /// Average of `||grad F(w^t)||^2` over the run.
    pub measured: f64,
    pub bound: f64,
}

/// Relative slack for rounding: with full participation and step `1/mu` the
/// quadratic task meets the bound with equality.
pub const BOUND_RTOL: f64 = 1e-9;

impl BoundCase {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound * (1.0 + BOUND_RTOL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub cases: Vec<BoundCase>,
}

impl BoundReport {
    pub fn passed(&self) -> usize {
        self.cases.iter().filter(|c| c.holds()).count()
    }

    pub fn all_hold(&self) -> bool {
        self.passed() == self.cases.len()
    }
}

/// Participant counts 1, ceil(K/2) and K for every seed; the participant set
/// is a seeded random subset held fixed over the run.
pub fn verify_bound(suite: &BoundSuite) -> Result<BoundReport> {
    let k = suite.num_devices;
    let mut sizes = vec![1, k.div_ceil(2), k];
    sizes.dedup();
    let mut cases = Vec::new();
    for seed in 0..suite.seeds {
        let task = ToyFlTask::quadratic(k, suite.dim, suite.samples_per_device, suite.spread, seed);
        let params = task.convergence_params(suite.rounds, 1.0, 1.0);
        let mut rng = stream_rng(seed, Stream::Scenario);
        for &n in &sizes {
            let chosen = sample(&mut rng, k, n).into_vec();
            let sel = Selection::from_participants(k, &chosen);
            let trace = run_toy_fl(&task, &params, &SelectionSchedule::Fixed(sel))?;
            cases.push(BoundCase {
                seed,
                participants: n,
                measured: trace.average_grad_sq_norm(),
                bound: bound_for_count(&params, k, n)?,
            });
        }
    }
    Ok(BoundReport { cases })
}
