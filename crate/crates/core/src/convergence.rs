//! FL convergence bound as a function of the participant set, and a toy
//! FedSGD harness on quadratic losses used to check the bound empirically.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phy::Selection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceParams {
    /// Smoothness (gradient Lipschitz) constant.
    pub mu: f64,
    /// Bound on the second moment of local gradients.
    pub delta: f64,
    /// Initial global loss `F(w0)`.
    pub f0: f64,
    /// Lower bound on the global loss.
    pub f_star: f64,
    /// Number of FL rounds.
    pub rounds: u32,
    /// Accuracy threshold the bound must not exceed.
    pub accuracy_eps: f64,
    pub fl_lr: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        ConvergenceParams {
            mu: 1.0,
            delta: 0.1,
            f0: 10.0,
            f_star: 0.0,
            rounds: 100,
            accuracy_eps: 0.35,
            fl_lr: 1.0,
        }
    }
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu, self.delta, self.f0, self.f_star, self.accuracy_eps, self.fl_lr]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("convergence", "all parameters must be finite"));
        }
        if self.mu <= 0.0 {
            return Err(Error::config("convergence.mu", "must be > 0"));
        }
        if self.delta < 0.0 {
            return Err(Error::config("convergence.delta", "must be >= 0"));
        }
        if self.f0 < self.f_star {
            return Err(Error::config("convergence.f0", "must be >= f_star"));
        }
        if self.rounds < 1 {
            return Err(Error::config("convergence.rounds", "must be >= 1"));
        }
        if !(self.fl_lr > 0.0 && self.fl_lr <= 1.0 / self.mu) {
            return Err(Error::config("convergence.fl_lr", "must lie in (0, 1/mu]"));
        }
        Ok(())
    }

    /// Optimality-gap term `2 mu (F(w0) - F*) / (rounds + 1)`.
    pub fn gap_term(&self) -> f64 {
        2.0 * self.mu * (self.f0 - self.f_star) / (f64::from(self.rounds) + 1.0)
    }
}

/// Bound on the average squared global gradient norm when `participants`
/// of `k` devices upload every round.
pub fn bound_for_count(params: &ConvergenceParams, k: usize, participants: usize) -> Result<f64> {
    if participants == 0 {
        return Err(Error::Domain("convergence bound undefined for an empty participant set".into()));
    }
    if participants > k {
        return Err(Error::Domain(format!("{participants} participants out of {k} devices")));
    }
    let a = participants as f64;
    let sum_x = a;
    let kf = k as f64;
    Ok(params.gap_term() + 2.0 * params.delta + 2.0 * params.delta * (kf - 2.0 * a) / (a * a) * sum_x)
}

pub fn bound_value(params: &ConvergenceParams, k: usize, selection: &Selection) -> Result<f64> {
    if selection.len() != k {
        return Err(Error::dim(k, selection.len()));
    }
    bound_for_count(params, k, selection.num_participants())
}

/// Smallest participant count whose bound meets the accuracy threshold, or
/// `None` when even full participation does not.
pub fn min_participants(params: &ConvergenceParams, k: usize) -> Option<usize> {
    (1..=k).find(|&n| bound_for_count(params, k, n).is_ok_and(|b| b <= params.accuracy_eps))
}

/// Synthetic FL task with per-device quadratic losses
/// `F_k(w) = 1/D_k * sum_i 0.5 * ||w - u_ki||^2`, which is 1-smooth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFlTask {
    pub dim: usize,
    /// Per device, its local samples.
    pub samples: Vec<Vec<Vec<f64>>>,
    pub init: Vec<f64>,
    /// Iterates are projected onto the ball of this center and radius.
    pub center: Vec<f64>,
    pub radius: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

impl ToyFlTask {
    /// Devices get heterogeneous optima of spread `spread`; `samples_per_device`
    /// noisy samples each. Equal data sizes.
    pub fn quadratic(k: usize, dim: usize, samples_per_device: usize, spread: f64, seed: u64) -> Self {
        assert!(k >= 1 && dim >= 1 && samples_per_device >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<Vec<Vec<f64>>> = (0..k)
            .map(|_| {
                let opt = gaussian_vec(&mut rng, dim, spread);
                (0..samples_per_device)
                    .map(|_| {
                        let noise = gaussian_vec(&mut rng, dim, 0.5 * spread);
                        opt.iter().zip(noise).map(|(o, n)| o + n).collect()
                    })
                    .collect()
            })
            .collect();
        let init = gaussian_vec(&mut rng, dim, 3.0 * spread);
        Self::from_samples(samples, init)
    }

    /// Builds the task around explicit samples; the projection ball is the
    /// smallest one centred at the global optimum covering `init` and every
    /// local optimum.
    pub fn from_samples(samples: Vec<Vec<Vec<f64>>>, init: Vec<f64>) -> Self {
        let dim = init.len();
        let mut task = ToyFlTask {
            dim,
            samples,
            init,
            center: vec![0.0; dim],
            radius: 0.0,
        };
        task.center = task.global_optimum();
        let optima = task.local_optima();
        task.radius = optima
            .iter()
            .map(|o| sq_dist(o, &task.center).sqrt())
            .fold(sq_dist(&task.init, &task.center).sqrt(), f64::max);
        task
    }

    pub fn num_devices(&self) -> usize {
        self.samples.len()
    }

    fn data_sizes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.len() as f64).collect()
    }

    /// Sample mean of each device, i.e. the minimizer of its local loss.
    pub fn local_optima(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| {
                let mut m = vec![0.0; self.dim];
                for u in s {
                    for (a, b) in m.iter_mut().zip(u) {
                        *a += b;
                    }
                }
                m.iter_mut().for_each(|a| *a /= s.len() as f64);
                m
            })
            .collect()
    }

    pub fn global_optimum(&self) -> Vec<f64> {
        let sizes = self.data_sizes();
        let total: f64 = sizes.iter().sum();
        let mut w = vec![0.0; self.dim];
        for (o, d) in self.local_optima().iter().zip(&sizes) {
            for (a, b) in w.iter_mut().zip(o) {
                *a += d / total * b;
            }
        }
        w
    }

    pub fn local_loss(&self, k: usize, w: &[f64]) -> f64 {
        let s = &self.samples[k];
        s.iter().map(|u| 0.5 * sq_dist(w, u)).sum::<f64>() / s.len() as f64
    }

    /// Full local gradient `1/D_k * sum_i (w - u_ki)`.
    pub fn local_gradient(&self, k: usize, w: &[f64]) -> Vec<f64> {
        let s = &self.samples[k];
        let mut g = vec![0.0; self.dim];
        for u in s {
            for ((gi, wi), ui) in g.iter_mut().zip(w).zip(u) {
                *gi += wi - ui;
            }
        }
        g.iter_mut().for_each(|gi| *gi /= s.len() as f64);
        g
    }

    /// Data-weighted global loss.
    pub fn global_loss(&self, w: &[f64]) -> f64 {
        let sizes = self.data_sizes();
        let total: f64 = sizes.iter().sum();
        (0..self.num_devices())
            .map(|k| sizes[k] / total * self.local_loss(k, w))
            .sum()
    }

    pub fn global_gradient(&self, w: &[f64]) -> Vec<f64> {
        let sizes = self.data_sizes();
        let total: f64 = sizes.iter().sum();
        let mut g = vec![0.0; self.dim];
        for k in 0..self.num_devices() {
            for (a, b) in g.iter_mut().zip(self.local_gradient(k, w)) {
                *a += sizes[k] / total * b;
            }
        }
        g
    }

    /// `max_k sup_{w in ball} ||grad F_k(w)||^2`, attained on the ball boundary
    /// farthest from the local optimum.
    pub fn gradient_bound(&self) -> f64 {
        self.local_optima()
            .iter()
            .map(|o| (sq_dist(o, &self.center).sqrt() + self.radius).powi(2))
            .fold(0.0, f64::max)
    }

    /// Closed-form constants for this task: mu = 1, delta from
    /// [`gradient_bound`](Self::gradient_bound), exact `F(w0)` and `F*`.
    pub fn convergence_params(&self, rounds: u32, fl_lr: f64, accuracy_eps: f64) -> ConvergenceParams {
        ConvergenceParams {
            mu: 1.0,
            delta: self.gradient_bound(),
            f0: self.global_loss(&self.init),
            f_star: self.global_loss(&self.global_optimum()),
            rounds,
            accuracy_eps,
            fl_lr,
        }
    }

    fn project(&self, w: &mut [f64]) {
        let d = sq_dist(w, &self.center).sqrt();
        if d > self.radius {
            let s = self.radius / d;
            for (wi, ci) in w.iter_mut().zip(&self.center) {
                *wi = ci + (*wi - ci) * s;
            }
        }
    }
}

/// How the participant set is chosen each round.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionSchedule {
    Fixed(Selection),
    /// A fresh uniformly random subset of `size` devices every round.
    RandomFixedSize { size: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyFlTrace {
    /// `||grad F(w^t)||^2` for t = 0..=rounds.
    pub grad_sq_norms: Vec<f64>,
    pub losses: Vec<f64>,
    /// `||grad F(w^t) - g^t||^2` where `g^t` is the participant-averaged gradient.
    pub chi_sq_norms: Vec<f64>,
}

impl ToyFlTrace {
    pub fn average_grad_sq_norm(&self) -> f64 {
        self.grad_sq_norms.iter().sum::<f64>() / self.grad_sq_norms.len() as f64
    }
}

/// Runs `params.rounds` FedSGD rounds: broadcast, one local gradient step per
/// participant, and averaging of the participants' models.
pub fn run_toy_fl(task: &ToyFlTask, params: &ConvergenceParams, schedule: &SelectionSchedule) -> Result<ToyFlTrace> {
    if !(params.fl_lr > 0.0 && params.fl_lr <= 1.0 / params.mu) {
        return Err(Error::config("convergence.fl_lr", "must lie in (0, 1/mu]"));
    }
    let k = task.num_devices();
    let mut rng = match schedule {
        SelectionSchedule::RandomFixedSize { size, seed } => {
            if *size == 0 || *size > k {
                return Err(Error::Domain(format!("cannot select {size} of {k} devices")));
            }
            Some(ChaCha8Rng::seed_from_u64(*seed))
        }
        SelectionSchedule::Fixed(sel) => {
            if sel.len() != k {
                return Err(Error::dim(k, sel.len()));
            }
            if sel.num_participants() == 0 {
                return Err(Error::Domain("empty participant set".into()));
            }
            None
        }
    };

    let mut w = task.init.clone();
    task.project(&mut w);
    let mut trace = ToyFlTrace {
        grad_sq_norms: Vec::with_capacity(params.rounds as usize + 1),
        losses: Vec::with_capacity(params.rounds as usize + 1),
        chi_sq_norms: Vec::with_capacity(params.rounds as usize),
    };
    let record = |w: &[f64], trace: &mut ToyFlTrace| {
        let g = task.global_gradient(w);
        trace.grad_sq_norms.push(g.iter().map(|x| x * x).sum());
        trace.losses.push(task.global_loss(w));
    };
    record(&w, &mut trace);

    for _ in 0..params.rounds {
        let participants: Vec<usize> = match (schedule, rng.as_mut()) {
            (SelectionSchedule::Fixed(sel), _) => sel.participants().collect(),
            (SelectionSchedule::RandomFixedSize { size, .. }, Some(r)) => {
                let mut idx = sample(r, k, *size).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => unreachable!(),
        };
        let full = task.global_gradient(&w);
        let mut next = vec![0.0; task.dim];
        let mut g_avg = vec![0.0; task.dim];
        for &p in &participants {
            let g = task.local_gradient(p, &w);
            for i in 0..task.dim {
                next[i] += w[i] - params.fl_lr * g[i];
                g_avg[i] += g[i];
            }
        }
        let n = participants.len() as f64;
        next.iter_mut().for_each(|x| *x /= n);
        g_avg.iter_mut().for_each(|x| *x /= n);
        trace
            .chi_sq_norms
            .push(full.iter().zip(&g_avg).map(|(a, b)| (a - b).powi(2)).sum());
        task.project(&mut next);
        w = next;
        record(&w, &mut trace);
    }
    Ok(trace)
}
