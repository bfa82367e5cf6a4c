//! The latency-minimization problem as an episodic MDP.
//!
//! One step is one FL round on one channel realization. The state holds the
//! bandwidth used in the previous round and the effective BS gains of all
//! devices under the previous RIS configuration; the action is a flat vector
//! in `[-1, 1]^(2K + M)` decoded into selection, bandwidth and phases.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, LinkParamSet, RisConfig};
use crate::error::{Error, Result};
use crate::phy::{local_latency, BandwidthAlloc, Selection};
use crate::problem::{Decision, Evaluation, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub episode_len: usize,
    /// Draw a new channel realization after every step and on reset.
    pub redraw_channels: bool,
    /// Map bandwidth outputs through the softplus normalizer so that the
    /// shares always sum to one; when off, shares are `(raw + 1) / 2` and may
    /// overshoot the budget.
    pub normalize_bandwidth: bool,
    /// Latencies are clamped to this multiple of the reference latency.
    pub latency_cap_factor: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            episode_len: 200,
            redraw_channels: true,
            normalize_bandwidth: true,
            latency_cap_factor: 10.0,
        }
    }
}

/// Action entries that are overridden instead of taken from the agent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask {
    /// Equal split among participants.
    pub fixed_bandwidth: bool,
    /// Phases drawn uniformly at random every step.
    pub random_phase: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionLayout {
    pub num_devices: usize,
    pub num_elements: usize,
}

impl ActionLayout {
    pub fn dim(&self) -> usize {
        2 * self.num_devices + self.num_elements
    }

    pub fn state_dim(&self) -> usize {
        2 * self.num_devices + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedAction {
    pub decision: Decision,
    /// Entries that were outside `[-1, 1]` (or NaN) and got clipped.
    pub clipped: usize,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Decodes a raw action. `phases` replaces the phase entries when given.
pub fn decode_action(
    raw: &[f64],
    layout: ActionLayout,
    system_bandwidth_hz: f64,
    normalize_bandwidth: bool,
    fixed_bandwidth: bool,
    phases: Option<RisConfig>,
) -> Result<DecodedAction> {
    if raw.len() != layout.dim() {
        return Err(Error::dim(layout.dim(), raw.len()));
    }
    let mut clipped = 0;
    let a: Vec<f64> = raw
        .iter()
        .map(|&v| {
            if v.is_nan() {
                clipped += 1;
                0.0
            } else if !(-1.0..=1.0).contains(&v) {
                clipped += 1;
                v.clamp(-1.0, 1.0)
            } else {
                v
            }
        })
        .collect();
    let k = layout.num_devices;
    let selection = Selection::new(a[..k].iter().map(|&v| v > 0.0).collect());
    let bw_raw = &a[k..2 * k];
    let alloc = if fixed_bandwidth {
        BandwidthAlloc::equal_split(&selection, system_bandwidth_hz)
    } else if normalize_bandwidth {
        let total: f64 = selection.participants().map(|i| softplus(bw_raw[i])).sum();
        let shares = (0..k)
            .map(|i| {
                if selection.is_participant(i) {
                    softplus(bw_raw[i]) / total
                } else {
                    0.0
                }
            })
            .collect();
        BandwidthAlloc::new(shares, system_bandwidth_hz)
    } else {
        let shares = (0..k)
            .map(|i| {
                if selection.is_participant(i) {
                    (bw_raw[i] + 1.0) / 2.0
                } else {
                    0.0
                }
            })
            .collect();
        BandwidthAlloc::new(shares, system_bandwidth_hz)
    };
    let ris = match phases {
        Some(p) => {
            if p.len() != layout.num_elements {
                return Err(Error::dim(layout.num_elements, p.len()));
            }
            p
        }
        None => RisConfig::new(a[2 * k..].iter().map(|&v| (PI * (v + 1.0)).min(2.0 * PI)).collect())?,
    };
    Ok(DecodedAction {
        decision: Decision {
            selection,
            alloc,
            ris,
        },
        clipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True terminal state; bootstrapping stops here. Never set by the time limit.
    pub terminal: bool,
    /// The episode ended after this step (time limit).
    pub done: bool,
}

/// Diagnostics of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub decision: Decision,
    pub evaluation: Evaluation,
    /// Latency used in the reward, after clamping.
    pub latency: f64,
    pub clipped: usize,
}

#[derive(Debug, Clone)]
pub struct RisFlEnv {
    instance: ProblemInstance,
    links: LinkParamSet,
    cfg: EnvConfig,
    mask: ActionMask,
    layout: ActionLayout,
    gain_scale: f64,
    latency_cap: f64,
    prev_ris: RisConfig,
    prev_total_bandwidth: f64,
    steps: usize,
    state: Vec<f64>,
}

impl RisFlEnv {
    /// `instance.channels` is the initial realization; `links` drives redraws.
    pub fn new(instance: ProblemInstance, links: LinkParamSet, cfg: EnvConfig, mask: ActionMask) -> Result<Self> {
        let k = instance.num_devices();
        let m = instance.num_elements();
        if links.devices.len() != k {
            return Err(Error::dim(k, links.devices.len()));
        }
        if cfg.episode_len == 0 {
            return Err(Error::config("env.episode_len", "must be >= 1"));
        }
        let layout = ActionLayout {
            num_devices: k,
            num_elements: m,
        };
        // RMS effective gain under random phases, from large-scale gains only.
        let mean_power = links
            .devices
            .iter()
            .map(|d| d.to_bs.large_scale_gain() + m as f64 * links.rb.large_scale_gain() * d.to_ris.large_scale_gain())
            .sum::<f64>()
            / k as f64;
        let reference = instance
            .pool
            .devices
            .iter()
            .map(|d| local_latency(d) + d.model_size_bits * k as f64 / instance.system_bandwidth_hz)
            .fold(0.0, f64::max);
        let mut env = RisFlEnv {
            instance,
            links,
            cfg,
            mask,
            layout,
            gain_scale: 1.0 / mean_power.sqrt(),
            latency_cap: cfg.latency_cap_factor * reference,
            prev_ris: RisConfig::identity(m),
            prev_total_bandwidth: 0.0,
            steps: 0,
            state: Vec::new(),
        };
        env.state = env.observe()?;
        Ok(env)
    }

    pub fn layout(&self) -> ActionLayout {
        self.layout
    }

    pub fn state_dim(&self) -> usize {
        self.layout.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn mask(&self) -> ActionMask {
        self.mask
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }

    pub fn instance_mut(&mut self) -> &mut ProblemInstance {
        &mut self.instance
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn latency_cap(&self) -> f64 {
        self.latency_cap
    }

    pub fn gain_scale(&self) -> f64 {
        self.gain_scale
    }

    fn observe(&self) -> Result<Vec<f64>> {
        let mut s = Vec::with_capacity(self.layout.state_dim());
        s.push(self.prev_total_bandwidth);
        for k in 0..self.layout.num_devices {
            let g = self.instance.channels.gain_to_bs(k, &self.prev_ris)? * self.gain_scale;
            s.push(g.re);
            s.push(g.im);
        }
        Ok(s)
    }

    fn redraw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.instance.channels = ChannelRealization::draw(&self.links, self.layout.num_elements, rng)?;
        Ok(())
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        if self.cfg.redraw_channels {
            self.redraw(rng)?;
        }
        self.prev_ris = RisConfig::identity(self.layout.num_elements);
        self.prev_total_bandwidth = 0.0;
        self.steps = 0;
        self.state = self.observe()?;
        Ok(self.state.clone())
    }

    /// Decodes `raw`, applying the action mask.
    pub fn decode<R: Rng + ?Sized>(&self, raw: &[f64], rng: &mut R) -> Result<DecodedAction> {
        let phases = self
            .mask
            .random_phase
            .then(|| RisConfig::random(self.layout.num_elements, rng));
        decode_action(
            raw,
            self.layout,
            self.instance.system_bandwidth_hz,
            self.cfg.normalize_bandwidth,
            self.mask.fixed_bandwidth,
            phases,
        )
    }

    /// Reward of a decision on the current channels.
    pub fn score(&self, decision: &Decision) -> Result<(f64, Evaluation, f64)> {
        let evaluation = self.instance.evaluate(decision)?;
        let latency = evaluation.report.round_latency.min(self.latency_cap);
        let reward = -latency - evaluation.penalty;
        Ok((reward, evaluation, latency))
    }

    pub fn step<R: Rng + ?Sized>(&mut self, raw: &[f64], rng: &mut R) -> Result<(Transition, StepInfo)> {
        let decoded = self.decode(raw, rng)?;
        let action = raw.iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }).collect();
        self.advance(decoded.decision, action, decoded.clipped, rng)
    }

    /// Steps with a decision chosen outside the action space; the recorded
    /// action is empty.
    pub fn step_decision<R: Rng + ?Sized>(&mut self, decision: Decision, rng: &mut R) -> Result<(Transition, StepInfo)> {
        self.advance(decision, Vec::new(), 0, rng)
    }

    fn advance<R: Rng + ?Sized>(
        &mut self,
        decision: Decision,
        action: Vec<f64>,
        clipped: usize,
        rng: &mut R,
    ) -> Result<(Transition, StepInfo)> {
        let (reward, evaluation, latency) = self.score(&decision)?;
        let state = std::mem::take(&mut self.state);
        if self.cfg.redraw_channels {
            self.redraw(rng)?;
        }
        self.prev_total_bandwidth = decision.alloc.total(&decision.selection);
        self.prev_ris = decision.ris.clone();
        self.steps += 1;
        self.state = self.observe()?;
        let transition = Transition {
            state,
            action,
            reward,
            next_state: self.state.clone(),
            terminal: false,
            done: self.steps >= self.cfg.episode_len,
        };
        Ok((
            transition,
            StepInfo {
                decision,
                evaluation,
                latency,
                clipped,
            },
        ))
    }
}
