//! TD3 and DDPG agents over the [`nn`](crate::nn) substrate.
//!
//! TD3 keeps twin critics and takes the minimum of their target estimates,
//! smooths the target action with clipped Gaussian noise, and updates the
//! actor (and all target networks) only every `policy_delay` critic updates.
//! DDPG uses a single critic, no smoothing and no delay.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{RisFlEnv, StepInfo, Transition};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Direction, Matrix, Mlp, Optimizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Td3,
    Ddpg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient steps: descent for the critics, ascent for the actor.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Td3Config {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Std of the Gaussian exploration noise added to actor outputs.
    pub explore_noise: f64,
    /// Std of the target policy smoothing noise.
    pub target_noise: f64,
    /// Clip bound of the smoothing noise.
    pub noise_clip: f64,
    pub policy_delay: u32,
    /// Rewards are multiplied by this before entering the critic targets.
    pub reward_scale: f64,
    /// Uniform random actions for this many initial steps.
    pub warmup_steps: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
}

impl Default for Td3Config {
    fn default() -> Self {
        Td3Config {
            actor_lr: 1e-4,
            critic_lr: 5e-4,
            gamma: 0.99,
            tau: 0.001,
            batch_size: 128,
            buffer_capacity: 10_000,
            explore_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            reward_scale: 1.0,
            warmup_steps: 1000,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![512, 512],
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("agent.{name}"), format!("must be finite and > 0, got {v}")))
            }
        };
        pos("actor_lr", self.actor_lr)?;
        pos("critic_lr", self.critic_lr)?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("agent.gamma", "must lie in (0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("agent.tau", "must lie in (0, 1]"));
        }
        pos("noise_clip", self.noise_clip)?;
        pos("reward_scale", self.reward_scale)?;
        if !(self.explore_noise >= 0.0 && self.target_noise >= 0.0) {
            return Err(Error::config("agent.explore_noise", "noise stds must be >= 0"));
        }
        if self.policy_delay < 1 {
            return Err(Error::config("agent.policy_delay", "must be >= 1"));
        }
        if self.batch_size < 1 || self.buffer_capacity < self.batch_size {
            return Err(Error::config("agent.batch_size", "must be >= 1 and <= buffer_capacity"));
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return Err(Error::config("agent.hidden", "layer widths must be >= 1"));
        }
        Ok(())
    }
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    terminals: Vec<bool>,
    len: usize,
    head: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        let first = ts.first().ok_or_else(|| Error::Domain("empty batch".into()))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let flat = |f: &dyn Fn(&Transition) -> &[f64], d: usize| -> Result<Matrix> {
            Matrix::from_vec(ts.len(), d, ts.iter().flat_map(|t| f(t).iter().copied()).collect())
        };
        Ok(Batch {
            states: flat(&|t| &t.state, sd)?,
            actions: flat(&|t| &t.action, ad)?,
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_states: flat(&|t| &t.next_state, sd)?,
            terminals: ts.iter().map(|t| t.terminal).collect(),
        })
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            state_dim,
            action_dim,
            states: vec![0.0; capacity * state_dim],
            actions: vec![0.0; capacity * action_dim],
            rewards: vec![0.0; capacity],
            next_states: vec![0.0; capacity * state_dim],
            terminals: vec![false; capacity],
            len: 0,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
            return Err(Error::dim(self.state_dim, t.state.len()));
        }
        if t.action.len() != self.action_dim {
            return Err(Error::dim(self.action_dim, t.action.len()));
        }
        let i = self.head;
        let (sd, ad) = (self.state_dim, self.action_dim);
        self.states[i * sd..(i + 1) * sd].copy_from_slice(&t.state);
        self.actions[i * ad..(i + 1) * ad].copy_from_slice(&t.action);
        self.next_states[i * sd..(i + 1) * sd].copy_from_slice(&t.next_state);
        self.rewards[i] = t.reward;
        self.terminals[i] = t.terminal;
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    fn get(&self, i: usize) -> Transition {
        let (sd, ad) = (self.state_dim, self.action_dim);
        Transition {
            state: self.states[i * sd..(i + 1) * sd].to_vec(),
            action: self.actions[i * ad..(i + 1) * ad].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * sd..(i + 1) * sd].to_vec(),
            terminal: self.terminals[i],
            done: false,
        }
    }

    /// Stored transitions from oldest to newest.
    pub fn to_vec(&self) -> Vec<Transition> {
        let start = if self.len < self.capacity { 0 } else { self.head };
        (0..self.len).map(|j| self.get((start + j) % self.capacity)).collect()
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        if self.len < batch || batch == 0 {
            return Err(Error::Domain(format!("cannot sample {batch} from {} transitions", self.len)));
        }
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut states = Matrix::zeros(batch, sd);
        let mut actions = Matrix::zeros(batch, ad);
        let mut next_states = Matrix::zeros(batch, sd);
        let mut rewards = Vec::with_capacity(batch);
        let mut terminals = Vec::with_capacity(batch);
        for r in 0..batch {
            let i = rng.gen_range(0..self.len);
            states.row_mut(r).copy_from_slice(&self.states[i * sd..(i + 1) * sd]);
            actions.row_mut(r).copy_from_slice(&self.actions[i * ad..(i + 1) * ad]);
            next_states.row_mut(r).copy_from_slice(&self.next_states[i * sd..(i + 1) * sd]);
            rewards.push(self.rewards[i]);
            terminals.push(self.terminals[i]);
        }
        Ok(Batch {
            states,
            actions,
            rewards,
            next_states,
            terminals,
        })
    }
}

/// The actor, critics and their target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: Mlp,
    pub target_actor: Mlp,
    pub critic1: Mlp,
    pub target_critic1: Mlp,
    /// Absent for DDPG.
    pub critic2: Option<Mlp>,
    pub target_critic2: Option<Mlp>,
}

impl AgentNets {
    pub fn new<R: Rng + ?Sized>(
        algorithm: Algorithm,
        state_dim: usize,
        action_dim: usize,
        cfg: &Td3Config,
        rng: &mut R,
    ) -> Self {
        let actor_sizes: Vec<usize> = std::iter::once(state_dim)
            .chain(cfg.actor_hidden.iter().copied())
            .chain(std::iter::once(action_dim))
            .collect();
        let critic_sizes: Vec<usize> = std::iter::once(state_dim + action_dim)
            .chain(cfg.critic_hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let actor = Mlp::new(&actor_sizes, Activation::Relu, Activation::Tanh, rng);
        let critic1 = Mlp::new(&critic_sizes, Activation::Relu, Activation::Linear, rng);
        let critic2 = match algorithm {
            Algorithm::Td3 => Some(Mlp::new(&critic_sizes, Activation::Relu, Activation::Linear, rng)),
            Algorithm::Ddpg => None,
        };
        AgentNets {
            target_actor: actor.clone(),
            actor,
            target_critic1: critic1.clone(),
            critic1,
            target_critic2: critic2.clone(),
            critic2,
        }
    }

    fn all(&self) -> Vec<&Mlp> {
        let mut v = vec![&self.actor, &self.target_actor, &self.critic1, &self.target_critic1];
        if let (Some(c), Some(t)) = (&self.critic2, &self.target_critic2) {
            v.push(c);
            v.push(t);
        }
        v
    }

    /// `theta' <- tau * theta + (1 - tau) * theta'` for every target network.
    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        self.target_actor.soft_update_from(&self.actor, tau)?;
        self.target_critic1.soft_update_from(&self.critic1, tau)?;
        if let (Some(c), Some(t)) = (&self.critic2, &mut self.target_critic2) {
            t.soft_update_from(c, tau)?;
        }
        Ok(())
    }
}

fn gaussian(std: f64) -> Normal<f64> {
    Normal::new(0.0, std.max(0.0)).expect("std is finite and non-negative")
}

/// One draw of `clip(N(0, std^2), -clip, clip)`.
pub fn smoothing_noise<R: Rng + ?Sized>(std: f64, clip: f64, rng: &mut R) -> f64 {
    if clip <= 0.0 || std == 0.0 {
        return 0.0;
    }
    gaussian(std).sample(rng).clamp(-clip, clip)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LearnStats {
    pub critic1_loss: f64,
    pub critic2_loss: Option<f64>,
    /// Mean `Q1(s, mu(s))` when the actor was updated this step.
    pub actor_objective: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub algorithm: Algorithm,
    pub cfg: Td3Config,
    pub nets: AgentNets,
    actor_opt: Optimizer,
    critic1_opt: Optimizer,
    critic2_opt: Option<Optimizer>,
    learn_steps: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        algorithm: Algorithm,
        state_dim: usize,
        action_dim: usize,
        cfg: Td3Config,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let nets = AgentNets::new(algorithm, state_dim, action_dim, &cfg, rng);
        Ok(Self::from_nets(algorithm, cfg, nets))
    }

    pub fn from_nets(algorithm: Algorithm, cfg: Td3Config, nets: AgentNets) -> Self {
        let make = |net: &Mlp, lr: f64, dir: Direction| match cfg.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(net, lr)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr, direction: dir },
        };
        Agent {
            algorithm,
            actor_opt: make(&nets.actor, cfg.actor_lr, Direction::Ascend),
            critic1_opt: make(&nets.critic1, cfg.critic_lr, Direction::Descend),
            critic2_opt: nets.critic2.as_ref().map(|c| make(c, cfg.critic_lr, Direction::Descend)),
            learn_steps: 0,
            cfg,
            nets,
        }
    }

    pub fn learn_steps(&self) -> u64 {
        self.learn_steps
    }

    pub fn state_dim(&self) -> usize {
        self.nets.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.nets.actor.output_dim()
    }

    /// Deterministic actor output.
    pub fn greedy_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.nets.actor.predict_one(state)
    }

    /// Actor output plus `N(0, noise_std^2)` noise, clipped to `[-1, 1]`.
    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], noise_std: f64, rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.greedy_action(state)?;
        if noise_std > 0.0 {
            let n = gaussian(noise_std);
            for v in &mut a {
                *v = (*v + n.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    /// Target actor output for every row of `next_states`; TD3 adds clipped
    /// smoothing noise.
    pub fn target_action<R: Rng + ?Sized>(&self, next_states: &Matrix, rng: &mut R) -> Result<Matrix> {
        let mut a = self.nets.target_actor.predict(next_states)?;
        if self.algorithm == Algorithm::Td3 {
            for v in &mut a.data {
                *v = (*v + smoothing_noise(self.cfg.target_noise, self.cfg.noise_clip, rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    /// Bootstrap targets `c * r + gamma * min_j Q'_j(s', a')` with `c` the reward
    /// scale; terminal rows keep `c * r`.
    pub fn critic_target<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Vec<f64>> {
        let a_next = self.target_action(&batch.next_states, rng)?;
        let input = batch.next_states.hcat(&a_next)?;
        let q1 = self.nets.target_critic1.predict(&input)?;
        let q2 = match &self.nets.target_critic2 {
            Some(c) => Some(c.predict(&input)?),
            None => None,
        };
        Ok((0..batch.len())
            .map(|i| {
                let q = match &q2 {
                    Some(q2) => q1.data[i].min(q2.data[i]),
                    None => q1.data[i],
                };
                let r = self.cfg.reward_scale * batch.rewards[i];
                if batch.terminals[i] {
                    r
                } else {
                    r + self.cfg.gamma * q
                }
            })
            .collect())
    }

    /// One gradient step of each critic on the MSE to `targets`; returns the
    /// losses before the step.
    pub fn update_critics(&mut self, batch: &Batch, targets: &[f64]) -> Result<(f64, Option<f64>)> {
        if targets.len() != batch.len() {
            return Err(Error::dim(batch.len(), targets.len()));
        }
        let input = batch.states.hcat(&batch.actions)?;
        let n = batch.len() as f64;
        let step = |critic: &mut Mlp, opt: &mut Optimizer| -> Result<f64> {
            let tape = critic.forward(&input)?;
            let q = &tape.output().data;
            let mut loss = 0.0;
            let grad: Vec<f64> = q
                .iter()
                .zip(targets)
                .map(|(q, y)| {
                    loss += (y - q).powi(2);
                    -2.0 * (y - q) / n
                })
                .collect();
            critic.zero_grad();
            critic.backward(&tape, &Matrix::from_vec(batch.len(), 1, grad)?)?;
            opt.step(critic);
            Ok(loss / n)
        };
        let l1 = step(&mut self.nets.critic1, &mut self.critic1_opt)?;
        let l2 = match (&mut self.nets.critic2, &mut self.critic2_opt) {
            (Some(c), Some(o)) => Some(step(c, o)?),
            _ => None,
        };
        Ok((l1, l2))
    }

    /// One policy-gradient step on `mean Q1(s, mu(s))`; returns the objective
    /// before the step.
    pub fn update_actor(&mut self, batch: &Batch) -> Result<f64> {
        let n = batch.len() as f64;
        let actor_tape = self.nets.actor.forward(&batch.states)?;
        let input = batch.states.hcat(actor_tape.output())?;
        let critic_tape = self.nets.critic1.forward(&input)?;
        let objective = critic_tape.output().data.iter().sum::<f64>() / n;
        // Descent optimizers minimize -J; the SGD variant ascends J directly.
        let sign = match self.actor_opt {
            Optimizer::Sgd {
                direction: Direction::Ascend,
                ..
            } => 1.0,
            _ => -1.0,
        };
        let grad_q = Matrix::from_vec(batch.len(), 1, vec![sign / n; batch.len()])?;
        let d_input = self.nets.critic1.backward(&critic_tape, &grad_q)?;
        self.nets.critic1.zero_grad();
        let sd = batch.states.cols;
        let d_action = d_input.columns(sd, d_input.cols);
        self.nets.actor.zero_grad();
        self.nets.actor.backward(&actor_tape, &d_action)?;
        self.actor_opt.step(&mut self.nets.actor);
        Ok(objective)
    }

    pub fn soft_update(&mut self) -> Result<()> {
        self.nets.soft_update(self.cfg.tau)
    }

    /// Critic update every call; actor and target updates every
    /// `policy_delay` calls (every call for DDPG).
    pub fn learn<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<LearnStats> {
        let targets = self.critic_target(batch, rng)?;
        let (critic1_loss, critic2_loss) = self.update_critics(batch, &targets)?;
        self.learn_steps += 1;
        let delay = match self.algorithm {
            Algorithm::Td3 => u64::from(self.cfg.policy_delay),
            Algorithm::Ddpg => 1,
        };
        let actor_objective = if self.learn_steps % delay == 0 {
            let j = self.update_actor(batch)?;
            self.soft_update()?;
            Some(j)
        } else {
            None
        };
        Ok(LearnStats {
            critic1_loss,
            critic2_loss,
            actor_objective,
        })
    }

    /// Writes every network: `"RFAG"`, u32 version, u8 algorithm, u8 count,
    /// then each network in the [`nn`](crate::nn) checkpoint layout.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        let nets = self.nets.all();
        w.write_all(b"RFAG")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&[
            match self.algorithm {
                Algorithm::Td3 => 0,
                Algorithm::Ddpg => 1,
            },
            nets.len() as u8,
        ])?;
        for n in nets {
            n.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R, cfg: Td3Config) -> Result<Self> {
        let mut head = [0u8; 10];
        r.read_exact(&mut head)?;
        if &head[..4] != b"RFAG" || u32::from_le_bytes(head[4..8].try_into().unwrap()) != 1 {
            return Err(Error::Checkpoint("not an agent checkpoint".into()));
        }
        let algorithm = match head[8] {
            0 => Algorithm::Td3,
            1 => Algorithm::Ddpg,
            c => return Err(Error::Checkpoint(format!("unknown algorithm {c}"))),
        };
        let expected = if algorithm == Algorithm::Td3 { 6 } else { 4 };
        if head[9] as usize != expected {
            return Err(Error::Checkpoint(format!("expected {expected} networks, found {}", head[9])));
        }
        let mut nets: Vec<Mlp> = (0..expected).map(|_| Mlp::read_from(r)).collect::<Result<_>>()?;
        let (critic2, target_critic2) = if expected == 6 {
            let t = nets.pop();
            (nets.pop(), t)
        } else {
            (None, None)
        };
        let target_critic1 = nets.pop().unwrap();
        let critic1 = nets.pop().unwrap();
        let target_actor = nets.pop().unwrap();
        let actor = nets.pop().unwrap();
        Ok(Self::from_nets(
            algorithm,
            cfg,
            AgentNets {
                actor,
                target_actor,
                critic1,
                target_critic1,
                critic2,
                target_critic2,
            },
        ))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean per-step reward of each episode.
    pub episode_rewards: Vec<f64>,
    /// Mean clamped round latency of each episode.
    pub episode_latencies: Vec<f64>,
    pub total_steps: usize,
}

/// Runs `episodes` episodes of interaction and learning. `on_step` sees
/// every transition with its diagnostics.
pub fn train_with<R: Rng + ?Sized>(
    env: &mut RisFlEnv,
    agent: &mut Agent,
    episodes: usize,
    rng: &mut R,
    mut on_step: impl FnMut(usize, &Transition, &StepInfo),
) -> Result<TrainOutcome> {
    if env.state_dim() != agent.state_dim() || env.action_dim() != agent.action_dim() {
        return Err(Error::Domain("agent and environment dimensions differ".into()));
    }
    let cfg = agent.cfg.clone();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, env.state_dim(), env.action_dim());
    let mut out = TrainOutcome::default();
    for episode in 0..episodes {
        let mut state = env.reset(rng)?;
        let (mut reward_sum, mut latency_sum) = (0.0, 0.0);
        let len = env.config().episode_len;
        for _ in 0..len {
            let action = if out.total_steps < cfg.warmup_steps {
                (0..env.action_dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect()
            } else {
                agent.select_action(&state, cfg.explore_noise, rng)?
            };
            let (t, info) = env.step(&action, rng)?;
            buffer.push(&t)?;
            reward_sum += t.reward;
            latency_sum += info.latency;
            out.total_steps += 1;
            on_step(episode, &t, &info);
            if out.total_steps >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
                let batch = buffer.sample(cfg.batch_size, rng)?;
                agent.learn(&batch, rng)?;
            }
            state = t.next_state;
        }
        out.episode_rewards.push(reward_sum / len as f64);
        out.episode_latencies.push(latency_sum / len as f64);
    }
    Ok(out)
}

pub fn train<R: Rng + ?Sized>(env: &mut RisFlEnv, agent: &mut Agent, episodes: usize, rng: &mut R) -> Result<TrainOutcome> {
    train_with(env, agent, episodes, rng, |_, _, _| {})
}

/// Trains a fresh DDPG agent with the same loop and hyperparameters.
pub fn ddpg_train<R: Rng + ?Sized>(
    env: &mut RisFlEnv,
    cfg: Td3Config,
    episodes: usize,
    rng: &mut R,
) -> Result<(Agent, TrainOutcome)> {
    let mut agent = Agent::new(Algorithm::Ddpg, env.state_dim(), env.action_dim(), cfg, rng)?;
    let outcome = train(env, &mut agent, episodes, rng)?;
    Ok((agent, outcome))
}
