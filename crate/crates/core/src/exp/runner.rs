//! Scenario construction, scheme training and evaluation, and sweeps.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SystemConfig;
use super::records::{CurveRow, StepRow, SweepRow, SCHEMA_VERSION};
use crate::agents::{train_with, Agent, Algorithm, TrainOutcome};
use crate::channel::{ChannelRealization, Geometry, LinkParamSet};
use crate::env::{ActionMask, RisFlEnv};
use crate::error::{Error, Result};
use crate::oracle::rds_solve;
use crate::problem::ProblemInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// TD3 over selection, bandwidth and phases.
    Proposed,
    Ddpg,
    /// TD3 with the bandwidth split fixed to equal shares.
    Fba,
    /// Random selection, equal split, random phases; no learning.
    Rds,
    /// TD3 with random phases every step.
    RandomPhase,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Proposed, Scheme::Ddpg, Scheme::Fba, Scheme::Rds, Scheme::RandomPhase];

    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            Scheme::Proposed | Scheme::Fba | Scheme::RandomPhase => Some(Algorithm::Td3),
            Scheme::Ddpg => Some(Algorithm::Ddpg),
            Scheme::Rds => None,
        }
    }

    pub fn mask(self) -> ActionMask {
        ActionMask {
            fixed_bandwidth: self == Scheme::Fba,
            random_phase: self == Scheme::RandomPhase,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Ddpg => "ddpg",
            Scheme::Fba => "fba",
            Scheme::Rds => "rds",
            Scheme::RandomPhase => "random-phase",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Scenario = 0,
    Init = 1,
    Train = 2,
    Eval = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: Geometry,
    pub links: LinkParamSet,
    pub instance: ProblemInstance,
}

/// Device drop and initial channels for `seed`.
pub fn build_scenario(cfg: &SystemConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, Stream::Scenario);
    let geometry = cfg.geometry.sample(cfg.num_devices, &mut rng)?;
    let links = cfg.links.link_params(&geometry);
    let channels = ChannelRealization::draw(&links, cfg.num_elements, &mut rng)?;
    let instance = ProblemInstance {
        channels,
        pool: cfg.pool(),
        noise: cfg.noise,
        system_bandwidth_hz: cfg.system_bandwidth_hz,
        convergence: cfg.convergence,
        r_min_bps: cfg.r_min_bps,
        penalties: cfg.penalty,
    };
    Ok(Scenario {
        geometry,
        links,
        instance,
    })
}

pub fn make_env(cfg: &SystemConfig, seed: u64, mask: ActionMask) -> Result<RisFlEnv> {
    let s = build_scenario(cfg, seed)?;
    RisFlEnv::new(s.instance, s.links, cfg.env, mask)
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub scheme: Scheme,
    pub seed: u64,
    pub agent: Option<Agent>,
    pub outcome: TrainOutcome,
    pub steps: Vec<StepRow>,
    pub wall_clock_s: f64,
}

impl TrainedRun {
    pub fn curve_rows(&self) -> Vec<CurveRow> {
        self.outcome
            .episode_rewards
            .iter()
            .zip(&self.outcome.episode_latencies)
            .enumerate()
            .map(|(episode, (&mean_reward, &mean_latency))| CurveRow {
                schema_version: SCHEMA_VERSION,
                scheme: self.scheme.to_string(),
                seed: self.seed,
                episode,
                mean_reward,
                mean_latency,
            })
            .collect()
    }
}

/// Trains `scheme` for `episodes` episodes. RDS has nothing to learn and
/// returns no agent.
pub fn train_scheme(cfg: &SystemConfig, scheme: Scheme, seed: u64, episodes: usize) -> Result<TrainedRun> {
    let start = Instant::now();
    let Some(algorithm) = scheme.algorithm() else {
        return Ok(TrainedRun {
            scheme,
            seed,
            agent: None,
            outcome: TrainOutcome::default(),
            steps: Vec::new(),
            wall_clock_s: 0.0,
        });
    };
    let mut env = make_env(cfg, seed, scheme.mask())?;
    let mut init = stream_rng(seed, Stream::Init);
    let mut agent = Agent::new(algorithm, env.state_dim(), env.action_dim(), cfg.agent.clone(), &mut init)?;
    let mut rng = stream_rng(seed, Stream::Train);
    let mut steps = Vec::new();
    let mut step_in_episode = 0usize;
    let mut last_episode = 0usize;
    let outcome = train_with(&mut env, &mut agent, episodes, &mut rng, |episode, t, info| {
        if episode != last_episode {
            last_episode = episode;
            step_in_episode = 0;
        }
        steps.push(StepRow {
            schema_version: SCHEMA_VERSION,
            episode,
            step: step_in_episode,
            reward: t.reward,
            latency: info.latency,
            penalty: info.evaluation.penalty,
            participants: info.decision.selection.num_participants(),
            feasible: info.evaluation.slacks.feasible(),
        });
        step_in_episode += 1;
    })?;
    Ok(TrainedRun {
        scheme,
        seed,
        agent: Some(agent),
        outcome,
        steps,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean clamped round latency, seconds.
    pub latency: f64,
    pub reward: f64,
    pub penalty: f64,
    pub feasible_fraction: f64,
    pub steps: usize,
}

/// Runs the greedy policy (or the RDS heuristic) for `steps` steps on the
/// evaluation stream of `seed`.
pub fn evaluate_scheme(cfg: &SystemConfig, scheme: Scheme, agent: Option<&Agent>, seed: u64, steps: usize) -> Result<EvalSummary> {
    if steps == 0 {
        return Err(Error::Domain("evaluation needs at least one step".into()));
    }
    let mut env = make_env(cfg, seed, scheme.mask())?;
    let mut rng = stream_rng(seed, Stream::Eval);
    let mut state = env.reset(&mut rng)?;
    let (mut latency, mut reward, mut penalty, mut feasible) = (0.0, 0.0, 0.0, 0usize);
    for _ in 0..steps {
        let (t, info) = match (scheme, agent) {
            (Scheme::Rds, _) => {
                let d = rds_solve(env.instance(), None, &mut rng);
                env.step_decision(d, &mut rng)?
            }
            (_, Some(a)) => {
                let action = a.greedy_action(&state)?;
                env.step(&action, &mut rng)?
            }
            (_, None) => return Err(Error::Domain(format!("scheme {scheme} needs a trained agent"))),
        };
        latency += info.latency;
        reward += t.reward;
        penalty += info.evaluation.penalty;
        feasible += usize::from(info.evaluation.slacks.feasible());
        state = t.next_state;
    }
    let n = steps as f64;
    Ok(EvalSummary {
        latency: latency / n,
        reward: reward / n,
        penalty: penalty / n,
        feasible_fraction: feasible as f64 / n,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum SweepAxis {
    ModelSize,
    RisElements,
    Bandwidth,
    AccuracyEps,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::ModelSize => "model_size",
            SweepAxis::RisElements => "ris_elements",
            SweepAxis::Bandwidth => "bandwidth",
            SweepAxis::AccuracyEps => "accuracy_eps",
        }
    }

    pub fn apply(self, cfg: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut c = cfg.clone();
        match self {
            SweepAxis::ModelSize => c.device.model_size_bits = value,
            SweepAxis::RisElements => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::config("ris_elements", format!("must be a non-negative integer, got {value}")));
                }
                c.num_elements = value as usize;
            }
            SweepAxis::Bandwidth => c.system_bandwidth_hz = value,
            SweepAxis::AccuracyEps => c.convergence.accuracy_eps = value,
        }
        c.validate()?;
        Ok(c)
    }

    /// Whether a policy trained on the base configuration can be evaluated
    /// at any value of this axis: the state, action and penalty structure do
    /// not depend on it.
    pub fn policy_transfers(self) -> bool {
        matches!(self, SweepAxis::ModelSize | SweepAxis::Bandwidth)
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub schemes: Vec<Scheme>,
    /// Evaluate policies trained on the base configuration where the axis
    /// allows it, instead of retraining at every value.
    pub reuse_policies: bool,
}

/// Trained agents keyed by training-config hash, scheme and seed.
#[derive(Default)]
pub struct PolicyCache {
    agents: HashMap<(String, Scheme, u64), Option<Agent>>,
}

impl PolicyCache {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    fn key(cfg: &SystemConfig, scheme: Scheme, seed: u64) -> (String, Scheme, u64) {
        (cfg.hash(), scheme, seed)
    }

    /// Trains every missing `(config, scheme, seed)` job, in parallel.
    pub fn fill(&mut self, jobs: &[(SystemConfig, Scheme, u64)]) -> Result<()> {
        let mut todo: Vec<&(SystemConfig, Scheme, u64)> = Vec::new();
        for j in jobs {
            let k = Self::key(&j.0, j.1, j.2);
            if !self.agents.contains_key(&k) && !todo.iter().any(|t| Self::key(&t.0, t.1, t.2) == k) {
                todo.push(j);
            }
        }
        let trained: Vec<_> = todo
            .par_iter()
            .map(|(cfg, scheme, seed)| {
                train_scheme(cfg, *scheme, *seed, cfg.run.episodes).map(|r| (Self::key(cfg, *scheme, *seed), r.agent))
            })
            .collect::<Result<_>>()?;
        self.agents.extend(trained);
        Ok(())
    }

    pub fn get(&self, cfg: &SystemConfig, scheme: Scheme, seed: u64) -> Option<Option<&Agent>> {
        self.agents.get(&Self::key(cfg, scheme, seed)).map(|a| a.as_ref())
    }
}

/// One row per value, seed and scheme.
pub fn run_sweep(base: &SystemConfig, spec: &SweepSpec, cache: &mut PolicyCache) -> Result<Vec<SweepRow>> {
    let points: Vec<(f64, SystemConfig)> = spec
        .values
        .iter()
        .map(|&v| spec.axis.apply(base, v).map(|c| (v, c)))
        .collect::<Result<_>>()?;
    let train_cfg = |point: &SystemConfig| {
        if spec.reuse_policies && spec.axis.policy_transfers() {
            base.clone()
        } else {
            point.clone()
        }
    };
    let mut jobs = Vec::new();
    for (_, c) in &points {
        for &seed in &spec.seeds {
            for &scheme in &spec.schemes {
                jobs.push((train_cfg(c), scheme, seed));
            }
        }
    }
    cache.fill(&jobs)?;
    let mut evals = Vec::new();
    for (v, c) in &points {
        for &seed in &spec.seeds {
            for &scheme in &spec.schemes {
                evals.push((*v, c, train_cfg(c), scheme, seed));
            }
        }
    }
    let cache = &*cache;
    evals
        .par_iter()
        .map(|(v, c, tc, scheme, seed)| {
            let agent = cache.get(tc, *scheme, *seed).expect("trained above");
            let s = evaluate_scheme(c, *scheme, agent, *seed, c.run.eval_steps)?;
            Ok(SweepRow {
                schema_version: SCHEMA_VERSION,
                axis: spec.axis.name().to_string(),
                value: *v,
                scheme: scheme.to_string(),
                seed: *seed,
                latency: s.latency,
                reward: s.reward,
                feasible_fraction: s.feasible_fraction,
                config_hash: c.hash(),
            })
        })
        .collect()
}

/// Mean latency per `(value, scheme)` across seeds, in value order.
pub fn mean_by_point(rows: &[SweepRow]) -> Vec<(f64, String, f64)> {
    let mut acc: Vec<(f64, String, f64, usize)> = Vec::new();
    for r in rows {
        match acc.iter_mut().find(|a| a.0 == r.value && a.1 == r.scheme) {
            Some(a) => {
                a.2 += r.latency;
                a.3 += 1;
            }
            None => acc.push((r.value, r.scheme.clone(), r.latency, 1)),
        }
    }
    let mut out: Vec<_> = acc.into_iter().map(|(v, s, l, n)| (v, s, l / n as f64)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    out
}
