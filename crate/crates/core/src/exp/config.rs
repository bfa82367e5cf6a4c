//! System configuration: named profiles, TOML overrides and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::Td3Config;
use crate::channel::{GeometryConfig, LinkModel};
use crate::convergence::ConvergenceParams;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::oracle::GridSpec;
use crate::phy::{Device, DevicePool, NoisePowers};
use crate::problem::PenaltyWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub episodes: usize,
    /// Greedy-policy steps used to measure converged latency.
    pub eval_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub num_devices: usize,
    pub num_elements: usize,
    pub system_bandwidth_hz: f64,
    pub r_min_bps: f64,
    pub noise: NoisePowers,
    pub geometry: GeometryConfig,
    pub links: LinkModel,
    pub device: Device,
    pub convergence: ConvergenceParams,
    pub penalty: PenaltyWeights,
    pub env: EnvConfig,
    pub agent: Td3Config,
    pub oracle: GridSpec,
    pub run: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size scenario with 50 RIS elements.
    Paper,
    /// K = 5, M = 16, small networks and short episodes.
    Desk,
    /// K = 3, M = 2 with frozen channels, solvable by the exhaustive oracle.
    Tiny,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            num_devices: 5,
            num_elements: 50,
            system_bandwidth_hz: 10e6,
            r_min_bps: 2e4,
            noise: NoisePowers::default(),
            geometry: GeometryConfig::default(),
            links: LinkModel::default(),
            device: Device::default(),
            convergence: ConvergenceParams::default(),
            penalty: PenaltyWeights::default(),
            env: EnvConfig::default(),
            agent: Td3Config::default(),
            oracle: GridSpec::default(),
            run: RunConfig {
                episodes: 300,
                eval_steps: 200,
                seed: 0,
            },
        }
    }
}

impl Profile {
    pub fn config(self) -> SystemConfig {
        let paper = SystemConfig::default();
        match self {
            Profile::Paper => paper,
            Profile::Desk => SystemConfig {
                num_elements: 16,
                env: EnvConfig {
                    episode_len: 50,
                    ..paper.env
                },
                agent: Td3Config {
                    actor_hidden: vec![64, 64],
                    critic_hidden: vec![64, 64],
                    ..paper.agent
                },
                run: RunConfig {
                    episodes: 100,
                    ..paper.run
                },
                ..paper
            },
            Profile::Tiny => SystemConfig {
                num_devices: 3,
                num_elements: 2,
                env: EnvConfig {
                    episode_len: 20,
                    redraw_channels: false,
                    ..paper.env
                },
                agent: Td3Config {
                    actor_hidden: vec![32, 32],
                    critic_hidden: vec![256, 256],
                    actor_lr: 1e-3,
                    critic_lr: 1e-3,
                    tau: 0.005,
                    ..paper.agent
                },
                run: RunConfig {
                    episodes: 300,
                    eval_steps: 1,
                    seed: 0,
                },
                ..paper
            },
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl SystemConfig {
    /// Parses `text` as overrides on top of `base`. Unknown keys are errors.
    pub fn from_toml_str(text: &str, base: &SystemConfig) -> Result<Self> {
        let over: toml::Value = toml::from_str(text)?;
        let mut merged = toml::Value::try_from(base).map_err(|e| Error::config("config", e.to_string()))?;
        merge(&mut merged, over);
        let cfg: SystemConfig = merged.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_devices < 2 {
            return Err(Error::config("num_devices", "must be >= 2"));
        }
        if !(self.system_bandwidth_hz > 0.0 && self.system_bandwidth_hz.is_finite()) {
            return Err(Error::config("system_bandwidth_hz", "must be finite and > 0"));
        }
        if !(self.r_min_bps > 0.0 && self.r_min_bps.is_finite()) {
            return Err(Error::config("r_min_bps", "must be finite and > 0"));
        }
        self.noise.validate()?;
        self.geometry.validate()?;
        self.links.validate()?;
        DevicePool::uniform(self.device, self.num_devices).validate()?;
        self.convergence.validate()?;
        self.penalty.validate()?;
        if self.env.episode_len == 0 {
            return Err(Error::config("env.episode_len", "must be >= 1"));
        }
        if !(self.env.latency_cap_factor > 0.0 && self.env.latency_cap_factor.is_finite()) {
            return Err(Error::config("env.latency_cap_factor", "must be finite and > 0"));
        }
        self.agent.validate()?;
        self.oracle.validate()?;
        if self.run.eval_steps == 0 {
            return Err(Error::config("run.eval_steps", "must be >= 1"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn pool(&self) -> DevicePool {
        DevicePool::uniform(self.device, self.num_devices)
    }
}

/// Reads overrides from `path` on top of the paper defaults.
pub fn load_config(path: &Path) -> Result<SystemConfig> {
    load_config_with(path, &SystemConfig::default())
}

pub fn load_config_with(path: &Path, base: &SystemConfig) -> Result<SystemConfig> {
    let text = std::fs::read_to_string(path)?;
    SystemConfig::from_toml_str(&text, base)
}
