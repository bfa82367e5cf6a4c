//! Upload rates, secrecy rates and per-round latency of the selected participants.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, RisConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Device {
    /// CPU cycles needed per local datum.
    pub cycles_per_datum: f64,
    pub data_size: f64,
    pub cpu_freq_hz: f64,
    pub tx_power_w: f64,
    pub model_size_bits: f64,
}

impl Default for Device {
    fn default() -> Self {
        Device {
            cycles_per_datum: 1000.0,
            data_size: 6250.0,
            cpu_freq_hz: 1e9,
            tx_power_w: 0.1,
            model_size_bits: 3e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePool {
    pub devices: Vec<Device>,
}

impl DevicePool {
    pub fn uniform(device: Device, k: usize) -> Self {
        DevicePool {
            devices: vec![device; k],
        }
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, d) in self.devices.iter().enumerate() {
            for (name, v) in [
                ("cycles_per_datum", d.cycles_per_datum),
                ("data_size", d.data_size),
                ("cpu_freq_hz", d.cpu_freq_hz),
                ("tx_power_w", d.tx_power_w),
                ("model_size_bits", d.model_size_bits),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::config(
                        format!("device[{k}].{name}"),
                        format!("must be finite and > 0, got {v}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Participant indicator per device; `false` devices act as jammers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Selection {
    pub x: Vec<bool>,
}

impl Selection {
    pub fn new(x: Vec<bool>) -> Self {
        Selection { x }
    }

    pub fn all(k: usize) -> Self {
        Selection { x: vec![true; k] }
    }

    pub fn none(k: usize) -> Self {
        Selection { x: vec![false; k] }
    }

    pub fn from_participants(k: usize, participants: &[usize]) -> Self {
        let mut x = vec![false; k];
        for &p in participants {
            x[p] = true;
        }
        Selection { x }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn is_participant(&self, k: usize) -> bool {
        self.x[k]
    }

    pub fn num_participants(&self) -> usize {
        self.x.iter().filter(|&&b| b).count()
    }

    pub fn participants(&self) -> impl Iterator<Item = usize> + '_ {
        self.x.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k)
    }

    pub fn jammers(&self) -> impl Iterator<Item = usize> + '_ {
        self.x.iter().enumerate().filter(|(_, &b)| !b).map(|(k, _)| k)
    }
}

/// Bandwidth coefficients, indexed by device (jammers hold zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthAlloc {
    pub shares: Vec<f64>,
    pub system_bandwidth_hz: f64,
}

impl BandwidthAlloc {
    pub fn new(shares: Vec<f64>, system_bandwidth_hz: f64) -> Self {
        BandwidthAlloc {
            shares,
            system_bandwidth_hz,
        }
    }

    /// `1 / |A|` for each participant.
    pub fn equal_split(selection: &Selection, system_bandwidth_hz: f64) -> Self {
        let n = selection.num_participants();
        let shares = selection
            .x
            .iter()
            .map(|&p| if p { 1.0 / n as f64 } else { 0.0 })
            .collect();
        BandwidthAlloc {
            shares,
            system_bandwidth_hz,
        }
    }

    /// Sum of the shares held by participants.
    pub fn total(&self, selection: &Selection) -> f64 {
        selection.participants().map(|k| self.shares[k]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePowers {
    pub sigma_b2: f64,
    pub sigma_e2: f64,
}

impl Default for NoisePowers {
    fn default() -> Self {
        NoisePowers {
            sigma_b2: 1e-14,
            sigma_e2: 1e-14,
        }
    }
}

impl NoisePowers {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("noise.sigma_b2", self.sigma_b2), ("noise.sigma_e2", self.sigma_e2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Computation latency `c * D / f`.
pub fn local_latency(device: &Device) -> f64 {
    device.cycles_per_datum * device.data_size / device.cpu_freq_hz
}

/// `S / R`, infinite when the rate is zero.
pub fn upload_latency_for_rate(model_size_bits: f64, rate_bps: f64) -> f64 {
    if rate_bps > 0.0 {
        model_size_bits / rate_bps
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantReport {
    pub device: usize,
    pub rate_bs: f64,
    pub rate_eve: f64,
    pub secrecy_rate: f64,
    pub t_loc: f64,
    pub t_tr: f64,
    pub t_tot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub participants: Vec<ParticipantReport>,
    /// `max T_tot` over participants; infinite when nobody participates or a rate is zero.
    pub round_latency: f64,
    /// `1 - sum(b)`; negative means the bandwidth budget is exceeded.
    pub bandwidth_slack: f64,
}

impl EvalReport {
    pub fn is_finite(&self) -> bool {
        self.round_latency.is_finite()
    }
}

/// One upload configuration over a channel realization.
///
/// Gains toward the BS and Eve are computed once at construction, so every
/// rate query is O(K).
#[derive(Debug, Clone)]
pub struct Uplink<'a> {
    pub selection: &'a Selection,
    pub alloc: &'a BandwidthAlloc,
    pub pool: &'a DevicePool,
    pub noise: NoisePowers,
    gains_bs: Vec<Complex64>,
    gains_eve: Vec<Complex64>,
}

impl<'a> Uplink<'a> {
    pub fn new(
        selection: &'a Selection,
        alloc: &'a BandwidthAlloc,
        ris: &RisConfig,
        channels: &ChannelRealization,
        pool: &'a DevicePool,
        noise: NoisePowers,
    ) -> Result<Self> {
        let k = channels.num_devices();
        for got in [selection.len(), alloc.shares.len(), pool.len()] {
            if got != k {
                return Err(Error::dim(k, got));
            }
        }
        let gains_bs = (0..k)
            .map(|i| channels.gain_to_bs(i, ris))
            .collect::<Result<Vec<_>>>()?;
        let gains_eve = (0..k)
            .map(|i| channels.gain_to_eve(i, ris))
            .collect::<Result<Vec<_>>>()?;
        Ok(Uplink {
            selection,
            alloc,
            pool,
            noise,
            gains_bs,
            gains_eve,
        })
    }

    pub fn gains_to_bs(&self) -> &[Complex64] {
        &self.gains_bs
    }

    fn ensure_participant(&self, k: usize) -> Result<()> {
        if k >= self.selection.len() || !self.selection.is_participant(k) {
            return Err(Error::Domain(format!("device {k} is not a participant")));
        }
        Ok(())
    }

    fn rate(&self, k: usize, gains: &[Complex64], noise: f64) -> f64 {
        let signal = self.pool.devices[k].tx_power_w * gains[k].norm_sqr();
        let jamming: f64 = self
            .selection
            .jammers()
            .map(|j| self.pool.devices[j].tx_power_w * gains[j].norm_sqr())
            .sum();
        let b = self.alloc.shares[k];
        if b <= 0.0 {
            return 0.0;
        }
        b * self.alloc.system_bandwidth_hz * (signal / (jamming + noise)).ln_1p() / std::f64::consts::LN_2
    }

    pub fn rate_to_bs(&self, k: usize) -> Result<f64> {
        self.ensure_participant(k)?;
        Ok(self.rate(k, &self.gains_bs, self.noise.sigma_b2))
    }

    pub fn rate_to_eve(&self, k: usize) -> Result<f64> {
        self.ensure_participant(k)?;
        Ok(self.rate(k, &self.gains_eve, self.noise.sigma_e2))
    }

    pub fn secrecy_rate(&self, k: usize) -> Result<f64> {
        Ok((self.rate_to_bs(k)? - self.rate_to_eve(k)?).max(0.0))
    }

    pub fn upload_latency(&self, k: usize) -> Result<f64> {
        let r = self.rate_to_bs(k)?;
        Ok(upload_latency_for_rate(self.pool.devices[k].model_size_bits, r))
    }

    pub fn evaluate(&self) -> EvalReport {
        let participants: Vec<ParticipantReport> = self
            .selection
            .participants()
            .map(|k| {
                let rate_bs = self.rate(k, &self.gains_bs, self.noise.sigma_b2);
                let rate_eve = self.rate(k, &self.gains_eve, self.noise.sigma_e2);
                let dev = &self.pool.devices[k];
                let t_loc = local_latency(dev);
                let t_tr = upload_latency_for_rate(dev.model_size_bits, rate_bs);
                ParticipantReport {
                    device: k,
                    rate_bs,
                    rate_eve,
                    secrecy_rate: (rate_bs - rate_eve).max(0.0),
                    t_loc,
                    t_tr,
                    t_tot: t_loc + t_tr,
                }
            })
            .collect();
        let round_latency = if participants.is_empty() {
            f64::INFINITY
        } else {
            participants.iter().map(|p| p.t_tot).fold(f64::NEG_INFINITY, f64::max)
        };
        EvalReport {
            participants,
            round_latency,
            bandwidth_slack: 1.0 - self.alloc.total(self.selection),
        }
    }
}

/// Convenience wrapper around [`Uplink::evaluate`].
pub fn evaluate(
    selection: &Selection,
    alloc: &BandwidthAlloc,
    ris: &RisConfig,
    channels: &ChannelRealization,
    pool: &DevicePool,
    noise: NoisePowers,
) -> Result<EvalReport> {
    Ok(Uplink::new(selection, alloc, ris, channels, pool, noise)?.evaluate())
}
