//! Complex baseband channels between the devices, the RIS, the BS and the
//! eavesdropper, plus the RIS phase configuration.
//!
//! Every link follows the Rician model with distance-dependent path loss:
//!
//! ```text
//! h = sqrt(eps * d^-beta) * ( sqrt(k/(k+1)) * h_los + sqrt(1/(k+1)) * h_nlos )
//! ```
//!
//! `h_nlos` has i.i.d. CN(0, 1) entries and `h_los` is the unit-modulus
//! uniform-linear-array steering vector `exp(j*pi*m*sin(phi))`, where `phi` is
//! the angle of the link as seen from the RIS.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A complex column vector. Length one is used for the scalar direct links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexVec(pub Vec<Complex64>);

impl ComplexVec {
    pub fn zeros(len: usize) -> Self {
        ComplexVec(vec![Complex64::new(0.0, 0.0); len])
    }

    pub fn from_parts(re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::dim(re.len(), im.len()));
        }
        Ok(ComplexVec(
            re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        ComplexVec(self.0.iter().map(|z| z * s).collect())
    }

    /// Mean of `|h_m|^2`.
    pub fn mean_power(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.0.len() as f64
    }
}

/// Large-scale and Rician parameters of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Path loss at the 1 m reference distance, in dB.
    pub ref_path_loss_db: f64,
    pub distance_m: f64,
    pub path_loss_exp: f64,
    pub rician_k: f64,
    /// Angle of the link seen from the RIS array; only shapes the LoS steering vector.
    pub los_angle_rad: f64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("ref_path_loss_db", self.ref_path_loss_db),
            ("distance_m", self.distance_m),
            ("path_loss_exp", self.path_loss_exp),
            ("rician_k", self.rician_k),
            ("los_angle_rad", self.los_angle_rad),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::config(name, format!("must be finite, got {v}")));
            }
        }
        if self.distance_m <= 0.0 {
            return Err(Error::config("distance_m", "must be > 0"));
        }
        if self.path_loss_exp <= 0.0 {
            return Err(Error::config("path_loss_exp", "must be > 0"));
        }
        if self.rician_k < 0.0 {
            return Err(Error::config("rician_k", "must be >= 0"));
        }
        Ok(())
    }

    /// Expected per-entry power `eps * d^-beta`.
    pub fn large_scale_gain(&self) -> f64 {
        db_to_linear(self.ref_path_loss_db) * self.distance_m.powf(-self.path_loss_exp)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// ULA steering vector `exp(j*pi*m*sin(angle))`, m = 0..len.
pub fn steering_vector(len: usize, angle_rad: f64) -> ComplexVec {
    let s = angle_rad.sin();
    ComplexVec(
        (0..len)
            .map(|m| Complex64::from_polar(1.0, PI * m as f64 * s))
            .collect(),
    )
}

/// One circularly-symmetric complex Gaussian sample with unit variance.
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn draw_channel<R: Rng + ?Sized>(
    params: &ChannelParams,
    length: usize,
    rng: &mut R,
) -> Result<ComplexVec> {
    params.validate()?;
    if length == 0 {
        return Err(Error::Domain("channel length must be >= 1".into()));
    }
    let amp = params.large_scale_gain().sqrt();
    let k = params.rician_k;
    let los_w = (k / (k + 1.0)).sqrt();
    let nlos_w = (1.0 / (k + 1.0)).sqrt();
    let los = steering_vector(length, params.los_angle_rad);
    let h = los
        .0
        .iter()
        .map(|&l| {
            let nlos = cn01(rng);
            (l * los_w + nlos * nlos_w) * amp
        })
        .collect();
    Ok(ComplexVec(h))
}

/// Phase shifts of the RIS elements, each in `[0, 2*pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisConfig {
    phases: Vec<f64>,
}

impl RisConfig {
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        for (m, &p) in phases.iter().enumerate() {
            if !(0.0..=TAU).contains(&p) {
                return Err(Error::Domain(format!(
                    "phase {m} = {p} outside [0, 2pi]"
                )));
            }
        }
        Ok(RisConfig { phases })
    }

    /// All-zero phases, i.e. the identity reflection matrix.
    pub fn identity(m: usize) -> Self {
        RisConfig {
            phases: vec![0.0; m],
        }
    }

    /// Builds a configuration from arbitrary angles, wrapping each into `[0, 2*pi)`.
    pub fn wrapped(angles: impl IntoIterator<Item = f64>) -> Self {
        RisConfig {
            phases: angles.into_iter().map(wrap_phase).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        RisConfig {
            phases: (0..m).map(|_| rng.gen_range(0.0..TAU)).collect(),
        }
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn in_range(&self) -> bool {
        self.phases.iter().all(|p| (0.0..=TAU).contains(p))
    }
}

/// Wraps an angle into `[0, 2*pi)`.
pub fn wrap_phase(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Cascaded plus direct gain `h_rx^H * Theta * h_tx + h_direct`.
pub fn effective_gain(
    h_ris_rx: &ComplexVec,
    ris: &RisConfig,
    h_tx_ris: &ComplexVec,
    h_direct: Complex64,
) -> Result<Complex64> {
    let m = ris.len();
    if h_ris_rx.len() != m {
        return Err(Error::dim(m, h_ris_rx.len()));
    }
    if h_tx_ris.len() != m {
        return Err(Error::dim(m, h_tx_ris.len()));
    }
    let reflected: Complex64 = h_ris_rx
        .0
        .iter()
        .zip(&ris.phases)
        .zip(&h_tx_ris.0)
        .map(|((a, &th), b)| a.conj() * Complex64::from_polar(1.0, th) * b)
        .sum();
    Ok(reflected + h_direct)
}

/// Co-phases every reflected path with the direct link of a single transmitter.
pub fn optimal_single_link_phases(
    h_ris_rx: &ComplexVec,
    h_tx_ris: &ComplexVec,
    h_direct: Complex64,
) -> Result<RisConfig> {
    if h_ris_rx.len() != h_tx_ris.len() {
        return Err(Error::dim(h_ris_rx.len(), h_tx_ris.len()));
    }
    let target = h_direct.arg();
    Ok(RisConfig::wrapped(
        h_ris_rx
            .0
            .iter()
            .zip(&h_tx_ris.0)
            .map(|(a, b)| target - (a.conj() * b).arg()),
    ))
}

/// Planar node placement inside a square arena.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub arena_m: f64,
    pub bs: [f64; 2],
    pub ris: [f64; 2],
    pub eve: [f64; 2],
    pub devices: Vec<[f64; 2]>,
}

/// Fixed anchor positions plus the rectangle devices are dropped into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub arena_m: f64,
    pub bs: [f64; 2],
    pub ris: [f64; 2],
    pub eve: [f64; 2],
    /// `[x_min, x_max, y_min, y_max]` of the device drop zone.
    pub device_zone: [f64; 4],
    /// Devices closer than this to the BS, RIS or Eve are re-drawn.
    pub min_separation_m: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            arena_m: 60.0,
            bs: [0.0, 30.0],
            ris: [20.0, 50.0],
            eve: [50.0, 50.0],
            device_zone: [25.0, 60.0, 0.0, 60.0],
            min_separation_m: 2.0,
        }
    }
}

fn in_arena(p: [f64; 2], arena: f64) -> bool {
    (0.0..=arena).contains(&p[0]) && (0.0..=arena).contains(&p[1])
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arena_m > 0.0 && self.arena_m.is_finite()) {
            return Err(Error::config("geometry.arena_m", "must be finite and > 0"));
        }
        for (name, p) in [("geometry.bs", self.bs), ("geometry.ris", self.ris), ("geometry.eve", self.eve)] {
            if !in_arena(p, self.arena_m) {
                return Err(Error::config(name, "position outside the arena"));
            }
        }
        let [x0, x1, y0, y1] = self.device_zone;
        if !(x0 < x1 && y0 < y1 && in_arena([x0, y0], self.arena_m) && in_arena([x1, y1], self.arena_m)) {
            return Err(Error::config(
                "geometry.device_zone",
                "must be a non-empty rectangle inside the arena",
            ));
        }
        if !(self.min_separation_m >= 0.0) {
            return Err(Error::config("geometry.min_separation_m", "must be >= 0"));
        }
        Ok(())
    }

    /// Drops `k` devices uniformly into the device zone.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Geometry> {
        self.validate()?;
        if k < 2 {
            return Err(Error::config("num_devices", "need at least 2 devices"));
        }
        let [x0, x1, y0, y1] = self.device_zone;
        let mut devices = Vec::with_capacity(k);
        while devices.len() < k {
            let p = [rng.gen_range(x0..=x1), rng.gen_range(y0..=y1)];
            let clear = [self.bs, self.ris, self.eve]
                .iter()
                .all(|&a| distance(a, p) >= self.min_separation_m);
            if clear {
                devices.push(p);
            }
        }
        Ok(Geometry {
            arena_m: self.arena_m,
            bs: self.bs,
            ris: self.ris,
            eve: self.eve,
            devices,
        })
    }
}

impl Geometry {
    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    /// Angle of `p` as seen from the RIS.
    pub fn angle_from_ris(&self, p: [f64; 2]) -> f64 {
        (p[1] - self.ris[1]).atan2(p[0] - self.ris[0])
    }
}

/// Path-loss exponent and Rician factor of one link class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkClass {
    pub path_loss_exp: f64,
    pub rician_k: f64,
}

/// Link classes for every channel in the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub ref_path_loss_db: f64,
    pub ris_bs: LinkClass,
    pub device_ris: LinkClass,
    pub ris_eve: LinkClass,
    pub device_bs: LinkClass,
    pub device_eve: LinkClass,
}

impl Default for LinkModel {
    fn default() -> Self {
        let reflected = LinkClass {
            path_loss_exp: 2.2,
            rician_k: 4.0,
        };
        let direct = LinkClass {
            path_loss_exp: 3.6,
            rician_k: 0.0,
        };
        LinkModel {
            ref_path_loss_db: -30.0,
            ris_bs: reflected,
            device_ris: reflected,
            ris_eve: reflected,
            device_bs: direct,
            device_eve: direct,
        }
    }
}

impl LinkModel {
    fn params(&self, class: LinkClass, a: [f64; 2], b: [f64; 2], angle: f64) -> ChannelParams {
        ChannelParams {
            ref_path_loss_db: self.ref_path_loss_db,
            distance_m: distance(a, b).max(1e-3),
            path_loss_exp: class.path_loss_exp,
            rician_k: class.rician_k,
            los_angle_rad: angle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.ref_path_loss_db.is_finite() {
            return Err(Error::config("links.ref_path_loss_db", "must be finite"));
        }
        for (name, c) in [
            ("links.ris_bs", self.ris_bs),
            ("links.device_ris", self.device_ris),
            ("links.ris_eve", self.ris_eve),
            ("links.device_bs", self.device_bs),
            ("links.device_eve", self.device_eve),
        ] {
            if !(c.path_loss_exp > 0.0 && c.path_loss_exp.is_finite()) {
                return Err(Error::config(format!("{name}.path_loss_exp"), "must be finite and > 0"));
            }
            if !(c.rician_k >= 0.0 && c.rician_k.is_finite()) {
                return Err(Error::config(format!("{name}.rician_k"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Per-link parameters for a given geometry, in the draw order used by
    /// [`ChannelRealization::draw`].
    pub fn link_params(&self, geo: &Geometry) -> LinkParamSet {
        let rb = self.params(self.ris_bs, geo.ris, geo.bs, geo.angle_from_ris(geo.bs));
        let re = self.params(self.ris_eve, geo.ris, geo.eve, geo.angle_from_ris(geo.eve));
        let devices = geo
            .devices
            .iter()
            .map(|&d| DeviceLinks {
                to_ris: self.params(self.device_ris, d, geo.ris, geo.angle_from_ris(d)),
                to_bs: self.params(self.device_bs, d, geo.bs, 0.0),
                to_eve: self.params(self.device_eve, d, geo.eve, 0.0),
            })
            .collect();
        LinkParamSet { rb, re, devices }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLinks {
    pub to_ris: ChannelParams,
    pub to_bs: ChannelParams,
    pub to_eve: ChannelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkParamSet {
    pub rb: ChannelParams,
    pub re: ChannelParams,
    pub devices: Vec<DeviceLinks>,
}

/// One draw of every channel coefficient in the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// RIS -> BS.
    pub h_rb: ComplexVec,
    /// Device k -> RIS.
    pub h_kr: Vec<ComplexVec>,
    /// Device k -> BS.
    pub h_kb: Vec<Complex64>,
    /// RIS -> Eve.
    pub h_re: ComplexVec,
    /// Device k -> Eve.
    pub h_ke: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn draw<R: Rng + ?Sized>(links: &LinkParamSet, m: usize, rng: &mut R) -> Result<Self> {
        let vec_or_empty = |p: &ChannelParams, rng: &mut R| -> Result<ComplexVec> {
            if m == 0 {
                p.validate()?;
                Ok(ComplexVec(Vec::new()))
            } else {
                draw_channel(p, m, rng)
            }
        };
        let h_rb = vec_or_empty(&links.rb, rng)?;
        let h_re = vec_or_empty(&links.re, rng)?;
        let k = links.devices.len();
        let mut h_kr = Vec::with_capacity(k);
        let mut h_kb = Vec::with_capacity(k);
        let mut h_ke = Vec::with_capacity(k);
        for d in &links.devices {
            h_kr.push(vec_or_empty(&d.to_ris, rng)?);
            h_kb.push(draw_channel(&d.to_bs, 1, rng)?.0[0]);
            h_ke.push(draw_channel(&d.to_eve, 1, rng)?.0[0]);
        }
        let out = ChannelRealization {
            h_rb,
            h_kr,
            h_kb,
            h_re,
            h_ke,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn num_devices(&self) -> usize {
        self.h_kb.len()
    }

    pub fn num_elements(&self) -> usize {
        self.h_rb.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.h_kb.len();
        let m = self.h_rb.len();
        if self.h_kr.len() != k {
            return Err(Error::dim(k, self.h_kr.len()));
        }
        if self.h_ke.len() != k {
            return Err(Error::dim(k, self.h_ke.len()));
        }
        if self.h_re.len() != m {
            return Err(Error::dim(m, self.h_re.len()));
        }
        for v in &self.h_kr {
            if v.len() != m {
                return Err(Error::dim(m, v.len()));
            }
        }
        let scalars_finite = self
            .h_kb
            .iter()
            .chain(&self.h_ke)
            .all(|z| z.re.is_finite() && z.im.is_finite());
        if !(scalars_finite
            && self.h_rb.is_finite()
            && self.h_re.is_finite()
            && self.h_kr.iter().all(ComplexVec::is_finite))
        {
            return Err(Error::Domain("non-finite channel coefficient".into()));
        }
        Ok(())
    }

    /// Effective gain of device `k` toward the BS.
    pub fn gain_to_bs(&self, k: usize, ris: &RisConfig) -> Result<Complex64> {
        effective_gain(&self.h_rb, ris, &self.h_kr[k], self.h_kb[k])
    }

    /// Effective gain of device `k` toward the eavesdropper.
    pub fn gain_to_eve(&self, k: usize, ris: &RisConfig) -> Result<Complex64> {
        effective_gain(&self.h_re, ris, &self.h_kr[k], self.h_ke[k])
    }
}
