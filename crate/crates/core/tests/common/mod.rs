//! Independent scalar re-implementations used as test oracles. Complex
//! numbers are plain `(re, im)` pairs so nothing here shares arithmetic with
//! the library.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use risfl::channel::RisConfig;
use risfl::exp::{build_scenario, Profile, SystemConfig};
use risfl::phy::{BandwidthAlloc, Selection};
use risfl::problem::{Decision, ProblemInstance};

pub type C = (f64, f64);

pub fn c(z: Complex64) -> C {
    (z.re, z.im)
}

pub fn mul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

pub fn conj(a: C) -> C {
    (a.0, -a.1)
}

pub fn add(a: C, b: C) -> C {
    (a.0 + b.0, a.1 + b.1)
}

pub fn abs2(a: C) -> f64 {
    a.0 * a.0 + a.1 * a.1
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// `sum_m conj(rx_m) * e^{j theta_m} * tx_m + direct`.
pub fn gain(rx: &[Complex64], theta: &[f64], tx: &[Complex64], direct: Complex64) -> C {
    let mut acc = c(direct);
    for m in 0..theta.len() {
        let e = (theta[m].cos(), theta[m].sin());
        acc = add(acc, mul(mul(conj(c(rx[m])), e), c(tx[m])));
    }
    acc
}

pub fn steering(len: usize, angle: f64) -> Vec<C> {
    (0..len)
        .map(|m| {
            let ph = std::f64::consts::PI * m as f64 * angle.sin();
            (ph.cos(), ph.sin())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RefDevice {
    pub k: usize,
    pub rate_bs: f64,
    pub rate_eve: f64,
    pub secrecy: f64,
    pub t_loc: f64,
    pub t_tot: f64,
}

#[derive(Debug, Clone)]
pub struct RefEval {
    pub devices: Vec<RefDevice>,
    pub latency: f64,
    pub bound: Option<f64>,
    pub penalty: f64,
}

pub fn bound(mu: f64, delta: f64, f0: f64, f_star: f64, rounds: u32, k: usize, n: usize) -> f64 {
    2.0 * mu * (f0 - f_star) / (rounds as f64 + 1.0) + 2.0 * delta * k as f64 / n as f64 - 2.0 * delta
}

pub fn evaluate(inst: &ProblemInstance, d: &Decision) -> RefEval {
    let ch = &inst.channels;
    let k = ch.h_kb.len();
    let th = d.ris.phases();
    let g_bs: Vec<C> = (0..k).map(|i| gain(&ch.h_rb.0, th, &ch.h_kr[i].0, ch.h_kb[i])).collect();
    let g_eve: Vec<C> = (0..k).map(|i| gain(&ch.h_re.0, th, &ch.h_kr[i].0, ch.h_ke[i])).collect();
    let x = &d.selection.x;
    let p: Vec<f64> = inst.pool.devices.iter().map(|dv| dv.tx_power_w).collect();
    let jam_bs: f64 = (0..k).filter(|&j| !x[j]).map(|j| p[j] * abs2(g_bs[j])).sum();
    let jam_eve: f64 = (0..k).filter(|&j| !x[j]).map(|j| p[j] * abs2(g_eve[j])).sum();
    let bw = inst.system_bandwidth_hz;
    let mut devices = Vec::new();
    for i in (0..k).filter(|&i| x[i]) {
        let b = d.alloc.shares[i];
        let rb = if b > 0.0 {
            b * bw * (1.0 + p[i] * abs2(g_bs[i]) / (jam_bs + inst.noise.sigma_b2)).log2()
        } else {
            0.0
        };
        let re = if b > 0.0 {
            b * bw * (1.0 + p[i] * abs2(g_eve[i]) / (jam_eve + inst.noise.sigma_e2)).log2()
        } else {
            0.0
        };
        let dv = &inst.pool.devices[i];
        let t_loc = dv.cycles_per_datum * dv.data_size / dv.cpu_freq_hz;
        let t_tr = if rb > 0.0 { dv.model_size_bits / rb } else { f64::INFINITY };
        devices.push(RefDevice {
            k: i,
            rate_bs: rb,
            rate_eve: re,
            secrecy: if rb > re { rb - re } else { 0.0 },
            t_loc,
            t_tot: t_loc + t_tr,
        });
    }
    let latency = devices.iter().map(|r| r.t_tot).fold(f64::NEG_INFINITY, f64::max);
    let latency = if devices.is_empty() { f64::INFINITY } else { latency };
    let n = devices.len();
    let cv = &inst.convergence;
    let bnd = (n > 0).then(|| bound(cv.mu, cv.delta, cv.f0, cv.f_star, cv.rounds, k, n));

    let w = &inst.penalties;
    let mut penalty = 0.0;
    let sum_b: f64 = (0..k).filter(|&i| x[i]).map(|i| d.alloc.shares[i]).sum();
    if sum_b > 1.0 + 1e-9 {
        penalty += w.bandwidth.base + w.bandwidth.scale * (sum_b - 1.0);
    }
    match bnd {
        Some(b) if b <= cv.accuracy_eps => {}
        Some(b) => penalty += w.accuracy.base + w.accuracy.scale * (b - cv.accuracy_eps) / cv.accuracy_eps.abs(),
        None => penalty += w.accuracy.base + w.accuracy.scale,
    }
    let short: f64 = devices
        .iter()
        .filter(|r| r.secrecy < inst.r_min_bps)
        .map(|r| (inst.r_min_bps - r.secrecy) / inst.r_min_bps)
        .sum();
    if devices.iter().any(|r| r.secrecy < inst.r_min_bps) {
        penalty += w.secrecy.base + w.secrecy.scale * short;
    }
    RefEval {
        devices,
        latency,
        bound: bnd,
        penalty,
    }
}

/// A random non-empty selection, random positive shares summing to one and
/// random phases.
pub fn random_decision<R: Rng>(k: usize, m: usize, bw: f64, rng: &mut R) -> Decision {
    let mut x: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.6)).collect();
    if !x.iter().any(|&v| v) {
        x[rng.gen_range(0..k)] = true;
    }
    let raw: Vec<f64> = x.iter().map(|&p| if p { rng.gen_range(0.05..1.0) } else { 0.0 }).collect();
    let s: f64 = raw.iter().sum();
    let shares = raw.iter().map(|v| v / s).collect();
    let phases = (0..m).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    Decision {
        selection: Selection::new(x),
        alloc: BandwidthAlloc::new(shares, bw),
        ris: RisConfig::new(phases).unwrap(),
    }
}

/// Random instance drawn from the desk profile with perturbed scalars.
pub fn random_instance(seed: u64) -> (SystemConfig, ProblemInstance) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut cfg = Profile::Desk.config();
    cfg.num_devices = rng.gen_range(2..=6);
    cfg.num_elements = rng.gen_range(1..=20);
    cfg.system_bandwidth_hz = rng.gen_range(1e6..2e7);
    cfg.r_min_bps = rng.gen_range(1e3..1e5);
    cfg.device.model_size_bits = rng.gen_range(1e6..5e6);
    cfg.convergence.accuracy_eps = rng.gen_range(0.05..1.5);
    let s = build_scenario(&cfg, seed).unwrap();
    (cfg, s.instance)
}

/// Max relative error between backprop and central finite differences of
/// `sum(g .* net(x))` over every parameter and input entry.
pub fn gradient_check(net: &mut risfl::nn::Mlp, x: &risfl::nn::Matrix, g: &risfl::nn::Matrix) -> f64 {
    use risfl::nn::Matrix;
    let f = |net: &risfl::nn::Mlp, x: &Matrix| -> f64 {
        let y = net.predict(x).unwrap();
        y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum()
    };
    net.zero_grad();
    let tape = net.forward(x).unwrap();
    let dx = net.backward(&tape, g).unwrap();
    let analytic = net.flat_grads();
    let params = net.flat_params();
    let h = 1e-6;
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for i in 0..params.len() {
        p[i] = params[i] + h;
        net.set_flat_params(&p).unwrap();
        let up = f(net, x);
        p[i] = params[i] - h;
        net.set_flat_params(&p).unwrap();
        let down = f(net, x);
        p[i] = params[i];
        worst = worst.max(rel(analytic[i], (up - down) / (2.0 * h)));
    }
    net.set_flat_params(&params).unwrap();
    let mut xp = x.clone();
    for i in 0..x.data.len() {
        xp.data[i] = x.data[i] + h;
        let up = f(net, &xp);
        xp.data[i] = x.data[i] - h;
        let down = f(net, &xp);
        xp.data[i] = x.data[i];
        worst = worst.max(rel(dx.data[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// A random small network with its input batch and output cotangent.
pub fn random_net(seed: u64) -> (risfl::nn::Mlp, risfl::nn::Matrix, risfl::nn::Matrix) {
    use risfl::nn::{Activation, Matrix, Mlp};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(1..4);
    let sizes: Vec<usize> = (0..=depth).map(|_| rng.gen_range(1..7)).collect();
    let acts = [Activation::Relu, Activation::Tanh, Activation::Linear];
    let hidden = acts[rng.gen_range(0..3)];
    let output = acts[rng.gen_range(0..3)];
    let net = Mlp::new(&sizes, hidden, output, &mut rng);
    let batch = rng.gen_range(1..5);
    let x = Matrix::from_vec(batch, sizes[0], (0..batch * sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let out = sizes[depth];
    let g = Matrix::from_vec(batch, out, (0..batch * out).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    (net, x, g)
}

/// Scalar forward pass from the flat parameter layout: per layer a row-major
/// `out x in` weight block followed by the bias.
pub fn mlp_forward(net: &risfl::nn::Mlp, x: &[f64]) -> Vec<f64> {
    use risfl::nn::Activation;
    let sizes = net.sizes();
    let (hidden, output) = net.activations();
    let p = net.flat_params();
    let mut off = 0;
    let mut h = x.to_vec();
    for l in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = &p[off..off + n_in * n_out];
        let b = &p[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let act = if l + 2 == sizes.len() { output } else { hidden };
        h = (0..n_out)
            .map(|o| {
                let z = b[o] + (0..n_in).map(|i| w[o * n_in + i] * h[i]).sum::<f64>();
                match act {
                    Activation::Relu => z.max(0.0),
                    Activation::Tanh => z.tanh(),
                    Activation::Linear => z,
                }
            })
            .collect();
    }
    h
}
