mod common;

use std::f64::consts::{PI, TAU};

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use risfl::channel::{ComplexVec, RisConfig};
use risfl::env::ActionMask;
use risfl::exp::{build_scenario, make_env, Profile, SystemConfig};
use risfl::oracle::{
    exhaustive_solve, fba_solve, instance_hash, random_phase_solve, random_phases, rds_solve, GridSpec, OracleCertificate,
};
use risfl::phy::{BandwidthAlloc, DevicePool, Selection};
use risfl::problem::{Decision, ProblemInstance};
use risfl::Error;

fn tiny(seed: u64) -> (SystemConfig, ProblemInstance) {
    let cfg = Profile::Tiny.config();
    let inst = build_scenario(&cfg, seed).unwrap().instance;
    (cfg, inst)
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

#[test]
fn paper_profile_state_has_eleven_entries() {
    let cfg = Profile::Paper.config();
    let env = make_env(&cfg, 0, ActionMask::default()).unwrap();
    assert_eq!(env.state_dim(), 11);
    assert_eq!(env.action_dim(), 2 * 5 + 50);
    assert_eq!(env.state().len(), 11);
}

#[test]
fn step_reward_state_and_decode_match_reference() {
    let cfg = Profile::Desk.config();
    let mut env = make_env(&cfg, 3, ActionMask::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    env.reset(&mut rng).unwrap();
    let (k, m) = (cfg.num_devices, cfg.num_elements);
    for _ in 0..50 {
        let raw: Vec<f64> = (0..2 * k + m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let inst = env.instance().clone();
        let (t, info) = env.step(&raw, &mut rng).unwrap();

        let x: Vec<bool> = raw[..k].iter().map(|&v| v > 0.0).collect();
        assert_eq!(info.decision.selection.x, x);
        let z: f64 = (0..k).filter(|&i| x[i]).map(|i| softplus(raw[k + i])).sum();
        for i in 0..k {
            let want = if x[i] { softplus(raw[k + i]) / z } else { 0.0 };
            assert!((info.decision.alloc.shares[i] - want).abs() < 1e-12);
        }
        for (j, &th) in info.decision.ris.phases().iter().enumerate() {
            assert!((th - PI * (raw[2 * k + j] + 1.0)).abs() < 1e-12);
        }

        let r = common::evaluate(&inst, &info.decision);
        let want = -r.latency.min(env.latency_cap()) - r.penalty;
        assert!(rel_err(t.reward, want) < 1e-9, "{} vs {want}", t.reward);
        assert!(t.reward.is_finite() && t.reward <= 0.0);

        let ch = &env.instance().channels;
        let total: f64 = (0..k).filter(|&i| x[i]).map(|i| info.decision.alloc.shares[i]).sum();
        assert!((t.next_state[0] - total).abs() < 1e-12);
        for i in 0..k {
            let g = gain(&ch.h_rb.0, info.decision.ris.phases(), &ch.h_kr[i].0, ch.h_kb[i]);
            let s = env.gain_scale();
            assert!((t.next_state[1 + 2 * i] - g.0 * s).abs() < 1e-9 * (1.0 + g.0.abs() * s));
            assert!((t.next_state[2 + 2 * i] - g.1 * s).abs() < 1e-9 * (1.0 + g.1.abs() * s));
        }
        assert_eq!(t.action, raw);
    }
}

#[test]
fn masked_entries_are_overridden_and_recorded_action_untouched() {
    let cfg = Profile::Desk.config();
    let mask = ActionMask {
        fixed_bandwidth: true,
        random_phase: true,
    };
    let mut env = make_env(&cfg, 1, mask).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    env.reset(&mut rng).unwrap();
    let raw = vec![0.5; env.action_dim()];
    let (t, info) = env.step(&raw, &mut rng).unwrap();
    assert_eq!(t.action, raw);
    for &b in &info.decision.alloc.shares {
        assert!((b - 1.0 / cfg.num_devices as f64).abs() < 1e-15);
    }
    assert!(info.decision.ris.phases().iter().any(|&p| (p - 1.5 * PI).abs() > 1e-9));
}

#[test]
fn reset_is_deterministic_per_seed() {
    let cfg = Profile::Desk.config();
    let run = |seed: u64| {
        let mut env = make_env(&cfg, 2, ActionMask::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = vec![env.reset(&mut rng).unwrap()];
        for _ in 0..5 {
            let a: Vec<f64> = (0..env.action_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            states.push(env.step(&a, &mut rng).unwrap().0.next_state);
        }
        states.push(env.reset(&mut rng).unwrap());
        states
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}

#[test]
fn all_plus_one_action_gives_full_participation_equal_split() {
    let cfg = Profile::Desk.config();
    let mut env = make_env(&cfg, 0, ActionMask::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, info) = env.step(&vec![1.0; env.action_dim()], &mut rng).unwrap();
    assert_eq!(info.decision.selection, Selection::all(cfg.num_devices));
    for &b in &info.decision.alloc.shares {
        assert!((b - 0.2).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn rewards_are_finite_and_nonpositive(seed in 0u64..500, raw in proptest::collection::vec(-3.0f64..3.0, 2 * 5 + 16)) {
        let cfg = Profile::Desk.config();
        let mut env = make_env(&cfg, seed % 7, ActionMask::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, info) = env.step(&raw, &mut rng).unwrap();
        prop_assert!(t.reward.is_finite());
        prop_assert!(t.reward <= 0.0);
        prop_assert!(info.latency <= env.latency_cap());
        prop_assert_eq!(info.clipped, raw.iter().filter(|v| v.abs() > 1.0).count());
    }
}

/// Plain nested-loop enumeration of the same grid, using the library only to
/// score a decision.
fn reference_optimum(inst: &ProblemInstance, grid: &GridSpec, reverse: bool) -> Option<f64> {
    let k = inst.num_devices();
    let m = inst.num_elements();
    let n = grid.bandwidth_steps;
    let mut best: Option<f64> = None;
    let mut masks: Vec<usize> = (0..1 << k).collect();
    if reverse {
        masks.reverse();
    }
    for mask in masks {
        let x: Vec<bool> = (0..k).map(|i| mask >> i & 1 == 1).collect();
        let parts: Vec<usize> = (0..k).filter(|&i| x[i]).collect();
        if parts.is_empty() {
            continue;
        }
        // Every assignment of 1..n lattice units to participants summing to n.
        let mut splits = Vec::new();
        let mut counts = vec![1usize; parts.len()];
        loop {
            if counts.iter().sum::<usize>() == n {
                splits.push(counts.clone());
            }
            let mut i = 0;
            while i < counts.len() {
                counts[i] += 1;
                if counts[i] <= n {
                    break;
                }
                counts[i] = 1;
                i += 1;
            }
            if i == counts.len() {
                break;
            }
        }
        for split in splits {
            let mut shares = vec![0.0; k];
            for (&p, &c) in parts.iter().zip(&split) {
                shares[p] = c as f64 / n as f64;
            }
            for idx in 0..grid.phase_levels.pow(m as u32) {
                let phases: Vec<f64> = (0..m)
                    .map(|j| TAU * ((idx / grid.phase_levels.pow(j as u32)) % grid.phase_levels) as f64 / grid.phase_levels as f64)
                    .collect();
                let d = Decision {
                    selection: Selection::new(x.clone()),
                    alloc: BandwidthAlloc::new(shares.clone(), inst.system_bandwidth_hz),
                    ris: RisConfig::new(phases).unwrap(),
                };
                let e = inst.evaluate(&d).unwrap();
                if e.slacks.feasible() {
                    let l = e.report.round_latency;
                    if best.map_or(true, |b| l < b) {
                        best = Some(l);
                    }
                }
            }
        }
    }
    best
}

#[test]
fn exhaustive_optimum_equals_independent_enumeration() {
    let grid = GridSpec::default();
    for seed in [0u64, 7, 11] {
        let (_, inst) = tiny(seed);
        let sol = exhaustive_solve(&inst, &grid).unwrap();
        let fwd = reference_optimum(&inst, &grid, false);
        let rev = reference_optimum(&inst, &grid, true);
        assert_eq!(sol.as_ref().map(|s| s.latency), fwd, "seed {seed}");
        assert_eq!(fwd, rev);
        if let Some(s) = sol {
            assert_eq!(s.evaluated as u128, grid.count(3, 2));
            let r = common::evaluate(&inst, &s.decision);
            assert!(rel_err(r.latency, s.latency) < 1e-9);
            assert_eq!(r.penalty, 0.0);
        }
    }
}

#[test]
fn baselines_never_beat_the_oracle() {
    let grid = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seed in 0..6u64 {
        let (_, inst) = tiny(seed);
        let Some(opt) = exhaustive_solve(&inst, &grid).unwrap() else { continue };
        if let Some(f) = fba_solve(&inst, &grid).unwrap() {
            assert!(f.latency >= opt.latency);
        }
        for _ in 0..5 {
            let (_, rp) = random_phase_solve(&inst, &grid, Some(grid.phase_levels), &mut rng).unwrap();
            if let Some(rp) = rp {
                assert!(rp.latency >= opt.latency);
            }
        }
        for _ in 0..200 {
            let d = rds_solve(&inst, Some(grid.phase_levels), &mut rng);
            let e = inst.evaluate(&d).unwrap();
            if e.slacks.feasible() && d.alloc.shares.iter().all(|&b| (b * 12.0 - (b * 12.0).round()).abs() < 1e-9) {
                assert!(e.report.round_latency >= opt.latency);
            }
        }
    }
}

#[test]
fn fba_uses_equal_split() {
    let (_, inst) = tiny(0);
    if let Some(f) = fba_solve(&inst, &GridSpec::default()).unwrap() {
        let n = f.decision.selection.num_participants() as f64;
        for k in f.decision.selection.participants() {
            assert_eq!(f.decision.alloc.shares[k], 1.0 / n);
        }
    }
}

#[test]
fn rds_is_reproducible_and_honors_min_participants() {
    let (cfg, inst) = tiny(1);
    let a = rds_solve(&inst, None, &mut ChaCha8Rng::seed_from_u64(5));
    let b = rds_solve(&inst, None, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a, b);
    let min = risfl::convergence::min_participants(&cfg.convergence, cfg.num_devices).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let d = rds_solve(&inst, None, &mut rng);
        let n = d.selection.num_participants();
        assert!(n >= min);
        for k in d.selection.participants() {
            assert!((d.alloc.shares[k] - 1.0 / n as f64).abs() < 1e-15);
        }
    }
}

#[test]
fn random_phases_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n / 4).flat_map(|_| random_phases(4, None, &mut rng).phases().to_vec()).collect();
    xs.sort_by(f64::total_cmp);
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x / TAU;
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // 1 % critical value of the KS statistic.
    assert!(d < 1.63 / (n as f64).sqrt(), "D = {d}");
    assert!(xs.iter().all(|&x| (0.0..=TAU).contains(&x)));
}

#[test]
fn single_device_without_ris_returns_its_only_point() {
    let (_, mut inst) = tiny(0);
    let ch = &mut inst.channels;
    ch.h_rb = ComplexVec(Vec::new());
    ch.h_re = ComplexVec(Vec::new());
    ch.h_kr = vec![ComplexVec(Vec::new())];
    ch.h_kb.truncate(1);
    ch.h_ke.truncate(1);
    inst.pool = DevicePool::uniform(inst.pool.devices[0], 1);
    inst.r_min_bps = 0.0;
    let sol = exhaustive_solve(&inst, &GridSpec::default()).unwrap().unwrap();
    assert_eq!(sol.decision.selection, Selection::all(1));
    assert_eq!(sol.decision.alloc.shares, vec![1.0]);
    assert_eq!(sol.evaluated, 2);
    let r = common::evaluate(&inst, &sol.decision);
    assert!(rel_err(r.latency, sol.latency) < 1e-12);
}

#[test]
fn unreachable_accuracy_is_infeasible() {
    let (_, mut inst) = tiny(0);
    inst.convergence.accuracy_eps = 0.01;
    let grid = GridSpec::default();
    assert!(exhaustive_solve(&inst, &grid).unwrap().is_none());
    let cert = OracleCertificate::new(&inst, &grid, None).unwrap();
    assert!(cert.optimum.is_none());
    assert_eq!(cert.feasible, 0);
}

#[test]
fn oversized_instances_are_refused() {
    let cfg = Profile::Desk.config();
    let inst = build_scenario(&cfg, 0).unwrap().instance;
    assert!(exhaustive_solve(&inst, &GridSpec::default()).is_err());
    let (_, small) = tiny(0);
    let grid = GridSpec {
        budget: 10,
        ..GridSpec::default()
    };
    match exhaustive_solve(&small, &grid) {
        Err(Error::Budget { required, budget }) => {
            assert_eq!(required, grid.count(3, 2));
            assert_eq!(budget, 10);
        }
        other => panic!("expected a budget error, got {other:?}"),
    }
}

#[test]
fn certificate_records_instance_hash_and_optimum() {
    let (_, inst) = tiny(7);
    let grid = GridSpec::default();
    let sol = exhaustive_solve(&inst, &grid).unwrap();
    let cert = OracleCertificate::new(&inst, &grid, sol.as_ref()).unwrap();
    assert_eq!(cert.instance_hash, instance_hash(&inst).unwrap());
    assert_eq!(cert.instance_hash.len(), 64);
    let json = serde_json::to_value(&cert).unwrap();
    for key in ["schema", "instance_hash", "grid", "evaluated", "feasible", "optimum"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    if let (Some(s), Some(o)) = (sol, cert.optimum) {
        assert_eq!(o.latency, s.latency);
    }
}
