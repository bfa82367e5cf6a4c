use std::fs;
use std::process::Command;

use risfl::exp::cli::{run, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK};
use risfl::exp::records::{self, CurveRow, RunRecord, StepRow, SweepRow, CURVE_COLUMNS, STEP_COLUMNS, SWEEP_COLUMNS};
use risfl::exp::{load_config, run_sweep, train_scheme, PolicyCache, Profile, Scheme, SweepAxis, SweepSpec, SystemConfig};
use risfl::Error;

fn argv(dir: &std::path::Path, rest: &[&str]) -> Vec<String> {
    let mut v = vec!["risfl".to_string(), "--out-dir".into(), dir.display().to_string()];
    v.extend(rest.iter().map(|s| s.to_string()));
    v
}

fn header(path: &std::path::Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().next().unwrap().split(',').map(str::to_string).collect()
}

#[test]
fn empty_config_file_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.toml");
    fs::write(&p, "").unwrap();
    let cfg = load_config(&p).unwrap();
    assert_eq!(cfg, SystemConfig::default());
    assert_eq!(cfg.num_devices, 5);
    assert_eq!(cfg.num_elements, 50);
    assert_eq!(cfg.device.model_size_bits, 3e6);
    assert_eq!(cfg.noise.sigma_b2, 1e-14);
}

#[test]
fn negative_noise_names_the_field() {
    let err = SystemConfig::from_toml_str("[noise]\nsigma_b2 = -1.0\n", &SystemConfig::default()).unwrap_err();
    match err {
        Error::Config { field, .. } => assert_eq!(field, "noise.sigma_b2"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_key_is_rejected() {
    assert!(SystemConfig::from_toml_str("bogus = 1\n", &SystemConfig::default()).is_err());
    assert!(SystemConfig::from_toml_str("[agent]\nlr = 1\n", &SystemConfig::default()).is_err());
}

#[test]
fn save_and_load_preserves_hash() {
    for profile in [Profile::Paper, Profile::Desk, Profile::Tiny] {
        let cfg = profile.config();
        let text = cfg.to_toml_string().unwrap();
        let back = SystemConfig::from_toml_str(&text, &SystemConfig::default()).unwrap();
        assert_eq!(back.hash(), cfg.hash());
    }
}

#[test]
fn oracle_command_on_fixture_writes_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(argv(dir.path(), &["oracle"]));
    assert!(code == EXIT_OK || code == EXIT_INFEASIBLE);
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("oracle_certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["schema"], 1);
    assert_eq!(cert["optimum"].is_null(), code == EXIT_INFEASIBLE);
}

#[test]
fn oracle_command_reports_infeasible_instances() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("hard.toml");
    fs::write(&p, "[convergence]\naccuracy_eps = 0.01\n").unwrap();
    let code = run(argv(dir.path(), &["--config", p.to_str().unwrap(), "oracle"]));
    assert_eq!(code, EXIT_INFEASIBLE);
}

#[test]
fn train_with_zero_episodes_is_a_valid_empty_run() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(argv(dir.path(), &["--profile", "tiny", "--seed", "3", "train", "--episodes", "0"]));
    assert_eq!(code, EXIT_OK);
    let run_dir = dir.path().join("proposed_seed3");
    assert_eq!(header(&run_dir.join("curve.csv")), CURVE_COLUMNS);
    assert_eq!(header(&run_dir.join("steps.csv")), STEP_COLUMNS);
    let rec = RunRecord::read(&run_dir.join("manifest.json")).unwrap();
    assert_eq!(rec.episodes, 0);
    assert!(rec.episode_rewards.is_empty());
    assert_eq!(rec.config_hash, rec.config.hash());
    assert_eq!(rec.schema_version, records::SCHEMA_VERSION);
}

#[test]
fn train_then_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, "[env]\nepisode_len = 5\n[agent]\nwarmup_steps = 5\nbatch_size = 4\n").unwrap();
    let base = |rest: &[&str]| {
        let mut v = argv(dir.path(), &["--profile", "tiny", "--config", cfg.to_str().unwrap()]);
        v.extend(rest.iter().map(|s| s.to_string()));
        v
    };
    assert_eq!(run(base(&["train", "--episodes", "3"])), EXIT_OK);
    let run_dir = dir.path().join("proposed_seed0");
    let curve: Vec<CurveRow> = records::read_csv(&run_dir.join("curve.csv")).unwrap();
    assert_eq!(curve.len(), 3);
    let steps: Vec<StepRow> = records::read_csv(&run_dir.join("steps.csv")).unwrap();
    assert_eq!(steps.len(), 15);
    assert_eq!(header(&run_dir.join("curve.csv")), CURVE_COLUMNS);
    assert_eq!(header(&run_dir.join("steps.csv")), STEP_COLUMNS);
    let ckpt = run_dir.join("agent.ckpt");
    assert_eq!(run(base(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--steps", "2"])), EXIT_OK);
    let manifest = run_dir.join("manifest.json");
    assert_eq!(run(base(&["export", "--run", manifest.to_str().unwrap()])), EXIT_OK);
    assert_eq!(header(&dir.path().join("export_curve.csv")), CURVE_COLUMNS);
}

#[test]
fn unknown_flag_exits_two_with_usage() {
    let out = Command::new(env!("CARGO_BIN_EXE_risfl")).arg("--frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "[noise]\nsigma_b2 = -1.0\n").unwrap();
    assert_eq!(run(argv(dir.path(), &["--config", p.to_str().unwrap(), "train", "--episodes", "0"])), EXIT_CONFIG);
    let missing = dir.path().join("missing.toml");
    assert_eq!(run(argv(dir.path(), &["--config", missing.to_str().unwrap(), "oracle"])), EXIT_CONFIG);
    fs::write(&p, "not = [valid").unwrap();
    assert_eq!(run(argv(dir.path(), &["--config", p.to_str().unwrap(), "oracle"])), EXIT_CONFIG);
}

#[test]
fn verify_bound_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(argv(dir.path(), &["verify-bound", "--seeds", "3", "--rounds", "20"])), EXIT_OK);
}

#[test]
fn sweep_writes_one_row_per_scheme_and_point() {
    let mut cfg = Profile::Tiny.config();
    cfg.env.episode_len = 4;
    cfg.run.episodes = 1;
    cfg.run.eval_steps = 2;
    cfg.agent.warmup_steps = 1;
    cfg.agent.batch_size = 2;
    let spec = SweepSpec {
        axis: SweepAxis::Bandwidth,
        values: vec![1e7],
        seeds: vec![0],
        schemes: vec![Scheme::Proposed, Scheme::Rds],
        reuse_policies: true,
    };
    let rows = run_sweep(&cfg, &spec, &mut PolicyCache::default()).unwrap();
    assert_eq!(rows.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sweep.csv");
    records::write_csv_with_header(&p, SWEEP_COLUMNS, &rows).unwrap();
    assert_eq!(header(&p), SWEEP_COLUMNS);
    let back: Vec<SweepRow> = records::read_csv(&p).unwrap();
    assert_eq!(back, rows);
}

#[test]
fn same_config_and_seed_replays_identically() {
    let mut cfg = Profile::Tiny.config();
    cfg.agent.warmup_steps = 20;
    cfg.agent.batch_size = 8;
    for scheme in [Scheme::Proposed, Scheme::Ddpg, Scheme::RandomPhase] {
        let a = train_scheme(&cfg, scheme, 4, 5).unwrap();
        let b = train_scheme(&cfg, scheme, 4, 5).unwrap();
        assert_eq!(a.outcome.episode_rewards, b.outcome.episode_rewards);
        assert_eq!(a.steps, b.steps);
        let c = train_scheme(&cfg, scheme, 5, 5).unwrap();
        assert_ne!(a.outcome.episode_rewards, c.outcome.episode_rewards);
    }
}

#[test]
fn csv_column_sets_are_stable() {
    assert_eq!(CURVE_COLUMNS, ["schema_version", "scheme", "seed", "episode", "mean_reward", "mean_latency"]);
    assert_eq!(
        STEP_COLUMNS,
        ["schema_version", "episode", "step", "reward", "latency", "penalty", "participants", "feasible"]
    );
    assert_eq!(
        SWEEP_COLUMNS,
        ["schema_version", "axis", "value", "scheme", "seed", "latency", "reward", "feasible_fraction", "config_hash"]
    );
    assert_eq!(records::SCHEMA_VERSION, 1);
}

#[test]
fn desk_training_improves_on_its_first_episodes() {
    let cfg = Profile::Desk.config();
    let mut improved = 0;
    for seed in 0..5 {
        let r = train_scheme(&cfg, Scheme::Proposed, seed, cfg.run.episodes).unwrap().outcome.episode_rewards;
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        if mean(&r[r.len() - 20..]) > mean(&r[..20]) {
            improved += 1;
        }
    }
    assert_eq!(improved, 5);
}

#[test]
fn short_tiny_run_matches_golden_record() {
    let cfg = Profile::Tiny.config();
    let run = train_scheme(&cfg, Scheme::Proposed, 0, 5).unwrap();
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_tiny_seed0.json");
    let golden: Vec<u64> = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let got: Vec<u64> = run.outcome.episode_rewards.iter().map(|r| r.to_bits()).collect();
    assert_eq!(got, golden);
}
