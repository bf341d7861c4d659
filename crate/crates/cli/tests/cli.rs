use std::path::Path;
use std::process::{Command, Output};

use anyhow::Result;
use stn_core::config::{paper_fig4, ExperimentConfig};

fn stn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stn-sim")).args(args).env_remove("STN_SIM_SEED").output().unwrap()
}

fn tiny_config(dir: &Path) -> Result<String> {
    let mut cfg = paper_fig4();
    cfg.episodes = 10;
    cfg.eval_episodes = 2;
    cfg.checkpoint_every = 5;
    cfg.sac.hidden = vec![16];
    cfg.sac.warmup = 32;
    cfg.sac.batch_size = 16;
    let path = dir.join("tiny.json");
    std::fs::write(&path, cfg.to_json())?;
    Ok(path.display().to_string())
}

#[test]
fn evaluate_learned_scheme_without_checkpoint_is_a_config_error() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let c = tiny_config(dir.path())?;
    let out = stn(&["evaluate", "--config", &c, "--seed", "1", "--out", &dir.path().join("o").display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    Ok(())
}

#[test]
fn train_without_seed_is_a_config_error() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let c = tiny_config(dir.path())?;
    let out = stn(&["train", "--config", &c, "--out", &dir.path().join("o").display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    Ok(())
}

#[test]
fn seed_env_var_is_a_fallback() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let c = tiny_config(dir.path())?;
    let o = dir.path().join("o");
    let out = Command::new(env!("CARGO_BIN_EXE_stn-sim"))
        .args(["evaluate", "--config", &c, "--scheme", "rrp", "--out", &o.display().to_string()])
        .env("STN_SIM_SEED", "77")
        .output()?;
    assert!(out.status.success());
    let eff = ExperimentConfig::from_json(&std::fs::read_to_string(o.join("effective_config.json"))?)?;
    assert_eq!(eff.seed, Some(77));
    Ok(())
}

#[test]
fn short_training_run_writes_its_manifest() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let c = tiny_config(dir.path())?;
    let o = dir.path().join("o");
    let out = stn(&["train", "--config", &c, "--seed", "42", "--out", &o.display().to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "effective_config.json",
        "train_log.csv",
        "episodes.csv",
        "tasks.csv",
        "slots.csv",
        "fig5.csv",
        "checkpoints/cc-masac-ep00005.json",
        "checkpoints/cc-masac-ep00010.json",
        "checkpoints/cc-masac-final.json",
    ] {
        assert!(o.join(f).is_file(), "missing {f}");
    }
    let eff = ExperimentConfig::from_json(&std::fs::read_to_string(o.join("effective_config.json"))?)?;
    assert_eq!(eff.seed, Some(42));
    let episodes = std::fs::read_to_string(o.join("episodes.csv"))?;
    assert_eq!(episodes.lines().count(), 11);

    let ck = o.join("checkpoints/cc-masac-final.json").display().to_string();
    let e = dir.path().join("e");
    let out = stn(&["evaluate", "--config", &c, "--seed", "42", "--checkpoint", &ck, "--out", &e.display().to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["eval_tasks.csv", "eval_episodes.csv", "eval_summary.json", "paths.jsonl", "fig6.csv"] {
        assert!(e.join(f).is_file(), "missing {f}");
    }
    Ok(())
}

#[test]
fn validate_config_round_trips() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let c = tiny_config(dir.path())?;
    let out = stn(&["validate-config", "--config", &c]);
    assert!(out.status.success());
    let printed = ExperimentConfig::from_json(&String::from_utf8(out.stdout)?)?;
    let original = ExperimentConfig::from_json(&std::fs::read_to_string(&c)?)?;
    assert_eq!(printed, original);
    Ok(())
}

#[test]
fn invalid_config_names_the_field() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let mut v: serde_json::Value = serde_json::from_str(&paper_fig4().to_json())?;
    v["workload"]["video_ratio"] = serde_json::json!(1.5);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v)?)?;
    let out = stn(&["validate-config", "--config", &path.display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("video_ratio"));
    Ok(())
}

#[test]
fn shipped_preset_matches_builtin() -> Result<()> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/paper-fig4.json"))?;
    assert_eq!(ExperimentConfig::from_json(&text)?, paper_fig4());
    Ok(())
}
