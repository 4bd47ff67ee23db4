//! The `train` command: fit a policy on a pool of training contexts.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use robust_wmmse::policy::{
    improvement_trend, train_policy, BanditEnv, EnvConfig, PolicyParams, PrecodingEnv, TraceRow,
    TrainConfig, TrainOutput,
};
use robust_wmmse::rng::{substream, tags};
use robust_wmmse::Telemetry;

use crate::config::Config;
use crate::report::{num, writer};

pub const TRACE_HEADER: [&str; 5] = ["episode", "reward", "depth", "grad_norm", "skipped"];

/// Environment for the first `k_users` and `snr_db` entries. Training
/// scenarios are keyed by the seed, so a different seed trains on
/// different channels.
pub fn env_config(cfg: &Config, seed: u64) -> Result<EnvConfig> {
    Ok(EnvConfig {
        dims: cfg.dims(cfg.k_users[0], cfg.snr_db[0])?,
        scenario: cfg.scenario(),
        n_scenarios: cfg.train_scenarios,
        blocks: cfg.train_blocks.clone(),
        n_mc: cfg.reward_n_mc,
        du: cfg.du_options()?,
        seed,
    })
}

pub fn train_config(cfg: &Config, seed: u64) -> Result<TrainConfig> {
    if cfg.episodes == 0 {
        bail!("episodes must be at least 1");
    }
    Ok(TrainConfig {
        episodes: cfg.episodes,
        learning_rate: cfg.learning_rate,
        baseline_rate: cfg.baseline_rate,
        clip_norm: cfg.clip_norm,
        reward_bound: cfg.reward_bound,
        grad_bound: cfg.grad_bound,
        seed,
    })
}

pub fn initial_policy(env: &PrecodingEnv, seed: u64) -> Result<PolicyParams> {
    Ok(PolicyParams::init(
        env.meta(),
        env.context_shape(),
        env.action_dim(),
        env.scale_groups(),
        env.depth_bias_index(),
        &mut substream(seed, &[tags::INIT]),
    )?)
}

pub struct TrainRun {
    pub env: PrecodingEnv,
    pub output: TrainOutput,
    /// Mean reward over the first and the last 10% of episodes.
    pub trend: (f64, f64),
}

pub fn train(cfg: &Config, seed: u64) -> Result<TrainRun> {
    let tc = train_config(cfg, seed)?;
    let env = PrecodingEnv::new(env_config(cfg, seed)?)?;
    let p0 = initial_policy(&env, seed)?;
    let output = train_policy(&env, p0, &tc, &mut Telemetry::new())?;
    let trend = improvement_trend(&output.trace, 0.1);
    Ok(TrainRun { env, output, trend })
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record([
            r.episode.to_string(),
            num(r.reward),
            r.depth.to_string(),
            num(r.grad_norm),
            u8::from(r.skipped).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_policy(path: &Path, p: &PolicyParams) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    p.write_checkpoint(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    let f = File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    PolicyParams::read_checkpoint(BufReader::new(f))
        .with_context(|| format!("reading checkpoint {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Config {
        Config::parse("m_t = 8\nk_users = [2]\nn_sub = 12\nf_tilde = 3\nepisodes = 4\ntrain_scenarios = 1\nreward_n_mc = 4").unwrap()
    }

    #[test]
    fn zero_episodes_is_an_error() {
        let cfg = Config {
            episodes: 0,
            ..small()
        };
        assert!(train(&cfg, 1).is_err());
    }

    #[test]
    fn checkpoint_round_trip_through_files() {
        let run = train(&small(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("policy.ckpt");
        save_policy(&p, &run.output.params).unwrap();
        assert_eq!(load_policy(&p).unwrap(), run.output.params);
        let t = dir.path().join("trace.csv");
        write_trace(&t, &run.output.trace).unwrap();
        let text = std::fs::read_to_string(&t).unwrap();
        assert!(text.starts_with("episode,reward,depth,grad_norm,skipped\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
