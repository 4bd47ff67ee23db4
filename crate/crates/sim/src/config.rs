//! Experiment configuration: a flat `key = value` file (TOML syntax, no
//! tables). Every key is optional; unknown keys are an error.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use robust_wmmse::channel::{ScenarioParams, SystemDims};
use robust_wmmse::du::{DuOptions, InverseMode, Pruning};
use serde::Deserialize;

/// Algorithms the `run` command can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    /// Deterministic WMMSE on the posterior mean.
    Wmmse,
    /// Stochastic WMMSE (sample average).
    Swmmse,
    /// Unfolded network without compensation.
    Du,
    /// Unfolded network driven by a trained policy.
    Rlddu,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Wmmse,
        Algorithm::Swmmse,
        Algorithm::Du,
        Algorithm::Rlddu,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Wmmse => "wmmse",
            Algorithm::Swmmse => "swmmse",
            Algorithm::Du => "du",
            Algorithm::Rlddu => "rlddu",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| {
                anyhow!("unknown algorithm '{s}' (expected one of wmmse, swmmse, du, rlddu)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // system
    pub m_t: usize,
    pub m_r: usize,
    /// One grid point per entry.
    pub k_users: Vec<usize>,
    pub n_sub: usize,
    pub n_blocks: usize,
    pub p_max: f64,
    /// One grid point per entry.
    pub snr_db: Vec<f64>,

    // scenario generator
    pub sparsity_b: usize,
    pub taps: usize,
    pub delay_spread: f64,
    pub leakage: f64,
    pub est_error: f64,
    pub aging: Option<Vec<f64>>,

    // evaluation
    pub seed: u64,
    pub seeds: usize,
    pub blocks: Vec<usize>,
    pub algorithms: Vec<String>,
    pub n_mc: usize,
    /// Also write `timings.csv` (wall-clock, not reproducible).
    pub timings: bool,

    // solvers
    pub wmmse_iters: usize,
    pub swmmse_iters: usize,
    pub saa_batch: usize,
    pub layers: usize,
    /// Sampled subcarriers `F̃`; `0` uses all of them.
    pub f_tilde: usize,
    /// Beam pruning is on when `energy_keep < 1` or `b_cap > 0`.
    pub energy_keep: f64,
    pub b_cap: usize,
    /// `dense` or `structured`.
    pub inverse: String,
    pub q_cap: usize,
    pub q_threshold: f64,
    /// Policy checkpoint for `rlddu`.
    pub checkpoint: Option<PathBuf>,

    // training
    pub episodes: usize,
    pub learning_rate: f64,
    pub baseline_rate: f64,
    pub clip_norm: f64,
    pub reward_bound: f64,
    pub grad_bound: f64,
    pub train_scenarios: usize,
    pub train_blocks: Vec<usize>,
    pub reward_n_mc: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            m_t: 16,
            m_r: 2,
            k_users: vec![3],
            n_sub: 24,
            n_blocks: 6,
            p_max: 1.0,
            snr_db: vec![20.0],
            sparsity_b: 6,
            taps: 3,
            delay_spread: 0.7,
            leakage: 1e-3,
            est_error: 0.0,
            aging: None,
            seed: 0,
            seeds: 20,
            blocks: vec![1, 2, 3, 4, 5, 6],
            algorithms: vec!["wmmse".into(), "swmmse".into(), "du".into()],
            n_mc: 512,
            timings: false,
            wmmse_iters: 30,
            swmmse_iters: 30,
            saa_batch: 32,
            layers: 5,
            f_tilde: 5,
            energy_keep: 1.0,
            b_cap: 0,
            inverse: "dense".into(),
            q_cap: 30,
            q_threshold: 1e-3,
            checkpoint: None,
            episodes: 1000,
            learning_rate: 1e-4,
            baseline_rate: 0.05,
            clip_norm: 10.0,
            reward_bound: 1e6,
            grad_bound: 1e8,
            train_scenarios: 4,
            train_blocks: vec![1, 6],
            reward_n_mc: 256,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| anyhow!("config: {}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_users.is_empty() || self.snr_db.is_empty() {
            bail!("k_users and snr_db need at least one value");
        }
        for &k in &self.k_users {
            self.dims(k, self.snr_db[0])?;
        }
        for &s in &self.snr_db {
            if !s.is_finite() {
                bail!("snr_db must be finite");
            }
        }
        self.algorithms()?;
        if self.seeds == 0 || self.n_mc == 0 || self.reward_n_mc == 0 {
            bail!("seeds, n_mc and reward_n_mc must be at least 1");
        }
        for (name, list) in [
            ("blocks", &self.blocks),
            ("train_blocks", &self.train_blocks),
        ] {
            if list.is_empty() {
                bail!("{name} is empty");
            }
            if let Some(b) = list.iter().find(|&&b| b == 0 || b > self.n_blocks) {
                bail!("{name}: block {b} outside 1..={}", self.n_blocks);
            }
        }
        if self.wmmse_iters == 0
            || self.swmmse_iters == 0
            || self.saa_batch == 0
            || self.layers == 0
        {
            bail!("iteration counts, saa_batch and layers must be at least 1");
        }
        if self.f_tilde != 0 && (self.f_tilde < 3 || self.f_tilde > self.n_sub) {
            bail!(
                "f_tilde = {} must be 0 (all) or in 3..={}",
                self.f_tilde,
                self.n_sub
            );
        }
        if !(self.energy_keep > 0.0 && self.energy_keep <= 1.0) {
            bail!("energy_keep must lie in (0, 1]");
        }
        self.inverse_mode()?;
        if self.train_scenarios == 0 {
            bail!("train_scenarios must be at least 1");
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("reward_bound", self.reward_bound),
            ("grad_bound", self.grad_bound),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                bail!("{name} must be finite and nonnegative");
            }
        }
        if !(self.baseline_rate > 0.0 && self.baseline_rate <= 1.0) {
            bail!("baseline_rate must lie in (0, 1]");
        }
        if self.algorithms()?.contains(&Algorithm::Rlddu) {
            match &self.checkpoint {
                None => bail!("rlddu needs a checkpoint"),
                Some(p) if !p.is_file() => bail!("checkpoint {} does not exist", p.display()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>> {
        if self.algorithms.is_empty() {
            bail!("the algorithm list is empty");
        }
        let mut out = Vec::with_capacity(self.algorithms.len());
        for a in &self.algorithms {
            let alg: Algorithm = a.parse()?;
            if out.contains(&alg) {
                bail!("algorithm '{a}' listed twice");
            }
            out.push(alg);
        }
        Ok(out)
    }

    pub fn dims(&self, k_users: usize, snr_db: f64) -> Result<SystemDims> {
        Ok(SystemDims::new(
            self.m_t,
            self.m_r,
            k_users,
            self.n_sub,
            self.n_blocks,
            self.p_max,
            snr_db,
        )?)
    }

    pub fn scenario(&self) -> ScenarioParams {
        ScenarioParams {
            sparsity_b: self.sparsity_b,
            taps: self.taps,
            delay_spread: self.delay_spread,
            leakage: self.leakage,
            est_error: self.est_error,
            aging: self.aging.clone(),
        }
    }

    pub fn inverse_mode(&self) -> Result<InverseMode> {
        match self.inverse.as_str() {
            "dense" => Ok(InverseMode::Dense),
            "structured" => Ok(InverseMode::Structured {
                q_cap: self.q_cap,
                threshold: self.q_threshold,
            }),
            other => bail!("inverse must be 'dense' or 'structured', got '{other}'"),
        }
    }

    pub fn pruning(&self) -> Option<Pruning> {
        (self.energy_keep < 1.0 || self.b_cap > 0).then_some(Pruning {
            energy_keep: self.energy_keep,
            b_cap: if self.b_cap == 0 {
                self.m_t
            } else {
                self.b_cap
            },
        })
    }

    pub fn du_options(&self) -> Result<DuOptions> {
        Ok(DuOptions {
            layers: self.layers,
            sampled: (self.f_tilde != 0).then_some(self.f_tilde),
            pruning: self.pruning(),
            inverse: self.inverse_mode()?,
            report_residual: false,
        })
    }
}
