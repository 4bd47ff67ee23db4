//! Score-function (REINFORCE) training with a running reward baseline.

use super::env::BanditEnv;
use super::gaussian::PolicyParams;
use crate::rng::{substream, tags};
use crate::telemetry::Telemetry;
use crate::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    /// Weight of the newest reward in the running per-context baseline and
    /// spread.
    pub baseline_rate: f64,
    /// Global gradient norm after clipping.
    pub clip_norm: f64,
    /// Episodes with `|reward|` above this are skipped.
    pub reward_bound: f64,
    /// Episodes whose raw gradient norm exceeds this are skipped.
    pub grad_bound: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            learning_rate: 1e-4,
            baseline_rate: 0.05,
            clip_norm: 10.0,
            reward_bound: 1e6,
            grad_bound: 1e8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub context: usize,
    pub reward: f64,
    pub depth: usize,
    /// Norm of the score-function gradient before clipping.
    pub grad_norm: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub trace: Vec<TraceRow>,
}

impl TrainOutput {
    pub fn skipped(&self) -> usize {
        self.trace.iter().filter(|r| r.skipped).count()
    }
}

/// Adam, ascending.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] += self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Running mean and spread of one context's rewards.
#[derive(Debug, Clone, Copy, Default)]
struct Baseline {
    mean: f64,
    var: f64,
    seen: bool,
}

impl Baseline {
    /// Normalized advantage of `r`; zero on the first visit.
    fn advantage(&self, r: f64) -> f64 {
        if !self.seen {
            return 0.0;
        }
        let d = r - self.mean;
        if self.var > 0.0 {
            d / self.var.sqrt()
        } else {
            d
        }
    }

    fn update(&mut self, r: f64, rate: f64) {
        if !self.seen {
            *self = Self {
                mean: r,
                var: 0.0,
                seen: true,
            };
            return;
        }
        let d = r - self.mean;
        self.mean += rate * d;
        self.var = (1.0 - rate) * (self.var + rate * d * d);
    }
}

/// Train by REINFORCE: each episode draws a context uniformly from the
/// environment's pool, samples one action, and ascends
/// `A ∇ ln π(a | s)` with `A = (r − b_s) / sd_s`, where `b_s` and `sd_s` are
/// exponential moving statistics of the rewards seen in context `s`.
/// Everything random comes from substreams of `cfg.seed`.
pub fn train_policy(
    env: &dyn BanditEnv,
    params0: PolicyParams,
    cfg: &TrainConfig,
    tel: &mut Telemetry,
) -> Result<TrainOutput> {
    if cfg.episodes == 0 {
        return Err(Error::OutOfRange(
            "training needs at least one episode".into(),
        ));
    }
    if params0.action_dim() != env.action_dim()
        || params0.mean.shape.input_len() != {
            let (c, r, k) = env.context_shape();
            c * r * k
        }
    {
        return Err(Error::Shape("policy does not match the environment".into()));
    }
    let mut params = params0;
    let mut flat = params.flat();
    let mut adam = Adam::new(flat.len(), cfg.learning_rate);
    let mut baselines = vec![Baseline::default(); env.n_contexts()];
    let mut trace = Vec::with_capacity(cfg.episodes);
    for ep in 0..cfg.episodes {
        let mut rng = substream(cfg.seed, &[tags::POLICY, ep as u64]);
        let ctx = rng.random_range(0..env.n_contexts());
        let sample = params.sample(env.features(ctx), &mut rng, tel)?;
        let r = env.reward(ctx, &sample.action)?;
        let depth = env.depth(&sample.action);
        let mut row = TraceRow {
            episode: ep,
            context: ctx,
            reward: r,
            depth,
            grad_norm: 0.0,
            skipped: false,
        };
        if !r.is_finite() || r.abs() > cfg.reward_bound {
            row.skipped = true;
            trace.push(row);
            continue;
        }
        let mut g = params.score_gradient(&sample, baselines[ctx].advantage(r))?;
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.grad_norm = norm;
        if !norm.is_finite() || norm > cfg.grad_bound {
            row.skipped = true;
            trace.push(row);
            continue;
        }
        if norm > cfg.clip_norm {
            let s = cfg.clip_norm / norm;
            g.iter_mut().for_each(|x| *x *= s);
        }
        adam.step(&mut flat, &g);
        params.set_flat(&flat)?;
        baselines[ctx].update(r, cfg.baseline_rate);
        trace.push(row);
    }
    Ok(TrainOutput { params, trace })
}

/// Mean reward over the first and the last `fraction` of the episodes.
pub fn improvement_trend(trace: &[TraceRow], fraction: f64) -> (f64, f64) {
    let n = ((trace.len() as f64 * fraction).round() as usize).clamp(1, trace.len().max(1));
    let mean =
        |rows: &[TraceRow]| rows.iter().map(|r| r.reward).sum::<f64>() / rows.len().max(1) as f64;
    (
        mean(&trace[..n.min(trace.len())]),
        mean(&trace[trace.len().saturating_sub(n)..]),
    )
}
