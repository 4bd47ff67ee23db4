//! Contextual-bandit environments.

use super::action::{select_depth, ActionLayout};
use super::features::{encode_context, ContextFeatures};
use super::gaussian::PolicyMeta;
use crate::channel::{evolve_stats, make_scenario_with, ChannelStats, ScenarioParams, SystemDims};
use crate::du::{DuNetwork, DuOptions, DuOutput};
use crate::rng::{derive_key, tags};
use crate::swmmse::ewsr_eval;
use crate::telemetry::Telemetry;
use crate::{Error, Result};

/// One-step decision problem: observe a context, act, get a reward.
pub trait BanditEnv {
    /// `(channels, rows, cols)` of every context.
    fn context_shape(&self) -> (usize, usize, usize);
    fn action_dim(&self) -> usize;
    /// `(groups, group length)`: leading action entries sharing one
    /// trainable scale per group.
    fn scale_groups(&self) -> (usize, usize);
    /// Mean-network output that starts at one.
    fn depth_bias_index(&self) -> Option<usize>;
    fn meta(&self) -> PolicyMeta;
    fn n_contexts(&self) -> usize;
    fn features(&self, ctx: usize) -> &ContextFeatures;
    fn reward(&self, ctx: usize, action: &[f64]) -> Result<f64>;
    /// Depth implied by an action; `0` when not applicable.
    fn depth(&self, action: &[f64]) -> usize;
}

/// Fixed context, scalar action, reward `−(a − target)²`.
#[derive(Debug, Clone)]
pub struct QuadraticBandit {
    pub target: f64,
    ctx: ContextFeatures,
}

impl QuadraticBandit {
    pub fn new(target: f64) -> Self {
        Self {
            target,
            ctx: ContextFeatures {
                channels: 1,
                rows: 1,
                cols: 1,
                data: vec![0.0],
            },
        }
    }
}

impl BanditEnv for QuadraticBandit {
    fn context_shape(&self) -> (usize, usize, usize) {
        (1, 1, 1)
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn scale_groups(&self) -> (usize, usize) {
        (0, 0)
    }
    fn depth_bias_index(&self) -> Option<usize> {
        None
    }
    fn meta(&self) -> PolicyMeta {
        PolicyMeta::default()
    }
    fn n_contexts(&self) -> usize {
        1
    }
    fn features(&self, _ctx: usize) -> &ContextFeatures {
        &self.ctx
    }
    fn reward(&self, _ctx: usize, action: &[f64]) -> Result<f64> {
        Ok(-(action[0] - self.target).powi(2))
    }
    fn depth(&self, _action: &[f64]) -> usize {
        0
    }
}

/// Apply the unrolled network with the compensation and depth encoded in
/// `action`; the result is scaled to full power.
pub fn run_rlddu(
    net: &DuNetwork,
    action: &[f64],
    layout: &ActionLayout,
    tel: &mut Telemetry,
) -> Result<DuOutput> {
    if layout.layers != net.opts.layers
        || layout.n_nodes != net.n_nodes()
        || layout.k_users != net.dims.k_users
        || layout.m_r != net.dims.m_r
    {
        return Err(Error::Shape(
            "action layout does not match the network".into(),
        ));
    }
    let (comps, beta) = layout.decode(action)?;
    let depth = select_depth(&beta)?;
    net.run(&comps, depth, tel)
}

/// `EWSR(action) − baseline` on the common draws keyed by `crn_seed`. An
/// action that collapses the precoder scores an EWSR of zero.
pub fn reward_against(
    net: &DuNetwork,
    stats: &ChannelStats,
    action: &[f64],
    layout: &ActionLayout,
    n_mc: usize,
    crn_seed: u64,
    baseline: f64,
) -> Result<f64> {
    let mut tel = Telemetry::new();
    let ewsr = match run_rlddu(net, action, layout, &mut tel) {
        Ok(out) => ewsr_eval(stats, &out.precoders, n_mc, crn_seed, &net.dims)?,
        Err(Error::Degenerate(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(ewsr - baseline)
}

/// EWSR of the uncompensated full-depth network on the same draws.
pub fn baseline_ewsr(
    net: &DuNetwork,
    stats: &ChannelStats,
    n_mc: usize,
    crn_seed: u64,
) -> Result<f64> {
    let out = net.run_plain(&mut Telemetry::new())?;
    ewsr_eval(stats, &out.precoders, n_mc, crn_seed, &net.dims)
}

/// Reward of `action` against the uncompensated `I_max`-layer network.
pub fn reward(
    net: &DuNetwork,
    stats: &ChannelStats,
    action: &[f64],
    layout: &ActionLayout,
    n_mc: usize,
    crn_seed: u64,
) -> Result<f64> {
    let base = baseline_ewsr(net, stats, n_mc, crn_seed)?;
    reward_against(net, stats, action, layout, n_mc, crn_seed, base)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub dims: SystemDims,
    pub scenario: ScenarioParams,
    /// Independent scenario draws in the pool.
    pub n_scenarios: usize,
    /// Downlink blocks (aging levels) each scenario is evaluated at.
    pub blocks: Vec<usize>,
    pub n_mc: usize,
    pub du: DuOptions,
    pub seed: u64,
}

/// A pre-generated pool of (scenario, block) contexts with cached
/// baselines.
#[derive(Debug, Clone)]
pub struct Context {
    pub scenario: usize,
    pub block: usize,
    pub stats: ChannelStats,
    pub net: DuNetwork,
    pub features: ContextFeatures,
    pub crn_seed: u64,
    pub baseline: f64,
}

#[derive(Debug, Clone)]
pub struct PrecodingEnv {
    pub config: EnvConfig,
    pub layout: ActionLayout,
    pub contexts: Vec<Context>,
}

impl PrecodingEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        if config.n_scenarios == 0 || config.blocks.is_empty() {
            return Err(Error::OutOfRange("the context pool is empty".into()));
        }
        if config.n_mc == 0 {
            return Err(Error::OutOfRange("n_mc must be at least 1".into()));
        }
        let mut contexts = Vec::with_capacity(config.n_scenarios * config.blocks.len());
        for s in 0..config.n_scenarios {
            let stats0 = make_scenario_with(
                &config.dims,
                &config.scenario,
                derive_key(config.seed, &[tags::SCENARIO, s as u64]),
            )?;
            for &n in &config.blocks {
                let stats = evolve_stats(&stats0, n)?;
                contexts.push(Self::context(&config, s, n, stats)?);
            }
        }
        let first = &contexts[0].net;
        let layout = ActionLayout {
            layers: config.du.layers,
            k_users: config.dims.k_users,
            n_nodes: first.n_nodes(),
            m_r: config.dims.m_r,
        };
        Ok(Self {
            config,
            layout,
            contexts,
        })
    }

    fn context(
        config: &EnvConfig,
        scenario: usize,
        block: usize,
        stats: ChannelStats,
    ) -> Result<Context> {
        let net = DuNetwork::new(&stats, &config.dims, &config.du)?;
        let features = encode_context(
            &stats,
            &net.pruned.support,
            &net.pruned.sampling,
            &config.dims,
        )?;
        let crn_seed = derive_key(config.seed, &[tags::EWSR, scenario as u64, block as u64]);
        let baseline = baseline_ewsr(&net, &stats, config.n_mc, crn_seed)?;
        Ok(Context {
            scenario,
            block,
            stats,
            net,
            features,
            crn_seed,
            baseline,
        })
    }
}

impl BanditEnv for PrecodingEnv {
    fn context_shape(&self) -> (usize, usize, usize) {
        self.contexts[0].features.shape()
    }
    fn action_dim(&self) -> usize {
        self.layout.len()
    }
    fn scale_groups(&self) -> (usize, usize) {
        (self.layout.layers, self.layout.layer_len())
    }
    fn depth_bias_index(&self) -> Option<usize> {
        Some(self.layout.len() - 1)
    }
    fn meta(&self) -> PolicyMeta {
        PolicyMeta {
            m_t: self.config.dims.m_t,
            m_r: self.config.dims.m_r,
            k_users: self.config.dims.k_users,
            n_nodes: self.layout.n_nodes,
            layers: self.layout.layers,
        }
    }
    fn n_contexts(&self) -> usize {
        self.contexts.len()
    }
    fn features(&self, ctx: usize) -> &ContextFeatures {
        &self.contexts[ctx].features
    }
    fn reward(&self, ctx: usize, action: &[f64]) -> Result<f64> {
        let c = &self.contexts[ctx];
        reward_against(
            &c.net,
            &c.stats,
            action,
            &self.layout,
            self.config.n_mc,
            c.crn_seed,
            c.baseline,
        )
    }
    fn depth(&self, action: &[f64]) -> usize {
        select_depth(&action[self.layout.beta_range()]).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> PrecodingEnv {
        let dims = SystemDims::new(8, 2, 2, 12, 6, 1.0, 20.0).unwrap();
        PrecodingEnv::new(EnvConfig {
            dims,
            scenario: ScenarioParams::new(4),
            n_scenarios: 1,
            blocks: vec![2, 5],
            n_mc: 8,
            du: DuOptions {
                sampled: Some(4),
                ..DuOptions::default()
            },
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn baseline_action_has_zero_reward() {
        let e = env();
        let a = e.layout.baseline_action();
        for ctx in 0..e.n_contexts() {
            assert_eq!(e.reward(ctx, &a).unwrap(), 0.0);
        }
        assert_eq!(e.depth(&a), 5);
    }

    #[test]
    fn collapsed_precoder_scores_minus_baseline() {
        let e = env();
        let mut a = e.layout.baseline_action();
        // an enormous Oᴱ drives Ê to non-finite values
        for v in &mut a[..e.layout.layer_len()] {
            *v = f64::MAX;
        }
        let r = e.reward(0, &a).unwrap();
        assert_eq!(r, -e.contexts[0].baseline);
    }

    #[test]
    fn depth_one_is_single_layer() {
        let e = env();
        let mut a = e.layout.baseline_action();
        let br = e.layout.beta_range();
        a[br.start] = 2.0;
        let c = &e.contexts[0];
        let out = run_rlddu(&c.net, &a, &e.layout, &mut Telemetry::new()).unwrap();
        assert_eq!(out.depth, 1);
        let one = c
            .net
            .layer(
                c.net.init(),
                &c.net.zero_compensation()[0],
                &mut Telemetry::new(),
            )
            .unwrap();
        let scaled = crate::swmmse::scale_to_power(&one.x, 1.0).unwrap();
        assert_eq!(out.precoders, scaled);
    }

    fn oracle_rewards(n_draws: usize, exact: bool) -> Vec<f64> {
        let dims = SystemDims::new(16, 2, 3, 24, 6, 1.0, 20.0).unwrap();
        let opts = DuOptions {
            sampled: Some(5),
            ..DuOptions::default()
        };
        (0..20u64)
            .map(|seed| {
                let stats = evolve_stats(
                    &make_scenario_with(&dims, &ScenarioParams::new(6), seed).unwrap(),
                    5,
                )
                .unwrap();
                let net = DuNetwork::new(&stats, &dims, &opts).unwrap();
                let comps = net
                    .oracle_compensation(n_draws, seed, exact, &mut Telemetry::new())
                    .unwrap();
                let layout = ActionLayout {
                    layers: 5,
                    k_users: 3,
                    n_nodes: net.n_nodes(),
                    m_r: 2,
                };
                let mut beta = vec![0.0; 5];
                beta[4] = 1.0;
                let a = layout.encode(&comps, &beta).unwrap();
                reward(&net, &stats, &a, &layout, 256, 100 + seed).unwrap()
            })
            .collect()
    }

    // one-sided sign test at p < 0.05 over 20 pairs needs 15 wins
    const SIGN_WINS: usize = 15;

    #[test]
    fn exact_inverse_oracle_earns_positive_reward() {
        let r = oracle_rewards(0, true);
        let wins = r.iter().filter(|&&x| x > 0.0).count();
        assert!(wins >= SIGN_WINS, "{wins}/20 positive: {r:?}");
    }

    // Oᴱ = E[C⁻¹] alone over-weights Ê against the Taylor F̂ and Ĝ and loses
    // to the baseline on most seeds; kept for the record.
    #[test]
    #[ignore]
    fn mc_ideal_oe_oracle_earns_positive_reward() {
        let r = oracle_rewards(256, false);
        let wins = r.iter().filter(|&&x| x > 0.0).count();
        assert!(wins >= SIGN_WINS, "{wins}/20 positive: {r:?}");
    }
}
