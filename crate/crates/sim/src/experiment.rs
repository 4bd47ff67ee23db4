//! The `run` command: EWSR of every algorithm over a (K, SNR, seed, block)
//! grid, all algorithms sharing the same channel draws at each point.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use robust_wmmse::accel::{flop_estimate, Algo, FlopConstants, FlopDims};
use robust_wmmse::channel::{evolve_stats, make_scenario_with, ChannelStats, Dft, SystemDims};
use robust_wmmse::du::{DuNetwork, InverseMode};
use robust_wmmse::policy::{encode_context, run_rlddu, ActionLayout, PolicyParams};
use robust_wmmse::rng::{derive_key, tags};
use robust_wmmse::swmmse::{ewsr_eval, swmmse_solve, wmmse_solve, PrecoderSet, SwmmseOptions};
use robust_wmmse::Telemetry;

use crate::config::{Algorithm, Config};
use crate::flops::{CONV_C, FC_D, KERNEL_H};

/// One line of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub algorithm: Algorithm,
    pub block: usize,
    pub k_users: usize,
    pub snr_db: f64,
    pub seed: usize,
    pub ewsr: f64,
    /// Iterations or network depth actually used.
    pub mean_depth: f64,
    pub flops_formula: f64,
    /// Instrumented multiply-accumulates of the solve, when enabled.
    pub flops_measured: Option<u64>,
    /// Seconds; excluded from the reproducible report.
    pub wall_time: f64,
}

/// Result of one solver call.
pub struct Solved {
    /// Beam-domain precoders at full power.
    pub precoders: PrecoderSet,
    pub depth: f64,
    pub flops_formula: f64,
}

/// Key of the block-0 scenario for grid point `(k_users, seed)`. The SNR
/// does not enter, so an SNR sweep reuses the same channels.
pub fn scenario_key(base: u64, k_users: usize, seed: usize) -> u64 {
    derive_key(base, &[tags::SCENARIO, k_users as u64, seed as u64])
}

/// Key of the common evaluation draws at one grid point and block.
pub fn crn_key(base: u64, k_users: usize, snr_idx: usize, seed: usize, block: usize) -> u64 {
    derive_key(
        base,
        &[
            tags::EWSR,
            k_users as u64,
            snr_idx as u64,
            seed as u64,
            block as u64,
        ],
    )
}

pub fn make_stats(
    cfg: &Config,
    dims: &SystemDims,
    seed: usize,
    block: usize,
) -> Result<ChannelStats> {
    let s0 = make_scenario_with(
        dims,
        &cfg.scenario(),
        scenario_key(cfg.seed, dims.k_users, seed),
    )?;
    Ok(evolve_stats(&s0, block)?)
}

fn flop_dims(dims: &SystemDims, iters: f64) -> FlopDims {
    FlopDims {
        m_t: dims.m_t as f64,
        m_r: dims.m_r as f64,
        n_sub: dims.n_sub as f64,
        k_users: dims.k_users as f64,
        iters,
    }
}

/// Structural constants; the models need positive arguments.
fn constants(b: f64, q: f64, f_tilde: f64) -> FlopConstants {
    FlopConstants {
        b: b.max(1.0),
        q: q.max(1.0),
        f_tilde: f_tilde.max(1.0),
        d: FC_D,
        c: CONV_C,
        h: KERNEL_H,
    }
}

fn network_constants(net: &DuNetwork, q: f64) -> FlopConstants {
    constants(net.pruned.support.mean_size(), q, net.n_nodes() as f64)
}

fn mean_q(q_sizes: &[usize], dims: &SystemDims, mode: InverseMode) -> f64 {
    match mode {
        InverseMode::Dense => dims.m_t as f64,
        InverseMode::Structured { .. } => {
            q_sizes.iter().sum::<usize>() as f64 / q_sizes.len().max(1) as f64
        }
    }
}

/// Solve one instance with `algo`.
pub fn solve(
    cfg: &Config,
    algo: Algorithm,
    stats: &ChannelStats,
    dims: &SystemDims,
    policy: Option<&PolicyParams>,
    saa_seed: u64,
    tel: &mut Telemetry,
) -> Result<Solved> {
    let dft = Dft::new(dims.m_t);
    Ok(match algo {
        Algorithm::Wmmse => {
            let out = wmmse_solve(stats, dims, cfg.wmmse_iters, tel)?;
            let iters = cfg.wmmse_iters as f64;
            Solved {
                precoders: out.precoders.to_beam(&dft),
                depth: iters,
                flops_formula: flop_estimate(
                    Algo::Swmmse,
                    &flop_dims(dims, iters),
                    &constants(1.0, 1.0, 1.0),
                )?,
            }
        }
        Algorithm::Swmmse => {
            let opts = SwmmseOptions {
                iterations: cfg.swmmse_iters,
                saa_batch: cfg.saa_batch,
                seed: saa_seed,
            };
            let out = swmmse_solve(stats, dims, &opts, tel)?;
            let iters = cfg.swmmse_iters as f64;
            Solved {
                precoders: out.precoders.to_beam(&dft),
                depth: iters,
                flops_formula: flop_estimate(
                    Algo::Swmmse,
                    &flop_dims(dims, iters),
                    &constants(1.0, 1.0, 1.0),
                )?,
            }
        }
        Algorithm::Du => {
            let opts = cfg.du_options()?;
            let net = DuNetwork::new(stats, dims, &opts)?;
            let out = net.run_plain(tel)?;
            let q = mean_q(&out.q_sizes, dims, opts.inverse);
            let k = network_constants(&net, q);
            let fd = FlopDims {
                n_sub: net.n_nodes() as f64,
                ..flop_dims(dims, out.depth as f64)
            };
            Solved {
                precoders: out.precoders,
                depth: out.depth as f64,
                flops_formula: flop_estimate(Algo::PoWmmse, &fd, &k)?,
            }
        }
        Algorithm::Rlddu => {
            let policy = policy.context("rlddu needs a policy")?;
            let opts = cfg.du_options()?;
            let net = DuNetwork::new(stats, dims, &opts)?;
            let layout = ActionLayout {
                layers: opts.layers,
                k_users: dims.k_users,
                n_nodes: net.n_nodes(),
                m_r: dims.m_r,
            };
            check_policy(policy, &layout, dims)?;
            let ctx = encode_context(stats, &net.pruned.support, &net.pruned.sampling, dims)?;
            let action = policy.mean_action(&ctx, tel)?;
            let out = run_rlddu(&net, &action, &layout, tel)?;
            let q = mean_q(&out.q_sizes, dims, opts.inverse);
            let k = network_constants(&net, q);
            Solved {
                precoders: out.precoders,
                depth: out.depth as f64,
                flops_formula: flop_estimate(Algo::Rlddu, &flop_dims(dims, out.depth as f64), &k)?,
            }
        }
    })
}

/// The checkpoint must have been trained for this layout.
pub fn check_policy(policy: &PolicyParams, layout: &ActionLayout, dims: &SystemDims) -> Result<()> {
    let m = policy.meta;
    if (m.m_t, m.m_r, m.k_users, m.n_nodes, m.layers)
        != (
            dims.m_t,
            dims.m_r,
            dims.k_users,
            layout.n_nodes,
            layout.layers,
        )
        || policy.action_dim() != layout.len()
    {
        bail!(
            "checkpoint was trained for m_t={} m_r={} K={} F̃={} layers={}, run needs m_t={} m_r={} K={} F̃={} layers={}",
            m.m_t,
            m.m_r,
            m.k_users,
            m.n_nodes,
            m.layers,
            dims.m_t,
            dims.m_r,
            dims.k_users,
            layout.n_nodes,
            layout.layers
        );
    }
    Ok(())
}

/// Evaluate the whole grid. Rows come back in grid order (K, SNR, seed,
/// block, algorithm) whatever the number of worker threads.
pub fn run_experiment(
    cfg: &Config,
    policy: Option<&PolicyParams>,
    instrument: bool,
) -> Result<Vec<Row>> {
    let algos = cfg.algorithms()?;
    let mut points = Vec::new();
    for &k in &cfg.k_users {
        for (si, &snr) in cfg.snr_db.iter().enumerate() {
            for seed in 0..cfg.seeds {
                points.push((k, si, snr, seed));
            }
        }
    }
    let chunks: Vec<Vec<Row>> = points
        .par_iter()
        .map(|&(k, si, snr, seed)| -> Result<Vec<Row>> {
            let dims = cfg.dims(k, snr)?;
            let mut rows = Vec::new();
            for &block in &cfg.blocks {
                let stats = make_stats(cfg, &dims, seed, block)?;
                let crn = crn_key(cfg.seed, k, si, seed, block);
                let saa = derive_key(
                    cfg.seed,
                    &[tags::SAA, k as u64, si as u64, seed as u64, block as u64],
                );
                for &algo in &algos {
                    let mut tel = if instrument {
                        Telemetry::instrumented()
                    } else {
                        Telemetry::new()
                    };
                    let t0 = Instant::now();
                    let solved = solve(cfg, algo, &stats, &dims, policy, saa, &mut tel)
                        .with_context(|| {
                            format!("{algo} at K={k}, snr={snr} dB, seed {seed}, block {block}")
                        })?;
                    let wall_time = t0.elapsed().as_secs_f64();
                    let ewsr = ewsr_eval(&stats, &solved.precoders, cfg.n_mc, crn, &dims)?;
                    rows.push(Row {
                        algorithm: algo,
                        block,
                        k_users: k,
                        snr_db: snr,
                        seed,
                        ewsr,
                        mean_depth: solved.depth,
                        flops_formula: solved.flops_formula,
                        flops_measured: instrument.then(|| tel.flops.total()),
                        wall_time,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}
