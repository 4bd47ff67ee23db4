//! The `flops` command: complexity-model table plus optional instrumented
//! multiply-accumulate counts.

use std::path::Path;

use anyhow::{Context, Result};
use robust_wmmse::accel::{flop_estimate, flop_terms, Algo, FlopConstants, FlopDims};
use robust_wmmse::channel::{evolve_stats, make_scenario_with, SystemDims};
use robust_wmmse::du::{DuNetwork, DuOptions, InverseMode, Pruning};
use robust_wmmse::policy::net::{CONV_CHANNELS, FC_WIDTH, KERNEL};
use robust_wmmse::policy::{encode_context, ActionLayout, PolicyMeta, PolicyParams};
use robust_wmmse::rng::{substream, tags};
use robust_wmmse::swmmse::{swmmse_solve, SwmmseOptions};
use robust_wmmse::Telemetry;

use crate::config::Config;
use crate::experiment::scenario_key;
use crate::report::{num, writer};

pub const FC_D: f64 = FC_WIDTH as f64;
pub const CONV_C: f64 = CONV_CHANNELS as f64;
pub const KERNEL_H: f64 = KERNEL as f64;

pub const FLOPS_HEADER: [&str; 5] = ["algo", "module", "op", "count", "formula_value"];

#[derive(Debug, Clone, PartialEq)]
pub struct FlopRow {
    pub algo: String,
    pub module: String,
    pub op: String,
    pub count: Option<u64>,
    pub formula_value: Option<f64>,
}

impl FlopRow {
    fn model(algo: Algo, op: String, v: f64) -> Self {
        Self {
            algo: algo.tag().into(),
            module: "model".into(),
            op,
            count: None,
            formula_value: Some(v),
        }
    }
}

/// Model inputs at the configured size: the first `k_users`, `I = layers`,
/// `B = b_cap` (or `m_t`), `q = q_cap` for the structured inverse (else
/// `m_t`), `F̃ = f_tilde` (or `F`).
pub fn model_inputs(cfg: &Config) -> Result<(FlopDims, FlopConstants)> {
    let k = *cfg.k_users.first().context("k_users is empty")?;
    let dims = FlopDims {
        m_t: cfg.m_t as f64,
        m_r: cfg.m_r as f64,
        n_sub: cfg.n_sub as f64,
        k_users: k as f64,
        iters: cfg.layers as f64,
    };
    let consts = FlopConstants {
        b: if cfg.b_cap == 0 { cfg.m_t } else { cfg.b_cap } as f64,
        q: match cfg.inverse_mode()? {
            InverseMode::Dense => cfg.m_t as f64,
            InverseMode::Structured { q_cap, .. } => q_cap as f64,
        },
        f_tilde: if cfg.f_tilde == 0 {
            cfg.n_sub
        } else {
            cfg.f_tilde
        } as f64,
        d: FC_D,
        c: CONV_C,
        h: KERNEL_H,
    };
    Ok((dims, consts))
}

pub fn model_rows(cfg: &Config) -> Result<Vec<FlopRow>> {
    let (dims, k) = model_inputs(cfg)?;
    let mut rows = Vec::new();
    for algo in Algo::ALL {
        for (i, t) in flop_terms(algo, &dims, &k)?.into_iter().enumerate() {
            rows.push(FlopRow::model(algo, format!("term{}", i + 1), t));
        }
        rows.push(FlopRow::model(
            algo,
            "total".into(),
            flop_estimate(algo, &dims, &k)?,
        ));
    }
    Ok(rows)
}

/// Instrumented counts of the two kernels the accelerations target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelCounts {
    pub m_t: usize,
    pub gram_dense: u64,
    pub gram_pruned: u64,
    /// Mean retained beam columns of the pruned run.
    pub b_mean: f64,
    pub inverse_dense: u64,
    pub inverse_structured: u64,
    pub q: usize,
}

impl KernelCounts {
    pub fn gram_ratio(&self) -> f64 {
        self.gram_pruned as f64 / self.gram_dense as f64
    }
    pub fn gram_model(&self) -> f64 {
        (self.b_mean / self.m_t as f64).powi(2)
    }
    pub fn inverse_ratio(&self) -> f64 {
        self.inverse_structured as f64 / self.inverse_dense as f64
    }
    pub fn inverse_model(&self) -> f64 {
        let (q, m) = (self.q as f64, self.m_t as f64);
        (q.powi(3) + m) / m.powi(3)
    }
}

fn inverse_macs(tel: &Telemetry) -> u64 {
    tel.flops.get("accel", "cholesky") + tel.flops.get("accel", "diag_inverse")
}

/// One network layer on scenario `seed`, dense against pruned support and
/// dense against structured inverse.
pub fn kernel_counts(cfg: &Config, seed: usize) -> Result<KernelCounts> {
    let dims = cfg.dims(cfg.k_users[0], cfg.snr_db[0])?;
    let stats = evolve_stats(
        &make_scenario_with(
            &dims,
            &cfg.scenario(),
            scenario_key(cfg.seed, dims.k_users, seed),
        )?,
        cfg.blocks[0],
    )?;
    let b_cap = if cfg.b_cap == 0 { cfg.m_t } else { cfg.b_cap };
    let base = DuOptions {
        layers: 1,
        sampled: (cfg.f_tilde != 0).then_some(cfg.f_tilde),
        pruning: None,
        inverse: InverseMode::Dense,
        report_residual: false,
    };
    let layer = |opts: &DuOptions| -> Result<(Telemetry, DuNetwork, Vec<usize>)> {
        let net = DuNetwork::new(&stats, &dims, opts)?;
        let mut tel = Telemetry::instrumented();
        let out = net.run_plain(&mut tel)?;
        Ok((tel, net, out.q_sizes))
    };
    let (dense, _, _) = layer(&base)?;
    let (pruned, pruned_net, _) = layer(&DuOptions {
        pruning: Some(Pruning {
            energy_keep: cfg.energy_keep,
            b_cap,
        }),
        ..base.clone()
    })?;
    let (structured, _, q) = layer(&DuOptions {
        inverse: InverseMode::Structured {
            q_cap: cfg.q_cap,
            threshold: cfg.q_threshold,
        },
        ..base.clone()
    })?;
    Ok(KernelCounts {
        m_t: dims.m_t,
        gram_dense: dense.flops.get("du", "expected_gram"),
        gram_pruned: pruned.flops.get("du", "expected_gram"),
        b_mean: pruned_net.pruned.support.mean_size(),
        inverse_dense: inverse_macs(&dense),
        inverse_structured: inverse_macs(&structured),
        q: q[0],
    })
}

fn kernel_rows(k: &KernelCounts, m_r: usize) -> Vec<FlopRow> {
    let row = |module: &str, op: &str, count: u64, f: f64| FlopRow {
        algo: "kernel".into(),
        module: module.into(),
        op: op.into(),
        count: Some(count),
        formula_value: Some(f),
    };
    let (m, b, q) = (k.m_t as f64, k.b_mean, k.q as f64);
    let m_r = m_r as f64;
    vec![
        row("du", "expected_gram_dense", k.gram_dense, m_r * m * m),
        row("du", "expected_gram_pruned", k.gram_pruned, m_r * b * b),
        row("accel", "inverse_dense", k.inverse_dense, m.powi(3)),
        row(
            "accel",
            "inverse_structured",
            k.inverse_structured,
            q.powi(3) + m,
        ),
    ]
}

/// Instrumented counts of one full solve per complexity row. PO-WMMSE is
/// the uncompensated network on every subcarrier; RLDDU adds subcarrier
/// sampling and one policy forward pass.
pub fn measured_rows(cfg: &Config, seed: usize) -> Result<Vec<FlopRow>> {
    let dims: SystemDims = cfg.dims(cfg.k_users[0], cfg.snr_db[0])?;
    let stats = evolve_stats(
        &make_scenario_with(
            &dims,
            &cfg.scenario(),
            scenario_key(cfg.seed, dims.k_users, seed),
        )?,
        cfg.blocks[0],
    )?;
    let (fd, fk) = model_inputs(cfg)?;
    let mut rows = Vec::new();
    let mut push = |algo: Algo, tel: &Telemetry| -> Result<()> {
        for (module, op, count) in tel.flops.entries() {
            rows.push(FlopRow {
                algo: algo.tag().into(),
                module: module.into(),
                op: op.into(),
                count: Some(count),
                formula_value: None,
            });
        }
        rows.push(FlopRow {
            algo: algo.tag().into(),
            module: "measured".into(),
            op: "total".into(),
            count: Some(tel.flops.total()),
            formula_value: Some(flop_estimate(algo, &fd, &fk)?),
        });
        Ok(())
    };

    let mut tel = Telemetry::instrumented();
    let opts = SwmmseOptions {
        iterations: cfg.layers,
        saa_batch: 1,
        seed: 0,
    };
    swmmse_solve(&stats, &dims, &opts, &mut tel)?;
    push(Algo::Swmmse, &tel)?;

    let pruning = Some(Pruning {
        energy_keep: cfg.energy_keep,
        b_cap: fk.b as usize,
    });
    let inverse = cfg.inverse_mode()?;
    let po = DuOptions {
        layers: cfg.layers,
        sampled: None,
        pruning,
        inverse,
        report_residual: false,
    };
    let mut tel = Telemetry::instrumented();
    DuNetwork::new(&stats, &dims, &po)?.run_plain(&mut tel)?;
    push(Algo::PoWmmse, &tel)?;

    let rl = DuOptions {
        sampled: Some(fk.f_tilde as usize),
        ..po
    };
    let mut tel = Telemetry::instrumented();
    let net = DuNetwork::new(&stats, &dims, &rl)?;
    let layout = ActionLayout {
        layers: cfg.layers,
        k_users: dims.k_users,
        n_nodes: net.n_nodes(),
        m_r: dims.m_r,
    };
    let ctx = encode_context(&stats, &net.pruned.support, &net.pruned.sampling, &dims)?;
    let meta = PolicyMeta {
        m_t: dims.m_t,
        m_r: dims.m_r,
        k_users: dims.k_users,
        n_nodes: net.n_nodes(),
        layers: cfg.layers,
    };
    let policy = PolicyParams::init(
        meta,
        ctx.shape(),
        layout.len(),
        (layout.layers, layout.layer_len()),
        Some(layout.len() - 1),
        &mut substream(cfg.seed, &[tags::INIT]),
    )?;
    policy.mean_action(&ctx, &mut tel)?;
    net.run_plain(&mut tel)?;
    push(Algo::Rlddu, &tel)?;

    rows.extend(kernel_rows(&kernel_counts(cfg, seed)?, dims.m_r));
    Ok(rows)
}

pub fn write_flops(path: &Path, rows: &[FlopRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(FLOPS_HEADER)?;
    for r in rows {
        w.write_record([
            r.algo.clone(),
            r.module.clone(),
            r.op.clone(),
            r.count.map(|c| c.to_string()).unwrap_or_default(),
            r.formula_value.map(num).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
