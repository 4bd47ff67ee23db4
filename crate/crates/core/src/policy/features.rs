//! Fixed-size context summary fed to the policy networks.
//!
//! Four channels over a `K × |F̃|` grid (user, sampled subcarrier):
//!
//! 0. `ln(1 + ‖H̄ on support‖²)`
//! 1. `ln(1 + Σ var on support)`
//! 2. the current aging coefficient `β`
//! 3. SNR proxy `log10(P_max (mean + var energy) / σ_k²)`, in bels
//!
//! Only energy aggregates over the support enter, so the features do not
//! depend on the order of columns within it.

use crate::accel::{BeamSupport, SubcarrierSampling};
use crate::channel::{ChannelStats, SystemDims};
use crate::{Error, Result};

pub const CONTEXT_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeatures {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    /// Channel-major: `data[(c * rows + k) * cols + j]`.
    pub data: Vec<f64>,
}

impl ContextFeatures {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    pub fn at(&self, c: usize, k: usize, j: usize) -> f64 {
        self.data[(c * self.rows + k) * self.cols + j]
    }
}

pub fn encode_context(
    stats: &ChannelStats,
    support: &BeamSupport,
    sampling: &SubcarrierSampling,
    dims: &SystemDims,
) -> Result<ContextFeatures> {
    stats.check_dims(dims)?;
    if support.columns.len() != dims.k_users || sampling.n_sub != dims.n_sub {
        return Err(Error::Shape(
            "support or sampling does not match the system".into(),
        ));
    }
    let (kk, nn) = (dims.k_users, sampling.len());
    let mut data = vec![0.0; CONTEXT_CHANNELS * kk * nn];
    let mut put = |c: usize, k: usize, j: usize, v: f64| data[(c * kk + k) * nn + j] = v;
    for k in 0..kk {
        let cols = &support.columns[k];
        for (j, &f) in sampling.nodes.iter().enumerate() {
            let (h, v) = (stats.mean_at(k, f), stats.var_at(k, f));
            let mut e_mean = 0.0;
            let mut e_var = 0.0;
            for &p in cols {
                for r in 0..dims.m_r {
                    e_mean += h[(r, p)].norm_sqr();
                    e_var += v[(r, p)];
                }
            }
            put(0, k, j, e_mean.ln_1p());
            put(1, k, j, e_var.ln_1p());
            put(2, k, j, stats.current_aging(k, f));
            let snr = dims.p_max * (e_mean + e_var).max(1e-300) / dims.noise_vars[k];
            put(3, k, j, snr.log10());
        }
    }
    Ok(ContextFeatures {
        channels: CONTEXT_CHANNELS,
        rows: kk,
        cols: nn,
        data,
    })
}
