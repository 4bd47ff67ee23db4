//! wasm-bindgen entry points for `www/index.html`. Each export is a thin
//! wrapper over a plain function so the logic also runs natively.

use robust_wmmse::accel::{flop_estimate, Algo, FlopConstants, FlopDims, SubcarrierSampling};
use robust_wmmse::channel::{evolve_stats, make_scenario, SystemDims};
use robust_wmmse::du::{DuNetwork, DuOptions};
use robust_wmmse::linalg::rel_err;
use robust_wmmse::policy::net::{CONV_CHANNELS, FC_WIDTH, KERNEL};
use robust_wmmse::swmmse::{ewsr_eval, swmmse_solve, wmmse_solve, SwmmseOptions};
use robust_wmmse::{CMat, Result, Telemetry};
use wasm_bindgen::prelude::*;

pub const BLOCKS: usize = 6;

/// Model flop counts `[swmmse, po_wmmse, rlddu]`.
#[allow(clippy::too_many_arguments)]
pub fn flop_table(
    m_t: f64,
    m_r: f64,
    n_sub: f64,
    k_users: f64,
    iters: f64,
    b: f64,
    q: f64,
    f_tilde: f64,
) -> Result<Vec<f64>> {
    let dims = FlopDims {
        m_t,
        m_r,
        n_sub,
        k_users,
        iters,
    };
    let k = FlopConstants {
        b,
        q,
        f_tilde,
        d: FC_WIDTH as f64,
        c: CONV_CHANNELS as f64,
        h: KERNEL as f64,
    };
    [Algo::Swmmse, Algo::PoWmmse, Algo::Rlddu]
        .iter()
        .map(|&a| flop_estimate(a, &dims, &k))
        .collect()
}

fn demo_dims(k_users: usize, snr_db: f64) -> Result<SystemDims> {
    SystemDims::new(8, 2, k_users, 12, BLOCKS, 1.0, snr_db)
}

/// EWSR per block for WMMSE, SWMMSE and the plain unfolded network, laid
/// out as three runs of [`BLOCKS`] values. Small sizes so it stays
/// interactive.
pub fn block_sweep(k_users: usize, sparsity_b: usize, snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    let dims = demo_dims(k_users, snr_db)?;
    let s0 = make_scenario(&dims, sparsity_b, seed)?;
    let mut out = vec![0.0; 3 * BLOCKS];
    let mut tel = Telemetry::new();
    let dft = robust_wmmse::channel::Dft::new(dims.m_t);
    for n in 1..=BLOCKS {
        let stats = evolve_stats(&s0, n)?;
        let crn = seed ^ ((n as u64) << 32);
        let wm = wmmse_solve(&stats, &dims, 20, &mut tel)?
            .precoders
            .to_beam(&dft);
        let opts = SwmmseOptions {
            iterations: 10,
            saa_batch: 8,
            seed,
        };
        let sw = swmmse_solve(&stats, &dims, &opts, &mut tel)?
            .precoders
            .to_beam(&dft);
        let du = DuNetwork::new(&stats, &dims, &DuOptions::default())?
            .run_plain(&mut tel)?
            .precoders;
        out[n - 1] = ewsr_eval(&stats, &wm, 64, crn, &dims)?;
        out[BLOCKS + n - 1] = ewsr_eval(&stats, &sw, 64, crn, &dims)?;
        out[2 * BLOCKS + n - 1] = ewsr_eval(&stats, &du, 64, crn, &dims)?;
    }
    Ok(out)
}

/// Relative error of the interpolated posterior-mean channel of user 0 on
/// every subcarrier when only `f_tilde` of them are computed.
pub fn interpolation_error(n_sub: usize, f_tilde: usize, seed: u64) -> Result<Vec<f64>> {
    let dims = SystemDims::new(8, 2, 1, n_sub, BLOCKS, 1.0, 20.0)?;
    let stats = make_scenario(&dims, 4, seed)?;
    let samp = SubcarrierSampling::uniform(n_sub, f_tilde)?;
    let vals: Vec<CMat> = samp
        .nodes
        .iter()
        .map(|&f| stats.mean_at(0, f).clone())
        .collect();
    let all = samp.interpolate_all(&vals)?;
    Ok(all
        .iter()
        .enumerate()
        .map(|(f, m)| rel_err(m, stats.mean_at(0, f)))
        .collect())
}

fn js(e: robust_wmmse::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = flopTable)]
#[allow(clippy::too_many_arguments)]
pub fn flop_table_js(
    m_t: f64,
    m_r: f64,
    n_sub: f64,
    k_users: f64,
    iters: f64,
    b: f64,
    q: f64,
    f_tilde: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    flop_table(m_t, m_r, n_sub, k_users, iters, b, q, f_tilde).map_err(js)
}

#[wasm_bindgen(js_name = blockSweep)]
pub fn block_sweep_js(
    k_users: usize,
    sparsity_b: usize,
    snr_db: f64,
    seed: u64,
) -> std::result::Result<Vec<f64>, JsError> {
    block_sweep(k_users, sparsity_b, snr_db, seed).map_err(js)
}

#[wasm_bindgen(js_name = interpolationError)]
pub fn interpolation_error_js(
    n_sub: usize,
    f_tilde: usize,
    seed: u64,
) -> std::result::Result<Vec<f64>, JsError> {
    interpolation_error(n_sub, f_tilde, seed).map_err(js)
}
