//! Wideband stochastic WMMSE.
//!
//! The power-constrained ergodic rate problem is solved through its
//! scale-invariant surrogate, in which the noise term `σ_k² I` is replaced by
//! `(σ_k²/P_max) Σ_m Tr(V_m V_mᴴ) I`, and its weighted-MMSE form
//!
//! ```text
//! min_V E[ min_{U,W} Σ_k Σ_f ω_k (Tr(W_{k,f} Ẽ_{k,f}) − ln det W_{k,f}) ]
//! ```
//!
//! by block coordinate descent over `U` (receive filters), `W` (weights) and
//! `V` (one precoder per user for the whole resource block group).
//! Expectations in the `V` step are replaced by sample averages over fresh
//! channel draws each iteration. A final common scaling restores
//! `Σ_k Tr(V_k V_kᴴ) = P_max`.
//!
//! All optimality conditions use natural logarithms; rates are reported in
//! bits.

use std::f64::consts::LN_2;

use crate::channel::{
    realization_to_antenna, sample_channel, ChannelRealization, ChannelStats, Dft, SystemDims,
};
use crate::linalg::{
    c, frob_sq, hermitian_part, identity, mm, solve_hermitian, trace, CMat, Cholesky,
};
use crate::rng::{derive_key, tags};
use crate::telemetry::Telemetry;
use crate::{Error, Result};

const MODULE: &str = "swmmse";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// `V_k`, applied to the antenna-domain channel `H = Hᵇ Φ`.
    Antenna,
    /// `X_k = Φ V_k`, applied to the beam-domain channel `Hᵇ`.
    Beam,
}

/// One `m_t × m_r` precoder per user with cached total power.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    mats: Vec<CMat>,
    domain: Domain,
    power: f64,
}

impl PrecoderSet {
    pub fn new(mats: Vec<CMat>, domain: Domain) -> Self {
        let power = total_power(&mats);
        Self {
            mats,
            domain,
            power,
        }
    }

    pub fn zeros(dims: &SystemDims, domain: Domain) -> Self {
        Self::new(vec![CMat::zeros(dims.m_t, dims.m_r); dims.k_users], domain)
    }

    pub fn mats(&self) -> &[CMat] {
        &self.mats
    }

    pub fn get(&self, k: usize) -> &CMat {
        &self.mats[k]
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// `Σ_k Tr(V_k V_kᴴ)`.
    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn is_zero(&self) -> bool {
        self.power == 0.0
    }

    pub fn into_mats(self) -> Vec<CMat> {
        self.mats
    }

    pub fn to_beam(&self, dft: &Dft) -> Self {
        match self.domain {
            Domain::Beam => self.clone(),
            Domain::Antenna => Self::new(
                self.mats.iter().map(|v| &dft.phi * v).collect(),
                Domain::Beam,
            ),
        }
    }

    pub fn to_antenna(&self, dft: &Dft) -> Self {
        match self.domain {
            Domain::Antenna => self.clone(),
            Domain::Beam => Self::new(
                self.mats.iter().map(|x| &dft.phi_h * x).collect(),
                Domain::Antenna,
            ),
        }
    }

    fn check(&self, dims: &SystemDims) -> Result<()> {
        if self.mats.len() != dims.k_users {
            return Err(Error::Shape(format!(
                "{} precoders for {} users",
                self.mats.len(),
                dims.k_users
            )));
        }
        for (k, v) in self.mats.iter().enumerate() {
            if v.nrows() != dims.m_t || v.ncols() != dims.m_r {
                return Err(Error::Shape(format!(
                    "precoder {k} is {}x{}",
                    v.nrows(),
                    v.ncols()
                )));
            }
        }
        Ok(())
    }
}

pub fn total_power(mats: &[CMat]) -> f64 {
    mats.iter().map(frob_sq).sum()
}

/// Receive filters and weights for every (user, subcarrier) of one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct BcdState {
    pub n_sub: usize,
    pub u: Vec<CMat>,
    pub w: Vec<CMat>,
    pub iteration: usize,
}

/// `ln det(S_total) − ln det(S_total − hv_k hv_kᴴ)` given the products
/// `hv[m] = H_k V_m`.
fn rate_nats(hv: &[CMat], k: usize, noise: f64, tel: &mut Telemetry) -> Result<f64> {
    let m_r = hv[k].nrows();
    let mut interf = identity(m_r) * c(noise, 0.0);
    for (m, p) in hv.iter().enumerate() {
        if m != k {
            interf += mm(p, &p.adjoint(), tel, MODULE, "rate");
        }
    }
    let total = &interf + mm(&hv[k], &hv[k].adjoint(), tel, MODULE, "rate");
    let singular = || Error::NotPositiveDefinite("interference-plus-noise covariance".into());
    let li = Cholesky::factor(&hermitian_part(&interf), tel, MODULE).ok_or_else(singular)?;
    let lt = Cholesky::factor(&hermitian_part(&total), tel, MODULE).ok_or_else(singular)?;
    Ok((lt.ln_det() - li.ln_det()).max(0.0))
}

fn products(h: &CMat, v: &PrecoderSet, tel: &mut Telemetry) -> Vec<CMat> {
    v.mats()
        .iter()
        .map(|vm| mm(h, vm, tel, MODULE, "hv"))
        .collect()
}

/// `R_{k,f}` in bits for every user, given `h[k] = H_{k,f}` at one
/// subcarrier. Channel and precoders must share a domain (antenna channel
/// with antenna precoders, or `Hᵇ` with `X`).
pub fn rate_per_user(h: &[CMat], v: &PrecoderSet, dims: &SystemDims) -> Result<Vec<f64>> {
    rates_with_noise(h, v, dims, |k| dims.noise_vars[k])
}

/// The surrogate rate `R̃_{k,f}` (bits), where `σ_k²` is replaced by
/// `(σ_k²/P_max) Σ_m Tr(V_m V_mᴴ)`. It coincides with `R_{k,f}` at full power.
pub fn surrogate_rate_per_user(h: &[CMat], v: &PrecoderSet, dims: &SystemDims) -> Result<Vec<f64>> {
    let p = v.power();
    rates_with_noise(h, v, dims, |k| dims.noise_ratio(k) * p)
}

fn rates_with_noise(
    h: &[CMat],
    v: &PrecoderSet,
    dims: &SystemDims,
    noise: impl Fn(usize) -> f64,
) -> Result<Vec<f64>> {
    v.check(dims)?;
    if h.len() != dims.k_users {
        return Err(Error::Shape(format!(
            "{} channels for {} users",
            h.len(),
            dims.k_users
        )));
    }
    let mut tel = Telemetry::new();
    h.iter()
        .enumerate()
        .map(|(k, hk)| {
            if hk.ncols() != dims.m_t || hk.nrows() != dims.m_r {
                return Err(Error::Shape(format!(
                    "channel {k} is {}x{}",
                    hk.nrows(),
                    hk.ncols()
                )));
            }
            let hv = products(hk, v, &mut tel);
            Ok(rate_nats(&hv, k, noise(k), &mut tel)? / LN_2)
        })
        .collect()
}

fn check_realization(real: &ChannelRealization, dims: &SystemDims) -> Result<()> {
    if real.n_sub != dims.n_sub || real.h.len() != dims.k_users * dims.n_sub {
        return Err(Error::Shape("realization does not match dims".into()));
    }
    Ok(())
}

/// `U_{k,f} = A_{k,f}⁻¹ H_{k,f} V_k` with
/// `A = Σ_m H V_m V_mᴴ Hᴴ + (σ_k²/P_max) Σ_m Tr(V_m V_mᴴ) I`.
pub fn update_u(
    real: &ChannelRealization,
    v: &PrecoderSet,
    dims: &SystemDims,
    tel: &mut Telemetry,
) -> Result<Vec<CMat>> {
    v.check(dims)?;
    check_realization(real, dims)?;
    if v.is_zero() {
        return Err(Error::Degenerate(
            "update_u: all precoders are zero, A vanishes".into(),
        ));
    }
    let power = v.power();
    let mut out = Vec::with_capacity(real.h.len());
    for k in 0..dims.k_users {
        for f in 0..dims.n_sub {
            let hv = products(real.at(k, f), v, tel);
            let mut a = identity(dims.m_r) * c(dims.noise_ratio(k) * power, 0.0);
            for p in &hv {
                a += mm(p, &p.adjoint(), tel, MODULE, "update_u");
            }
            out.push(solve_hermitian(
                &hermitian_part(&a),
                &hv[k],
                tel,
                MODULE,
                "A in update_u",
            )?);
        }
    }
    Ok(out)
}

/// `W_{k,f} = (I − U_{k,f}ᴴ H_{k,f} V_k)⁻¹`, symmetrized.
pub fn update_w(
    real: &ChannelRealization,
    v: &PrecoderSet,
    u: &[CMat],
    dims: &SystemDims,
    tel: &mut Telemetry,
) -> Result<Vec<CMat>> {
    v.check(dims)?;
    check_realization(real, dims)?;
    let mut out = Vec::with_capacity(u.len());
    for k in 0..dims.k_users {
        for f in 0..dims.n_sub {
            let i = k * dims.n_sub + f;
            let hv = mm(real.at(k, f), v.get(k), tel, MODULE, "update_w");
            let e = identity(dims.m_r) - mm(&u[i].adjoint(), &hv, tel, MODULE, "update_w");
            tel.flops
                .add(MODULE, "update_w", (dims.m_r * dims.m_r * dims.m_r) as u64);
            let w = e.try_inverse().ok_or_else(|| {
                Error::NotPositiveDefinite(format!("I − UᴴHV singular at user {k}, subcarrier {f}"))
            })?;
            out.push(hermitian_part(&w));
        }
    }
    Ok(out)
}

/// Sample-average `V` update:
/// `V_k = B⁻¹ ω_k avg Σ_f H_{k,f}ᴴ U_{k,f} W_{k,f}`, with
/// `B = avg Σ_f Σ_m ω_m [(σ_m²/P_max) Tr(U W Uᴴ) I + Hᴴ U W Uᴴ H]`.
///
/// Each draw contributes a partial sum that is accumulated in draw order and
/// scaled by `1/S` at the end, so repeating a draw leaves the result
/// unchanged.
pub fn update_v(
    samples: &[ChannelRealization],
    states: &[BcdState],
    dims: &SystemDims,
    tel: &mut Telemetry,
) -> Result<PrecoderSet> {
    if samples.is_empty() {
        return Err(Error::OutOfRange(
            "update_v needs at least one sample".into(),
        ));
    }
    if samples.len() != states.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} states",
            samples.len(),
            states.len()
        )));
    }
    let (m_t, m_r, kk) = (dims.m_t, dims.m_r, dims.k_users);
    let mut b_sum = CMat::zeros(m_t, m_t);
    let mut rhs_sum = CMat::zeros(m_t, kk * m_r);
    for (real, st) in samples.iter().zip(states) {
        check_realization(real, dims)?;
        let mut b_s = CMat::zeros(m_t, m_t);
        let mut rhs_s = CMat::zeros(m_t, kk * m_r);
        let mut diag_load = 0.0;
        for k in 0..kk {
            let wk = dims.weights[k];
            for f in 0..dims.n_sub {
                let i = k * dims.n_sub + f;
                let h = real.at(k, f);
                let t = mm(&h.adjoint(), &st.u[i], tel, MODULE, "update_v"); // Hᴴ U
                let tw = mm(&t, &st.w[i], tel, MODULE, "update_v"); // Hᴴ U W
                b_s += mm(&tw, &t.adjoint(), tel, MODULE, "update_v") * c(wk, 0.0);
                let uwu = mm(
                    &mm(&st.u[i], &st.w[i], tel, MODULE, "update_v"),
                    &st.u[i].adjoint(),
                    tel,
                    MODULE,
                    "update_v",
                );
                diag_load += wk * dims.noise_ratio(k) * trace(&uwu).re;
                let mut block = rhs_s.columns_mut(k * m_r, m_r);
                block += tw * c(wk, 0.0);
            }
        }
        for d in 0..m_t {
            b_s[(d, d)] += c(diag_load, 0.0);
        }
        b_sum += b_s;
        rhs_sum += rhs_s;
    }
    let inv_s = 1.0 / samples.len() as f64;
    let b = hermitian_part(&(b_sum * c(inv_s, 0.0)));
    let rhs = rhs_sum * c(inv_s, 0.0);
    let x = solve_hermitian(&b, &rhs, tel, MODULE, "B in update_v")?;
    let mats = (0..kk)
        .map(|k| x.columns(k * m_r, m_r).into_owned())
        .collect();
    Ok(PrecoderSet::new(mats, Domain::Antenna))
}

/// Common scaling `ξ = sqrt(P_max / Σ Tr(V Vᴴ))`.
pub fn scale_to_power(v: &PrecoderSet, p_max: f64) -> Result<PrecoderSet> {
    if v.is_zero() {
        return Err(Error::Degenerate(
            "cannot scale all-zero precoders to full power".into(),
        ));
    }
    if !(p_max > 0.0) {
        return Err(Error::OutOfRange(format!("p_max = {p_max}")));
    }
    let xi = (p_max / v.power()).sqrt();
    let mats = v.mats().iter().map(|m| m * c(xi, 0.0)).collect();
    Ok(PrecoderSet::new(mats, v.domain()))
}

/// MSE matrix of the surrogate problem for user `k` at one subcarrier:
/// `(I − UᴴHV_k)(I − UᴴHV_k)ᴴ + Σ_{m≠k} UᴴHV_mV_mᴴHᴴU + (σ_k²/P_max)ΣTr(VVᴴ) UᴴU`.
pub fn mse_matrix(h: &CMat, v: &PrecoderSet, u: &CMat, k: usize, dims: &SystemDims) -> CMat {
    let m_r = dims.m_r;
    let mut e = CMat::zeros(m_r, m_r);
    let uh = u.adjoint();
    for (m, vm) in v.mats().iter().enumerate() {
        let g = &uh * h * vm;
        if m == k {
            let d = identity(m_r) - g;
            e += &d * d.adjoint();
        } else {
            e += &g * g.adjoint();
        }
    }
    e + (&uh * u) * c(dims.noise_ratio(k) * v.power(), 0.0)
}

/// `Σ_k Σ_f ω_k (Re Tr(W Ẽ) − ln det W)` for one draw.
pub fn p3_objective(
    real: &ChannelRealization,
    v: &PrecoderSet,
    state: &BcdState,
    dims: &SystemDims,
) -> Result<f64> {
    let mut tel = Telemetry::new();
    let mut total = 0.0;
    for k in 0..dims.k_users {
        for f in 0..dims.n_sub {
            let i = k * dims.n_sub + f;
            let e = mse_matrix(real.at(k, f), v, &state.u[i], k, dims);
            let w = &state.w[i];
            let ch = Cholesky::factor(&hermitian_part(w), &mut tel, MODULE)
                .ok_or_else(|| Error::NotPositiveDefinite("W in objective".into()))?;
            total += dims.weights[k] * ((w * e).trace().re - ch.ln_det());
        }
    }
    Ok(total)
}

/// `V_k = Φᴴ (H̄ᵇ_{k,f_c})ᴴ` at the central subcarrier, each user scaled to
/// `P_max / K`. Falls back to `sqrt(Ω)` when the posterior mean vanishes.
pub fn matched_filter_init(stats: &ChannelStats, dims: &SystemDims) -> Result<PrecoderSet> {
    let fc = dims.n_sub / 2;
    let per_user = dims.p_max / dims.k_users as f64;
    let mut mats = Vec::with_capacity(dims.k_users);
    for k in 0..dims.k_users {
        let mut x = stats.mean_at(k, fc).adjoint();
        if frob_sq(&x) == 0.0 {
            x = stats.omega_at(k, fc).map(|o| c(o.sqrt(), 0.0)).transpose();
        }
        let p = frob_sq(&x);
        if p == 0.0 {
            return Err(Error::Degenerate(format!(
                "user {k} has no channel energy at the centre subcarrier"
            )));
        }
        mats.push(x * c((per_user / p).sqrt(), 0.0));
    }
    Ok(PrecoderSet::new(mats, Domain::Beam))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwmmseOptions {
    pub iterations: usize,
    /// Channel draws per iteration.
    pub saa_batch: usize,
    pub seed: u64,
}

impl Default for SwmmseOptions {
    fn default() -> Self {
        Self {
            iterations: 5,
            saa_batch: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SwmmseOutput {
    /// Antenna-domain precoders at full power.
    pub precoders: PrecoderSet,
    /// Batch-averaged objective after each `V` update.
    pub trace: Vec<f64>,
}

/// Run the stochastic BCD loop from the matched-filter initialization.
/// With zero variance and a batch of one this is deterministic WMMSE.
pub fn swmmse_solve(
    stats: &ChannelStats,
    dims: &SystemDims,
    opts: &SwmmseOptions,
    tel: &mut Telemetry,
) -> Result<SwmmseOutput> {
    dims.validate()?;
    stats.check_dims(dims)?;
    if opts.iterations == 0 {
        return Err(Error::OutOfRange(
            "swmmse needs at least one iteration".into(),
        ));
    }
    if opts.saa_batch == 0 {
        return Err(Error::OutOfRange(
            "swmmse needs at least one sample per iteration".into(),
        ));
    }
    let dft = Dft::new(dims.m_t);
    let mut v = matched_filter_init(stats, dims)?.to_antenna(&dft);
    let seed = derive_key(opts.seed, &[tags::SAA]);
    let mut trace_out = Vec::with_capacity(opts.iterations);
    for it in 0..opts.iterations {
        let mut samples = Vec::with_capacity(opts.saa_batch);
        let mut states = Vec::with_capacity(opts.saa_batch);
        for b in 0..opts.saa_batch {
            let idx = (it * opts.saa_batch + b) as u64;
            let draw = realization_to_antenna(&sample_channel(stats, seed, idx), &dft)?;
            tel.flops.add(
                MODULE,
                "to_antenna",
                (dims.k_users * dims.n_sub * dims.m_r * dims.m_t * dims.m_t) as u64,
            );
            let u = update_u(&draw, &v, dims, tel)?;
            let w = update_w(&draw, &v, &u, dims, tel)?;
            states.push(BcdState {
                n_sub: dims.n_sub,
                u,
                w,
                iteration: it + 1,
            });
            samples.push(draw);
        }
        v = update_v(&samples, &states, dims, tel)?;
        let obj: f64 = samples
            .iter()
            .zip(&states)
            .map(|(s, st)| p3_objective(s, &v, st, dims))
            .sum::<Result<f64>>()?
            / samples.len() as f64;
        trace_out.push(obj);
    }
    Ok(SwmmseOutput {
        precoders: scale_to_power(&v, dims.p_max)?,
        trace: trace_out,
    })
}

/// Non-robust WMMSE: the posterior mean is treated as the true channel.
pub fn wmmse_solve(
    stats: &ChannelStats,
    dims: &SystemDims,
    iterations: usize,
    tel: &mut Telemetry,
) -> Result<SwmmseOutput> {
    let opts = SwmmseOptions {
        iterations,
        saa_batch: 1,
        seed: 0,
    };
    swmmse_solve(&stats.without_uncertainty(), dims, &opts, tel)
}

/// Monte Carlo estimate of the ergodic weighted sum rate with its standard
/// error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwsrEstimate {
    /// bits/s/Hz summed over users and subcarriers, weighted by `ω_k`.
    pub mean: f64,
    pub std_err: f64,
    pub n_mc: usize,
}

/// Weighted sum rate (bits) of one beam-domain draw under beam precoders.
pub fn weighted_sum_rate(
    real: &ChannelRealization,
    x: &PrecoderSet,
    dims: &SystemDims,
    tel: &mut Telemetry,
) -> Result<f64> {
    let mut total = 0.0;
    for f in 0..dims.n_sub {
        for k in 0..dims.k_users {
            let hv = products(real.at(k, f), x, tel);
            total += dims.weights[k] * rate_nats(&hv, k, dims.noise_vars[k], tel)?;
        }
    }
    Ok(total / LN_2)
}

/// EWSR over `n_mc` draws. Draw `s` comes from the substream keyed by
/// `(seed, s)`, so two precoder sets evaluated with the same seed see the
/// same channels.
pub fn ewsr_estimate(
    stats: &ChannelStats,
    precoders: &PrecoderSet,
    n_mc: usize,
    seed: u64,
    dims: &SystemDims,
) -> Result<EwsrEstimate> {
    stats.check_dims(dims)?;
    precoders.check(dims)?;
    if n_mc == 0 {
        return Err(Error::OutOfRange("n_mc must be at least 1".into()));
    }
    let x = precoders.to_beam(&Dft::new(dims.m_t));
    let key = derive_key(seed, &[tags::EWSR]);
    let mut tel = Telemetry::new();
    // Welford: exact for constant sequences.
    let (mut mean, mut m2) = (0.0, 0.0);
    for s in 0..n_mc {
        let draw = sample_channel(stats, key, s as u64);
        let val = weighted_sum_rate(&draw, &x, dims, &mut tel)?;
        let delta = val - mean;
        mean += delta / (s + 1) as f64;
        m2 += delta * (val - mean);
    }
    let std_err = if n_mc > 1 {
        (m2 / (n_mc - 1) as f64 / n_mc as f64).sqrt()
    } else {
        0.0
    };
    Ok(EwsrEstimate {
        mean,
        std_err,
        n_mc,
    })
}

pub fn ewsr_eval(
    stats: &ChannelStats,
    precoders: &PrecoderSet,
    n_mc: usize,
    seed: u64,
    dims: &SystemDims,
) -> Result<f64> {
    Ok(ewsr_estimate(stats, precoders, n_mc, seed, dims)?.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{evolve_stats, make_scenario};
    use crate::linalg::{frob, rel_err};
    use crate::rng::{complex_normal, substream};

    fn scalar_dims(p_max: f64, sigma2: f64) -> SystemDims {
        SystemDims {
            m_t: 1,
            m_r: 1,
            k_users: 1,
            n_sub: 12,
            n_blocks: 1,
            p_max,
            noise_vars: vec![sigma2],
            weights: vec![1.0],
        }
    }

    fn scalar_real(h: f64) -> ChannelRealization {
        ChannelRealization {
            n_sub: 12,
            h: vec![CMat::from_element(1, 1, c(h, 0.0)); 12],
        }
    }

    fn one(v: f64) -> PrecoderSet {
        PrecoderSet::new(vec![CMat::from_element(1, 1, c(v, 0.0))], Domain::Antenna)
    }

    fn random_instance(
        seed: u64,
        m_t: usize,
        m_r: usize,
        k: usize,
    ) -> (SystemDims, ChannelRealization, PrecoderSet) {
        let mut dims = SystemDims::new(m_t, m_r, k, 12, 1, 1.0, 10.0).unwrap();
        let mut rng = substream(seed, &[]);
        dims.weights = (0..k).map(|i| 0.5 + 0.3 * i as f64).collect();
        let h = (0..k * 12)
            .map(|_| CMat::from_fn(m_r, m_t, |_, _| complex_normal(&mut rng)))
            .collect();
        let v = (0..k)
            .map(|_| CMat::from_fn(m_t, m_r, |_, _| complex_normal(&mut rng) * 0.3))
            .collect();
        (
            dims,
            ChannelRealization { n_sub: 12, h },
            PrecoderSet::new(v, Domain::Antenna),
        )
    }

    #[test]
    fn scalar_shannon_rate() {
        let p = 4.0;
        let dims = scalar_dims(p, 1.0);
        let r = rate_per_user(
            &[CMat::from_element(1, 1, c(1.0, 0.0))],
            &one(p.sqrt()),
            &dims,
        )
        .unwrap();
        assert!((r[0] - (1.0 + p).log2()).abs() < 1e-14);
    }

    #[test]
    fn zero_precoder_has_zero_rate() {
        let (dims, real, _) = random_instance(1, 4, 2, 2);
        let v = PrecoderSet::zeros(&dims, Domain::Antenna);
        let h: Vec<CMat> = (0..2).map(|k| real.at(k, 0).clone()).collect();
        assert_eq!(rate_per_user(&h, &v, &dims).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn surrogate_equals_rate_at_full_power() {
        let (dims, real, v) = random_instance(7, 4, 2, 2);
        let v = scale_to_power(&v, dims.p_max).unwrap();
        let h: Vec<CMat> = (0..2).map(|k| real.at(k, 0).clone()).collect();
        let r = rate_per_user(&h, &v, &dims).unwrap();
        let rt = surrogate_rate_per_user(&h, &v, &dims).unwrap();
        for (a, b) in r.iter().zip(&rt) {
            assert!((a - b).abs() < 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn scalar_u_and_w() {
        let dims = scalar_dims(2.0, 2.0);
        let real = scalar_real(1.0);
        let v = one(1.0);
        let mut tel = Telemetry::new();
        let u = update_u(&real, &v, &dims, &mut tel).unwrap();
        assert!((u[0][(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
        let w = update_w(&real, &v, &u, &dims, &mut tel).unwrap();
        assert!((w[0][(0, 0)] - c(2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn zero_precoders_make_u_degenerate() {
        let (dims, real, _) = random_instance(2, 4, 2, 2);
        let v = PrecoderSet::zeros(&dims, Domain::Antenna);
        assert!(matches!(
            update_u(&real, &v, &dims, &mut Telemetry::new()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn zero_user_precoder_gives_identity_weight() {
        let (dims, real, v) = random_instance(3, 4, 2, 2);
        let mut mats = v.into_mats();
        mats[1].fill(c(0.0, 0.0));
        let v = PrecoderSet::new(mats, Domain::Antenna);
        let mut tel = Telemetry::new();
        let u = update_u(&real, &v, &dims, &mut tel).unwrap();
        let w = update_w(&real, &v, &u, &dims, &mut tel).unwrap();
        for f in 0..12 {
            assert!(frob(&(&w[12 + f] - identity(2))) < 1e-14);
        }
    }

    /// Central differences of the objective w.r.t. the real and imaginary
    /// parts of every entry of `X_{k,f}`, where `X` is U or W.
    fn fd_gradient(
        real: &ChannelRealization,
        v: &PrecoderSet,
        st: &BcdState,
        dims: &SystemDims,
        i: usize,
        wrt_w: bool,
    ) -> f64 {
        let h = 1e-5;
        let mut g2 = 0.0;
        let target = if wrt_w { &st.w[i] } else { &st.u[i] };
        for r in 0..target.nrows() {
            for col in 0..target.ncols() {
                for dir in [c(1.0, 0.0), c(0.0, 1.0)] {
                    let eval = |s: f64| {
                        let mut p = st.clone();
                        let m = if wrt_w { &mut p.w[i] } else { &mut p.u[i] };
                        m[(r, col)] += dir * s;
                        if wrt_w && r != col {
                            // keep W Hermitian
                            m[(col, r)] += dir.conj() * s;
                        }
                        p3_objective(real, v, &p, dims).unwrap()
                    };
                    let d = (eval(h) - eval(-h)) / (2.0 * h);
                    g2 += d * d;
                }
            }
        }
        g2.sqrt()
    }

    #[test]
    fn u_and_w_updates_are_stationary() {
        let (dims, real, v) = random_instance(11, 4, 2, 2);
        let mut tel = Telemetry::new();
        let u = update_u(&real, &v, &dims, &mut tel).unwrap();
        let w = update_w(&real, &v, &u, &dims, &mut tel).unwrap();
        let st = BcdState {
            n_sub: 12,
            u,
            w,
            iteration: 1,
        };
        // reference: gradient at a perturbed, non-stationary point
        let mut off = st.clone();
        off.u[5] *= c(1.3, 0.2);
        off.w[5] *= c(1.4, 0.0);
        for i in [0usize, 5, 17] {
            let gu = fd_gradient(&real, &v, &st, &dims, i, false);
            let gw = fd_gradient(&real, &v, &st, &dims, i, true);
            let ref_u = fd_gradient(&real, &v, &off, &dims, 5, false);
            let ref_w = fd_gradient(&real, &v, &off, &dims, 5, true);
            assert!(gu <= 1e-4 * ref_u.max(1.0), "dU {gu} vs {ref_u}");
            assert!(gw <= 1e-4 * ref_w.max(1.0), "dW {gw} vs {ref_w}");
        }
    }

    #[test]
    fn single_sample_zero_variance_is_deterministic_v_update() {
        let (dims, real, v) = random_instance(5, 4, 2, 2);
        let mut tel = Telemetry::new();
        let u = update_u(&real, &v, &dims, &mut tel).unwrap();
        let w = update_w(&real, &v, &u, &dims, &mut tel).unwrap();
        let st = BcdState {
            n_sub: 12,
            u,
            w,
            iteration: 1,
        };
        let one = update_v(
            std::slice::from_ref(&real),
            std::slice::from_ref(&st),
            &dims,
            &mut tel,
        )
        .unwrap();
        let two = update_v(
            &[real.clone(), real.clone()],
            &[st.clone(), st.clone()],
            &dims,
            &mut tel,
        )
        .unwrap();
        assert_eq!(one, two);

        // the update is the minimizer of the quadratic V-subproblem: it
        // cannot increase the objective
        let before = p3_objective(&real, &v, &st, &dims).unwrap();
        let after = p3_objective(&real, &one, &st, &dims).unwrap();
        assert!(after <= before + 1e-9);
        assert!(update_v(&[], &[], &dims, &mut tel).is_err());
    }

    #[test]
    fn scalar_fixed_point_is_full_power_beamformer() {
        let p = 3.0;
        let dims = scalar_dims(p, 1e-9 * p);
        let real = scalar_real(1.0);
        let mut tel = Telemetry::new();
        let mut v = one(0.2);
        for _ in 0..3 {
            let u = update_u(&real, &v, &dims, &mut tel).unwrap();
            let w = update_w(&real, &v, &u, &dims, &mut tel).unwrap();
            let st = BcdState {
                n_sub: 12,
                u: u.clone(),
                w: w.clone(),
                iteration: 0,
            };
            v = update_v(
                std::slice::from_ref(&real),
                std::slice::from_ref(&st),
                &dims,
                &mut tel,
            )
            .unwrap();
            // V = UW/(U²W + ε U²W) -> 1/U as ε -> 0
            let (uu, ww) = (u[0][(0, 0)].re, w[0][(0, 0)].re);
            let expect = uu * ww / (uu * uu * ww * (1.0 + 1e-9));
            assert!((v.get(0)[(0, 0)].re - expect).abs() < 1e-9 * expect.abs());
        }
        let v = scale_to_power(&v, p).unwrap();
        assert!((v.get(0)[(0, 0)].norm() - p.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scaling() {
        let v = PrecoderSet::new(vec![CMat::from_element(2, 2, c(1.0, 0.0))], Domain::Antenna);
        assert_eq!(v.power(), 4.0);
        let s = scale_to_power(&v, 1.0).unwrap();
        assert!((s.get(0)[(0, 0)].re - 0.5).abs() < 1e-16);
        let again = scale_to_power(&s, 1.0).unwrap();
        assert!((again.power() - 1.0).abs() < 1e-15);
        assert_eq!(scale_to_power(&s, s.power()).unwrap(), s);
        let z = PrecoderSet::new(vec![CMat::zeros(2, 2)], Domain::Antenna);
        assert!(scale_to_power(&z, 1.0).is_err());
    }

    #[test]
    fn zero_iterations_rejected() {
        let dims = SystemDims::new(8, 2, 3, 12, 6, 1.0, 10.0).unwrap();
        let stats = make_scenario(&dims, 4, 1).unwrap();
        let mut opts = SwmmseOptions {
            iterations: 0,
            ..Default::default()
        };
        assert!(swmmse_solve(&stats, &dims, &opts, &mut Telemetry::new()).is_err());
        opts.iterations = 1;
        let out = swmmse_solve(&stats, &dims, &opts, &mut Telemetry::new()).unwrap();
        assert!((out.precoders.power() - 1.0).abs() < 1e-12);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn deterministic_wmmse_objective_decreases() {
        let dims = SystemDims::new(8, 2, 3, 12, 6, 1.0, 10.0).unwrap();
        let stats = make_scenario(&dims, 4, 4).unwrap();
        let out = wmmse_solve(&stats, &dims, 10, &mut Telemetry::new()).unwrap();
        for pair in out.trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{:?}", out.trace);
        }
    }

    #[test]
    fn ewsr_properties() {
        let dims = SystemDims::new(8, 2, 3, 12, 6, 1.0, 10.0).unwrap();
        let s0 = make_scenario(&dims, 4, 6).unwrap();
        let v = wmmse_solve(&s0, &dims, 3, &mut Telemetry::new())
            .unwrap()
            .precoders;

        // point mass: every draw is the mean
        let det = ewsr_eval(&s0, &v, 1, 3, &dims).unwrap();
        assert_eq!(ewsr_eval(&s0, &v, 7, 3, &dims).unwrap(), det);

        let zero = PrecoderSet::zeros(&dims, Domain::Antenna);
        assert_eq!(ewsr_eval(&s0, &zero, 5, 3, &dims).unwrap(), 0.0);

        let s3 = evolve_stats(&s0, 3).unwrap();
        let a = ewsr_estimate(&s3, &v, 20, 9, &dims).unwrap();
        let b = ewsr_estimate(&s3, &v, 20, 9, &dims).unwrap();
        assert_eq!(a, b);
        assert!(a.std_err > 0.0);
        assert!(ewsr_eval(&s3, &v, 0, 9, &dims).is_err());
    }

    #[test]
    fn beam_and_antenna_rates_agree() {
        let dims = SystemDims::new(8, 2, 3, 12, 6, 1.0, 10.0).unwrap();
        let s0 = make_scenario(&dims, 4, 6).unwrap();
        let dft = Dft::new(8);
        let v = wmmse_solve(&s0, &dims, 2, &mut Telemetry::new())
            .unwrap()
            .precoders;
        let hb: Vec<CMat> = (0..3).map(|k| s0.mean_at(k, 4).clone()).collect();
        let ha: Vec<CMat> = hb.iter().map(|h| dft.to_antenna(h).unwrap()).collect();
        let ra = rate_per_user(&ha, &v, &dims).unwrap();
        let rb = rate_per_user(&hb, &v.to_beam(&dft), &dims).unwrap();
        for (a, b) in ra.iter().zip(&rb) {
            assert!((a - b).abs() < 1e-10);
        }
        let x = v.to_beam(&dft).to_antenna(&dft);
        assert!(rel_err(x.get(1), v.get(1)) < 1e-13);
    }
}
