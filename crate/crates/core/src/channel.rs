//! Posterior beam-domain channel statistics.
//!
//! For user `k`, subcarrier `f` and downlink block `n` the beam-domain
//! channel is modelled as an element-wise independent complex Gaussian
//!
//! ```text
//! Hᵇ ~ CN(mean, diag(var)),  mean_n = β·mean_0,  var_n = β²·var_0 + (1 − β²)·Ω
//! ```
//!
//! where `Ω` is the steady-state element variance profile and `β` the
//! Gauss-Markov aging coefficient of block `n`. The antenna-domain channel is
//! `H = Hᵇ Φ` with `Φ` the unitary DFT matrix.
//!
//! Statistics are produced by a synthetic generator ([`make_scenario`]) with
//! a per-user sparse beam support and a few delay taps, so that the frequency
//! response is smooth across the resource block group.
//!
//! # Text format
//!
//! [`ChannelStats::write_text`] emits a small CSV-like format used for test
//! fixtures:
//!
//! ```text
//! # channel-stats v1
//! dims,<m_r>,<m_t>,<k_users>,<n_sub>,<n_blocks>,<block>
//! e,<k>,<f>,<r>,<p>,<mean_re>,<mean_im>,<var>,<omega>     (one row per element)
//! a,<k>,<f>,<n>,<beta>                                    (one row per aging value)
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the statistics bit for bit.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng;

use crate::linalg::{c, CMat, RMat, C64};
use crate::rng::{complex_normal, substream, tags};
use crate::{Error, Result};

/// Aging coefficients of the six downlink blocks used by default.
pub const DEFAULT_AGING_SCHEDULE: [f64; 6] = [0.96, 0.92, 0.84, 0.75, 0.63, 0.49];

/// Subcarriers per resource block.
pub const SUBCARRIERS_PER_RB: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemDims {
    /// Transmit antennas.
    pub m_t: usize,
    /// Receive antennas per user.
    pub m_r: usize,
    pub k_users: usize,
    /// Subcarriers in the resource block group (12 per RB).
    pub n_sub: usize,
    /// Downlink blocks per slot.
    pub n_blocks: usize,
    /// Total transmit power.
    pub p_max: f64,
    /// Per-user noise variance `σ_k²`.
    pub noise_vars: Vec<f64>,
    /// Per-user priority `ω_k`.
    pub weights: Vec<f64>,
}

impl SystemDims {
    /// Dimensions with equal weights and noise `σ² = p_max / 10^(snr_db/10)`.
    pub fn new(
        m_t: usize,
        m_r: usize,
        k_users: usize,
        n_sub: usize,
        n_blocks: usize,
        p_max: f64,
        snr_db: f64,
    ) -> Result<Self> {
        let sigma2 = p_max / 10f64.powf(snr_db / 10.0);
        let dims = Self {
            m_t,
            m_r,
            k_users,
            n_sub,
            n_blocks,
            p_max,
            noise_vars: vec![sigma2; k_users],
            weights: vec![1.0; k_users],
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDims(msg));
        if self.k_users == 0 {
            return bad("k_users must be at least 1".into());
        }
        if self.m_r == 0 || self.m_t == 0 {
            return bad("antenna counts must be positive".into());
        }
        if self.m_r > self.m_t {
            return bad(format!("m_r = {} exceeds m_t = {}", self.m_r, self.m_t));
        }
        if self.n_sub == 0 || !self.n_sub.is_multiple_of(SUBCARRIERS_PER_RB) {
            return bad(format!(
                "n_sub = {} is not a positive multiple of 12",
                self.n_sub
            ));
        }
        if !(self.p_max > 0.0) {
            return bad(format!("p_max = {} must be positive", self.p_max));
        }
        if self.noise_vars.len() != self.k_users || self.weights.len() != self.k_users {
            return bad("noise_vars and weights need one entry per user".into());
        }
        if self.noise_vars.iter().any(|&s| !(s > 0.0)) {
            return bad("noise variances must be positive".into());
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return bad("user weights must be positive".into());
        }
        Ok(())
    }

    /// Noise variance normalised by the power budget, `σ_k² / P_max`.
    pub fn noise_ratio(&self, k: usize) -> f64 {
        self.noise_vars[k] / self.p_max
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.p_max / self.noise_vars[0]).log10()
    }
}

/// Posterior statistics for every (user, subcarrier) at one block.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub m_r: usize,
    pub m_t: usize,
    pub k_users: usize,
    pub n_sub: usize,
    pub n_blocks: usize,
    /// Block these statistics describe (0 = uplink training block).
    pub block: usize,
    /// Posterior mean, indexed `k * n_sub + f`.
    pub mean: Vec<CMat>,
    /// Element-wise posterior variance, same indexing.
    pub var: Vec<RMat>,
    /// Steady-state element variance profile `Ω = M ⊙ M`.
    pub omega: Vec<RMat>,
    /// Aging coefficients, indexed `(k * n_sub + f) * n_blocks + (n - 1)`.
    pub aging: Vec<f64>,
}

impl ChannelStats {
    #[inline]
    pub fn idx(&self, k: usize, f: usize) -> usize {
        k * self.n_sub + f
    }

    pub fn mean_at(&self, k: usize, f: usize) -> &CMat {
        &self.mean[self.idx(k, f)]
    }

    pub fn var_at(&self, k: usize, f: usize) -> &RMat {
        &self.var[self.idx(k, f)]
    }

    pub fn omega_at(&self, k: usize, f: usize) -> &RMat {
        &self.omega[self.idx(k, f)]
    }

    /// `β_{k,f,n}` for `1 ≤ n ≤ n_blocks`.
    pub fn aging_at(&self, k: usize, f: usize, n: usize) -> f64 {
        self.aging[self.idx(k, f) * self.n_blocks + (n - 1)]
    }

    /// Aging coefficient of the block these statistics describe (1 at block 0).
    pub fn current_aging(&self, k: usize, f: usize) -> f64 {
        if self.block == 0 {
            1.0
        } else {
            self.aging_at(k, f, self.block)
        }
    }

    pub fn check_dims(&self, dims: &SystemDims) -> Result<()> {
        if self.m_r != dims.m_r
            || self.m_t != dims.m_t
            || self.k_users != dims.k_users
            || self.n_sub != dims.n_sub
        {
            return Err(Error::Shape(format!(
                "stats are {}x{} for {} users / {} subcarriers, dims ask for {}x{} / {} / {}",
                self.m_r,
                self.m_t,
                self.k_users,
                self.n_sub,
                dims.m_r,
                dims.m_t,
                dims.k_users,
                dims.n_sub
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.k_users * self.n_sub;
        if self.mean.len() != n || self.var.len() != n || self.omega.len() != n {
            return Err(Error::Shape(
                "per-(user, subcarrier) vectors have wrong length".into(),
            ));
        }
        if self.aging.len() != n * self.n_blocks {
            return Err(Error::Shape("aging vector has wrong length".into()));
        }
        for i in 0..n {
            for (name, r, cc) in [
                ("mean", self.mean[i].nrows(), self.mean[i].ncols()),
                ("var", self.var[i].nrows(), self.var[i].ncols()),
                ("omega", self.omega[i].nrows(), self.omega[i].ncols()),
            ] {
                if r != self.m_r || cc != self.m_t {
                    return Err(Error::Shape(format!("{name}[{i}] is {r}x{cc}")));
                }
            }
            if self.var[i].iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::OutOfRange("negative or NaN variance".into()));
            }
            if self.omega[i].iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::OutOfRange("negative or NaN omega".into()));
            }
            if self.mean[i].iter().any(|z| !z.is_finite()) {
                return Err(Error::OutOfRange("non-finite mean".into()));
            }
        }
        // β = 1 is accepted as the no-aging limit.
        if self.aging.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
            return Err(Error::OutOfRange(
                "aging coefficients must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Same statistics with every variance set to zero (posterior mean
    /// treated as the true channel).
    pub fn without_uncertainty(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.var {
            v.fill(0.0);
        }
        out
    }

    /// Per-user column energy `Σ_f Σ_r (|mean|² + var)`, length `m_t`.
    pub fn column_energy(&self, k: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.m_t];
        for f in 0..self.n_sub {
            let m = self.mean_at(k, f);
            let v = self.var_at(k, f);
            for p in 0..self.m_t {
                for r in 0..self.m_r {
                    e[p] += m[(r, p)].norm_sqr() + v[(r, p)];
                }
            }
        }
        e
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# channel-stats v1")?;
        writeln!(
            w,
            "dims,{},{},{},{},{},{}",
            self.m_r, self.m_t, self.k_users, self.n_sub, self.n_blocks, self.block
        )?;
        for k in 0..self.k_users {
            for f in 0..self.n_sub {
                let (m, v, o) = (self.mean_at(k, f), self.var_at(k, f), self.omega_at(k, f));
                for r in 0..self.m_r {
                    for p in 0..self.m_t {
                        writeln!(
                            w,
                            "e,{k},{f},{r},{p},{},{},{},{}",
                            m[(r, p)].re,
                            m[(r, p)].im,
                            v[(r, p)],
                            o[(r, p)]
                        )?;
                    }
                }
            }
        }
        for k in 0..self.k_users {
            for f in 0..self.n_sub {
                for n in 1..=self.n_blocks {
                    writeln!(w, "a,{k},{f},{n},{}", self.aging_at(k, f, n))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let perr = |line: usize, msg: &str| Error::Parse(format!("line {line}: {msg}"));
        let mut stats: Option<ChannelStats> = None;
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let int = |i: usize| -> Result<usize> {
                fields
                    .get(i)
                    .ok_or_else(|| perr(ln + 1, "missing field"))?
                    .parse::<usize>()
                    .map_err(|e| perr(ln + 1, &e.to_string()))
            };
            let float = |i: usize| -> Result<f64> {
                fields
                    .get(i)
                    .ok_or_else(|| perr(ln + 1, "missing field"))?
                    .parse::<f64>()
                    .map_err(|e| perr(ln + 1, &e.to_string()))
            };
            match fields[0] {
                "dims" => {
                    let (m_r, m_t, k_users, n_sub, n_blocks, block) =
                        (int(1)?, int(2)?, int(3)?, int(4)?, int(5)?, int(6)?);
                    let n = k_users * n_sub;
                    stats = Some(ChannelStats {
                        m_r,
                        m_t,
                        k_users,
                        n_sub,
                        n_blocks,
                        block,
                        mean: vec![CMat::zeros(m_r, m_t); n],
                        var: vec![RMat::zeros(m_r, m_t); n],
                        omega: vec![RMat::zeros(m_r, m_t); n],
                        aging: vec![1.0; n * n_blocks],
                    });
                }
                "e" => {
                    let s = stats
                        .as_mut()
                        .ok_or_else(|| perr(ln + 1, "element before dims"))?;
                    let (k, f, rr, p) = (int(1)?, int(2)?, int(3)?, int(4)?);
                    if k >= s.k_users || f >= s.n_sub || rr >= s.m_r || p >= s.m_t {
                        return Err(perr(ln + 1, "index out of range"));
                    }
                    let i = s.idx(k, f);
                    s.mean[i][(rr, p)] = c(float(5)?, float(6)?);
                    s.var[i][(rr, p)] = float(7)?;
                    s.omega[i][(rr, p)] = float(8)?;
                }
                "a" => {
                    let s = stats
                        .as_mut()
                        .ok_or_else(|| perr(ln + 1, "aging before dims"))?;
                    let (k, f, n) = (int(1)?, int(2)?, int(3)?);
                    if k >= s.k_users || f >= s.n_sub || n == 0 || n > s.n_blocks {
                        return Err(perr(ln + 1, "index out of range"));
                    }
                    let i = s.idx(k, f) * s.n_blocks + (n - 1);
                    s.aging[i] = float(4)?;
                }
                other => return Err(perr(ln + 1, &format!("unknown record '{other}'"))),
            }
        }
        let stats = stats.ok_or_else(|| Error::Parse("missing dims record".into()))?;
        stats.validate()?;
        Ok(stats)
    }
}

/// One channel draw: `Hᵇ_{k,f}` for every user and subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub n_sub: usize,
    /// Indexed `k * n_sub + f`, each `m_r × m_t`.
    pub h: Vec<CMat>,
}

impl ChannelRealization {
    pub fn at(&self, k: usize, f: usize) -> &CMat {
        &self.h[k * self.n_sub + f]
    }

    pub fn k_users(&self) -> usize {
        self.h.len() / self.n_sub
    }
}

/// Knobs of the synthetic scenario generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    /// Beam columns per user carrying the channel energy.
    pub sparsity_b: usize,
    /// Delay taps of the frequency response.
    pub taps: usize,
    /// Largest tap delay, in cycles of phase rotation across the RBG.
    pub delay_spread: f64,
    /// Fraction of the energy spread over off-support columns.
    pub leakage: f64,
    /// Block-0 estimation error variance as a fraction of `Ω`.
    pub est_error: f64,
    /// Per-block aging coefficients; defaults to [`DEFAULT_AGING_SCHEDULE`].
    pub aging: Option<Vec<f64>>,
}

impl ScenarioParams {
    pub fn new(sparsity_b: usize) -> Self {
        Self {
            sparsity_b,
            taps: 3,
            delay_spread: 0.7,
            leakage: 1e-3,
            est_error: 0.0,
            aging: None,
        }
    }
}

/// Block-0 statistics of a synthetic sparse scenario with default knobs.
pub fn make_scenario(dims: &SystemDims, sparsity_b: usize, seed: u64) -> Result<ChannelStats> {
    make_scenario_with(dims, &ScenarioParams::new(sparsity_b), seed)
}

pub fn make_scenario_with(
    dims: &SystemDims,
    params: &ScenarioParams,
    seed: u64,
) -> Result<ChannelStats> {
    dims.validate()?;
    let (m_r, m_t, n_sub) = (dims.m_r, dims.m_t, dims.n_sub);
    let b = params.sparsity_b;
    if b == 0 || b > m_t {
        return Err(Error::OutOfRange(format!(
            "sparsity_b = {b} must lie in 1..={m_t}"
        )));
    }
    if params.taps == 0 {
        return Err(Error::OutOfRange("taps must be at least 1".into()));
    }
    if !(0.0..0.01).contains(&params.leakage) {
        return Err(Error::OutOfRange(format!(
            "leakage = {} must lie in [0, 0.01)",
            params.leakage
        )));
    }
    if !(params.est_error >= 0.0) {
        return Err(Error::OutOfRange("est_error must be nonnegative".into()));
    }
    let schedule: Vec<f64> = match &params.aging {
        Some(a) => a.clone(),
        None => DEFAULT_AGING_SCHEDULE.to_vec(),
    };
    if schedule.len() < dims.n_blocks {
        return Err(Error::OutOfRange(format!(
            "aging schedule has {} entries but n_blocks = {}",
            schedule.len(),
            dims.n_blocks
        )));
    }
    if schedule.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
        return Err(Error::OutOfRange(
            "aging coefficients must lie in (0, 1]".into(),
        ));
    }

    let n_taps = params.taps;
    let tap_pow: Vec<f64> = {
        let raw: Vec<f64> = (0..n_taps).map(|l| (-(l as f64)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / s).collect()
    };
    let delays: Vec<f64> = (0..n_taps)
        .map(|l| {
            if n_taps == 1 {
                0.0
            } else {
                params.delay_spread * l as f64 / (n_taps - 1) as f64
            }
        })
        .collect();

    let mut mean = Vec::with_capacity(dims.k_users * n_sub);
    let mut omega = Vec::with_capacity(dims.k_users * n_sub);
    for k in 0..dims.k_users {
        let mut rng = substream(seed, &[tags::SCENARIO, k as u64]);
        let mut support = index::sample(&mut rng, m_t, b).into_vec();
        support.sort_unstable();
        let gain: f64 = rng.random_range(0.6..1.4);

        // Column powers: on-support columns share (1 - leakage) of m_t,
        // the rest is spread evenly.
        let mut colpow = vec![0.0; m_t];
        let raw: Vec<f64> = support.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let raw_sum: f64 = raw.iter().sum();
        let leak = if b < m_t { params.leakage } else { 0.0 };
        for (&p, &w) in support.iter().zip(&raw) {
            colpow[p] = gain * m_t as f64 * (1.0 - leak) * w / raw_sum;
        }
        if b < m_t {
            let off = gain * m_t as f64 * leak / (m_t - b) as f64;
            for (p, cp) in colpow.iter_mut().enumerate() {
                if support.binary_search(&p).is_err() {
                    *cp = off;
                }
            }
        }

        // Tap gains per element.
        let mut gains = vec![C64::new(0.0, 0.0); m_r * m_t * n_taps];
        for r in 0..m_r {
            for p in 0..m_t {
                for l in 0..n_taps {
                    let amp = (colpow[p] * tap_pow[l]).sqrt();
                    gains[(r * m_t + p) * n_taps + l] = complex_normal(&mut rng) * amp;
                }
            }
        }

        for f in 0..n_sub {
            let rot: Vec<C64> = delays
                .iter()
                .map(|&tau| C64::from_polar(1.0, -2.0 * PI * tau * f as f64 / n_sub as f64))
                .collect();
            let m = CMat::from_fn(m_r, m_t, |r, p| {
                (0..n_taps)
                    .map(|l| gains[(r * m_t + p) * n_taps + l] * rot[l])
                    .sum()
            });
            let o = RMat::from_fn(m_r, m_t, |_, p| colpow[p]);
            mean.push(m);
            omega.push(o);
        }
    }
    let var: Vec<RMat> = omega.iter().map(|o| o * params.est_error).collect();
    let mut aging = Vec::with_capacity(dims.k_users * n_sub * dims.n_blocks);
    for _ in 0..dims.k_users * n_sub {
        aging.extend_from_slice(&schedule[..dims.n_blocks]);
    }
    let stats = ChannelStats {
        m_r,
        m_t,
        k_users: dims.k_users,
        n_sub,
        n_blocks: dims.n_blocks,
        block: 0,
        mean,
        var,
        omega,
        aging,
    };
    stats.validate()?;
    Ok(stats)
}

/// Statistics at downlink block `n` from block-0 statistics.
pub fn evolve_stats(stats0: &ChannelStats, n: usize) -> Result<ChannelStats> {
    if stats0.block != 0 {
        return Err(Error::OutOfRange(format!(
            "evolve_stats expects block-0 statistics, got block {}",
            stats0.block
        )));
    }
    if n == 0 || n > stats0.n_blocks {
        return Err(Error::OutOfRange(format!(
            "block {n} not in 1..={}",
            stats0.n_blocks
        )));
    }
    let mut out = stats0.clone();
    out.block = n;
    for k in 0..stats0.k_users {
        for f in 0..stats0.n_sub {
            let i = stats0.idx(k, f);
            let beta = stats0.aging_at(k, f, n);
            let b2 = beta * beta;
            out.mean[i] = &stats0.mean[i] * c(beta, 0.0);
            out.var[i] = stats0.var[i].zip_map(&stats0.omega[i], |v, o| b2 * v + (1.0 - b2) * o);
        }
    }
    Ok(out)
}

/// Draw sample `index` of the channel: every entry is
/// `mean + sqrt(var)·z` with `z ~ CN(0, 1)`, using the substream keyed by
/// `(seed, index, k, f)`.
pub fn sample_channel(stats: &ChannelStats, seed: u64, index: u64) -> ChannelRealization {
    let mut h = Vec::with_capacity(stats.mean.len());
    for k in 0..stats.k_users {
        for f in 0..stats.n_sub {
            let mut rng = substream(seed, &[tags::CHANNEL_SAMPLE, index, k as u64, f as u64]);
            let m = stats.mean_at(k, f);
            let v = stats.var_at(k, f);
            let mut draw = m.clone();
            for p in 0..stats.m_t {
                for r in 0..stats.m_r {
                    let var = v[(r, p)];
                    if var > 0.0 {
                        draw[(r, p)] += complex_normal(&mut rng) * var.sqrt();
                    }
                }
            }
            h.push(draw);
        }
    }
    ChannelRealization {
        n_sub: stats.n_sub,
        h,
    }
}

/// The unitary DFT array response `Φ[p, q] = exp(−j2πpq/M)/√M`.
#[derive(Debug, Clone)]
pub struct Dft {
    pub phi: CMat,
    pub phi_h: CMat,
}

impl Dft {
    pub fn new(m_t: usize) -> Self {
        let scale = 1.0 / (m_t as f64).sqrt();
        let phi = CMat::from_fn(m_t, m_t, |p, q| {
            let ang = -2.0 * PI * ((p * q) % m_t) as f64 / m_t as f64;
            C64::from_polar(scale, ang)
        });
        let phi_h = phi.adjoint();
        Self { phi, phi_h }
    }

    pub fn size(&self) -> usize {
        self.phi.nrows()
    }

    /// `H = Hᵇ Φ`.
    pub fn to_antenna(&self, h_beam: &CMat) -> Result<CMat> {
        if h_beam.ncols() != self.size() {
            return Err(Error::Shape(format!(
                "channel has {} columns, DFT is {}",
                h_beam.ncols(),
                self.size()
            )));
        }
        Ok(h_beam * &self.phi)
    }

    /// `Hᵇ = H Φᴴ`.
    pub fn to_beam(&self, h: &CMat) -> Result<CMat> {
        if h.ncols() != self.size() {
            return Err(Error::Shape(format!(
                "channel has {} columns, DFT is {}",
                h.ncols(),
                self.size()
            )));
        }
        Ok(h * &self.phi_h)
    }
}

/// `H = Hᵇ Φ` for a single matrix.
pub fn to_antenna_domain(h_beam: &CMat) -> Result<CMat> {
    Dft::new(h_beam.ncols()).to_antenna(h_beam)
}

/// Map every entry of a realization to the antenna domain.
pub fn realization_to_antenna(real: &ChannelRealization, dft: &Dft) -> Result<ChannelRealization> {
    let h = real
        .h
        .iter()
        .map(|hb| dft.to_antenna(hb))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelRealization {
        n_sub: real.n_sub,
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frob;

    fn desk_dims() -> SystemDims {
        SystemDims::new(16, 2, 3, 24, 6, 1.0, 20.0).unwrap()
    }

    fn top_share(energy: &[f64], b: usize) -> f64 {
        let mut e = energy.to_vec();
        e.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let total: f64 = e.iter().sum();
        e[..b].iter().sum::<f64>() / total
    }

    #[test]
    fn dims_validation() {
        assert!(SystemDims::new(4, 8, 1, 12, 1, 1.0, 10.0).is_err());
        assert!(SystemDims::new(8, 2, 0, 12, 1, 1.0, 10.0).is_err());
        assert!(SystemDims::new(8, 2, 1, 13, 1, 1.0, 10.0).is_err());
        assert!(SystemDims::new(8, 2, 1, 12, 1, 0.0, 10.0).is_err());
        let d = SystemDims::new(8, 2, 2, 12, 1, 2.0, 20.0).unwrap();
        assert!((d.noise_vars[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn scenario_energy_concentrates_on_support() {
        let dims = SystemDims::new(64, 2, 10, 48, 6, 1.0, 20.0).unwrap();
        let stats = make_scenario(&dims, 10, 1).unwrap();
        for k in 0..dims.k_users {
            let mut mean_e = vec![0.0; dims.m_t];
            let mut omega_e = vec![0.0; dims.m_t];
            for f in 0..dims.n_sub {
                for p in 0..dims.m_t {
                    for r in 0..dims.m_r {
                        mean_e[p] += stats.mean_at(k, f)[(r, p)].norm_sqr();
                        omega_e[p] += stats.omega_at(k, f)[(r, p)];
                    }
                }
            }
            assert!(
                top_share(&mean_e, 10) >= 0.99,
                "user {k} mean share {}",
                top_share(&mean_e, 10)
            );
            assert!(top_share(&omega_e, 10) >= 0.99);
        }
    }

    #[test]
    fn full_support_share_is_one() {
        let dims = desk_dims();
        let stats = make_scenario(&dims, dims.m_t, 3).unwrap();
        let e = stats.column_energy(0);
        assert!((top_share(&e, dims.m_t) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scenario_is_deterministic() {
        let dims = desk_dims();
        assert_eq!(
            make_scenario(&dims, 4, 9).unwrap(),
            make_scenario(&dims, 4, 9).unwrap()
        );
        assert_ne!(
            make_scenario(&dims, 4, 9).unwrap(),
            make_scenario(&dims, 4, 10).unwrap()
        );
    }

    #[test]
    fn scenario_rejects_bad_sparsity() {
        let dims = desk_dims();
        assert!(make_scenario(&dims, 0, 1).is_err());
        assert!(make_scenario(&dims, 17, 1).is_err());
    }

    #[test]
    fn mean_varies_smoothly_across_subcarriers() {
        let dims = desk_dims();
        let stats = make_scenario(&dims, 4, 5).unwrap();
        for k in 0..dims.k_users {
            for f in 1..dims.n_sub {
                let step = frob(&(stats.mean_at(k, f) - stats.mean_at(k, f - 1)));
                let scale = frob(stats.mean_at(k, f));
                assert!(step < 0.35 * scale, "jump {step} vs {scale}");
            }
        }
    }

    #[test]
    fn evolve_uses_the_schedule() {
        let dims = desk_dims();
        let s0 = make_scenario(&dims, 4, 2).unwrap();
        for (n, &beta) in DEFAULT_AGING_SCHEDULE.iter().enumerate() {
            let sn = evolve_stats(&s0, n + 1).unwrap();
            assert_eq!(sn.block, n + 1);
            let expect = s0.mean_at(1, 3) * c(beta, 0.0);
            assert_eq!(sn.mean_at(1, 3), &expect);
            let v = sn.var_at(1, 3);
            let o = s0.omega_at(1, 3);
            for i in 0..v.len() {
                assert!((v[i] - (1.0 - beta * beta) * o[i]).abs() <= 1e-15 * o[i].max(1.0));
            }
        }
        assert!(evolve_stats(&s0, 0).is_err());
        assert!(evolve_stats(&s0, 7).is_err());
    }

    #[test]
    fn evolve_limits() {
        let dims = desk_dims();
        let mut p = ScenarioParams::new(4);
        p.est_error = 0.3;
        let mut s0 = make_scenario_with(&dims, &p, 2).unwrap();
        s0.aging.iter_mut().for_each(|b| *b = 1.0);
        let s1 = evolve_stats(&s0, 1).unwrap();
        assert_eq!(s1.mean, s0.mean);
        assert_eq!(s1.var, s0.var);

        s0.aging.iter_mut().for_each(|b| *b = 1e-300);
        let s1 = evolve_stats(&s0, 1).unwrap();
        assert!(s1.mean.iter().all(|m| frob(m) < 1e-290));
        for (v, o) in s1.var.iter().zip(&s0.omega) {
            assert!((v - o).abs().max() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_sample_is_mean() {
        let dims = desk_dims();
        let s0 = make_scenario(&dims, 4, 2).unwrap();
        let draw = sample_channel(&s0, 77, 0);
        assert_eq!(draw.h, s0.mean);
    }

    #[test]
    fn sample_moments() {
        let dims = SystemDims::new(2, 1, 1, 12, 1, 1.0, 0.0).unwrap();
        let mut stats = make_scenario(&dims, 2, 0).unwrap();
        for m in &mut stats.mean {
            m.fill(c(0.0, 0.0));
        }
        for v in &mut stats.var {
            v.fill(1.0);
        }
        let n = 100_000u64;
        let mut sum = C64::new(0.0, 0.0);
        let mut sq = 0.0;
        for s in 0..n {
            let d = sample_channel(&stats, 5, s);
            let z = d.at(0, 0)[(0, 0)];
            sum += z;
            sq += z.norm_sqr();
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean.norm_sqr();
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        // 4σ/√N per component, σ² = 1/2 per real dimension
        let bound = 4.0 * (0.5f64).sqrt() / (n as f64).sqrt();
        assert!(mean.re.abs() < bound && mean.im.abs() < bound);
    }

    #[test]
    fn dft_is_unitary() {
        let dft = Dft::new(16);
        let id = &dft.phi * &dft.phi_h;
        assert!(crate::linalg::frob(&(id - CMat::identity(16, 16))) < 1e-12);
    }

    #[test]
    fn antenna_domain_preserves_norm_and_round_trips() {
        let dims = desk_dims();
        let s = make_scenario(&dims, 4, 8).unwrap();
        let dft = Dft::new(16);
        let hb = s.mean_at(2, 5);
        let h = dft.to_antenna(hb).unwrap();
        assert!((frob(&h) - frob(hb)).abs() <= 1e-12 * frob(hb));
        let back = dft.to_beam(&h).unwrap();
        assert!(frob(&(back - hb)) <= 1e-12 * frob(hb));
        assert_eq!(frob(&to_antenna_domain(&CMat::zeros(2, 16)).unwrap()), 0.0);
        assert!(dft.to_antenna(&CMat::zeros(2, 8)).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let dims = SystemDims::new(4, 2, 2, 12, 3, 1.0, 10.0).unwrap();
        let mut p = ScenarioParams::new(2);
        p.est_error = 0.1;
        let s0 = make_scenario_with(&dims, &p, 4).unwrap();
        let s2 = evolve_stats(&s0, 2).unwrap();
        let mut buf = Vec::new();
        s2.write_text(&mut buf).unwrap();
        let back = ChannelStats::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, s2);
    }
}
