//! Diagonal Gaussian policy with separate mean and log-std networks and one
//! trainable log-scale per group of compensation entries.
//!
//! An action is `a_i = s_g(i) · (μ_i + σ_i ε_i)`, `ε ~ N(0, I)`, where
//! `s_g = exp(ρ_g)` for entries in scale group `g` and `1` elsewhere (the
//! stopping coefficients). Equivalently `a ~ N(s μ, s² σ²)`, which is the
//! density reported and differentiated.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::Rng;

use super::features::ContextFeatures;
use super::net::{Cache, ConvNet, NetShape, CONV_CHANNELS, FC_WIDTH, KERNEL};
use crate::rng::standard_normal;
use crate::telemetry::Telemetry;
use crate::{Error, Result};

pub const LOGSTD_MIN: f64 = -5.0;
pub const LOGSTD_MAX: f64 = 2.0;
/// Output bias of the log-std network at initialization.
pub const INIT_LOGSTD: f64 = -1.0;
/// Same for entries outside every scale group (the stopping coefficients),
/// wide enough that shallower depths get sampled.
pub const INIT_FREE_LOGSTD: f64 = -0.5;
/// Initial multiplier of the compensation entries.
pub const INIT_SCALE: f64 = 0.01;

/// Problem dimensions a checkpoint was trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PolicyMeta {
    pub m_t: usize,
    pub m_r: usize,
    pub k_users: usize,
    pub n_nodes: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub meta: PolicyMeta,
    pub mean: ConvNet,
    pub logstd: ConvNet,
    /// `ρ_g`, one per scale group.
    pub log_scale: Vec<f64>,
    /// Entries `[g·len, (g+1)·len)` form group `g`.
    pub scale_group_len: usize,
}

/// One draw from the policy with what the gradient needs.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub action: Vec<f64>,
    pub eps: Vec<f64>,
    pub mean: Vec<f64>,
    /// Clamped log-std of the unscaled draw.
    pub logstd: Vec<f64>,
    clamped: Vec<bool>,
    mean_cache: Cache,
    logstd_cache: Cache,
    pub log_density: f64,
}

/// Mean, its cache, log-std, clamp mask, log-std cache.
type Heads = (Vec<f64>, Cache, Vec<f64>, Vec<bool>, Cache);

impl PolicyParams {
    /// Fresh parameters. The mean net starts at zero except for output
    /// `depth_bias_index` (set to one); the log-std net starts at
    /// [`INIT_LOGSTD`] inside scale groups and [`INIT_FREE_LOGSTD`] outside;
    /// every scale at [`INIT_SCALE`].
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        meta: PolicyMeta,
        ctx_shape: (usize, usize, usize),
        action_dim: usize,
        scale_groups: (usize, usize),
        depth_bias_index: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (n_groups, group_len) = scale_groups;
        if n_groups * group_len > action_dim {
            return Err(Error::Shape("scale groups exceed the action length".into()));
        }
        let shape = NetShape::new(ctx_shape.0, ctx_shape.1, ctx_shape.2, action_dim);
        let mut mean_bias = vec![0.0; action_dim];
        if let Some(i) = depth_bias_index {
            *mean_bias
                .get_mut(i)
                .ok_or_else(|| Error::OutOfRange("depth bias index beyond action".into()))? = 1.0;
        }
        let mean = ConvNet::init(shape, &mean_bias, rng)?;
        let grouped = n_groups * group_len;
        let logstd_bias: Vec<f64> = (0..action_dim)
            .map(|i| {
                if i < grouped {
                    INIT_LOGSTD
                } else {
                    INIT_FREE_LOGSTD
                }
            })
            .collect();
        let logstd = ConvNet::init(shape, &logstd_bias, rng)?;
        Ok(Self {
            meta,
            mean,
            logstd,
            log_scale: vec![INIT_SCALE.ln(); n_groups],
            scale_group_len: group_len,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.mean.shape.out
    }

    pub fn n_params(&self) -> usize {
        self.mean.theta.len() + self.logstd.theta.len() + self.log_scale.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(&self.mean.theta);
        v.extend_from_slice(&self.logstd.theta);
        v.extend_from_slice(&self.log_scale);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_params() {
            return Err(Error::Shape("parameter vector has the wrong length".into()));
        }
        let (a, rest) = v.split_at(self.mean.theta.len());
        let (b, c) = rest.split_at(self.logstd.theta.len());
        self.mean.theta.copy_from_slice(a);
        self.logstd.theta.copy_from_slice(b);
        self.log_scale.copy_from_slice(c);
        Ok(())
    }

    fn group_of(&self, i: usize) -> Option<usize> {
        if self.scale_group_len == 0 {
            return None;
        }
        let g = i / self.scale_group_len;
        (g < self.log_scale.len()).then_some(g)
    }

    fn log_scale_at(&self, i: usize) -> f64 {
        self.group_of(i).map_or(0.0, |g| self.log_scale[g])
    }

    fn heads(&self, ctx: &ContextFeatures, tel: &mut Telemetry) -> Result<Heads> {
        let (mean, mc) = self.mean.forward(&ctx.data, tel)?;
        let (raw, lc) = self.logstd.forward(&ctx.data, tel)?;
        let clamped: Vec<bool> = raw
            .iter()
            .map(|&l| !(LOGSTD_MIN..=LOGSTD_MAX).contains(&l))
            .collect();
        let logstd = raw
            .iter()
            .map(|&l| l.clamp(LOGSTD_MIN, LOGSTD_MAX))
            .collect();
        Ok((mean, mc, logstd, clamped, lc))
    }

    /// Deterministic action `s μ`.
    pub fn mean_action(&self, ctx: &ContextFeatures, tel: &mut Telemetry) -> Result<Vec<f64>> {
        let (mean, _) = self.mean.forward(&ctx.data, tel)?;
        Ok(mean
            .iter()
            .enumerate()
            .map(|(i, &m)| self.log_scale_at(i).exp() * m)
            .collect())
    }

    pub fn sample(
        &self,
        ctx: &ContextFeatures,
        rng: &mut impl Rng,
        tel: &mut Telemetry,
    ) -> Result<PolicySample> {
        let (mean, mean_cache, logstd, clamped, logstd_cache) = self.heads(ctx, tel)?;
        let n = mean.len();
        let eps: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
        let mut action = Vec::with_capacity(n);
        let mut log_density = -0.5 * n as f64 * (2.0 * PI).ln();
        for i in 0..n {
            let rho = self.log_scale_at(i);
            action.push(rho.exp() * (mean[i] + logstd[i].exp() * eps[i]));
            log_density -= logstd[i] + rho + 0.5 * eps[i] * eps[i];
        }
        Ok(PolicySample {
            action,
            eps,
            mean,
            logstd,
            clamped,
            mean_cache,
            logstd_cache,
            log_density,
        })
    }

    /// `ln π(action | ctx)`.
    pub fn log_density(
        &self,
        ctx: &ContextFeatures,
        action: &[f64],
        tel: &mut Telemetry,
    ) -> Result<f64> {
        let (mean, _, logstd, _, _) = self.heads(ctx, tel)?;
        if action.len() != mean.len() {
            return Err(Error::Shape("action has the wrong length".into()));
        }
        let mut lp = 0.0;
        for i in 0..mean.len() {
            let s = self.log_scale_at(i).exp();
            let sd = s * logstd[i].exp();
            let z = (action[i] - s * mean[i]) / sd;
            lp += -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln();
        }
        Ok(lp)
    }

    /// `weight · ∇ ln π(sample)` over the flat parameter vector.
    pub fn score_gradient(&self, sample: &PolicySample, weight: f64) -> Result<Vec<f64>> {
        let n = sample.mean.len();
        let mut d_mean = vec![0.0; n];
        let mut d_logstd = vec![0.0; n];
        let mut d_rho = vec![0.0; self.log_scale.len()];
        for i in 0..n {
            let e = sample.eps[i];
            let sd = sample.logstd[i].exp();
            d_mean[i] = weight * e / sd;
            if !sample.clamped[i] {
                d_logstd[i] = weight * (e * e - 1.0);
            }
            if let Some(g) = self.group_of(i) {
                d_rho[g] += weight * (e * sample.mean[i] / sd + e * e - 1.0);
            }
        }
        let mut g = self.mean.backward(&sample.mean_cache, &d_mean)?;
        g.extend(self.logstd.backward(&sample.logstd_cache, &d_logstd)?);
        g.extend(d_rho);
        Ok(g)
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let m = &self.meta;
        let s = &self.mean.shape;
        writeln!(w, "# rlddu-policy v1")?;
        for (k, v) in [
            ("m_t", m.m_t),
            ("m_r", m.m_r),
            ("k_users", m.k_users),
            ("n_nodes", m.n_nodes),
            ("layers", m.layers),
            ("context_channels", s.in_channels),
            ("context_rows", s.rows),
            ("context_cols", s.cols),
            ("conv_channels", s.conv_channels),
            ("kernel", KERNEL),
            ("fc_width", s.fc_width),
            ("action_dim", s.out),
            ("scale_groups", self.log_scale.len()),
            ("scale_group_len", self.scale_group_len),
        ] {
            writeln!(w, "{k} {v}")?;
        }
        for (name, vals) in [
            ("mean", &self.mean.theta),
            ("logstd", &self.logstd.theta),
            ("log_scale", &self.log_scale),
        ] {
            writeln!(w, "{name} {}", vals.len())?;
            for v in vals.iter() {
                writeln!(w, "{v:e}")?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let mut rd = LineReader { lines: r.lines() };
        if rd.next()?.trim() != "# rlddu-policy v1" {
            return Err(Error::Parse("not a policy checkpoint (bad header)".into()));
        }
        let meta = PolicyMeta {
            m_t: rd.field("m_t")?,
            m_r: rd.field("m_r")?,
            k_users: rd.field("k_users")?,
            n_nodes: rd.field("n_nodes")?,
            layers: rd.field("layers")?,
        };
        let shape = NetShape {
            in_channels: rd.field("context_channels")?,
            rows: rd.field("context_rows")?,
            cols: rd.field("context_cols")?,
            conv_channels: rd.field("conv_channels")?,
            fc_width: 0,
            out: 0,
        };
        if rd.field("kernel")? != KERNEL {
            return Err(Error::Parse(format!(
                "only kernel size {KERNEL} is supported"
            )));
        }
        let shape = NetShape {
            fc_width: rd.field("fc_width")?,
            out: rd.field("action_dim")?,
            ..shape
        };
        if shape.conv_channels != CONV_CHANNELS || shape.fc_width != FC_WIDTH {
            return Err(Error::Parse(
                "unsupported network architecture constants".into(),
            ));
        }
        let n_groups = rd.field("scale_groups")?;
        let group_len = rd.field("scale_group_len")?;
        let np = shape.n_params();
        let mean = rd.section("mean", np)?;
        let logstd = rd.section("logstd", np)?;
        let log_scale = rd.section("log_scale", n_groups)?;
        if n_groups * group_len > shape.out {
            return Err(Error::Parse("scale groups exceed the action length".into()));
        }
        Ok(Self {
            meta,
            mean: ConvNet { shape, theta: mean },
            logstd: ConvNet {
                shape,
                theta: logstd,
            },
            log_scale,
            scale_group_len: group_len,
        })
    }
}

struct LineReader<B> {
    lines: std::io::Lines<B>,
}

impl<B: BufRead> LineReader<B> {
    fn next(&mut self) -> Result<String> {
        self.lines
            .next()
            .ok_or_else(|| Error::Parse("checkpoint ends early".into()))?
            .map_err(Error::from)
    }

    fn field(&mut self, name: &str) -> Result<usize> {
        let line = self.next()?;
        let mut it = line.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(k), Some(v), None) if k == name => v
                .parse()
                .map_err(|_| Error::Parse(format!("bad value for {name}: '{v}'"))),
            _ => Err(Error::Parse(format!("expected '{name} <n>', got '{line}'"))),
        }
    }

    fn section(&mut self, name: &str, expect: usize) -> Result<Vec<f64>> {
        let n = self.field(name)?;
        if n != expect {
            return Err(Error::Parse(format!(
                "{name}: {n} values, expected {expect}"
            )));
        }
        (0..n)
            .map(|_| {
                let l = self.next()?;
                let v: f64 = l
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad number '{l}'")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse(format!("non-finite parameter in {name}")))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn policy() -> (PolicyParams, ContextFeatures) {
        let mut rng = substream(3, &[]);
        let p = PolicyParams::init(
            PolicyMeta::default(),
            (2, 2, 3),
            7,
            (2, 3),
            Some(6),
            &mut rng,
        )
        .unwrap();
        let ctx = ContextFeatures {
            channels: 2,
            rows: 2,
            cols: 3,
            data: (0..12).map(|i| (i as f64 * 0.3).cos()).collect(),
        };
        (p, ctx)
    }

    #[test]
    fn density_at_mode() {
        let (p, ctx) = policy();
        let mut tel = Telemetry::new();
        let a = p.mean_action(&ctx, &mut tel).unwrap();
        let lp = p.log_density(&ctx, &a, &mut tel).unwrap();
        let expect =
            -(6.0 * INIT_LOGSTD + INIT_FREE_LOGSTD + 6.0 * INIT_SCALE.ln()) - 3.5 * (2.0 * PI).ln();
        assert!((lp - expect).abs() < 1e-12);
        assert_eq!(a[6], 1.0);
    }

    #[test]
    fn sample_density_matches_independent_evaluation() {
        let (p, ctx) = policy();
        let mut tel = Telemetry::new();
        let s = p.sample(&ctx, &mut substream(4, &[]), &mut tel).unwrap();
        let lp = p.log_density(&ctx, &s.action, &mut tel).unwrap();
        assert!((lp - s.log_density).abs() < 1e-10);
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let (mut p, ctx) = policy();
        // move off the zero-output initialization so all paths matter
        let mut rng = substream(5, &[]);
        let mut flat = p.flat();
        for v in &mut flat {
            *v += 0.05 * standard_normal(&mut rng);
        }
        p.set_flat(&flat).unwrap();
        let mut tel = Telemetry::new();
        let s = p.sample(&ctx, &mut rng, &mut tel).unwrap();
        let g = p.score_gradient(&s, 1.0).unwrap();
        let h = 1e-6;
        for i in (0..flat.len()).step_by(7).chain(flat.len() - 2..flat.len()) {
            let mut q = p.clone();
            let mut f = flat.clone();
            f[i] += h;
            q.set_flat(&f).unwrap();
            let up = q.log_density(&ctx, &s.action, &mut tel).unwrap();
            f[i] -= 2.0 * h;
            q.set_flat(&f).unwrap();
            let dn = q.log_density(&ctx, &s.action, &mut tel).unwrap();
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()),
                "param {i}: fd {fd} analytic {}",
                g[i]
            );
        }
    }

    #[test]
    fn marginal_integrates_to_one() {
        // 1-D policy: trapezoid rule over ±10 σ
        let mut rng = substream(6, &[]);
        let p = PolicyParams::init(PolicyMeta::default(), (1, 1, 1), 1, (0, 0), None, &mut rng)
            .unwrap();
        let ctx = ContextFeatures {
            channels: 1,
            rows: 1,
            cols: 1,
            data: vec![0.0],
        };
        let sd = INIT_FREE_LOGSTD.exp();
        let mut tel = Telemetry::new();
        let n = 4000;
        let (lo, hi) = (-10.0 * sd, 10.0 * sd);
        let step = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * step;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * p.log_density(&ctx, &[x], &mut tel).unwrap().exp() * step;
        }
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let (p, _) = policy();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        let q = PolicyParams::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(p, q);
        let bad = String::from_utf8(buf)
            .unwrap()
            .replace("kernel 3", "kernel 5");
        assert!(PolicyParams::read_checkpoint(bad.as_bytes()).is_err());
    }
}
