//! Acceleration machinery for the unfolded network.
//!
//! - [`prune_support`] keeps the few beam columns that carry the channel
//!   energy; all expectation kernels then run on those columns only.
//! - [`StructuredMatrix`] / [`structured_inverse`] solve with a matrix that
//!   is diagonal except for one dense Hermitian block, in `O(q³ + m_t)`.
//! - [`SubcarrierSampling`] and [`lagrange_interp3`] rebuild per-subcarrier
//!   terms from a uniform subset of subcarriers.
//! - [`flop_estimate`] evaluates the closed-form complexity models.

use std::fmt;
use std::str::FromStr;

use crate::channel::ChannelStats;
use crate::linalg::{c, frob, hermitian_defect, hermitian_part, CMat, Cholesky};
use crate::telemetry::Telemetry;
use crate::{Error, Result};

const MODULE: &str = "accel";

/// Per-user retained beam columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSupport {
    pub m_t: usize,
    /// Strictly increasing column indices per user.
    pub columns: Vec<Vec<usize>>,
    /// Fraction of the user's energy on the retained columns.
    pub retained: Vec<f64>,
}

impl BeamSupport {
    /// Every column for every user (no pruning).
    pub fn full(m_t: usize, k_users: usize) -> Self {
        Self {
            m_t,
            columns: vec![(0..m_t).collect(); k_users],
            retained: vec![1.0; k_users],
        }
    }

    pub fn max_size(&self) -> usize {
        self.columns.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn mean_size(&self) -> f64 {
        self.columns.iter().map(Vec::len).sum::<usize>() as f64 / self.columns.len().max(1) as f64
    }
}

/// Smallest set of columns whose energy `Σ_f Σ_r (|mean|² + var)` reaches
/// `energy_keep` of the user's total, capped at `b_cap` columns. Columns
/// are taken in decreasing energy order, lower index first on ties.
pub fn prune_support(stats: &ChannelStats, energy_keep: f64, b_cap: usize) -> Result<BeamSupport> {
    if !(energy_keep > 0.0 && energy_keep <= 1.0) {
        return Err(Error::OutOfRange(format!(
            "energy_keep = {energy_keep} must lie in (0, 1]"
        )));
    }
    if b_cap == 0 {
        return Err(Error::OutOfRange("b_cap must be at least 1".into()));
    }
    let mut columns = Vec::with_capacity(stats.k_users);
    let mut retained = Vec::with_capacity(stats.k_users);
    for k in 0..stats.k_users {
        let energy = stats.column_energy(k);
        let total: f64 = energy.iter().sum();
        if total == 0.0 {
            columns.push(Vec::new());
            retained.push(1.0);
            continue;
        }
        let mut order: Vec<usize> = (0..stats.m_t).filter(|&p| energy[p] > 0.0).collect();
        order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
        let target = energy_keep * total * (1.0 - 1e-12);
        let mut kept = Vec::new();
        let mut acc = 0.0;
        for p in order {
            if kept.len() == b_cap || acc >= target {
                break;
            }
            kept.push(p);
            acc += energy[p];
        }
        kept.sort_unstable();
        columns.push(kept);
        retained.push(acc / total);
    }
    Ok(BeamSupport {
        m_t: stats.m_t,
        columns,
        retained,
    })
}

/// `Diag(diag)` with the rows/columns in `block_idx` replaced by a dense
/// Hermitian block.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMatrix {
    pub diag: Vec<f64>,
    pub block_idx: Vec<usize>,
    pub block: CMat,
}

impl StructuredMatrix {
    pub fn diagonal(diag: Vec<f64>) -> Self {
        Self {
            diag,
            block_idx: Vec::new(),
            block: CMat::zeros(0, 0),
        }
    }

    /// Keep the diagonal of `m` and its dense `idx × idx` block; every other
    /// off-diagonal entry is dropped.
    pub fn project(m: &CMat, idx: &[usize]) -> Self {
        let diag = m.diagonal().iter().map(|z| z.re).collect();
        let block = CMat::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])]);
        Self {
            diag,
            block_idx: idx.to_vec(),
            block: hermitian_part(&block),
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn q(&self) -> usize {
        self.block_idx.len()
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            self.dim(),
            self.diag.iter().map(|&d| c(d, 0.0)),
        ));
        for (i, &a) in self.block_idx.iter().enumerate() {
            for (j, &b) in self.block_idx.iter().enumerate() {
                m[(a, b)] = self.block[(i, j)];
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.block.nrows() != self.q() || self.block.ncols() != self.q() {
            return Err(Error::Shape("block size does not match block_idx".into()));
        }
        if self.block_idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::OutOfRange(
                "block_idx must be strictly increasing".into(),
            ));
        }
        if self.block_idx.last().is_some_and(|&i| i >= self.dim()) {
            return Err(Error::OutOfRange("block index beyond matrix size".into()));
        }
        if hermitian_defect(&self.block) > 1e-10 {
            return Err(Error::OutOfRange("block is not Hermitian".into()));
        }
        Ok(())
    }
}

/// Solve `M X = rhs` exactly for a structured `M`: one Cholesky solve on the
/// block rows and a division everywhere else.
pub fn structured_inverse(m: &StructuredMatrix, rhs: &CMat, tel: &mut Telemetry) -> Result<CMat> {
    m.validate()?;
    let n = m.dim();
    if rhs.nrows() != n {
        return Err(Error::Shape(format!(
            "rhs has {} rows, matrix is {n}",
            rhs.nrows()
        )));
    }
    let mut in_block = vec![false; n];
    for &i in &m.block_idx {
        in_block[i] = true;
    }
    let mut x = CMat::zeros(n, rhs.ncols());
    if m.q() > 0 {
        let ch = Cholesky::factor(&m.block, tel, MODULE)
            .ok_or_else(|| Error::NotPositiveDefinite("structured block".into()))?;
        let sub = CMat::from_fn(m.q(), rhs.ncols(), |i, j| rhs[(m.block_idx[i], j)]);
        let xs = ch.solve(&sub, tel, MODULE);
        for (i, &row) in m.block_idx.iter().enumerate() {
            x.row_mut(row).copy_from(&xs.row(i));
        }
    }
    let mut reciprocals = 0u64;
    for i in (0..n).filter(|&i| !in_block[i]) {
        let d = m.diag[i];
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "diagonal entry {i} = {d}"
            )));
        }
        let inv = 1.0 / d;
        for j in 0..rhs.ncols() {
            x[(i, j)] = rhs[(i, j)] * inv;
        }
        reciprocals += 1;
    }
    tel.flops.add(MODULE, "diag_inverse", reciprocals);
    tel.flops
        .add(MODULE, "diag_solve", reciprocals * rhs.ncols() as u64);
    Ok(x)
}

/// Rows of a Hermitian matrix whose off-diagonal energy relative to the
/// squared diagonal exceeds `threshold`, strongest first, at most `q_cap`
/// of them. Returned in increasing order.
pub fn select_q_support(m: &CMat, q_cap: usize, threshold: f64) -> Vec<usize> {
    let n = m.nrows();
    let mut scored: Vec<(usize, f64)> = (0..n)
        .map(|i| {
            let off: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| m[(i, j)].norm_sqr())
                .sum();
            let d = m[(i, i)].norm_sqr();
            let score = if d > 0.0 {
                off / d
            } else if off > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            (i, score)
        })
        .filter(|&(_, s)| s > threshold)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut idx: Vec<usize> = scored.into_iter().take(q_cap).map(|(i, _)| i).collect();
    idx.sort_unstable();
    idx
}

/// Result of solving with the diagonal-plus-block projection of a dense
/// matrix.
#[derive(Debug, Clone)]
pub struct ProjectedSolve {
    pub x: CMat,
    pub block_idx: Vec<usize>,
    /// `‖B X − rhs‖_F / ‖rhs‖_F` against the unprojected matrix, when asked.
    pub residual: Option<f64>,
}

/// Project `b` onto diagonal-plus-block structure on `idx` and solve.
pub fn solve_projected(
    b: &CMat,
    idx: &[usize],
    rhs: &CMat,
    with_residual: bool,
    tel: &mut Telemetry,
) -> Result<ProjectedSolve> {
    let structured = StructuredMatrix::project(b, idx);
    let x = structured_inverse(&structured, rhs, tel)?;
    let residual = with_residual.then(|| {
        let r = b * &x - rhs;
        let scale = frob(rhs);
        if scale > 0.0 {
            frob(&r) / scale
        } else {
            frob(&r)
        }
    });
    Ok(ProjectedSolve {
        x,
        block_idx: idx.to_vec(),
        residual,
    })
}

/// Second-order Lagrange basis values `(l0, l1, l2)` at `f`.
pub fn lagrange_coeffs(f0: f64, f1: f64, f2: f64, f: f64) -> [f64; 3] {
    [
        (f - f1) * (f - f2) / ((f0 - f1) * (f0 - f2)),
        (f - f0) * (f - f2) / ((f1 - f0) * (f1 - f2)),
        (f - f0) * (f - f1) / ((f2 - f0) * (f2 - f1)),
    ]
}

/// `l0·M0 + l1·M1 + l2·M2` through three nodes `f0 < f1 < f2`, for
/// `f ∈ [f0, f2]`.
pub fn lagrange_interp3(nodes: [(f64, &CMat); 3], f: f64) -> Result<CMat> {
    let [(f0, m0), (f1, m1), (f2, m2)] = nodes;
    if !(f0 < f1 && f1 < f2) {
        return Err(Error::OutOfRange(format!(
            "nodes must be strictly increasing, got {f0}, {f1}, {f2}"
        )));
    }
    if !(f >= f0 && f <= f2) {
        return Err(Error::OutOfRange(format!("f = {f} outside [{f0}, {f2}]")));
    }
    if m0.shape() != m1.shape() || m1.shape() != m2.shape() {
        return Err(Error::Shape("node matrices differ in shape".into()));
    }
    let [l0, l1, l2] = lagrange_coeffs(f0, f1, f2, f);
    Ok(m0 * c(l0, 0.0) + m1 * c(l1, 0.0) + m2 * c(l2, 0.0))
}

/// Uniformly spaced sampled subcarriers (always including both band edges)
/// and the sliding three-node stencil used to fill in the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierSampling {
    pub n_sub: usize,
    pub nodes: Vec<usize>,
}

impl SubcarrierSampling {
    pub fn uniform(n_sub: usize, count: usize) -> Result<Self> {
        if count < 3 || count > n_sub {
            return Err(Error::OutOfRange(format!(
                "need 3 ≤ sampled subcarriers ≤ {n_sub}, got {count}"
            )));
        }
        let span = n_sub - 1;
        let nodes = (0..count)
            .map(|j| (j * span + (count - 1) / 2) / (count - 1))
            .collect();
        Self::from_nodes(n_sub, nodes)
    }

    pub fn all(n_sub: usize) -> Result<Self> {
        Self::uniform(n_sub, n_sub)
    }

    pub fn from_nodes(n_sub: usize, nodes: Vec<usize>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::OutOfRange(
                "need at least three sampled subcarriers".into(),
            ));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::OutOfRange(
                "sampled subcarriers must be strictly increasing".into(),
            ));
        }
        if nodes[0] != 0 || *nodes.last().unwrap() != n_sub - 1 {
            return Err(Error::OutOfRange(
                "sampled subcarriers must include both band edges".into(),
            ));
        }
        Ok(Self { n_sub, nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.nodes.len() == self.n_sub
    }

    /// First node of the triplet centred on the node nearest `f`.
    pub fn triplet_start(&self, f: usize) -> usize {
        let centre = match self.nodes.binary_search(&f) {
            Ok(i) => i,
            Err(i) => {
                if i == 0 {
                    0
                } else if i == self.nodes.len() {
                    self.nodes.len() - 1
                } else if f - self.nodes[i - 1] <= self.nodes[i] - f {
                    i - 1
                } else {
                    i
                }
            }
        };
        centre.clamp(1, self.nodes.len() - 2) - 1
    }

    /// `(start, [l0, l1, l2])` such that the value at `f` is
    /// `Σ_j l_j · value[start + j]`.
    pub fn coefficients(&self, f: usize) -> (usize, [f64; 3]) {
        let s = self.triplet_start(f);
        let (f0, f1, f2) = (
            self.nodes[s] as f64,
            self.nodes[s + 1] as f64,
            self.nodes[s + 2] as f64,
        );
        (s, lagrange_coeffs(f0, f1, f2, f as f64))
    }

    /// Weights `w_j` with `Σ_f interp(f) = Σ_j w_j · value_j`. All ones when
    /// every subcarrier is sampled.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        if self.is_full() {
            return vec![1.0; self.n_sub];
        }
        let mut w = vec![0.0; self.nodes.len()];
        for f in 0..self.n_sub {
            let (s, l) = self.coefficients(f);
            for j in 0..3 {
                w[s + j] += l[j];
            }
        }
        w
    }

    /// Interpolate node values to every subcarrier.
    pub fn interpolate_all(&self, values: &[CMat]) -> Result<Vec<CMat>> {
        if values.len() != self.nodes.len() {
            return Err(Error::Shape(format!(
                "{} values for {} nodes",
                values.len(),
                self.nodes.len()
            )));
        }
        (0..self.n_sub)
            .map(|f| {
                let s = self.triplet_start(f);
                lagrange_interp3(
                    [
                        (self.nodes[s] as f64, &values[s]),
                        (self.nodes[s + 1] as f64, &values[s + 1]),
                        (self.nodes[s + 2] as f64, &values[s + 2]),
                    ],
                    f as f64,
                )
            })
            .collect()
    }
}

/// Algorithms with a closed-form complexity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    /// (Stochastic) WMMSE.
    Swmmse,
    /// Fixed-compensation unfolded WMMSE on the centre subcarrier.
    PoWmmse,
    /// Unfolded network with policy-driven compensation and depth.
    Rlddu,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Swmmse, Algo::PoWmmse, Algo::Rlddu];

    pub fn tag(self) -> &'static str {
        match self {
            Algo::Swmmse => "swmmse",
            Algo::PoWmmse => "po_wmmse",
            Algo::Rlddu => "rlddu",
        }
    }

    /// Symbolic formula, with `I` the iteration/layer count.
    pub fn formula(self) -> &'static str {
        match self {
            Algo::Swmmse => "Mt^2*Mr*F*K*I + Mt^3*I",
            Algo::PoWmmse => "B^2*Mr^2*F*K*I + q^2*Mr*K*I + (Mt+q^3)*I",
            Algo::Rlddu => "B^2*Mr^2*Ft*K*I + q^2*Mr*K*I + (Mt+q^3)*I + (d+c^2)*H^2*c*B*Mr*Ft*K",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "swmmse" => Ok(Algo::Swmmse),
            "po_wmmse" => Ok(Algo::PoWmmse),
            "rlddu" => Ok(Algo::Rlddu),
            other => Err(Error::Parse(format!("unknown algorithm tag '{other}'"))),
        }
    }
}

/// Problem size entering the complexity models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopDims {
    pub m_t: f64,
    pub m_r: f64,
    /// Subcarriers `F`.
    pub n_sub: f64,
    pub k_users: f64,
    /// Iterations or layers `I` (may be an average depth).
    pub iters: f64,
}

/// Structural constants of the accelerated models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopConstants {
    /// Retained beam columns `B`.
    pub b: f64,
    /// Dense rows/columns of `B̃`, `q`.
    pub q: f64,
    /// Sampled subcarriers `F̃`.
    pub f_tilde: f64,
    /// Fully connected width `d`.
    pub d: f64,
    /// Convolution channels `c`.
    pub c: f64,
    /// Kernel size `H`.
    pub h: f64,
}

/// The individual terms of the model, in the order of [`Algo::formula`].
pub fn flop_terms(algo: Algo, dims: &FlopDims, k: &FlopConstants) -> Result<Vec<f64>> {
    let all = [
        dims.m_t,
        dims.m_r,
        dims.n_sub,
        dims.k_users,
        dims.iters,
        k.b,
        k.q,
        k.f_tilde,
        k.d,
        k.c,
        k.h,
    ];
    if all.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::OutOfRange(
            "flop model arguments must be positive".into(),
        ));
    }
    let FlopDims {
        m_t,
        m_r,
        n_sub,
        k_users,
        iters,
    } = *dims;
    Ok(match algo {
        Algo::Swmmse => vec![
            m_t * m_t * m_r * n_sub * k_users * iters,
            m_t.powi(3) * iters,
        ],
        Algo::PoWmmse => vec![
            k.b * k.b * m_r * m_r * n_sub * k_users * iters,
            k.q * k.q * m_r * k_users * iters,
            (m_t + k.q.powi(3)) * iters,
        ],
        Algo::Rlddu => vec![
            k.b * k.b * m_r * m_r * k.f_tilde * k_users * iters,
            k.q * k.q * m_r * k_users * iters,
            (m_t + k.q.powi(3)) * iters,
            (k.d + k.c * k.c) * k.h * k.h * k.c * k.b * m_r * k.f_tilde * k_users,
        ],
    })
}

/// Evaluate the complexity model with unit leading constants.
pub fn flop_estimate(algo: Algo, dims: &FlopDims, k: &FlopConstants) -> Result<f64> {
    Ok(flop_terms(algo, dims, k)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{make_scenario, SystemDims};
    use crate::linalg::{identity, rel_err, solve_hermitian};
    use crate::rng::{complex_normal, substream};

    #[test]
    fn full_keep_keeps_all_nonzero_columns() {
        let dims = SystemDims::new(16, 2, 3, 24, 6, 1.0, 20.0).unwrap();
        let stats = make_scenario(&dims, 4, 1).unwrap();
        let s = prune_support(&stats, 1.0, 16).unwrap();
        for cols in &s.columns {
            assert_eq!(cols, &(0..16).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pruning_recovers_sparse_support() {
        let dims = SystemDims::new(64, 2, 10, 48, 6, 1.0, 20.0).unwrap();
        let stats = make_scenario(&dims, 10, 2).unwrap();
        let s = prune_support(&stats, 0.99, 64).unwrap();
        for (cols, &ret) in s.columns.iter().zip(&s.retained) {
            assert!(cols.len() <= 10);
            assert!(ret >= 0.99);
            assert!(cols.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn single_column_support() {
        let dims = SystemDims::new(8, 1, 1, 12, 1, 1.0, 10.0).unwrap();
        let mut stats = make_scenario(&dims, 8, 1).unwrap();
        for m in &mut stats.mean {
            for p in 0..8 {
                if p != 5 {
                    m[(0, p)] = c(0.0, 0.0);
                }
            }
        }
        for keep in [1e-6, 0.5, 1.0] {
            let s = prune_support(&stats, keep, 8).unwrap();
            assert_eq!(s.columns[0], vec![5]);
        }
        assert!(prune_support(&stats, 0.0, 8).is_err());
    }

    fn random_hpd(n: usize, seed: u64) -> CMat {
        let mut rng = substream(seed, &[]);
        let g = CMat::from_fn(n, n, |_, _| complex_normal(&mut rng));
        &g * g.adjoint() + identity(n)
    }

    #[test]
    fn diagonal_and_full_block_are_exact() {
        let mut tel = Telemetry::new();
        let mut rng = substream(3, &[]);
        let rhs = CMat::from_fn(6, 2, |_, _| complex_normal(&mut rng));
        let d = StructuredMatrix::diagonal(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = structured_inverse(&d, &rhs, &mut tel).unwrap();
        for i in 0..6 {
            assert!((x[(i, 1)] - rhs[(i, 1)] / (i as f64 + 1.0)).norm() < 1e-15);
        }
        let a = random_hpd(6, 4);
        let full = StructuredMatrix::project(&a, &(0..6).collect::<Vec<_>>());
        let x = structured_inverse(&full, &rhs, &mut tel).unwrap();
        let reference = solve_hermitian(&a, &rhs, &mut tel, "t", "a").unwrap();
        assert!(rel_err(&x, &reference) < 1e-12);
    }

    #[test]
    fn structured_solve_matches_dense_on_structured_input() {
        let mut tel = Telemetry::new();
        let blk = random_hpd(4, 8);
        let idx = vec![1, 3, 4, 6];
        let mut diag = vec![2.0, 0.0, 3.0, 0.0, 0.0, 1.5, 0.0, 4.0, 0.7, 2.5];
        for (i, &r) in idx.iter().enumerate() {
            diag[r] = blk[(i, i)].re;
        }
        let m = StructuredMatrix {
            diag,
            block_idx: idx,
            block: blk,
        };
        let dense = m.to_dense();
        let mut rng = substream(9, &[]);
        let rhs = CMat::from_fn(10, 3, |_, _| complex_normal(&mut rng));
        let x = structured_inverse(&m, &rhs, &mut tel).unwrap();
        let reference = solve_hermitian(&dense, &rhs, &mut tel, "t", "dense").unwrap();
        assert!(rel_err(&x, &reference) < 1e-10);
    }

    #[test]
    fn structured_solve_errors() {
        let mut tel = Telemetry::new();
        let m = StructuredMatrix::diagonal(vec![1.0, -1.0]);
        assert!(structured_inverse(&m, &CMat::zeros(2, 1), &mut tel).is_err());
        let bad = StructuredMatrix {
            diag: vec![1.0, 1.0],
            block_idx: vec![0, 1],
            block: CMat::from_row_slice(
                2,
                2,
                &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)],
            ),
        };
        assert!(structured_inverse(&bad, &CMat::zeros(2, 1), &mut tel).is_err());
    }

    #[test]
    fn q_support_selection() {
        let diag = CMat::from_diagonal(&nalgebra::DVector::from_element(8, c(10.0, 0.0)));
        assert!(select_q_support(&diag, 8, 0.0).is_empty());
        let mut arrow = diag.clone();
        for j in 0..8 {
            if j != 3 {
                arrow[(3, j)] = c(1.0, 0.0);
                arrow[(j, 3)] = c(1.0, 0.0);
            }
        }
        assert_eq!(select_q_support(&arrow, 8, 0.05), vec![3]);
        assert_eq!(select_q_support(&arrow, 0, 0.05), Vec::<usize>::new());
    }

    #[test]
    fn lagrange_node_reproduction_and_quadratics() {
        let p = CMat::from_row_slice(
            2,
            2,
            &[c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 1.0), c(3.0, -1.0)],
        );
        let poly = |f: f64| &p * c(0.7 - 1.3 * f + 0.2 * f * f, 0.0);
        let (f0, f1, f2) = (2.0, 5.0, 11.0);
        let (m0, m1, m2) = (poly(f0), poly(f1), poly(f2));
        let nodes = [(f0, &m0), (f1, &m1), (f2, &m2)];
        assert_eq!(lagrange_interp3(nodes, f1).unwrap(), m1);
        for f in [2.0, 3.3, 7.0, 10.9, 11.0] {
            let got = lagrange_interp3(nodes, f).unwrap();
            assert!(rel_err(&got, &poly(f)) < 1e-12);
        }
        assert!(lagrange_interp3([(f0, &m0), (f0, &m1), (f2, &m2)], 3.0).is_err());
        assert!(lagrange_interp3(nodes, 12.0).is_err());
    }

    #[test]
    fn sampling_grid() {
        let s = SubcarrierSampling::uniform(48, 8).unwrap();
        assert_eq!(s.nodes.len(), 8);
        assert_eq!(s.nodes[0], 0);
        assert_eq!(*s.nodes.last().unwrap(), 47);
        for f in 0..48 {
            let st = s.triplet_start(f);
            assert!(s.nodes[st] <= f && f <= s.nodes[st + 2], "f = {f}");
        }
        let w = s.quadrature_weights();
        assert!((w.iter().sum::<f64>() - 48.0).abs() < 1e-10);
        assert_eq!(
            SubcarrierSampling::all(24).unwrap().quadrature_weights(),
            vec![1.0; 24]
        );
        assert!(SubcarrierSampling::uniform(24, 2).is_err());
        assert!(SubcarrierSampling::from_nodes(24, vec![0, 5, 20]).is_err());
    }

    #[test]
    fn full_scale_flops() {
        let dims = FlopDims {
            m_t: 64.0,
            m_r: 2.0,
            n_sub: 48.0,
            k_users: 10.0,
            iters: 5.0,
        };
        let k = FlopConstants {
            b: 10.0,
            q: 30.0,
            f_tilde: 8.0,
            d: 128.0,
            c: 8.0,
            h: 3.0,
        };
        assert_eq!(
            flop_estimate(Algo::Swmmse, &dims, &k).unwrap(),
            20_971_520.0
        );
        assert_eq!(
            flop_estimate(Algo::PoWmmse, &dims, &k).unwrap(),
            1_185_320.0
        );
        let po = flop_terms(Algo::PoWmmse, &dims, &k).unwrap();
        let rl = flop_terms(Algo::Rlddu, &dims, &k).unwrap();
        assert_eq!(po[0] / rl[0], 6.0);
        let dense = FlopConstants { b: 64.0, ..k };
        let ratio = po[0] / flop_terms(Algo::PoWmmse, &dims, &dense).unwrap()[0];
        assert!((ratio - (10.0f64 / 64.0).powi(2)).abs() < 1e-15);
        assert!("nope".parse::<Algo>().is_err());
        assert!(flop_estimate(
            Algo::Swmmse,
            &FlopDims {
                k_users: 0.0,
                ..dims
            },
            &k
        )
        .is_err());
    }
}
