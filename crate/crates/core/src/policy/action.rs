//! Flat action vectors.
//!
//! Layout, layer-major: for each layer `i`, user `k`, sampled node `j`:
//!
//! - `Zᴬ`, `Zᶜ`: `m_r²` reals each: the real diagonal, then `(re, im)` of
//!   the strictly lower triangle in row-major order;
//! - `Oᴱ`, `Oᶠ`, `Oᴳ`: `2 m_r²` reals each: `(re, im)` of every entry in
//!   row-major order;
//!
//! followed by the `I_max` stopping coefficients.

use std::ops::Range;

use crate::du::CompensationSet;
use crate::linalg::{c, CMat};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionLayout {
    pub layers: usize,
    pub k_users: usize,
    pub n_nodes: usize,
    pub m_r: usize,
}

impl ActionLayout {
    pub fn slot_len(&self) -> usize {
        8 * self.m_r * self.m_r
    }

    pub fn layer_len(&self) -> usize {
        self.k_users * self.n_nodes * self.slot_len()
    }

    pub fn comp_len(&self) -> usize {
        self.layers * self.layer_len()
    }

    pub fn len(&self) -> usize {
        self.comp_len() + self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index range of layer `i`'s compensation entries.
    pub fn layer_range(&self, i: usize) -> Range<usize> {
        i * self.layer_len()..(i + 1) * self.layer_len()
    }

    pub fn beta_range(&self) -> Range<usize> {
        self.comp_len()..self.len()
    }

    /// Encode compensation sets (one per layer) and stopping coefficients.
    pub fn encode(&self, comps: &[CompensationSet], beta: &[f64]) -> Result<Vec<f64>> {
        if comps.len() != self.layers || beta.len() != self.layers {
            return Err(Error::Shape(format!(
                "need {} layers and {} coefficients",
                self.layers, self.layers
            )));
        }
        let mut a = Vec::with_capacity(self.len());
        for comp in comps {
            if comp.k_users != self.k_users || comp.n_nodes != self.n_nodes || comp.m_r != self.m_r
            {
                return Err(Error::Shape(
                    "compensation set does not match the action layout".into(),
                ));
            }
            for k in 0..self.k_users {
                for j in 0..self.n_nodes {
                    let i = comp.idx(k, j);
                    push_hermitian(&mut a, &comp.z_a[i]);
                    push_hermitian(&mut a, &comp.z_c[i]);
                    push_full(&mut a, &comp.o_e[i]);
                    push_full(&mut a, &comp.o_f[i]);
                    push_full(&mut a, &comp.o_g[i]);
                }
            }
        }
        a.extend_from_slice(beta);
        Ok(a)
    }

    /// Inverse of [`encode`](Self::encode). Decoded sets are marked
    /// relative (see [`CompensationSet`]).
    pub fn decode(&self, a: &[f64]) -> Result<(Vec<CompensationSet>, Vec<f64>)> {
        if a.len() != self.len() {
            return Err(Error::Shape(format!(
                "action has {} entries, layout needs {}",
                a.len(),
                self.len()
            )));
        }
        let m_r = self.m_r;
        let mut pos = 0;
        let mut comps = Vec::with_capacity(self.layers);
        for layer in 0..self.layers {
            let mut comp = CompensationSet::zeros(layer, self.k_users, self.n_nodes, m_r);
            comp.relative = true;
            for k in 0..self.k_users {
                for j in 0..self.n_nodes {
                    let i = comp.idx(k, j);
                    comp.z_a[i] = read_hermitian(a, &mut pos, m_r);
                    comp.z_c[i] = read_hermitian(a, &mut pos, m_r);
                    comp.o_e[i] = read_full(a, &mut pos, m_r);
                    comp.o_f[i] = read_full(a, &mut pos, m_r);
                    comp.o_g[i] = read_full(a, &mut pos, m_r);
                }
            }
            comps.push(comp);
        }
        Ok((comps, a[pos..].to_vec()))
    }

    /// Zero compensation with the stopping coefficients peaked at the last
    /// layer: the action that reproduces the uncompensated full-depth net.
    pub fn baseline_action(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.len()];
        if self.layers > 0 {
            a[self.len() - 1] = 1.0;
        }
        a
    }
}

fn push_hermitian(a: &mut Vec<f64>, m: &CMat) {
    let n = m.nrows();
    for i in 0..n {
        a.push(m[(i, i)].re);
    }
    for i in 0..n {
        for j in 0..i {
            a.push(m[(i, j)].re);
            a.push(m[(i, j)].im);
        }
    }
}

fn push_full(a: &mut Vec<f64>, m: &CMat) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            a.push(m[(i, j)].re);
            a.push(m[(i, j)].im);
        }
    }
}

fn read_hermitian(a: &[f64], pos: &mut usize, n: usize) -> CMat {
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = c(a[*pos], 0.0);
        *pos += 1;
    }
    for i in 0..n {
        for j in 0..i {
            let z = c(a[*pos], a[*pos + 1]);
            *pos += 2;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

fn read_full(a: &[f64], pos: &mut usize, n: usize) -> CMat {
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = c(a[*pos], a[*pos + 1]);
            *pos += 2;
        }
    }
    m
}

/// 1-based index of the first maximum.
pub fn select_depth(beta: &[f64]) -> Result<usize> {
    if beta.is_empty() {
        return Err(Error::OutOfRange("no stopping coefficients".into()));
    }
    let mut best = 0;
    for (i, &b) in beta.iter().enumerate() {
        if b.is_nan() {
            return Err(Error::OutOfRange(format!(
                "stopping coefficient {i} is NaN"
            )));
        }
        if b > beta[best] {
            best = i;
        }
    }
    Ok(best + 1)
}
