//! Small convolutional network on a `channels × rows × cols` grid:
//! conv3x3 → ReLU → conv3x3 → ReLU → dense → ReLU → dense.
//!
//! Parameters live in one flat vector so the optimizer and the checkpoint
//! format do not need to know the layer structure.

use rand::Rng;

use crate::rng::standard_normal;
use crate::telemetry::Telemetry;
use crate::{Error, Result};

pub const KERNEL: usize = 3;
pub const CONV_CHANNELS: usize = 8;
pub const FC_WIDTH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub in_channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub conv_channels: usize,
    pub fc_width: usize,
    pub out: usize,
}

impl NetShape {
    pub fn new(in_channels: usize, rows: usize, cols: usize, out: usize) -> Self {
        Self {
            in_channels,
            rows,
            cols,
            conv_channels: CONV_CHANNELS,
            fc_width: FC_WIDTH,
            out,
        }
    }

    fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.cells()
    }

    fn sizes(&self) -> [usize; 8] {
        let k2 = KERNEL * KERNEL;
        let c = self.conv_channels;
        let flat = c * self.cells();
        [
            c * self.in_channels * k2,
            c,
            c * c * k2,
            c,
            self.fc_width * flat,
            self.fc_width,
            self.out * self.fc_width,
            self.out,
        ]
    }

    fn offsets(&self) -> [usize; 9] {
        let s = self.sizes();
        let mut o = [0; 9];
        for i in 0..8 {
            o[i + 1] = o[i] + s[i];
        }
        o
    }

    pub fn n_params(&self) -> usize {
        self.offsets()[8]
    }

    /// Multiply-accumulates of one forward pass.
    pub fn forward_macs(&self) -> u64 {
        let k2 = (KERNEL * KERNEL) as u64;
        let cells = self.cells() as u64;
        let c = self.conv_channels as u64;
        c * self.in_channels as u64 * k2 * cells
            + c * c * k2 * cells
            + self.fc_width as u64 * c * cells
            + self.out as u64 * self.fc_width as u64
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    z3: Vec<f64>,
    a3: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub shape: NetShape,
    pub theta: Vec<f64>,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

impl ConvNet {
    pub fn zeros(shape: NetShape) -> Self {
        Self {
            theta: vec![0.0; shape.n_params()],
            shape,
        }
    }

    /// He-normal hidden weights, zero biases, zero output layer with the
    /// given output bias.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, out_bias: &[f64], rng: &mut R) -> Result<Self> {
        if out_bias.len() != shape.out {
            return Err(Error::Shape(format!(
                "output bias has {} entries, net has {}",
                out_bias.len(),
                shape.out
            )));
        }
        let mut net = Self::zeros(shape);
        let o = shape.offsets();
        let k2 = (KERNEL * KERNEL) as f64;
        let fan_in = [
            shape.in_channels as f64 * k2,
            shape.conv_channels as f64 * k2,
            (shape.conv_channels * shape.cells()) as f64,
        ];
        for (layer, &fan) in fan_in.iter().enumerate() {
            let std = (2.0 / fan).sqrt();
            for w in &mut net.theta[o[2 * layer]..o[2 * layer + 1]] {
                *w = std * standard_normal(rng);
            }
        }
        net.theta[o[7]..o[8]].copy_from_slice(out_bias);
        Ok(net)
    }

    fn conv_forward(&self, w: &[f64], b: &[f64], x: &[f64], cin: usize) -> Vec<f64> {
        let (rows, cols, cout) = (self.shape.rows, self.shape.cols, self.shape.conv_channels);
        let mut y = vec![0.0; cout * rows * cols];
        for o in 0..cout {
            for i in 0..rows {
                for j in 0..cols {
                    let mut s = b[o];
                    for c in 0..cin {
                        for di in 0..KERNEL {
                            let ii = i as isize + di as isize - 1;
                            if ii < 0 || ii >= rows as isize {
                                continue;
                            }
                            for dj in 0..KERNEL {
                                let jj = j as isize + dj as isize - 1;
                                if jj < 0 || jj >= cols as isize {
                                    continue;
                                }
                                s += w[((o * cin + c) * KERNEL + di) * KERNEL + dj]
                                    * x[(c * rows + ii as usize) * cols + jj as usize];
                            }
                        }
                    }
                    y[(o * rows + i) * cols + j] = s;
                }
            }
        }
        y
    }

    /// Accumulate weight/bias gradients of a same-padded convolution and
    /// return the gradient with respect to its input.
    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        w: &[f64],
        x: &[f64],
        cin: usize,
        dz: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        want_dx: bool,
    ) -> Vec<f64> {
        let (rows, cols, cout) = (self.shape.rows, self.shape.cols, self.shape.conv_channels);
        let mut dx = if want_dx {
            vec![0.0; cin * rows * cols]
        } else {
            Vec::new()
        };
        for o in 0..cout {
            for i in 0..rows {
                for j in 0..cols {
                    let g = dz[(o * rows + i) * cols + j];
                    if g == 0.0 {
                        continue;
                    }
                    db[o] += g;
                    for c in 0..cin {
                        for di in 0..KERNEL {
                            let ii = i as isize + di as isize - 1;
                            if ii < 0 || ii >= rows as isize {
                                continue;
                            }
                            for dj in 0..KERNEL {
                                let jj = j as isize + dj as isize - 1;
                                if jj < 0 || jj >= cols as isize {
                                    continue;
                                }
                                let wi = ((o * cin + c) * KERNEL + di) * KERNEL + dj;
                                let xi = (c * rows + ii as usize) * cols + jj as usize;
                                dw[wi] += g * x[xi];
                                if want_dx {
                                    dx[xi] += g * w[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn dense_forward(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        let n_in = x.len();
        b.iter()
            .enumerate()
            .map(|(o, &bo)| {
                bo + w[o * n_in..(o + 1) * n_in]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, input: &[f64], tel: &mut Telemetry) -> Result<(Vec<f64>, Cache)> {
        if input.len() != self.shape.input_len() {
            return Err(Error::Shape(format!(
                "net input has {} entries, expected {}",
                input.len(),
                self.shape.input_len()
            )));
        }
        let o = self.shape.offsets();
        let t = &self.theta;
        let z1 = self.conv_forward(
            &t[o[0]..o[1]],
            &t[o[1]..o[2]],
            input,
            self.shape.in_channels,
        );
        let a1 = relu(&z1);
        let z2 = self.conv_forward(
            &t[o[2]..o[3]],
            &t[o[3]..o[4]],
            &a1,
            self.shape.conv_channels,
        );
        let a2 = relu(&z2);
        let z3 = Self::dense_forward(&t[o[4]..o[5]], &t[o[5]..o[6]], &a2);
        let a3 = relu(&z3);
        let out = Self::dense_forward(&t[o[6]..o[7]], &t[o[7]..o[8]], &a3);
        tel.flops
            .add("policy", "forward", self.shape.forward_macs());
        Ok((
            out,
            Cache {
                input: input.to_vec(),
                z1,
                a1,
                z2,
                a2,
                z3,
                a3,
            },
        ))
    }

    /// Gradient of `Σ dout · out` with respect to the parameters.
    pub fn backward(&self, cache: &Cache, dout: &[f64]) -> Result<Vec<f64>> {
        if dout.len() != self.shape.out {
            return Err(Error::Shape("output gradient has the wrong length".into()));
        }
        let o = self.shape.offsets();
        let t = &self.theta;
        let mut g = vec![0.0; t.len()];
        let fc = self.shape.fc_width;

        // output dense
        let (g_lo, g_hi) = g.split_at_mut(o[7]);
        let dw4 = &mut g_lo[o[6]..];
        let db4 = &mut g_hi[..self.shape.out];
        let mut da3 = vec![0.0; fc];
        for (k, &d) in dout.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            db4[k] += d;
            let row = &t[o[6] + k * fc..o[6] + (k + 1) * fc];
            for n in 0..fc {
                dw4[k * fc + n] += d * cache.a3[n];
                da3[n] += d * row[n];
            }
        }

        // hidden dense
        let dz3: Vec<f64> = da3
            .iter()
            .zip(&cache.z3)
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();
        let n_in = cache.a2.len();
        let mut da2 = vec![0.0; n_in];
        for (k, &d) in dz3.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g[o[5] + k] += d;
            for n in 0..n_in {
                g[o[4] + k * n_in + n] += d * cache.a2[n];
                da2[n] += d * t[o[4] + k * n_in + n];
            }
        }

        // second convolution
        let dz2: Vec<f64> = da2
            .iter()
            .zip(&cache.z2)
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();
        let (lo, hi) = g.split_at_mut(o[3]);
        let da1 = self.conv_backward(
            &t[o[2]..o[3]],
            &cache.a1,
            self.shape.conv_channels,
            &dz2,
            &mut lo[o[2]..],
            &mut hi[..o[4] - o[3]],
            true,
        );

        // first convolution
        let dz1: Vec<f64> = da1
            .iter()
            .zip(&cache.z1)
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();
        let (lo, hi) = g.split_at_mut(o[1]);
        self.conv_backward(
            &t[o[0]..o[1]],
            &cache.input,
            self.shape.in_channels,
            &dz1,
            &mut lo[o[0]..],
            &mut hi[..o[2] - o[1]],
            false,
        );
        Ok(g)
    }
}
