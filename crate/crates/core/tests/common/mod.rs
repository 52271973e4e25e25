//! Slow, obviously-correct reference implementations used as test oracles.
#![allow(dead_code)]

use evtrack_core::features::ConvLayerSpec;
use evtrack_core::{Grid, NetworkSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Grid {
    Grid::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Largest absolute difference relative to the largest reference magnitude.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    got.iter()
        .zip(want)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

/// Zero-padded stride-1 cross-correlation written as seven nested loops.
pub fn conv_ref(input: &Grid, layer: &ConvLayerSpec) -> Grid {
    let (h, w, _) = input.dims();
    let k = layer.kernel as i64;
    let r = k / 2;
    let mut out = Grid::zeros(h, w, layer.out_channels);
    for o in 0..layer.out_channels {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = layer.bias[o] as f64;
                for i in 0..layer.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let (sy, sx) = (y + ky - r, x + kx - r);
                            if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                continue;
                            }
                            let wgt = layer.weights
                                [(((o * layer.in_channels + i) as i64 * k + ky) * k + kx) as usize];
                            acc += wgt as f64 * input.get(sy as usize, sx as usize, i);
                        }
                    }
                }
                out.set(y as usize, x as usize, o, acc);
            }
        }
    }
    out
}

pub fn pool_ref(input: &Grid) -> Grid {
    let (h, w, c) = input.dims();
    Grid::from_fn(h.div_ceil(2), w.div_ceil(2), c, |y, x, ch| {
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                let (sy, sx) = (2 * y + dy, 2 * x + dx);
                if sy < h && sx < w {
                    m = m.max(input.get(sy, sx, ch));
                }
            }
        }
        m
    })
}

/// Every layer's post-ReLU output, with its input-pixel factor.
pub fn forward_ref(input: &Grid, net: &NetworkSpec) -> Vec<(String, Grid, usize)> {
    let mut act = input.clone();
    let mut factor = 1;
    let mut out = Vec::new();
    for layer in net.layers() {
        act = conv_ref(&act, &layer.conv).map(|v| if v > 0.0 { v } else { 0.0 });
        out.push((layer.conv.name.clone(), act.clone(), factor));
        if layer.pool_after {
            act = pool_ref(&act);
            factor *= 2;
        }
    }
    out
}

/// Circular ridge regression solved densely: find per-channel kernels `w_c`
/// minimizing `sum_n (sum_c (w_c * x_c)(n) - y(n))^2 + lambda * |w|^2`, where
/// `*` is 2-D circular convolution.
pub struct DenseRidge {
    h: usize,
    w: usize,
    c: usize,
    kernels: DVector<f64>,
}

impl DenseRidge {
    pub fn solve(x: &Grid, y: &[f64], lambda: f64) -> Self {
        let (h, w, c) = x.dims();
        let n = h * w;
        let mut m = DMatrix::<f64>::zeros(n, n * c);
        for ny in 0..h {
            for nx in 0..w {
                for ch in 0..c {
                    for my in 0..h {
                        for mx in 0..w {
                            let v = x.get((ny + h - my) % h, (nx + w - mx) % w, ch);
                            m[(ny * w + nx, ch * n + my * w + mx)] = v;
                        }
                    }
                }
            }
        }
        let yv = DVector::from_column_slice(y);
        let mut normal = m.transpose() * &m;
        for i in 0..n * c {
            normal[(i, i)] += lambda;
        }
        let rhs = m.transpose() * yv;
        let kernels = normal
            .lu()
            .solve(&rhs)
            .expect("regularized normal equations are solvable");
        Self { h, w, c, kernels }
    }

    pub fn respond(&self, z: &Grid) -> Vec<f64> {
        let (h, w, c, n) = (self.h, self.w, self.c, self.h * self.w);
        assert_eq!(z.dims(), (h, w, c));
        let mut r = vec![0.0; n];
        for ny in 0..h {
            for nx in 0..w {
                let mut acc = 0.0;
                for ch in 0..c {
                    for my in 0..h {
                        for mx in 0..w {
                            acc += self.kernels[ch * n + my * w + mx]
                                * z.get((ny + h - my) % h, (nx + w - mx) % w, ch);
                        }
                    }
                }
                r[ny * w + nx] = acc;
            }
        }
        r
    }
}

pub fn circular_shift(g: &Grid, dy: usize, dx: usize) -> Grid {
    let (h, w, c) = g.dims();
    Grid::from_fn(h, w, c, |y, x, ch| {
        g.get((y + h - dy % h) % h, (x + w - dx % w) % w, ch)
    })
}
