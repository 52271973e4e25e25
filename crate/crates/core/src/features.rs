//! Convolutional feature hierarchy: a small forward-only engine (3x3-style
//! convolution, ReLU, 2x2 max-pool) and the `EVTW` portable weight format.
//!
//! Layout of an `EVTW` file, all integers and floats little-endian:
//!
//! ```text
//! "EVTW"  u32 version=1  u32 layer_count
//! per layer:
//!   u16 name_len, name (UTF-8)
//!   u16 flags        bit0 = max-pool after this layer, bit1 = exported tap
//!   u32 in_ch  u32 out_ch  u16 kh  u16 kw
//!   f32 weights[out][in][kh][kw]
//!   f32 bias[out]
//! u8 has_means, then 3 x f32 channel means when has_means == 1
//! ```

use std::f64::consts::PI;
use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::grid::Grid;
use crate::rate::RateMap;

pub const EVTW_MAGIC: &[u8; 4] = b"EVTW";
pub const EVTW_VERSION: u32 = 1;

const FLAG_POOL: u16 = 1;
const FLAG_TAP: u16 = 1 << 1;

/// Tap name of the weights-free count feature.
pub const RAW_TAP: &str = "raw";

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("not an EVTW weight file (bad magic)")]
    BadMagic,
    #[error("unsupported EVTW version {0} (expected {EVTW_VERSION})")]
    VersionMismatch(u32),
    #[error("layer {layer}: expects {expected} input channels but receives {found}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        found: usize,
    },
    #[error("weight file truncated")]
    TruncatedFile,
    #[error("{0} unexpected bytes after the weight file trailer")]
    TrailingBytes(usize),
    #[error("layer {layer}: kernel {kh}x{kw} must be square with odd size")]
    BadKernel { layer: String, kh: usize, kw: usize },
    #[error("layer {0}: non-finite weight or bias")]
    NonFinite(String),
    #[error("duplicate layer name {0:?}")]
    DuplicateName(String),
    #[error("layer name is not valid UTF-8")]
    BadName,
    #[error("unknown tap {0:?}")]
    UnknownTap(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Square kernel side, odd.
    pub kernel: usize,
    /// `[out][in][kh][kw]`
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayerSpec {
    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        let k = self.kernel;
        self.weights[((o * self.in_channels + i) * k + ky) * k + kx]
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(NetworkError::BadKernel {
                layer: self.name.clone(),
                kh: self.kernel,
                kw: self.kernel,
            });
        }
        let k2 = self.kernel * self.kernel;
        assert_eq!(
            self.weights.len(),
            self.out_channels * self.in_channels * k2
        );
        assert_eq!(self.bias.len(), self.out_channels);
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(NetworkError::NonFinite(self.name.clone()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkLayer {
    pub conv: ConvLayerSpec,
    pub pool_after: bool,
    pub tap: bool,
}

/// Ordered convolution layers, each followed by ReLU and optionally by a
/// 2x2 max-pool. A run of layers ending in a pool forms one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    layers: Vec<NetworkLayer>,
    means: Option<[f32; 3]>,
}

/// One exported layer output.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    pub tap: String,
    pub grid: Grid,
    /// Input pixels per feature cell along each axis.
    pub factor: usize,
}

impl NetworkSpec {
    pub fn new(layers: Vec<NetworkLayer>, means: Option<[f32; 3]>) -> Result<Self, NetworkError> {
        for (k, layer) in layers.iter().enumerate() {
            layer.conv.validate()?;
            if layers[..k].iter().any(|l| l.conv.name == layer.conv.name) {
                return Err(NetworkError::DuplicateName(layer.conv.name.clone()));
            }
            if k > 0 {
                let prev = layers[k - 1].conv.out_channels;
                if layer.conv.in_channels != prev {
                    return Err(NetworkError::ChannelMismatch {
                        layer: layer.conv.name.clone(),
                        expected: layer.conv.in_channels,
                        found: prev,
                    });
                }
            }
        }
        Ok(Self { layers, means })
    }

    pub fn layers(&self) -> &[NetworkLayer] {
        &self.layers
    }

    pub fn means(&self) -> Option<[f32; 3]> {
        self.means
    }

    /// Channel means as f64, zero when the file carries none.
    pub fn input_means(&self) -> [f64; 3] {
        self.means.map_or([0.0; 3], |m| m.map(f64::from))
    }

    /// Layers flagged as taps, in network order.
    pub fn default_taps(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.tap)
            .map(|l| l.conv.name.as_str())
            .collect()
    }

    pub fn stage_count(&self) -> usize {
        let pools = self.layers.iter().filter(|l| l.pool_after).count();
        match self.layers.last() {
            Some(last) if !last.pool_after => pools + 1,
            _ => pools,
        }
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.conv.name == name)
    }

    /// Downsample factor of a layer output: `2^(pools before it)`.
    pub fn factor_of(&self, name: &str) -> Option<usize> {
        let idx = self.index_of(name)?;
        let pools = self.layers[..idx].iter().filter(|l| l.pool_after).count();
        Some(1 << pools)
    }

    pub fn channels_of(&self, name: &str) -> Option<usize> {
        self.index_of(name)
            .map(|i| self.layers[i].conv.out_channels)
    }

    /// Seven-layer VGG-16 prefix (`conv1_1` .. `conv3_3`) with seeded random
    /// weights. Channel widths are `64/128/256` divided by `width_divisor`.
    ///
    /// Each layer's weight matrix (`out` rows of `in*k*k`) is a Gram-Schmidt
    /// orthonormalized Gaussian scaled by `sqrt(2)`; rows beyond the rank are
    /// plain normalized Gaussians. Biases are zero.
    pub fn random_vgg_prefix(seed: u64, width_divisor: usize) -> NetworkSpec {
        let d = width_divisor.max(1);
        let (c1, c2, c3) = ((64 / d).max(1), (128 / d).max(1), (256 / d).max(1));
        let plan: [(&str, usize, usize, bool, bool); 7] = [
            ("conv1_1", 3, c1, false, true),
            ("conv1_2", c1, c1, true, false),
            ("conv2_1", c1, c2, false, false),
            ("conv2_2", c2, c2, true, true),
            ("conv3_1", c2, c3, false, false),
            ("conv3_2", c3, c3, false, false),
            ("conv3_3", c3, c3, false, true),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = plan
            .iter()
            .map(|&(name, cin, cout, pool_after, tap)| NetworkLayer {
                conv: ConvLayerSpec {
                    name: name.to_string(),
                    in_channels: cin,
                    out_channels: cout,
                    kernel: 3,
                    weights: orthogonalish(&mut rng, cout, cin * 9),
                    bias: vec![0.0; cout],
                },
                pool_after,
                tap,
            })
            .collect();
        NetworkSpec::new(layers, None).expect("generated network is consistent")
    }

    /// Single-layer Gabor filter bank (tap `gabor`): 7x7 kernels at four
    /// orientations, even and odd phase, wavelength 4 px, envelope sigma 2 px.
    /// Even kernels are made zero-mean; every kernel is split evenly over the
    /// three identical input channels and scaled by 1/255.
    pub fn gabor_bank() -> NetworkSpec {
        let k = 7usize;
        let r = (k / 2) as f64;
        let (sigma, wavelength) = (2.0, 4.0);
        let mut weights = Vec::with_capacity(8 * 3 * k * k);
        for orientation in 0..4 {
            let theta = orientation as f64 * PI / 4.0;
            for phase in [0.0, PI / 2.0] {
                let mut kernel = Vec::with_capacity(k * k);
                for ky in 0..k {
                    for kx in 0..k {
                        let (x, y) = (kx as f64 - r, ky as f64 - r);
                        let xr = x * theta.cos() + y * theta.sin();
                        let yr = -x * theta.sin() + y * theta.cos();
                        let env = (-(xr * xr + yr * yr) / (2.0 * sigma * sigma)).exp();
                        kernel.push(env * (2.0 * PI * xr / wavelength + phase).cos());
                    }
                }
                let mean = kernel.iter().sum::<f64>() / kernel.len() as f64;
                let norm = kernel
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    .sqrt();
                for _ in 0..3 {
                    weights.extend(
                        kernel
                            .iter()
                            .map(|v| ((v - mean) / norm / 3.0 / 255.0) as f32),
                    );
                }
            }
        }
        let layer = NetworkLayer {
            conv: ConvLayerSpec {
                name: "gabor".into(),
                in_channels: 3,
                out_channels: 8,
                kernel: k,
                weights,
                bias: vec![0.0; 8],
            },
            pool_after: false,
            tap: true,
        };
        NetworkSpec::new(vec![layer], None).expect("gabor bank is consistent")
    }
}

fn orthogonalish(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f32> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        if r < cols {
            for b in &basis[..r] {
                let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(b).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        basis.push(v);
    }
    let gain = 2f64.sqrt();
    basis
        .into_iter()
        .flatten()
        .map(|v| (v * gain) as f32)
        .collect()
}

/// Zero-padded, stride-1 convolution; output keeps the input's spatial size.
///
/// Each output plane starts from its bias and accumulates input channels,
/// then kernel rows, then kernel columns, in that fixed order.
pub fn conv2d(input: &Grid, layer: &ConvLayerSpec) -> Result<Grid, NetworkError> {
    if input.channels() != layer.in_channels {
        return Err(NetworkError::ChannelMismatch {
            layer: layer.name.clone(),
            expected: layer.in_channels,
            found: input.channels(),
        });
    }
    let (h, w) = (input.height(), input.width());
    let k = layer.kernel;
    let r = (k / 2) as isize;
    let mut out = Grid::zeros(h, w, layer.out_channels);
    for o in 0..layer.out_channels {
        let plane = out.plane_mut(o);
        plane.fill(layer.bias[o] as f64);
        for i in 0..layer.in_channels {
            let src = input.plane(i);
            for ky in 0..k {
                let dy = ky as isize - r;
                let y_lo = (-dy).max(0) as usize;
                let y_hi = (h as isize - dy).min(h as isize).max(0) as usize;
                for kx in 0..k {
                    let wgt = layer.weight(o, i, ky, kx) as f64;
                    if wgt == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - r;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        let dst = &mut plane[y * w + x_lo..y * w + x_hi];
                        let sx_lo = (x_lo as isize + dx) as usize;
                        let s = &src[sy * w + sx_lo..sy * w + sx_lo + (x_hi - x_lo)];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += wgt * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn relu(grid: &Grid) -> Grid {
    grid.map(|v| v.max(0.0))
}

pub fn relu_in_place(grid: &mut Grid) {
    grid.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// 2x2 stride-2 max-pool; odd edges pool over a 1-wide or 1-tall block.
pub fn maxpool2x2(grid: &Grid) -> Grid {
    let (h, w, c) = grid.dims();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Grid::zeros(oh, ow, c);
    for ch in 0..c {
        let src = grid.plane(ch);
        let dst = out.plane_mut(ch);
        for oy in 0..oh {
            let ys = 2 * oy..(2 * oy + 2).min(h);
            for ox in 0..ow {
                let xs = 2 * ox..(2 * ox + 2).min(w);
                let mut m = f64::NEG_INFINITY;
                for y in ys.clone() {
                    for x in xs.clone() {
                        m = m.max(src[y * w + x]);
                    }
                }
                dst[oy * ow + ox] = m;
            }
        }
    }
    out
}

/// Runs the network only as deep as the deepest requested tap and returns the
/// post-ReLU outputs of the requested layers in request order.
pub fn forward(
    input: &Grid,
    net: &NetworkSpec,
    taps: &[&str],
) -> Result<Vec<FeatureStack>, NetworkError> {
    let mut wanted = Vec::with_capacity(taps.len());
    for &tap in taps {
        let idx = net
            .index_of(tap)
            .ok_or_else(|| NetworkError::UnknownTap(tap.to_string()))?;
        wanted.push(idx);
    }
    let Some(&deepest) = wanted.iter().max() else {
        return Ok(Vec::new());
    };
    let mut slots: Vec<Option<FeatureStack>> = vec![None; taps.len()];
    let mut act = input.clone();
    let mut factor = 1usize;
    for (idx, layer) in net.layers[..=deepest].iter().enumerate() {
        act = conv2d(&act, &layer.conv)?;
        relu_in_place(&mut act);
        for (slot, _) in slots.iter_mut().zip(&wanted).filter(|(_, w)| **w == idx) {
            *slot = Some(FeatureStack {
                tap: layer.conv.name.clone(),
                grid: act.clone(),
                factor,
            });
        }
        if layer.pool_after && idx < deepest {
            act = maxpool2x2(&act);
            factor *= 2;
        }
    }
    Ok(slots
        .into_iter()
        .map(|s| s.expect("every tap visited"))
        .collect())
}

/// Single-channel `count / max` feature (zero map stays zero).
pub fn raw_feature(map: &RateMap) -> FeatureStack {
    let max = map.max();
    let scale = if max > 0 { 1.0 / max as f64 } else { 0.0 };
    let data = map.counts().iter().map(|&c| c as f64 * scale).collect();
    FeatureStack {
        tap: RAW_TAP.to_string(),
        grid: Grid::from_vec(map.height(), map.width(), 1, data),
        factor: 1,
    }
}

pub fn write_network<W: Write>(net: &NetworkSpec, mut sink: W) -> io::Result<()> {
    sink.write_all(EVTW_MAGIC)?;
    sink.write_all(&EVTW_VERSION.to_le_bytes())?;
    sink.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for layer in &net.layers {
        let c = &layer.conv;
        let name = c.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "layer name too long"))?;
        sink.write_all(&name_len.to_le_bytes())?;
        sink.write_all(name)?;
        let mut flags = 0u16;
        if layer.pool_after {
            flags |= FLAG_POOL;
        }
        if layer.tap {
            flags |= FLAG_TAP;
        }
        sink.write_all(&flags.to_le_bytes())?;
        sink.write_all(&(c.in_channels as u32).to_le_bytes())?;
        sink.write_all(&(c.out_channels as u32).to_le_bytes())?;
        sink.write_all(&(c.kernel as u16).to_le_bytes())?;
        sink.write_all(&(c.kernel as u16).to_le_bytes())?;
        for v in c.weights.iter().chain(&c.bias) {
            sink.write_all(&v.to_le_bytes())?;
        }
    }
    match net.means {
        Some(means) => {
            sink.write_all(&[1])?;
            for m in means {
                sink.write_all(&m.to_le_bytes())?;
            }
        }
        None => sink.write_all(&[0])?,
    }
    sink.flush()
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        if self.buf.len() < n {
            return Err(NetworkError::TruncatedFile);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, NetworkError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NetworkError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NetworkError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, NetworkError> {
        let bytes = self.take(n.checked_mul(4).ok_or(NetworkError::TruncatedFile)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn load_network<R: Read>(mut source: R) -> Result<NetworkSpec, NetworkError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut cur = Cursor { buf: &bytes };
    if cur.take(4).map_err(|_| NetworkError::BadMagic)? != EVTW_MAGIC {
        return Err(NetworkError::BadMagic);
    }
    let version = cur.u32()?;
    if version != EVTW_VERSION {
        return Err(NetworkError::VersionMismatch(version));
    }
    let count = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| NetworkError::BadName)?
            .to_string();
        let flags = cur.u16()?;
        let in_channels = cur.u32()? as usize;
        let out_channels = cur.u32()? as usize;
        let kh = cur.u16()? as usize;
        let kw = cur.u16()? as usize;
        if kh != kw || kh.is_multiple_of(2) {
            return Err(NetworkError::BadKernel {
                layer: name,
                kh,
                kw,
            });
        }
        let n_weights = out_channels
            .checked_mul(in_channels)
            .and_then(|v| v.checked_mul(kh * kw))
            .ok_or(NetworkError::TruncatedFile)?;
        let weights = cur.f32s(n_weights)?;
        let bias = cur.f32s(out_channels)?;
        layers.push(NetworkLayer {
            conv: ConvLayerSpec {
                name,
                in_channels,
                out_channels,
                kernel: kh,
                weights,
                bias,
            },
            pool_after: flags & FLAG_POOL != 0,
            tap: flags & FLAG_TAP != 0,
        });
    }
    let means = match cur.u8()? {
        0 => None,
        _ => {
            let m = cur.f32s(3)?;
            Some([m[0], m[1], m[2]])
        }
    };
    if !cur.buf.is_empty() {
        return Err(NetworkError::TrailingBytes(cur.buf.len()));
    }
    NetworkSpec::new(layers, means)
}
