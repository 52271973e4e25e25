//! Multi-channel linear correlation filters.
//!
//! For feature channels `x_c` with spectra `X_c` and a Gaussian label `y` with
//! spectrum `Y`, training stores
//!
//! ```text
//! A_c = Y ⊙ conj(X_c)          B = Σ_c X_c ⊙ conj(X_c) + λ
//! ```
//!
//! which is the exact ridge-regression solution over all circular shifts of
//! the sample. Detection on test channels `Z_c` evaluates
//!
//! ```text
//! r = Re IFFT( Σ_c A_c ⊙ Z_c / B )
//! ```
//!
//! so `detect(train(x), x)` returns `y` when `λ = 0`, and a test sample that
//! is the training sample circularly shifted by `(dy, dx)` moves the response
//! peak by `(dy, dx)`.

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::fft2::Fft2;
use crate::grid::Grid;

#[derive(Debug, Error, PartialEq)]
pub enum CfError {
    #[error("size mismatch: expected {expected:?}, got {found:?}")]
    SizeMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("filter denominator vanishes at some frequency; use a positive regularization")]
    DegenerateDenominator,
    #[error("no responses to fuse")]
    EmptyInput,
    #[error("fusion weights must be non-negative and not all zero")]
    BadWeights,
    #[error("model taps {expected:?} do not match update taps {found:?}")]
    TapMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Desired response: `exp(-((h - H/2)^2 + (w - W/2)^2) / (2σ^2))` with the peak
/// on the integer cell `(H/2, W/2)` (floor division).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLabel {
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    pub values: Vec<f64>,
}

impl GaussianLabel {
    pub fn peak(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.width + w]
    }
}

pub fn make_label(height: usize, width: usize, sigma: f64) -> GaussianLabel {
    assert!(height >= 1 && width >= 1, "label must be at least 1x1");
    assert!(sigma > 0.0, "label sigma must be positive");
    let (ph, pw) = ((height / 2) as f64, (width / 2) as f64);
    let denom = 2.0 * sigma * sigma;
    let mut values = Vec::with_capacity(height * width);
    for h in 0..height {
        for w in 0..width {
            let (dh, dw) = (h as f64 - ph, w as f64 - pw);
            values.push((-(dh * dh + dw * dw) / denom).exp());
        }
    }
    GaussianLabel {
        height,
        width,
        sigma,
        values,
    }
}

/// Separable Hann taper `0.5 - 0.5 cos(2πn/(N-1))`; a length-1 axis is all ones.
pub fn hann_window(height: usize, width: usize) -> Vec<f64> {
    fn axis(n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            .collect()
    }
    let (wy, wx) = (axis(height), axis(width));
    wy.iter()
        .flat_map(|a| wx.iter().map(move |b| a * b))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CfParams {
    /// Ridge regularization, `>= 0`.
    pub lambda: f64,
    /// Taper features with a Hann window before transforming.
    pub window: bool,
    /// One denominator shared by all channels (the joint least-squares
    /// solution). When false each channel is solved on its own and the
    /// per-channel responses are averaged.
    pub shared_denominator: bool,
}

impl Default for CfParams {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            window: true,
            shared_denominator: true,
        }
    }
}

/// Frequency-domain filter for one feature layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerFilter {
    height: usize,
    width: usize,
    /// `A_c`, one spectrum per channel.
    numer: Vec<Vec<Complex64>>,
    /// Shared `B`, or one per channel.
    denom: Vec<Vec<Complex64>>,
    window: Option<Vec<f64>>,
}

impl LayerFilter {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.numer.len())
    }

    pub fn numerator(&self, c: usize) -> &[Complex64] {
        &self.numer[c]
    }

    pub fn denominators(&self) -> &[Vec<Complex64>] {
        &self.denom
    }

    pub fn is_shared(&self) -> bool {
        self.denom.len() == 1
    }

    /// `self <- (1 - eta) * self + eta * other` on numerators and denominators.
    fn blend(&mut self, other: &LayerFilter, eta: f64) {
        let keep = 1.0 - eta;
        for (mine, theirs) in self
            .numer
            .iter_mut()
            .chain(self.denom.iter_mut())
            .zip(other.numer.iter().chain(&other.denom))
        {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a = *a * keep + *b * eta;
            }
        }
    }

    /// Euclidean distance over all stored spectra.
    pub fn distance(&self, other: &LayerFilter) -> f64 {
        self.numer
            .iter()
            .chain(&self.denom)
            .zip(other.numer.iter().chain(&other.denom))
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()))
            .sum::<f64>()
            .sqrt()
    }
}

fn channel_spectra(fft: &Fft2, features: &Grid, window: Option<&[f64]>) -> Vec<Vec<Complex64>> {
    (0..features.channels())
        .map(|c| {
            let plane = features.plane(c);
            let mut buf: Vec<Complex64> = match window {
                Some(win) => plane
                    .iter()
                    .zip(win)
                    .map(|(v, w)| Complex64::new(v * w, 0.0))
                    .collect(),
                None => plane.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            };
            fft.forward(&mut buf);
            buf
        })
        .collect()
}

pub fn train_filter(
    features: &Grid,
    label: &GaussianLabel,
    params: &CfParams,
) -> Result<LayerFilter, CfError> {
    let fft = Fft2::new(features.height(), features.width());
    train_filter_with(&fft, features, label, params)
}

/// [`train_filter`] with a pre-planned transform of the right size.
pub fn train_filter_with(
    fft: &Fft2,
    features: &Grid,
    label: &GaussianLabel,
    params: &CfParams,
) -> Result<LayerFilter, CfError> {
    let (h, w) = (features.height(), features.width());
    if (label.height, label.width) != (h, w) || fft.dims() != (h, w) {
        return Err(CfError::SizeMismatch {
            expected: (label.height, label.width, features.channels()),
            found: features.dims(),
        });
    }
    if !(params.lambda >= 0.0) {
        return Err(CfError::InvalidParameter(format!(
            "lambda must be >= 0, got {}",
            params.lambda
        )));
    }
    let window = params.window.then(|| hann_window(h, w));
    let spectra = channel_spectra(fft, features, window.as_deref());
    let y_hat = fft.forward_real(&label.values);
    let lambda = Complex64::new(params.lambda, 0.0);

    let numer: Vec<Vec<Complex64>> = spectra
        .iter()
        .map(|x| y_hat.iter().zip(x).map(|(y, x)| y * x.conj()).collect())
        .collect();
    let denom: Vec<Vec<Complex64>> = if params.shared_denominator {
        let mut b = vec![lambda; h * w];
        for x in &spectra {
            for (acc, v) in b.iter_mut().zip(x) {
                *acc += v.norm_sqr();
            }
        }
        vec![b]
    } else {
        spectra
            .iter()
            .map(|x| x.iter().map(|v| lambda + v.norm_sqr()).collect())
            .collect()
    };
    if params.lambda == 0.0 {
        let peak = denom.iter().flatten().fold(0.0f64, |m, v| m.max(v.re));
        if denom.iter().flatten().any(|v| v.re <= peak * 1e-13) {
            return Err(CfError::DegenerateDenominator);
        }
    }
    Ok(LayerFilter {
        height: h,
        width: w,
        numer,
        denom,
        window,
    })
}

/// Real-valued response map; `values` is row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ResponseMap {
    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.width + w]
    }

    /// Position of the maximum; ties go to the smallest `(row, col)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn detect(filter: &LayerFilter, features: &Grid) -> Result<ResponseMap, CfError> {
    let fft = Fft2::new(filter.height, filter.width);
    detect_with(&fft, filter, features)
}

pub fn detect_with(
    fft: &Fft2,
    filter: &LayerFilter,
    features: &Grid,
) -> Result<ResponseMap, CfError> {
    if features.dims() != filter.dims() || fft.dims() != (filter.height, filter.width) {
        return Err(CfError::SizeMismatch {
            expected: filter.dims(),
            found: features.dims(),
        });
    }
    let n = filter.height * filter.width;
    let spectra = channel_spectra(fft, features, filter.window.as_deref());
    let mut acc = vec![Complex64::default(); n];
    if filter.is_shared() {
        for (a, z) in filter.numer.iter().zip(&spectra) {
            for ((out, a), z) in acc.iter_mut().zip(a).zip(z) {
                *out += a * z;
            }
        }
        for (out, b) in acc.iter_mut().zip(&filter.denom[0]) {
            *out /= b;
        }
    } else {
        let scale = 1.0 / filter.numer.len() as f64;
        for ((a, b), z) in filter.numer.iter().zip(&filter.denom).zip(&spectra) {
            for (((out, a), b), z) in acc.iter_mut().zip(a).zip(b).zip(z) {
                *out += a * z / b * scale;
            }
        }
    }
    fft.inverse(&mut acc);
    Ok(ResponseMap {
        height: filter.height,
        width: filter.width,
        values: acc.into_iter().map(|v| v.re).collect(),
    })
}

/// Circular bilinear sample of `r` at fractional cell `(fy, fx)`.
fn sample_circular(r: &ResponseMap, fy: f64, fx: f64) -> f64 {
    let (h, w) = (r.height as i64, r.width as i64);
    let (y0, x0) = (fy.floor(), fx.floor());
    let (ty, tx) = (fy - y0, fx - x0);
    let wrap = |v: i64, n: i64| v.rem_euclid(n) as usize;
    let (y0, x0) = (y0 as i64, x0 as i64);
    let v00 = r.get(wrap(y0, h), wrap(x0, w));
    if ty == 0.0 && tx == 0.0 {
        return v00;
    }
    let v01 = r.get(wrap(y0, h), wrap(x0 + 1, w));
    let v10 = r.get(wrap(y0 + 1, h), wrap(x0, w));
    let v11 = r.get(wrap(y0 + 1, h), wrap(x0 + 1, w));
    let top = v00 * (1.0 - tx) + v01 * tx;
    let bottom = v10 * (1.0 - tx) + v11 * tx;
    top * (1.0 - ty) + bottom * ty
}

/// A response at `factor` input pixels per cell, with its fusion weight.
#[derive(Clone, Copy, Debug)]
pub struct WeightedResponse<'a> {
    pub response: &'a ResponseMap,
    pub factor: usize,
    pub weight: f64,
}

/// Upsamples every response to an `out_height x out_width` pixel grid and
/// returns the weighted mean.
///
/// Output pixel `(u, v)` stands for the displacement `(u - out_height/2,
/// v - out_width/2)` from the window center; it reads each coarse response at
/// `label_peak + displacement / factor` by circular bilinear interpolation, so
/// zero displacement lines up across layers regardless of factor.
pub fn fuse_responses(
    responses: &[WeightedResponse<'_>],
    out_height: usize,
    out_width: usize,
) -> Result<ResponseMap, CfError> {
    if responses.is_empty() {
        return Err(CfError::EmptyInput);
    }
    let total: f64 = responses.iter().map(|r| r.weight).sum();
    if responses.iter().any(|r| !(r.weight >= 0.0)) || !(total > 0.0) {
        return Err(CfError::BadWeights);
    }
    let (ch, cw) = ((out_height / 2) as f64, (out_width / 2) as f64);
    let mut values = vec![0.0; out_height * out_width];
    for r in responses.iter().filter(|r| r.weight > 0.0) {
        let map = r.response;
        let f = r.factor as f64;
        let (ph, pw) = ((map.height / 2) as f64, (map.width / 2) as f64);
        for u in 0..out_height {
            let fy = ph + (u as f64 - ch) / f;
            for v in 0..out_width {
                let fx = pw + (v as f64 - cw) / f;
                values[u * out_width + v] += r.weight * sample_circular(map, fy, fx);
            }
        }
    }
    values.iter_mut().for_each(|v| *v /= total);
    Ok(ResponseMap {
        height: out_height,
        width: out_width,
        values,
    })
}

/// Per-tap filters with fusion weights and learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterModel {
    pub taps: Vec<String>,
    pub filters: Vec<LayerFilter>,
    pub weights: Vec<f64>,
    pub eta: f64,
}

impl FilterModel {
    pub fn new(
        taps: Vec<String>,
        filters: Vec<LayerFilter>,
        weights: Vec<f64>,
        eta: f64,
    ) -> Result<Self, CfError> {
        if taps.len() != filters.len() || taps.len() != weights.len() {
            return Err(CfError::InvalidParameter(
                "taps, filters and weights must have equal length".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || !(weights.iter().sum::<f64>() > 0.0) {
            return Err(CfError::BadWeights);
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(CfError::InvalidParameter(format!(
                "eta {eta} outside [0, 1]"
            )));
        }
        Ok(Self {
            taps,
            filters,
            weights,
            eta,
        })
    }

    /// Running-average update of every tap's numerator and denominator.
    pub fn update(
        &mut self,
        taps: &[String],
        new_filters: &[LayerFilter],
        eta: f64,
    ) -> Result<(), CfError> {
        let same_shape = taps == self.taps.as_slice()
            && new_filters.len() == self.filters.len()
            && self
                .filters
                .iter()
                .zip(new_filters)
                .all(|(a, b)| a.dims() == b.dims() && a.denom.len() == b.denom.len());
        if !same_shape {
            return Err(CfError::TapMismatch {
                expected: self.taps.clone(),
                found: taps.to_vec(),
            });
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(CfError::InvalidParameter(format!(
                "eta {eta} outside [0, 1]"
            )));
        }
        for (mine, theirs) in self.filters.iter_mut().zip(new_filters) {
            mine.blend(theirs, eta);
        }
        Ok(())
    }
}

/// Functional form of [`FilterModel::update`].
pub fn update_model(
    model: &FilterModel,
    taps: &[String],
    new_filters: &[LayerFilter],
    eta: f64,
) -> Result<FilterModel, CfError> {
    let mut next = model.clone();
    next.update(taps, new_filters, eta)?;
    Ok(next)
}
