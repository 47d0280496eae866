//! Zero-padded delay-Doppler periodogram, detector features and the
//! Doppler flip.
//!
//! The periodogram keeps Doppler bins in natural DFT order. Feature tensors
//! and rendered images use the centered view, with zero Doppler at column
//! `M'/2`, so that flipping mirrors velocities about zero.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::pgm::{db_to_gray, write_pgm};
use crate::radio::RadioConfig;
use crate::waveform::{check_matrix_budget, ChannelMatrix};

/// Dynamic range of rendered images below the peak.
pub const RENDER_RANGE_DB: f64 = 60.0;
const LOG_EPS: f64 = 1e-12;
const MAX_PADDING_FACTOR: u32 = 8;

/// `(N', M') = (2^(ceil(log2 N)+F), 2^(ceil(log2 M)+F))`.
pub fn padded_dims(n: usize, m: usize, f: u32) -> (usize, usize) {
    assert!(n >= 1 && m >= 1, "dimensions must be positive");
    let up = |x: usize| x.next_power_of_two() << f;
    (up(n), up(m))
}

/// Maps between natural and centered Doppler column order. The map is its
/// own inverse for every power-of-two width.
pub fn center_doppler(m: usize, cols: usize) -> usize {
    (m + cols / 2) % cols
}

#[derive(Debug, Clone, PartialEq)]
pub struct Periodogram {
    /// Delay bins along rows, Doppler bins along columns in natural order.
    pub data: Array2<Complex64>,
    pub padding_factor: u32,
    pub config: RadioConfig,
}

impl Periodogram {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn delay_per_bin_s(&self) -> f64 {
        1.0 / (self.rows() as f64 * self.config.subcarrier_spacing_hz)
    }

    pub fn doppler_per_bin_hz(&self) -> f64 {
        1.0 / (self.cols() as f64 * self.config.total_symbol_time_s)
    }

    /// Location of the largest magnitude (first in row-major order on ties).
    pub fn peak(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for ((n, m), z) in self.data.indexed_iter() {
            let v = z.norm_sqr();
            if v > best_v {
                best_v = v;
                best = (n, m);
            }
        }
        best
    }

    /// Expected peak bin of a point reflector, natural Doppler order.
    pub fn expected_bin(&self, range_m: f64, velocity_mps: f64) -> (usize, usize) {
        let wrap = |x: f64, len: usize| (x.round() as i64).rem_euclid(len as i64) as usize;
        let tau = RadioConfig::delay_s(range_m);
        let fd = self.config.doppler_hz(velocity_mps);
        (
            wrap(tau * self.config.subcarrier_spacing_hz * self.rows() as f64, self.rows()),
            wrap(fd * self.config.total_symbol_time_s * self.cols() as f64, self.cols()),
        )
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

fn fft_rows(data: &mut [Complex64], width: usize, rows: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    data[..rows * width].par_chunks_mut(width).for_each(|row| fft.process(row));
}

/// `P[n,m] = 1/(M'N') sum_k (sum_l H[k,l] e^{-j2pi lm/M'}) e^{+j2pi kn/N'}`.
pub fn compute_periodogram(h: &ChannelMatrix, f: u32) -> Result<Periodogram> {
    if f > MAX_PADDING_FACTOR {
        return Err(Error::Config(format!("padding factor {} exceeds {}", f, MAX_PADDING_FACTOR)));
    }
    let (n, m) = h.data.dim();
    let (np, mp) = padded_dims(n, m, f);
    check_matrix_budget("periodogram", np, mp)?;
    if h.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Config("channel matrix contains non-finite values".into()));
    }

    // Doppler transform along symbols for the N occupied rows.
    let mut rows = vec![Complex64::new(0.0, 0.0); np * mp];
    for (k, src) in h.data.rows().into_iter().enumerate() {
        for (l, v) in src.iter().enumerate() {
            rows[k * mp + l] = *v;
        }
    }
    fft_rows(&mut rows, mp, n, false);

    // Delay transform along subcarriers, done on the transpose.
    let mut cols = vec![Complex64::new(0.0, 0.0); mp * np];
    for k in 0..n {
        for mm in 0..mp {
            cols[mm * np + k] = rows[k * mp + mm];
        }
    }
    fft_rows(&mut cols, np, mp, true);

    let scale = 1.0 / (np as f64 * mp as f64);
    let data = Array2::from_shape_fn((np, mp), |(nn, mm)| cols[mm * np + nn] * scale);
    Ok(Periodogram {
        data,
        padding_factor: f,
        config: h.config,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// Standardized log-power and phase/pi.
    #[default]
    Db,
    /// Linear magnitude and phase in radians.
    Raw,
}

impl FeatureMode {
    pub fn code(self) -> u8 {
        match self {
            FeatureMode::Db => 0,
            FeatureMode::Raw => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureMode::Db),
            1 => Some(FeatureMode::Raw),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Db => "db",
            FeatureMode::Raw => "raw",
        }
    }
}

/// Two-channel image: magnitude feature then phase feature, each `rows x cols`
/// row-major with centered Doppler columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub label: Option<u16>,
    pub mode: FeatureMode,
    /// Mean and standard deviation removed from the log-power channel.
    pub norm_mean: f64,
    pub norm_std: f64,
}

impl FeatureTensor {
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.rows * self.cols;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn at(&self, n: usize, m: usize, c: usize) -> f32 {
        self.data[(c * self.rows + n) * self.cols + m]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Magnitude channel converted back to dB power.
    pub fn power_db(&self) -> Vec<f64> {
        self.channel(0)
            .iter()
            .map(|&v| match self.mode {
                FeatureMode::Db => v as f64 * self.norm_std + self.norm_mean,
                FeatureMode::Raw => 10.0 * ((v as f64).powi(2) + LOG_EPS).log10(),
            })
            .collect()
    }
}

pub fn extract_features(p: &Periodogram, mode: FeatureMode) -> FeatureTensor {
    let (rows, cols) = p.data.dim();
    let plane = rows * cols;
    let mut data = vec![0f32; 2 * plane];
    let mut mag = vec![0f64; plane];
    for ((n, m), z) in p.data.indexed_iter() {
        let i = n * cols + center_doppler(m, cols);
        mag[i] = match mode {
            FeatureMode::Db => 10.0 * (z.norm_sqr() + LOG_EPS).log10(),
            FeatureMode::Raw => z.norm(),
        };
        let phase = z.arg();
        data[plane + i] = match mode {
            FeatureMode::Db => (phase / std::f64::consts::PI) as f32,
            FeatureMode::Raw => phase as f32,
        };
    }
    let (mut mean, mut std) = (0.0, 1.0);
    if mode == FeatureMode::Db {
        mean = mag.iter().sum::<f64>() / plane as f64;
        let var = mag.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
        std = var.sqrt();
        // Relative guard: a constant map leaves only rounding residue.
        if std <= 1e-9 * mean.abs().max(1.0) {
            std = 0.0;
        }
    }
    for (d, v) in data[..plane].iter_mut().zip(&mag) {
        *d = match mode {
            FeatureMode::Db if std == 0.0 => 0.0,
            FeatureMode::Db => ((v - mean) / std) as f32,
            FeatureMode::Raw => *v as f32,
        };
    }
    FeatureTensor {
        rows,
        cols,
        data,
        label: None,
        mode,
        norm_mean: mean,
        norm_std: std,
    }
}

/// Mirrors the centered Doppler axis: `out[n, m, c] = in[n, M'-1-m, c]`.
pub fn hflip(t: &FeatureTensor) -> FeatureTensor {
    let mut out = t.clone();
    for (dst, src) in out.data.chunks_mut(t.cols).zip(t.data.chunks(t.cols)) {
        for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *s;
        }
    }
    out
}

fn gray_image(db: &[f64]) -> Vec<u8> {
    let peak = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    db.iter().map(|&v| db_to_gray(v, peak, RENDER_RANGE_DB)).collect()
}

/// Gray levels of `|P|` in dB, delay down the rows and centered Doppler
/// across the columns. An all-zero periodogram renders black.
pub fn render_pixels(p: &Periodogram) -> Vec<u8> {
    let (rows, cols) = p.data.dim();
    if p.data.iter().all(|z| z.norm_sqr() == 0.0) {
        return vec![0; rows * cols];
    }
    let mut db = vec![f64::NEG_INFINITY; rows * cols];
    for ((n, m), z) in p.data.indexed_iter() {
        db[n * cols + center_doppler(m, cols)] = 20.0 * z.norm().log10();
    }
    gray_image(&db)
}

/// Writes `p` as a `M' x N'` P5 image.
pub fn render(p: &Periodogram, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(path, p.cols(), p.rows(), &render_pixels(p))
}

/// Renders the magnitude channel of a stored feature tensor.
pub fn render_features(t: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    let db = t.power_db();
    let pixels = if t.mode == FeatureMode::Db && t.norm_std == 0.0 {
        vec![0; db.len()]
    } else {
        gray_image(&db)
    };
    write_pgm(path, t.cols, t.rows, &pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::TddPattern;
    use crate::waveform::{synthesize_channel, Scatterer, Scene};

    fn channel(data: Array2<Complex64>) -> ChannelMatrix {
        let (n, m) = data.dim();
        ChannelMatrix {
            config: RadioConfig::desk().with_dims(n, m).with_tdd(TddPattern::all_downlink(m)),
            data,
            mask_applied: false,
        }
    }

    #[test]
    fn dims() {
        assert_eq!(padded_dims(1584, 1120, 0), (2048, 2048));
        assert_eq!(padded_dims(64, 64, 0), (64, 64));
        assert_eq!(padded_dims(64, 64, 2), (256, 256));
        assert_eq!(padded_dims(1, 3, 1), (2, 8));
    }

    #[test]
    fn zero_and_constant() {
        let p = compute_periodogram(&channel(Array2::zeros((4, 4))), 0).unwrap();
        assert!(p.data.iter().all(|z| z.norm() == 0.0));
        let p = compute_periodogram(&channel(Array2::from_elem((4, 4), Complex64::new(1.0, 0.0))), 0).unwrap();
        for ((n, m), z) in p.data.indexed_iter() {
            let want = if n == 0 && m == 0 { 1.0 } else { 0.0 };
            assert!((z - Complex64::new(want, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn centering_is_involution() {
        for cols in [1, 2, 8, 64] {
            for m in 0..cols {
                assert_eq!(center_doppler(center_doppler(m, cols), cols), m);
            }
        }
        assert_eq!(center_doppler(0, 64), 32);
    }

    #[test]
    fn features_constant_and_real() {
        let mut p = compute_periodogram(&channel(Array2::zeros((4, 4))), 0).unwrap();
        p.data.fill(Complex64::new(0.3, 0.0));
        let t = extract_features(&p, FeatureMode::Db);
        assert!(t.channel(0).iter().all(|&v| v == 0.0));
        assert!(t.channel(1).iter().all(|&v| v == 0.0));
        assert!(t.is_finite());
    }

    #[test]
    fn features_raw_mode_keeps_radians() {
        let mut p = compute_periodogram(&channel(Array2::zeros((2, 2))), 0).unwrap();
        p.data[[0, 1]] = Complex64::new(-2.0, 0.0);
        let t = extract_features(&p, FeatureMode::Raw);
        let col = center_doppler(1, 2);
        assert_eq!(t.at(0, col, 0), 2.0);
        assert!((t.at(0, col, 1) - std::f32::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn flip_involution_and_peak_index() {
        let cfg = RadioConfig::desk().with_tdd(TddPattern::all_downlink(64));
        let scene = Scene {
            class_id: 0,
            scatterers: vec![Scatterer::new(10.0, 3.0, 1.0, 0.0)],
            snr_db: f64::INFINITY,
            seed: 0,
        };
        let p = compute_periodogram(&synthesize_channel(&scene, &cfg).unwrap(), 0).unwrap();
        let t = extract_features(&p, FeatureMode::Db);
        let f = hflip(&t);
        assert_eq!(hflip(&f), t);
        let argmax = |t: &FeatureTensor| {
            let c = t.channel(0);
            let i = (0..c.len()).fold(0, |b, i| if c[i] > c[b] { i } else { b });
            (i / t.cols, i % t.cols)
        };
        let (n, m) = argmax(&t);
        assert_eq!(argmax(&f), (n, t.cols - 1 - m));
        let (pn, pm) = p.peak();
        assert_eq!((n, m), (pn, center_doppler(pm, 64)));
    }

    #[test]
    fn render_zero_is_black() {
        let p = compute_periodogram(&channel(Array2::zeros((4, 8))), 1).unwrap();
        let px = render_pixels(&p);
        assert_eq!(px.len(), 8 * 16);
        assert!(px.iter().all(|&v| v == 0));
    }

    #[test]
    fn rejects_non_finite_and_oversize() {
        let mut h = channel(Array2::zeros((4, 4)));
        h.data[[0, 0]] = Complex64::new(f64::NAN, 0.0);
        assert!(compute_periodogram(&h, 0).is_err());
        let h = channel(Array2::zeros((1024, 1024)));
        assert!(matches!(compute_periodogram(&h, 4), Err(Error::Sizing { .. })));
    }
}
