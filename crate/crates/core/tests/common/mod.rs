//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use isac_atr::radio::{RadioConfig, TddPattern, SPEED_OF_LIGHT};
use isac_atr::waveform::{ChannelMatrix, Scatterer};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

/// Desk radio resized to `n x m` with every symbol downlink.
pub fn all_dl(n: usize, m: usize) -> RadioConfig {
    RadioConfig::desk().with_dims(n, m).with_tdd(TddPattern::all_downlink(m))
}

/// Channel element evaluated straight from the scatterer formula with
/// explicit cosines and sines.
pub fn channel_element(scatterers: &[Scatterer], cfg: &RadioConfig, k: usize, l: usize) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for p in scatterers {
        let tau = 2.0 * p.range_m / SPEED_OF_LIGHT;
        let fd = 2.0 * p.velocity_mps * cfg.carrier_hz / SPEED_OF_LIGHT;
        let theta = p.phase_rad - 2.0 * PI * k as f64 * cfg.subcarrier_spacing_hz * tau
            + 2.0 * PI * fd * l as f64 * cfg.total_symbol_time_s;
        re += p.amplitude * theta.cos();
        im += p.amplitude * theta.sin();
    }
    Complex64::new(re, im)
}

pub fn direct_channel(scatterers: &[Scatterer], cfg: &RadioConfig) -> Array2<Complex64> {
    Array2::from_shape_fn((cfg.subcarriers, cfg.symbols), |(k, l)| channel_element(scatterers, cfg, k, l))
}

/// Brute-force double sum of the zero-padded periodogram.
pub fn direct_periodogram(h: &Array2<Complex64>, np: usize, mp: usize) -> Array2<Complex64> {
    let (n, m) = h.dim();
    let scale = 1.0 / (np as f64 * mp as f64);
    Array2::from_shape_fn((np, mp), |(nn, mm)| {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..n {
            for l in 0..m {
                let angle = 2.0 * PI * ((k * nn) % np) as f64 / np as f64 - 2.0 * PI * ((l * mm) % mp) as f64 / mp as f64;
                acc += h[[k, l]] * Complex64::from_polar(1.0, angle);
            }
        }
        acc * scale
    })
}

pub fn random_matrix(rng: &mut impl Rng, n: usize, m: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((n, m), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn channel(data: Array2<Complex64>) -> ChannelMatrix {
    let (n, m) = data.dim();
    ChannelMatrix {
        data,
        config: all_dl(n, m),
        mask_applied: false,
    }
}

/// Largest elementwise deviation relative to the largest reference magnitude.
pub fn max_rel_dev(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

pub fn energy(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Wraps an angle difference into (-pi, pi].
pub fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}
