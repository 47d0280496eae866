//! Point-scatterer OFDM sensing channels, TDD masking, noise and
//! channel estimation from transmit/receive frame pairs.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::radio::{RadioConfig, MAX_MATRIX_ELEMENTS};

pub const NUM_CLASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    /// One-way range in metres.
    pub range_m: f64,
    /// Radial velocity in m/s, positive when receding.
    pub velocity_mps: f64,
    pub amplitude: f64,
    pub phase_rad: f64,
}

impl Scatterer {
    pub fn new(range_m: f64, velocity_mps: f64, amplitude: f64, phase_rad: f64) -> Self {
        Self {
            range_m,
            velocity_mps,
            amplitude,
            phase_rad,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.range_m, self.velocity_mps, self.amplitude, self.phase_rad]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.range_m < 0.0 || self.amplitude < 0.0 {
            return Err(Error::Config(format!("invalid scatterer {:?}", self)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub class_id: usize,
    pub scatterers: Vec<Scatterer>,
    /// Per-element downlink SNR; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

const SCENE_KEYS: &[&str] = &["class_id", "snr_db", "seed", "scatterer"];

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.class_id >= NUM_CLASSES {
            return Err(Error::Config(format!(
                "class_id {} outside 0..{}",
                self.class_id, NUM_CLASSES
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db is NaN".into()));
        }
        self.scatterers.iter().try_for_each(Scatterer::validate)
    }

    /// Parses a scene file:
    ///
    /// ```text
    /// class_id = 0
    /// snr_db = 15        # or `inf` for a noiseless channel
    /// seed = 7
    /// scatterer = 11.0, 1.2, 1.0, 0.0   # range_m, velocity_mps, amplitude, phase_rad
    /// ```
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.expect_keys(SCENE_KEYS)?;
        let mut scatterers = Vec::new();
        for (value, line) in kv.get_all("scatterer") {
            let v: Vec<f64> = kv.parse_list(value, line)?;
            if v.len() != 4 {
                return Err(Error::Config(format!(
                    "line {}: scatterer needs 4 values, got {}",
                    line,
                    v.len()
                )));
            }
            scatterers.push(Scatterer::new(v[0], v[1], v[2], v[3]));
        }
        let scene = Scene {
            class_id: kv.require("class_id")?,
            scatterers,
            snr_db: kv.get("snr_db")?.unwrap_or(f64::INFINITY),
            seed: kv.get("seed")?.unwrap_or(0),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvFile::load(path)?)
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = format!(
            "class_id = {}\nsnr_db = {}\nseed = {}\n",
            self.class_id, self.snr_db, self.seed
        );
        for p in &self.scatterers {
            s += &format!(
                "scatterer = {:?}, {:?}, {:?}, {:?}\n",
                p.range_m, p.velocity_mps, p.amplitude, p.phase_rad
            );
        }
        s
    }
}

/// Frequency/time channel estimate, subcarriers along rows and symbols along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub data: Array2<Complex64>,
    pub config: RadioConfig,
    pub mask_applied: bool,
}

fn check_budget(what: &'static str, rows: usize, cols: usize) -> Result<()> {
    match rows.checked_mul(cols) {
        Some(n) if n <= MAX_MATRIX_ELEMENTS => Ok(()),
        n => Err(Error::Sizing {
            what,
            requested: n.unwrap_or(usize::MAX),
            budget: MAX_MATRIX_ELEMENTS,
        }),
    }
}

pub(crate) fn check_matrix_budget(what: &'static str, rows: usize, cols: usize) -> Result<()> {
    check_budget(what, rows, cols)
}

/// Noise-free, unmasked channel of a scene.
pub fn synthesize_channel(scene: &Scene, config: &RadioConfig) -> Result<ChannelMatrix> {
    config.validate()?;
    scene.validate()?;
    let (n, m) = (config.subcarriers, config.symbols);
    check_budget("channel matrix", n, m)?;
    let mut data = Array2::<Complex64>::zeros((n, m));
    let mut delay = vec![Complex64::new(0.0, 0.0); n];
    let mut doppler = vec![Complex64::new(0.0, 0.0); m];
    for p in &scene.scatterers {
        let tau = RadioConfig::delay_s(p.range_m);
        let fd = config.doppler_hz(p.velocity_mps);
        let gain = Complex64::from_polar(p.amplitude, p.phase_rad);
        for (k, d) in delay.iter_mut().enumerate() {
            *d = gain * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * config.subcarrier_spacing_hz * tau);
        }
        for (l, d) in doppler.iter_mut().enumerate() {
            *d = Complex64::from_polar(1.0, 2.0 * PI * fd * l as f64 * config.total_symbol_time_s);
        }
        for (k, mut row) in data.rows_mut().into_iter().enumerate() {
            let dk = delay[k];
            for (h, dl) in row.iter_mut().zip(&doppler) {
                *h += dk * dl;
            }
        }
    }
    Ok(ChannelMatrix {
        data,
        config: *config,
        mask_applied: false,
    })
}

/// Zeroes the uplink symbols of every TDD period.
pub fn apply_tdd_mask(mut h: ChannelMatrix) -> Result<ChannelMatrix> {
    if h.mask_applied {
        return Err(Error::Config("TDD mask already applied".into()));
    }
    let tdd = h.config.tdd;
    tdd.validate(h.data.ncols())?;
    for (l, mut col) in h.data.columns_mut().into_iter().enumerate() {
        if !tdd.is_downlink(l) {
            col.fill(Complex64::new(0.0, 0.0));
        }
    }
    h.mask_applied = true;
    Ok(h)
}

/// Adds circularly-symmetric Gaussian noise to downlink columns.
///
/// The noise power is set relative to the mean downlink signal power; an
/// all-zero channel counts as unit power so empty scenes become pure noise.
pub fn add_noise(mut h: ChannelMatrix, snr_db: f64, seed: u64) -> ChannelMatrix {
    if snr_db == f64::INFINITY {
        return h;
    }
    let tdd = h.config.tdd;
    let (mut power, mut count) = (0.0, 0usize);
    for (l, col) in h.data.columns().into_iter().enumerate() {
        if tdd.is_downlink(l) {
            power += col.iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += col.len();
        }
    }
    let p_sig = if power > 0.0 { power / count.max(1) as f64 } else { 1.0 };
    let sigma2 = p_sig / 10f64.powf(snr_db / 10.0);
    let normal = Normal::new(0.0, (sigma2 / 2.0).sqrt()).expect("finite noise deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Row-major traversal keeps the draw order independent of the TDD layout.
    for row in h.data.rows_mut() {
        for (l, z) in row.into_iter().enumerate() {
            if tdd.is_downlink(l) {
                *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
    }
    h
}

/// Channel estimate by elementwise division `H = Y / X`.
///
/// A zero transmit symbol is an error on downlink positions; on uplink
/// positions it yields a zero estimate since nothing was transmitted.
pub fn estimate_channel(
    y: &Array2<Complex64>,
    x: &Array2<Complex64>,
    config: &RadioConfig,
) -> Result<ChannelMatrix> {
    if y.dim() != x.dim() || y.dim() != (config.subcarriers, config.symbols) {
        return Err(Error::Dimension(format!(
            "Y {:?}, X {:?}, config {}x{}",
            y.dim(),
            x.dim(),
            config.subcarriers,
            config.symbols
        )));
    }
    for ((k, l), xv) in x.indexed_iter() {
        if *xv == Complex64::new(0.0, 0.0) && config.tdd.is_downlink(l) {
            return Err(Error::ZeroDivisor {
                subcarrier: k,
                symbol: l,
            });
        }
    }
    let mut data = Array2::zeros(y.dim());
    Zip::from(&mut data).and(y).and(x).for_each(|h, &yv, &xv| {
        *h = if xv == Complex64::new(0.0, 0.0) {
            Complex64::new(0.0, 0.0)
        } else {
            yv / xv
        };
    });
    Ok(ChannelMatrix {
        data,
        config: *config,
        mask_applied: false,
    })
}

/// Synthesis, mask and noise in one call.
pub fn simulate(scene: &Scene, config: &RadioConfig) -> Result<ChannelMatrix> {
    let h = apply_tdd_mask(synthesize_channel(scene, config)?)?;
    Ok(add_noise(h, scene.snr_db, scene.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::TddPattern;

    fn small(n: usize, m: usize, tdd: TddPattern) -> RadioConfig {
        RadioConfig::desk().with_dims(n, m).with_tdd(tdd)
    }

    fn scene(scatterers: Vec<Scatterer>) -> Scene {
        Scene {
            class_id: 0,
            scatterers,
            snr_db: f64::INFINITY,
            seed: 1,
        }
    }

    #[test]
    fn empty_scene_is_zero() {
        let h = synthesize_channel(&scene(vec![]), &RadioConfig::desk()).unwrap();
        assert!(h.data.iter().all(|z| z.norm() == 0.0));
        assert!(!h.mask_applied);
    }

    #[test]
    fn zero_delay_zero_doppler_is_all_ones() {
        let h = synthesize_channel(&scene(vec![Scatterer::new(0.0, 0.0, 1.0, 0.0)]), &RadioConfig::desk()).unwrap();
        assert!(h.data.iter().all(|z| (*z - Complex64::new(1.0, 0.0)).norm() == 0.0));
    }

    #[test]
    fn mask_small_pattern() {
        let cfg = small(3, 8, TddPattern { period_symbols: 4, dl_symbols: 2 });
        let h = synthesize_channel(&scene(vec![Scatterer::new(0.0, 0.0, 1.0, 0.0)]), &cfg).unwrap();
        let h = apply_tdd_mask(h).unwrap();
        for l in 0..8 {
            let zero = h.data.column(l).iter().all(|z| z.norm() == 0.0);
            assert_eq!(zero, [2, 3, 6, 7].contains(&l), "column {}", l);
        }
        assert!(apply_tdd_mask(h).is_err());
    }

    #[test]
    fn full_dl_mask_is_identity() {
        let cfg = small(4, 8, TddPattern { period_symbols: 4, dl_symbols: 4 });
        let h = synthesize_channel(&scene(vec![Scatterer::new(3.0, 1.0, 1.0, 0.3)]), &cfg).unwrap();
        let masked = apply_tdd_mask(h.clone()).unwrap();
        assert_eq!(masked.data, h.data);
    }

    #[test]
    fn full_scale_mask_zero_column_count() {
        let cfg = RadioConfig::full_scale().with_dims(2, 1120);
        let h = synthesize_channel(&scene(vec![Scatterer::new(15.0, 1.5, 1.0, 0.0)]), &cfg).unwrap();
        let h = apply_tdd_mask(h).unwrap();
        let zero_cols = h.data.columns().into_iter().filter(|c| c.iter().all(|z| z.norm() == 0.0)).count();
        assert_eq!(zero_cols, 288);
    }

    #[test]
    fn noise_infinite_snr_is_identity_and_seeded() {
        let cfg = RadioConfig::desk();
        let h = synthesize_channel(&scene(vec![Scatterer::new(5.0, 1.0, 1.0, 0.0)]), &cfg).unwrap();
        assert_eq!(add_noise(h.clone(), f64::INFINITY, 3).data, h.data);
        let a = add_noise(h.clone(), 10.0, 3);
        let b = add_noise(h.clone(), 10.0, 3);
        let c = add_noise(h, 10.0, 4);
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn noise_stays_off_uplink_columns() {
        let cfg = small(8, 8, TddPattern { period_symbols: 4, dl_symbols: 3 });
        let h = apply_tdd_mask(synthesize_channel(&scene(vec![]), &cfg).unwrap()).unwrap();
        let h = add_noise(h, 0.0, 9);
        for l in 0..8 {
            let zero = h.data.column(l).iter().all(|z| z.norm() == 0.0);
            assert_eq!(zero, l % 4 == 3);
        }
    }

    #[test]
    fn sizing_error_over_budget() {
        let cfg = RadioConfig::desk().with_dims(1 << 14, 1 << 13).with_tdd(TddPattern::all_downlink(1 << 13));
        assert!(matches!(synthesize_channel(&scene(vec![]), &cfg), Err(Error::Sizing { .. })));
    }

    #[test]
    fn scene_file_round_trip() {
        let s = Scene {
            class_id: 7,
            scatterers: vec![Scatterer::new(11.0, -1.25, 0.5, 0.1), Scatterer::new(18.5, 2.0, 1.0, -3.0)],
            snr_db: 12.5,
            seed: 99,
        };
        let kv = KvFile::parse(&s.to_kv_string(), "mem").unwrap();
        assert_eq!(Scene::from_kv(&kv).unwrap(), s);
        let noiseless = KvFile::parse("class_id = 4\n", "mem").unwrap();
        assert_eq!(Scene::from_kv(&noiseless).unwrap().snr_db, f64::INFINITY);
        let bad = KvFile::parse("class_id = 8\n", "mem").unwrap();
        assert!(Scene::from_kv(&bad).is_err());
        let neg = KvFile::parse("class_id = 1\nscatterer = -1, 0, 1, 0\n", "mem").unwrap();
        assert!(Scene::from_kv(&neg).is_err());
    }

    #[test]
    fn estimate_identity_and_scaling() {
        let cfg = small(4, 8, TddPattern { period_symbols: 4, dl_symbols: 2 });
        let y = Array2::from_shape_fn((4, 8), |(k, l)| Complex64::new(k as f64, l as f64));
        let ones = Array2::from_elem((4, 8), Complex64::new(1.0, 0.0));
        assert_eq!(estimate_channel(&y, &ones, &cfg).unwrap().data, y);
        let x = Array2::from_shape_fn((4, 8), |(k, l)| Complex64::new(1.0 + k as f64, -(l as f64)));
        let h = estimate_channel(&x.mapv(|v| v * 2.0), &x, &cfg).unwrap();
        assert!(h.data.iter().all(|z| (*z - Complex64::new(2.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn estimate_zero_divisor() {
        let cfg = small(4, 8, TddPattern { period_symbols: 4, dl_symbols: 2 });
        let y = Array2::from_elem((4, 8), Complex64::new(1.0, 0.0));
        let mut x = y.clone();
        x[[1, 6]] = Complex64::new(0.0, 0.0);
        let h = estimate_channel(&y, &x, &cfg).unwrap();
        assert_eq!(h.data[[1, 6]], Complex64::new(0.0, 0.0));
        x[[2, 5]] = Complex64::new(0.0, 0.0);
        assert!(matches!(
            estimate_channel(&y, &x, &cfg),
            Err(Error::ZeroDivisor { subcarrier: 2, symbol: 5 })
        ));
    }
}
