//! Synthetic labelled datasets: the eight-class scene library, class
//! proportions, stratified splits, class weights and the `IATR` file format.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kv::{format_entries, KvFile};
use crate::periodogram::{compute_periodogram, extract_features, padded_dims, FeatureMode, FeatureTensor};
use crate::radio::{RadioConfig, TddPattern};
use crate::seed::{rng_for, split_seed};
use crate::waveform::{simulate, Scatterer, Scene, NUM_CLASSES};

/// Class shares of the reference measurement campaign, in percent.
pub const CLASS_RATIOS_PERCENT: [f64; NUM_CLASSES] = [19.58, 12.48, 8.03, 25.55, 8.46, 6.14, 5.77, 13.99];

pub const WALK_MPS: (f64, f64) = (0.8, 2.0);
pub const RUN_MPS: (f64, f64) = (2.5, 5.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BodyModel {
    /// Rigid cluster of point scatterers spread over `extent_m` in range.
    Cluster,
    /// Torso plus limbs. Limbs ahead of the torso along the direction of
    /// travel move faster than it and trailing limbs slower, so the
    /// range-velocity footprint always tilts the same way.
    Person,
    /// A person carrying a dominant corner reflector.
    PersonWithReflector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityModel {
    /// No target at all.
    Absent,
    Static,
    /// Walking or running, toward or away, with equal probability.
    Pedestrian,
    /// Static, or pushed at walking pace with the given probability.
    StaticOrPushed { moving_probability: f64 },
    /// Near target receding while a far target approaches.
    OpposingPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub class_id: usize,
    pub name: String,
    pub body: BodyModel,
    pub velocity: VelocityModel,
    /// Inclusive scatterer count range per target (torso included).
    pub scatterers: (usize, usize),
    /// Nominal ranges; one is drawn per scene. The opposing pair uses the
    /// first for the near target and the last for the far one.
    pub placements_m: Vec<f64>,
    pub placement_jitter_m: f64,
    pub extent_m: f64,
    /// Reflectivity offset added to the manifest SNR. The noise floor is
    /// fixed relative to a unit scatterer, so the scene SNR also grows with
    /// the total scatterer power.
    pub snr_offset_db: (f64, f64),
}

impl ClassSpec {
    #[allow(clippy::too_many_arguments)]
    fn new(
        class_id: usize,
        name: &str,
        body: BodyModel,
        velocity: VelocityModel,
        scatterers: (usize, usize),
        placements_m: &[f64],
        extent_m: f64,
        snr_offset_db: (f64, f64),
    ) -> Self {
        Self {
            class_id,
            name: name.to_string(),
            body,
            velocity,
            scatterers,
            placements_m: placements_m.to_vec(),
            placement_jitter_m: if placements_m.len() > 1 { 1.0 } else { 0.5 },
            extent_m,
            snr_offset_db,
        }
    }

    /// Draws one scene. Fully determined by `(self, base_snr_db, seed)`.
    pub fn scene(&self, base_snr_db: f64, seed: u64) -> Scene {
        let mut rng = rng_for(seed, 0, 0);
        let offset = uniform(&mut rng, self.snr_offset_db);
        let mut scatterers = Vec::new();
        match self.velocity {
            VelocityModel::Absent => {}
            VelocityModel::OpposingPair => {
                let near = self.placements_m[0] + self.jitter(&mut rng);
                let far = self.placements_m[self.placements_m.len() - 1] + self.jitter(&mut rng);
                let v_near = pedestrian_speed(&mut rng);
                let v_far = -pedestrian_speed(&mut rng);
                self.place(&mut rng, near, v_near, &mut scatterers);
                self.place(&mut rng, far, v_far, &mut scatterers);
            }
            model => {
                let range = self.placements_m[rng.random_range(0..self.placements_m.len())] + self.jitter(&mut rng);
                let velocity = match model {
                    VelocityModel::Static => 0.0,
                    VelocityModel::Pedestrian => {
                        let speed = pedestrian_speed(&mut rng);
                        signed(&mut rng, speed)
                    }
                    VelocityModel::StaticOrPushed { moving_probability } => {
                        if rng.random_bool(moving_probability) {
                            let speed = uniform(&mut rng, WALK_MPS);
                            signed(&mut rng, speed)
                        } else {
                            0.0
                        }
                    }
                    _ => unreachable!(),
                };
                self.place(&mut rng, range, velocity, &mut scatterers);
            }
        }
        let snr_db = base_snr_db + offset + scatterer_power_db(&scatterers);
        Scene {
            class_id: self.class_id,
            scatterers,
            snr_db,
            seed: split_seed(seed, 1, 0),
        }
    }

    fn jitter(&self, rng: &mut ChaCha8Rng) -> f64 {
        uniform(rng, (-self.placement_jitter_m, self.placement_jitter_m))
    }

    fn place(&self, rng: &mut ChaCha8Rng, range: f64, velocity: f64, out: &mut Vec<Scatterer>) {
        let count = rng.random_range(self.scatterers.0..=self.scatterers.1);
        let half = self.extent_m / 2.0;
        let phase = |rng: &mut ChaCha8Rng| uniform(rng, (-std::f64::consts::PI, std::f64::consts::PI));
        match self.body {
            BodyModel::Cluster => {
                let jitter = Normal::new(0.0, 0.01).unwrap();
                for _ in 0..count {
                    let r = range + uniform(rng, (-half, half));
                    let v = if velocity == 0.0 { 0.0 } else { velocity + jitter.sample(rng) };
                    let a = uniform(rng, (0.5, 1.0));
                    out.push(Scatterer::new(r.max(0.0), v, a, phase(rng)));
                }
            }
            BodyModel::Person | BodyModel::PersonWithReflector => {
                let dir = velocity.signum();
                let jitter = Normal::new(0.0, 0.05).unwrap();
                out.push(Scatterer::new(range, velocity, 1.0, phase(rng)));
                for _ in 1..count {
                    // Signed position along the direction of travel.
                    let s = uniform(rng, (-half, half));
                    let gain = uniform(rng, (1.0, 1.5));
                    let r = range + dir * s;
                    let v = velocity + dir * gain * velocity.abs() * s / half + jitter.sample(rng);
                    let a = uniform(rng, (0.5, 0.9));
                    out.push(Scatterer::new(r.max(0.0), v, a, phase(rng)));
                }
                if self.body == BodyModel::PersonWithReflector {
                    let a = uniform(rng, (4.0, 6.0));
                    out.push(Scatterer::new(range, velocity, a, phase(rng)));
                }
            }
        }
    }
}

/// Total power of the scatterer amplitudes in dB; 0 for an empty scene.
fn scatterer_power_db(scatterers: &[Scatterer]) -> f64 {
    let p: f64 = scatterers.iter().map(|s| s.amplitude * s.amplitude).sum();
    if p > 0.0 { 10.0 * p.log10() } else { 0.0 }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn signed(rng: &mut ChaCha8Rng, v: f64) -> f64 {
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Walking and running episodes are equally likely.
fn pedestrian_speed(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        uniform(rng, WALK_MPS)
    } else {
        uniform(rng, RUN_MPS)
    }
}

/// The eight-class library: person, cabinet, forklift, person with
/// reflector, no target, chair, whiteboard, two people.
pub fn default_classes() -> Vec<ClassSpec> {
    use BodyModel::*;
    use VelocityModel::*;
    vec![
        ClassSpec::new(0, "person", Person, Pedestrian, (4, 6), &[11.0, 18.0], 2.0, (0.0, 0.0)),
        ClassSpec::new(
            1,
            "cabinet",
            Cluster,
            StaticOrPushed { moving_probability: 0.3 },
            (6, 10),
            &[15.0],
            1.5,
            (-3.0, -1.0),
        ),
        ClassSpec::new(2, "forklift", Cluster, Static, (6, 10), &[11.0], 3.0, (-9.0, -7.0)),
        ClassSpec::new(3, "reflector", PersonWithReflector, Pedestrian, (4, 6), &[11.0, 18.0], 2.0, (0.0, 0.0)),
        ClassSpec::new(4, "no target", Cluster, Absent, (0, 0), &[], 0.0, (0.0, 0.0)),
        ClassSpec::new(5, "chair", Cluster, Static, (3, 5), &[15.0], 0.5, (-21.0, -19.0)),
        ClassSpec::new(6, "whiteboard", Cluster, Static, (3, 4), &[15.0], 0.3, (-15.0, -13.0)),
        ClassSpec::new(7, "two people", Person, OpposingPair, (4, 6), &[11.0, 18.0], 2.0, (0.0, 0.0)),
    ]
}

/// Splits `total` into integer parts proportional to `weights`: floors
/// first, then the largest fractional remainders (lowest index on ties)
/// receive one extra unit each.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Class specs paired with sample counts.
    pub classes: Vec<(ClassSpec, usize)>,
    pub radio: RadioConfig,
    pub padding_factor: u32,
    pub snr_db: f64,
    pub split_fraction: f64,
    pub seed: u64,
    pub feature_mode: FeatureMode,
}

pub const DEFAULT_TOTAL: usize = 1600;
pub const DEFAULT_SNR_DB: f64 = 15.0;

const MANIFEST_KEYS: &[&str] = &[
    "preset",
    "subcarriers",
    "symbols",
    "tdd_period",
    "tdd_dl",
    "total",
    "counts",
    "padding_factor",
    "snr_db",
    "split_fraction",
    "seed",
    "feature_mode",
];

impl Default for DatasetManifest {
    fn default() -> Self {
        Self::with_total(DEFAULT_TOTAL)
    }
}

impl DatasetManifest {
    /// Desk-scale manifest with campaign class proportions.
    pub fn with_total(total: usize) -> Self {
        let counts = largest_remainder(total, &CLASS_RATIOS_PERCENT);
        Self::with_counts(&counts)
    }

    /// Desk-scale manifest with explicit per-class counts; zero-count classes are left out.
    pub fn with_counts(counts: &[usize]) -> Self {
        let classes = default_classes()
            .into_iter()
            .zip(counts.iter().copied())
            .filter(|(_, c)| *c > 0)
            .collect();
        Self {
            classes,
            radio: RadioConfig::desk(),
            padding_factor: 0,
            snr_db: DEFAULT_SNR_DB,
            split_fraction: 0.8,
            seed: 1,
            feature_mode: FeatureMode::Db,
        }
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(|(_, c)| c).sum()
    }

    pub fn feature_dims(&self) -> (usize, usize) {
        padded_dims(self.radio.subcarriers, self.radio.symbols, self.padding_factor)
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        if self.total() == 0 {
            return Err(Error::Config("dataset manifest has no samples".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction {} outside (0, 1)",
                self.split_fraction
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db is NaN".into()));
        }
        let mut seen = [false; NUM_CLASSES];
        for (spec, _) in &self.classes {
            if spec.class_id >= NUM_CLASSES || std::mem::replace(&mut seen[spec.class_id], true) {
                return Err(Error::Config(format!("invalid or repeated class {}", spec.class_id)));
            }
        }
        let (rows, cols) = self.feature_dims();
        crate::waveform::check_matrix_budget("feature map", rows, cols)
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.expect_keys(MANIFEST_KEYS)?;
        let mut m = match kv.get_raw("counts") {
            Some((v, line)) => {
                let counts: Vec<usize> = kv.parse_list(v, line)?;
                if counts.len() != NUM_CLASSES {
                    return Err(Error::Config(format!(
                        "counts needs {} entries, got {}",
                        NUM_CLASSES,
                        counts.len()
                    )));
                }
                Self::with_counts(&counts)
            }
            None => Self::with_total(kv.get("total")?.unwrap_or(DEFAULT_TOTAL)),
        };
        match kv.get::<String>("preset")?.as_deref() {
            None | Some("desk") => {}
            Some("full-scale") => m.radio = RadioConfig::full_scale(),
            Some(other) => return Err(Error::Config(format!("unknown preset `{}`", other))),
        }
        let n = kv.get("subcarriers")?.unwrap_or(m.radio.subcarriers);
        let s = kv.get("symbols")?.unwrap_or(m.radio.symbols);
        m.radio = m.radio.with_dims(n, s);
        m.radio.tdd = TddPattern {
            period_symbols: kv.get("tdd_period")?.unwrap_or(m.radio.tdd.period_symbols),
            dl_symbols: kv.get("tdd_dl")?.unwrap_or(m.radio.tdd.dl_symbols),
        };
        m.padding_factor = kv.get("padding_factor")?.unwrap_or(m.padding_factor);
        m.snr_db = kv.get("snr_db")?.unwrap_or(m.snr_db);
        m.split_fraction = kv.get("split_fraction")?.unwrap_or(m.split_fraction);
        m.seed = kv.get("seed")?.unwrap_or(m.seed);
        m.feature_mode = match kv.get::<String>("feature_mode")?.as_deref() {
            None | Some("db") => FeatureMode::Db,
            Some("raw") => FeatureMode::Raw,
            Some(other) => return Err(Error::Config(format!("unknown feature_mode `{}`", other))),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvFile::load(path)?)
    }

    /// Serializes to the same `key = value` form `from_kv` reads.
    pub fn to_kv_string(&self) -> String {
        let mut counts = [0usize; NUM_CLASSES];
        for (spec, c) in &self.classes {
            counts[spec.class_id] = *c;
        }
        let preset = if self.radio.carrier_hz == RadioConfig::full_scale().carrier_hz
            && self.radio.subcarrier_spacing_hz == RadioConfig::full_scale().subcarrier_spacing_hz
        {
            "full-scale"
        } else {
            "desk"
        };
        format_entries(&[
            ("preset", preset.to_string()),
            ("subcarriers", self.radio.subcarriers.to_string()),
            ("symbols", self.radio.symbols.to_string()),
            ("tdd_period", self.radio.tdd.period_symbols.to_string()),
            ("tdd_dl", self.radio.tdd.dl_symbols.to_string()),
            ("counts", counts.map(|c| c.to_string()).join(", ")),
            ("padding_factor", self.padding_factor.to_string()),
            ("snr_db", self.snr_db.to_string()),
            ("split_fraction", self.split_fraction.to_string()),
            ("seed", self.seed.to_string()),
            ("feature_mode", self.feature_mode.name().to_string()),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: FeatureTensor,
    pub label: u16,
    /// Seed of the generating scene.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub radio: RadioConfig,
    pub padding_factor: u32,
    pub rows: usize,
    pub cols: usize,
    pub feature_mode: FeatureMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn empty(header: DatasetHeader) -> Self {
        Self {
            header,
            samples: Vec::new(),
        }
    }

    pub fn labels(&self) -> Vec<u16> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for s in &self.samples {
            c[s.label as usize] += 1;
        }
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            header: self.header,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Renders one sample's scene through the whole front end.
pub fn render_sample(spec: &ClassSpec, manifest: &DatasetManifest, scene_seed: u64) -> Result<LabeledSample> {
    let scene = spec.scene(manifest.snr_db, scene_seed);
    let h = simulate(&scene, &manifest.radio)?;
    let p = compute_periodogram(&h, manifest.padding_factor)?;
    let mut features = extract_features(&p, manifest.feature_mode);
    features.label = Some(spec.class_id as u16);
    Ok(LabeledSample {
        features,
        label: spec.class_id as u16,
        seed: scene_seed,
    })
}

/// Class-major sample order; sample `i` of class `t` uses scene seed
/// `split_seed(seed, t, i)`.
pub fn generate_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    manifest.validate()?;
    let jobs: Vec<(&ClassSpec, u64)> = manifest
        .classes
        .iter()
        .flat_map(|(spec, count)| {
            (0..*count as u64).map(move |i| (spec, split_seed(manifest.seed, spec.class_id as u64, i)))
        })
        .collect();
    let samples = jobs
        .par_iter()
        .map(|(spec, seed)| render_sample(spec, manifest, *seed))
        .collect::<Result<Vec<_>>>()?;
    let (rows, cols) = manifest.feature_dims();
    Ok(Dataset {
        header: DatasetHeader {
            radio: manifest.radio,
            padding_factor: manifest.padding_factor,
            rows,
            cols,
            feature_mode: manifest.feature_mode,
        },
        samples,
    })
}

/// Per-class shuffled split; each class contributes
/// `round(fraction * count)` samples to train. Returns index lists.
pub fn stratified_split_indices(labels: &[u16], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!("fraction {} outside (0, 1)", fraction)));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l as usize)
            .ok_or_else(|| Error::Split(format!("label {} out of range", l)))?
            .push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Split(format!("class {} has fewer than 2 samples", class)));
        }
        idx.shuffle(&mut rng_for(seed, class as u64, 0));
        let n_train = (fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    Ok((train, test))
}

pub fn stratified_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = stratified_split_indices(&data.labels(), fraction, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}

/// Inverse-frequency weights `w_t = S / (T * S_t)` from per-class counts.
pub fn class_weights_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    if let Some(t) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(t));
    }
    let total: usize = counts.iter().sum();
    let classes = counts.len() as f64;
    Ok(counts.iter().map(|&c| total as f64 / (classes * c as f64)).collect())
}

pub fn class_weights(train: &Dataset) -> Result<Vec<f64>> {
    class_weights_from_counts(&train.class_counts())
}

const MAGIC: &[u8; 4] = b"IATR";
pub const FORMAT_VERSION: u32 = 1;

fn encode_header(h: &DatasetHeader) -> Vec<u8> {
    let mut b = Vec::with_capacity(80);
    for v in [h.radio.carrier_hz, h.radio.subcarrier_spacing_hz] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for v in [h.radio.subcarriers, h.radio.symbols] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [h.radio.symbol_time_s, h.radio.cyclic_prefix_s, h.radio.total_symbol_time_s] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for v in [
        h.radio.tdd.period_symbols,
        h.radio.tdd.dl_symbols,
        h.padding_factor as usize,
        h.rows,
        h.cols,
    ] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    b.push(h.feature_mode.code());
    b
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_header(bytes: &[u8]) -> Result<DatasetHeader> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let carrier_hz = c.f64()?;
    let subcarrier_spacing_hz = c.f64()?;
    let subcarriers = c.u32()? as usize;
    let symbols = c.u32()? as usize;
    let symbol_time_s = c.f64()?;
    let cyclic_prefix_s = c.f64()?;
    let total_symbol_time_s = c.f64()?;
    let tdd = TddPattern {
        period_symbols: c.u32()? as usize,
        dl_symbols: c.u32()? as usize,
    };
    let padding_factor = c.u32()?;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let code = c.u8()?;
    let feature_mode = FeatureMode::from_code(code).ok_or_else(|| Error::Format(format!("unknown feature mode {}", code)))?;
    if c.pos != bytes.len() {
        return Err(Error::Format("dataset header has trailing bytes".into()));
    }
    Ok(DatasetHeader {
        radio: RadioConfig {
            carrier_hz,
            subcarrier_spacing_hz,
            subcarriers,
            symbols,
            symbol_time_s,
            cyclic_prefix_s,
            total_symbol_time_s,
            tdd,
        },
        padding_factor,
        rows,
        cols,
        feature_mode,
    })
}

/// Layout (little-endian):
/// `"IATR" | u32 version | u32 header_len | header | u32 header_crc | u64 count`
/// then per sample
/// `u16 label | u64 seed | f64 norm_mean | f64 norm_std | f32 x (2*rows*cols) | u32 crc`.
pub fn write_dataset(data: &Dataset, mut w: impl Write) -> Result<()> {
    let plane = 2 * data.header.rows * data.header.cols;
    let header = encode_header(&data.header);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&crc32fast::hash(&header).to_le_bytes())?;
    w.write_all(&(data.samples.len() as u64).to_le_bytes())?;
    let mut rec = Vec::with_capacity(26 + 4 * plane);
    for s in &data.samples {
        let f = &s.features;
        if f.data.len() != plane || f.rows != data.header.rows || f.cols != data.header.cols {
            return Err(Error::Dimension(format!(
                "sample is {}x{} ({} values), header says {}x{}",
                f.rows,
                f.cols,
                f.data.len(),
                data.header.rows,
                data.header.cols
            )));
        }
        rec.clear();
        rec.extend_from_slice(&s.label.to_le_bytes());
        rec.extend_from_slice(&s.seed.to_le_bytes());
        rec.extend_from_slice(&f.norm_mean.to_le_bytes());
        rec.extend_from_slice(&f.norm_std.to_le_bytes());
        for v in &f.data {
            rec.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&rec)?;
        w.write_all(&crc32fast::hash(&rec).to_le_bytes())?;
    }
    Ok(())
}

/// Parses only the fixed header; returns it with the declared sample count.
pub fn read_dataset_header(bytes: &[u8]) -> Result<(DatasetHeader, u64, usize)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", version)));
    }
    let len = c.u32()? as usize;
    let header_bytes = c.take(len)?;
    let stored = c.u32()?;
    let computed = crc32fast::hash(header_bytes);
    if stored != computed {
        return Err(Error::Checksum {
            section: "dataset header".into(),
            stored,
            computed,
        });
    }
    let header = decode_header(header_bytes)?;
    let count = c.u64()?;
    Ok((header, count, c.pos))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let (header, count, start) = read_dataset_header(bytes)?;
    let plane = 2usize
        .checked_mul(header.rows)
        .and_then(|v| v.checked_mul(header.cols))
        .ok_or_else(|| Error::Format("feature dimensions overflow".into()))?;
    let rec_len = 26 + 4 * plane;
    let mut c = Cursor { buf: bytes, pos: start };
    let remaining = bytes.len() - start;
    if (count as u128) * (rec_len as u128 + 4) != remaining as u128 {
        return Err(Error::Format(format!(
            "{} samples need {} bytes, file has {}",
            count,
            count as u128 * (rec_len as u128 + 4),
            remaining
        )));
    }
    let mut samples = Vec::with_capacity(count as usize);
    for i in 0..count {
        let rec = c.take(rec_len)?;
        let stored = c.u32()?;
        let computed = crc32fast::hash(rec);
        if stored != computed {
            return Err(Error::Checksum {
                section: format!("sample {}", i),
                stored,
                computed,
            });
        }
        let mut r = Cursor { buf: rec, pos: 0 };
        let label = r.u16()?;
        if label as usize >= NUM_CLASSES {
            return Err(Error::Format(format!("sample {} has label {}", i, label)));
        }
        let seed = r.u64()?;
        let norm_mean = r.f64()?;
        let norm_std = r.f64()?;
        let data = r
            .take(4 * plane)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        samples.push(LabeledSample {
            features: FeatureTensor {
                rows: header.rows,
                cols: header.cols,
                data,
                label: Some(label),
                mode: header.feature_mode,
                norm_mean,
                norm_std,
            },
            label,
            seed,
        });
    }
    Ok(Dataset { header, samples })
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(data, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remainder_rounding_sums_to_total() {
        for total in [1, 7, 100, 999, 1600, 13092] {
            let c = largest_remainder(total, &CLASS_RATIOS_PERCENT);
            assert_eq!(c.iter().sum::<usize>(), total);
        }
        assert_eq!(largest_remainder(3, &[1.0, 1.0, 1.0]), vec![1, 1, 1]);
        assert_eq!(largest_remainder(2, &[1.0, 1.0, 1.0]), vec![1, 1, 0]);
    }

    #[test]
    fn scene_generation_is_deterministic_and_labelled() {
        for spec in default_classes() {
            let a = spec.scene(15.0, 42);
            assert_eq!(a, spec.scene(15.0, 42));
            assert_eq!(a.class_id, spec.class_id);
            a.validate().unwrap();
        }
        assert!(default_classes()[4].scene(15.0, 1).scatterers.is_empty());
    }

    #[test]
    fn person_footprint_tilts_positively() {
        let spec = &default_classes()[0];
        for seed in 0..50 {
            let s = spec.scene(15.0, seed);
            let torso = s.scatterers[0];
            for limb in &s.scatterers[1..] {
                let dr = limb.range_m - torso.range_m;
                let dv = limb.velocity_mps - torso.velocity_mps;
                // Limb velocity jitter is small next to the tilt except close to the torso.
                if dr.abs() > 0.3 {
                    assert!(dr * dv > 0.0, "seed {} dr {} dv {}", seed, dr, dv);
                }
            }
        }
    }

    #[test]
    fn opposing_pair_directions() {
        let spec = &default_classes()[7];
        for seed in 0..20 {
            let s = spec.scene(15.0, seed);
            // Trailing limbs may swing backwards, so compare the mean velocity per body.
            let mean_v = |near: bool| {
                let v: Vec<f64> = s
                    .scatterers
                    .iter()
                    .filter(|x| (x.range_m < 14.5) == near)
                    .map(|x| x.velocity_mps)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            assert!(mean_v(true) > 0.0 && mean_v(false) < 0.0, "seed {}", seed);
        }
    }

    #[test]
    fn manifest_kv_round_trip() {
        let mut m = DatasetManifest::with_total(500);
        m.padding_factor = 1;
        m.seed = 77;
        m.snr_db = 12.5;
        let kv = KvFile::parse(&m.to_kv_string(), "mem").unwrap();
        assert_eq!(DatasetManifest::from_kv(&kv).unwrap(), m);
        let bad = KvFile::parse("split_fraction = 1.0\n", "mem").unwrap();
        assert!(DatasetManifest::from_kv(&bad).is_err());
        let unknown = KvFile::parse("colour = red\n", "mem").unwrap();
        assert!(DatasetManifest::from_kv(&unknown).is_err());
    }

    #[test]
    fn split_of_ten() {
        let labels = vec![3u16; 10];
        let (tr, te) = stratified_split_indices(&labels, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert!(stratified_split_indices(&[0, 0, 1], 0.5, 1).is_err());
        assert!(stratified_split_indices(&labels, 0.0, 1).is_err());
    }

    #[test]
    fn weights_missing_class() {
        assert!(matches!(class_weights_from_counts(&[3, 0, 2]), Err(Error::MissingClass(1))));
        assert_eq!(class_weights_from_counts(&[5, 5, 5, 5]).unwrap(), vec![1.0; 4]);
    }
}
