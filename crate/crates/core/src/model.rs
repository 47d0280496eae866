//! The convolutional detector: architecture records, training, evaluation
//! and the Doppler-flip study.

use std::path::Path;

use rand::seq::SliceRandom;
use tensornet::layers::sweep_len;
use tensornet::{weighted_cross_entropy, Checkpoint, LayerKind, Mode, Sequential, Tensor};

use crate::dataset::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::kv::{format_entries, KvFile};
use crate::periodogram::{hflip, FeatureMode};
use crate::pgm::encode_pgm;
use crate::seed::{rng_for, split_seed};
use crate::waveform::NUM_CLASSES;

/// Input channels: magnitude and phase.
pub const INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// C, number of conv blocks.
    pub blocks: usize,
    /// k_c for every block after the first.
    pub kernel: usize,
    pub first_kernel: usize,
    pub conv_stride: usize,
    /// o_c, output channels of the first block; doubled per block.
    pub out_channels: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    /// f, hidden width of the classifier head.
    pub hidden: usize,
    pub dropout: f64,
    pub padding_factor: u32,
    pub classes: usize,
}

impl DetectorConfig {
    /// First-block kernel tied to the padding factor: 3, 5, 7 for F = 0, 1, 2.
    pub fn first_kernel_for(padding_factor: u32) -> Result<usize> {
        match padding_factor {
            0..=2 => Ok(3 + 2 * padding_factor as usize),
            f => Err(Error::Config(format!("padding factor {} has no first-kernel rule", f))),
        }
    }

    /// Architectures selected by the reference search for each padding factor.
    pub fn optimized(padding_factor: u32) -> Result<Self> {
        let (blocks, out_channels) = if padding_factor == 2 { (4, 8) } else { (2, 16) };
        let cfg = Self {
            blocks,
            kernel: 3,
            first_kernel: Self::first_kernel_for(padding_factor)?,
            conv_stride: 1,
            out_channels,
            pool_kernel: 2,
            pool_stride: 2,
            hidden: 32,
            dropout: 0.5,
            padding_factor,
            classes: NUM_CLASSES,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(2..=4).contains(&self.blocks) {
            return bad(format!("block count {} outside 2..=4", self.blocks));
        }
        if self.kernel == 0 || self.first_kernel == 0 || self.conv_stride == 0 {
            return bad("conv kernel and stride must be positive".into());
        }
        if self.pool_kernel == 0 || self.pool_stride == 0 {
            return bad("pool kernel and stride must be positive".into());
        }
        if self.out_channels == 0 || self.hidden == 0 || self.classes < 2 {
            return bad("channel, hidden and class counts must be positive (classes >= 2)".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.first_kernel != Self::first_kernel_for(self.padding_factor)? {
            return bad(format!(
                "first kernel {} does not match padding factor {}",
                self.first_kernel, self.padding_factor
            ));
        }
        Ok(())
    }

    pub fn block_channels(&self, block: usize) -> usize {
        self.out_channels << block
    }

    /// Layer sequence for a `rows x cols` input, or an infeasibility error
    /// when the spatial size collapses before the last block.
    pub fn layer_kinds(&self, rows: usize, cols: usize) -> Result<Vec<LayerKind>> {
        self.validate()?;
        let (mut h, mut w) = (rows, cols);
        let mut kinds = Vec::with_capacity(4 * self.blocks + 4);
        let mut in_ch = INPUT_CHANNELS;
        for b in 0..self.blocks {
            let k = if b == 0 { self.first_kernel } else { self.kernel };
            let out_ch = self.block_channels(b);
            let step = |x: usize| {
                sweep_len(x, k / 2, k, self.conv_stride).and_then(|y| sweep_len(y, 0, self.pool_kernel, self.pool_stride))
            };
            match (step(h), step(w)) {
                (Some(nh), Some(nw)) => (h, w) = (nh, nw),
                _ => {
                    return Err(Error::Infeasible(format!(
                        "spatial size {}x{} collapses in block {} of {}",
                        h,
                        w,
                        b + 1,
                        self.blocks
                    )))
                }
            }
            kinds.push(LayerKind::Conv2d {
                in_channels: in_ch,
                out_channels: out_ch,
                kernel: k,
                stride: self.conv_stride,
            });
            kinds.push(LayerKind::BatchNorm2d { channels: out_ch });
            kinds.push(LayerKind::Relu);
            kinds.push(LayerKind::MaxPool2d {
                kernel: self.pool_kernel,
                stride: self.pool_stride,
            });
            in_ch = out_ch;
        }
        kinds.push(LayerKind::GlobalAvgPool);
        kinds.push(LayerKind::Linear {
            in_features: in_ch,
            out_features: self.hidden,
        });
        kinds.push(LayerKind::Dropout { rate: self.dropout });
        kinds.push(LayerKind::Linear {
            in_features: self.hidden,
            out_features: self.classes,
        });
        Ok(kinds)
    }

    pub fn to_entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("blocks", self.blocks.to_string()),
            ("kernel", self.kernel.to_string()),
            ("first_kernel", self.first_kernel.to_string()),
            ("conv_stride", self.conv_stride.to_string()),
            ("out_channels", self.out_channels.to_string()),
            ("pool_kernel", self.pool_kernel.to_string()),
            ("pool_stride", self.pool_stride.to_string()),
            ("hidden", self.hidden.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
            ("padding_factor", self.padding_factor.to_string()),
            ("classes", self.classes.to_string()),
        ]
    }

    pub fn to_kv_string(&self) -> String {
        format_entries(&self.to_entries())
    }

    pub const KEYS: &'static [&'static str] = &[
        "blocks",
        "kernel",
        "first_kernel",
        "conv_stride",
        "out_channels",
        "pool_kernel",
        "pool_stride",
        "hidden",
        "dropout",
        "padding_factor",
        "classes",
    ];

    /// Missing keys fall back to the optimized architecture for the file's
    /// padding factor (or `default_padding`).
    pub fn from_kv(kv: &KvFile, default_padding: u32) -> Result<Self> {
        let f = kv.get("padding_factor")?.unwrap_or(default_padding);
        let base = Self::optimized(f)?;
        let cfg = Self {
            blocks: kv.get("blocks")?.unwrap_or(base.blocks),
            kernel: kv.get("kernel")?.unwrap_or(base.kernel),
            first_kernel: kv.get("first_kernel")?.unwrap_or(base.first_kernel),
            conv_stride: kv.get("conv_stride")?.unwrap_or(base.conv_stride),
            out_channels: kv.get("out_channels")?.unwrap_or(base.out_channels),
            pool_kernel: kv.get("pool_kernel")?.unwrap_or(base.pool_kernel),
            pool_stride: kv.get("pool_stride")?.unwrap_or(base.pool_stride),
            hidden: kv.get("hidden")?.unwrap_or(base.hidden),
            dropout: kv.get("dropout")?.unwrap_or(base.dropout),
            padding_factor: f,
            classes: kv.get("classes")?.unwrap_or(base.classes),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Randomly initialized detector for `rows x cols` inputs.
pub fn build_detector(cfg: &DetectorConfig, rows: usize, cols: usize, seed: u64) -> Result<Sequential<f32>> {
    let kinds = cfg.layer_kinds(rows, cols)?;
    Ok(Sequential::from_kinds(&kinds, &mut rng_for(seed, 4, 0))?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 0.001,
            epochs: 50,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,test_loss,test_accuracy\n");
        for e in &self.epochs {
            s += &format!("{},{:.9},{:.9},{:.6}\n", e.epoch, e.train_loss, e.test_loss, e.test_accuracy);
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn batch_tensor(samples: &[&LabeledSample]) -> Result<Tensor<f32>> {
    let f = &samples[0].features;
    let shape = [INPUT_CHANNELS, f.rows, f.cols];
    let slices: Vec<&[f32]> = samples.iter().map(|s| s.features.data.as_slice()).collect();
    Ok(Tensor::stack(&shape, &slices)?)
}

fn check_weights(weights: &[f64], classes: usize) -> Result<()> {
    if weights.len() != classes || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Config(format!(
            "need {} positive class weights, got {:?}",
            classes, weights
        )));
    }
    Ok(())
}

/// Mini-batch SGD with class-weighted cross entropy.
///
/// Batches are reshuffled every epoch from `tc.seed`. A trailing batch of a
/// single sample is skipped because batch normalization needs two. After
/// each epoch the test set is scored in eval mode.
pub fn train(
    model: &mut Sequential<f32>,
    train_set: &Dataset,
    test_set: &Dataset,
    tc: &TrainConfig,
    weights: &[f64],
) -> Result<TrainHistory> {
    let classes = weights.len();
    check_weights(weights, classes)?;
    if tc.batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2".into()));
    }
    if train_set.samples.len() < 2 {
        return Err(Error::Config("training set needs at least 2 samples".into()));
    }
    let w32: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
    let lr = tc.lr as f32;
    let mut order: Vec<usize> = (0..train_set.samples.len()).collect();
    let mut history = TrainHistory::default();
    let mut step = 0u64;
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng_for(tc.seed, 2, epoch as u64));
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for chunk in order.chunks(tc.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| &train_set.samples[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label as usize).collect();
            let x = batch_tensor(&batch)?;
            let (logits, trace) = model.forward(&x, Mode::Train, split_seed(tc.seed, 3, step))?;
            let out = weighted_cross_entropy(&logits, &labels, &w32)?;
            let loss = out.loss as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let (_, grads) = model.backward(&out.grad, &trace)?;
            if !grads.is_finite() {
                return Err(Error::Diverged { epoch, loss: f64::NAN });
            }
            model.sgd_step(&grads, lr)?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            step += 1;
        }
        let train_loss = loss_sum / seen as f64;
        let (test_loss, test_accuracy) = if test_set.samples.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let r = evaluate(model, test_set, weights)?;
            (r.mean_loss, r.accuracy)
        };
        if !test_loss.is_finite() && !test_set.samples.is_empty() {
            return Err(Error::Diverged { epoch, loss: test_loss });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            test_loss,
            test_accuracy,
        });
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for classes without test samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub accuracy: f64,
    /// Class-weighted cross entropy over the whole set.
    pub mean_loss: f64,
}

impl EvalReport {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize, mean_loss: f64) -> Self {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            confusion[t][p] += 1;
        }
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(t, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[t] as f64 / n as f64)
            })
            .collect();
        let correct: usize = (0..classes).map(|t| confusion[t][t]).sum();
        Self {
            confusion,
            per_class_accuracy,
            accuracy: correct as f64 / labels.len().max(1) as f64,
            mean_loss,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let t = self.confusion.len();
        let mut s = String::from("true");
        for p in 0..t {
            s += &format!(",pred_{}", p);
        }
        s += ",count,accuracy\n";
        for (i, row) in self.confusion.iter().enumerate() {
            s += &i.to_string();
            for v in row {
                s += &format!(",{}", v);
            }
            let acc = self.per_class_accuracy[i].map_or(String::new(), |a| format!("{:.6}", a));
            s += &format!(",{},{}\n", row.iter().sum::<usize>(), acc);
        }
        s += &format!("overall_accuracy,{:.6}\nmean_loss,{:.9}\n", self.accuracy, self.mean_loss);
        s
    }

    /// Row-normalized confusion heatmap, `cell` pixels per entry.
    pub fn heatmap_pgm(&self, cell: usize) -> Vec<u8> {
        let t = self.confusion.len();
        let side = t * cell;
        let mut px = vec![0u8; side * side];
        for (i, row) in self.confusion.iter().enumerate() {
            let n = row.iter().sum::<usize>().max(1) as f64;
            for (j, &v) in row.iter().enumerate() {
                let g = (v as f64 / n * 255.0).round() as u8;
                for y in i * cell..(i + 1) * cell {
                    px[y * side + j * cell..y * side + (j + 1) * cell].fill(g);
                }
            }
        }
        encode_pgm(side, side, &px)
    }
}

const EVAL_BATCH: usize = 64;

/// Eval-mode scoring; `weights` are the class weights of the loss.
pub fn evaluate(model: &Sequential<f32>, test_set: &Dataset, weights: &[f64]) -> Result<EvalReport> {
    evaluate_with(model, test_set, weights, |s| s.features.data.clone())
}

/// Scores the test set with every feature tensor mirrored along Doppler.
pub fn evaluate_flipped(model: &Sequential<f32>, test_set: &Dataset, weights: &[f64]) -> Result<EvalReport> {
    evaluate_with(model, test_set, weights, |s| hflip(&s.features).data)
}

fn evaluate_with(
    model: &Sequential<f32>,
    test_set: &Dataset,
    weights: &[f64],
    features: impl Fn(&LabeledSample) -> Vec<f32>,
) -> Result<EvalReport> {
    if test_set.samples.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let classes = weights.len();
    check_weights(weights, classes)?;
    let (rows, cols) = (test_set.header.rows, test_set.header.cols);
    let (mut num, mut den) = (0.0f64, 0.0f64);
    let mut labels = Vec::with_capacity(test_set.samples.len());
    let mut predictions = Vec::with_capacity(test_set.samples.len());
    for chunk in test_set.samples.chunks(EVAL_BATCH) {
        let data: Vec<Vec<f32>> = chunk.iter().map(&features).collect();
        let slices: Vec<&[f32]> = data.iter().map(|d| d.as_slice()).collect();
        let x = Tensor::stack(&[INPUT_CHANNELS, rows, cols], &slices)?;
        let logits = model.predict(&x)?;
        if logits.sample_len() != classes {
            return Err(Error::Dimension(format!(
                "model emits {} logits, weights cover {} classes",
                logits.sample_len(),
                classes
            )));
        }
        for (i, s) in chunk.iter().enumerate() {
            let z: Vec<f64> = logits.sample(i).iter().map(|&v| v as f64).collect();
            let y = s.label as usize;
            if y >= classes {
                return Err(Error::Dimension(format!("label {} outside {} classes", y, classes)));
            }
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            num += weights[y] * (lse - z[y]);
            den += weights[y];
            // First maximum wins, so ties resolve to the lowest class index.
            let pred = (0..classes).fold(0, |b, c| if z[c] > z[b] { c } else { b });
            labels.push(y);
            predictions.push(pred);
        }
    }
    Ok(EvalReport::from_predictions(&labels, &predictions, classes, num / den))
}

/// Everything needed to reload and score a trained detector.
#[derive(Debug, Clone)]
pub struct DetectorCheckpoint {
    pub config: DetectorConfig,
    pub rows: usize,
    pub cols: usize,
    pub feature_mode: FeatureMode,
    pub class_weights: Vec<f64>,
    pub network: Sequential<f32>,
}

impl DetectorCheckpoint {
    fn metadata(&self) -> String {
        let mut entries = self.config.to_entries();
        entries.push(("rows", self.rows.to_string()));
        entries.push(("cols", self.cols.to_string()));
        entries.push(("feature_mode", self.feature_mode.name().to_string()));
        entries.push((
            "class_weights",
            self.class_weights.iter().map(|w| format!("{:?}", w)).collect::<Vec<_>>().join(", "),
        ));
        format_entries(&entries)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let ckpt = Checkpoint {
            metadata: self.metadata(),
            network: self.network.clone(),
        };
        Ok(ckpt.to_bytes()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt = Checkpoint::from_bytes(bytes)?;
        let kv = KvFile::parse(&ckpt.metadata, "checkpoint metadata")?;
        let mut keys: Vec<&str> = DetectorConfig::KEYS.to_vec();
        keys.extend(["rows", "cols", "feature_mode", "class_weights"]);
        kv.expect_keys(&keys)?;
        let config = DetectorConfig::from_kv(&kv, 0)?;
        let rows = kv.require("rows")?;
        let cols = kv.require("cols")?;
        let feature_mode = match kv.require::<String>("feature_mode")?.as_str() {
            "db" => FeatureMode::Db,
            "raw" => FeatureMode::Raw,
            other => return Err(Error::Format(format!("unknown feature mode `{}`", other))),
        };
        let (w, line) = kv
            .get_raw("class_weights")
            .ok_or_else(|| Error::Format("checkpoint lacks class weights".into()))?;
        let class_weights = kv.parse_list(w, line)?;
        if config.layer_kinds(rows, cols)? != ckpt.network.kinds() {
            return Err(Error::Format("checkpoint layers do not match its configuration".into()));
        }
        Ok(Self {
            config,
            rows,
            cols,
            feature_mode,
            class_weights,
            network: ckpt.network,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimized_architectures_build() {
        let f0 = DetectorConfig::optimized(0).unwrap();
        build_detector(&f0, 64, 64, 1).unwrap();
        let kinds = f0.layer_kinds(2048, 2048).unwrap();
        assert_eq!(kinds.len(), 12);
        let f2 = DetectorConfig::optimized(2).unwrap();
        assert_eq!(f2.first_kernel, 7);
        let ch: Vec<usize> = (0..f2.blocks).map(|b| f2.block_channels(b)).collect();
        assert_eq!(ch, vec![8, 16, 32, 64]);
        build_detector(&f2, 256, 256, 1).unwrap();
        assert_eq!(DetectorConfig::optimized(1).unwrap().first_kernel, 5);
    }

    #[test]
    fn collapse_is_infeasible() {
        let cfg = DetectorConfig {
            blocks: 4,
            conv_stride: 2,
            pool_stride: 2,
            ..DetectorConfig::optimized(0).unwrap()
        };
        assert!(matches!(build_detector(&cfg, 8, 8, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = DetectorConfig {
            blocks: 3,
            kernel: 5,
            dropout: 0.8,
            hidden: 64,
            ..DetectorConfig::optimized(1).unwrap()
        };
        let kv = KvFile::parse(&cfg.to_kv_string(), "mem").unwrap();
        assert_eq!(DetectorConfig::from_kv(&kv, 0).unwrap(), cfg);
        let wrong = KvFile::parse("padding_factor = 2\nfirst_kernel = 3\n", "mem").unwrap();
        assert!(DetectorConfig::from_kv(&wrong, 0).is_err());
    }

    #[test]
    fn report_from_perfect_predictions() {
        let labels = vec![0, 1, 1, 2, 2, 2];
        let r = EvalReport::from_predictions(&labels, &labels, 4, 0.0);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_class_accuracy, vec![Some(1.0), Some(1.0), Some(1.0), None]);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { labels.iter().filter(|&&l| l == i).count() } else { 0 });
            }
        }
        let heat = r.heatmap_pgm(4);
        assert!(heat.starts_with(b"P5\n16 16\n255\n"));
    }
}
