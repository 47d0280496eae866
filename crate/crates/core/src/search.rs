//! Random architecture search over detector hyperparameters.
//!
//! Every trial draws its configuration and training seed from the master
//! seed by counter-mode splitting, so trials run concurrently and the ledger
//! does not depend on completion order.

use std::cmp::Ordering;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use tensornet::Sequential;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kv::{format_entries, KvFile};
use crate::model::{build_detector, train, DetectorConfig, TrainConfig, INPUT_CHANNELS};
use crate::seed::{rng_for, split_seed};
use crate::waveform::NUM_CLASSES;

pub const FULL_TRIALS: usize = 80;
pub const DESK_TRIALS: usize = 16;
pub const DESK_EPOCHS: usize = 15;
/// Per-sample forward multiply-accumulates above which a desk-scale trial
/// is rejected as infeasible.
pub const DESK_MAC_BUDGET: u64 = 32_000_000;

const CONFIG_STREAM: u64 = 5;
const TRIAL_SEED_STREAM: u64 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub blocks: Vec<usize>,
    pub kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub out_channels: Vec<usize>,
    pub pool_kernels: Vec<usize>,
    pub pool_strides: Vec<usize>,
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            blocks: vec![2, 3, 4],
            kernels: vec![7, 5, 3],
            conv_strides: vec![2, 1],
            out_channels: vec![16, 8, 4],
            pool_kernels: vec![2, 1],
            pool_strides: vec![2, 1],
            hidden: vec![16, 32, 64],
            dropout: vec![0.8, 0.5],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("blocks", self.blocks.len()),
            ("kernels", self.kernels.len()),
            ("conv_strides", self.conv_strides.len()),
            ("out_channels", self.out_channels.len()),
            ("pool_kernels", self.pool_kernels.len()),
            ("pool_strides", self.pool_strides.len()),
            ("hidden", self.hidden.len()),
            ("dropout", self.dropout.len()),
        ];
        match lists.iter().find(|(_, n)| *n == 0) {
            Some((name, _)) => Err(Error::Config(format!("search space list `{}` is empty", name))),
            None => Ok(()),
        }
    }

    /// Reads comma-separated lists; absent keys keep the default sets.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.expect_keys(SPACE_KEYS)?;
        let mut space = Self::default();
        let fields: [(&str, &mut Vec<usize>); 7] = [
            ("blocks", &mut space.blocks),
            ("kernels", &mut space.kernels),
            ("conv_strides", &mut space.conv_strides),
            ("out_channels", &mut space.out_channels),
            ("pool_kernels", &mut space.pool_kernels),
            ("pool_strides", &mut space.pool_strides),
            ("hidden", &mut space.hidden),
        ];
        for (key, field) in fields {
            if let Some((v, line)) = kv.get_raw(key) {
                *field = kv.parse_list(v, line)?;
            }
        }
        if let Some((v, line)) = kv.get_raw("dropout") {
            space.dropout = kv.parse_list(v, line)?;
        }
        space.validate()?;
        Ok(space)
    }

    pub fn to_kv_string(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        format_entries(&[
            ("blocks", list(&self.blocks)),
            ("kernels", list(&self.kernels)),
            ("conv_strides", list(&self.conv_strides)),
            ("out_channels", list(&self.out_channels)),
            ("pool_kernels", list(&self.pool_kernels)),
            ("pool_strides", list(&self.pool_strides)),
            ("hidden", list(&self.hidden)),
            ("dropout", self.dropout.iter().map(|d| format!("{:?}", d)).collect::<Vec<_>>().join(", ")),
        ])
    }
}

const SPACE_KEYS: &[&str] = &[
    "blocks",
    "kernels",
    "conv_strides",
    "out_channels",
    "pool_kernels",
    "pool_strides",
    "hidden",
    "dropout",
];

/// One independent uniform draw per field; the first kernel follows the
/// padding factor.
pub fn sample_config(space: &SearchSpace, padding_factor: u32, rng: &mut impl Rng) -> Result<DetectorConfig> {
    space.validate()?;
    let pick = |v: &[usize], rng: &mut dyn rand::RngCore| *v.choose(rng).expect("validated non-empty");
    let cfg = DetectorConfig {
        blocks: pick(&space.blocks, rng),
        kernel: pick(&space.kernels, rng),
        first_kernel: DetectorConfig::first_kernel_for(padding_factor)?,
        conv_stride: pick(&space.conv_strides, rng),
        out_channels: pick(&space.out_channels, rng),
        pool_kernel: pick(&space.pool_kernels, rng),
        pool_stride: pick(&space.pool_strides, rng),
        hidden: pick(&space.hidden, rng),
        dropout: *space.dropout.choose(rng).expect("validated non-empty"),
        padding_factor,
        classes: NUM_CLASSES,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Ok,
    Infeasible,
    Diverged,
}

impl TrialStatus {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Infeasible => "infeasible",
            Self::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: DetectorConfig,
    pub seed: u64,
    pub status: TrialStatus,
    /// Final-epoch test loss; NaN unless the trial trained.
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub params: usize,
    pub macs: u64,
    /// Kept out of the ledger so that it stays reproducible.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub trials: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mac_budget: Option<u64>,
    /// Configurations tried first, ahead of the random draws. They count
    /// towards `trials`.
    pub injected: Vec<DetectorConfig>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            trials: DESK_TRIALS,
            epochs: DESK_EPOCHS,
            seed: 1,
            mac_budget: Some(DESK_MAC_BUDGET),
            injected: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// In trial order.
    pub trials: Vec<TrialRecord>,
    /// Indices of ok trials, best first.
    pub ranking: Vec<usize>,
    pub best_model: Sequential<f32>,
}

impl SearchOutcome {
    pub fn best(&self) -> &TrialRecord {
        &self.trials[self.ranking[0]]
    }
}

/// Orders ok trials by test loss, then parameter count, then seed.
pub fn rank_trials(trials: &[TrialRecord]) -> Vec<usize> {
    let mut ok: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].status == TrialStatus::Ok).collect();
    ok.sort_by(|&a, &b| {
        let (x, y) = (&trials[a], &trials[b]);
        x.test_loss
            .total_cmp(&y.test_loss)
            .then(x.params.cmp(&y.params))
            .then(x.seed.cmp(&y.seed))
            .then(a.cmp(&b))
    });
    ok
}

/// Trains every trial configuration and ranks the results. The datasets
/// must already be at the padding factor being searched.
pub fn run_search(
    space: &SearchSpace,
    train_set: &Dataset,
    test_set: &Dataset,
    weights: &[f64],
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    if opts.trials == 0 {
        return Err(Error::Config("search needs at least one trial".into()));
    }
    if opts.injected.len() > opts.trials {
        return Err(Error::Config(format!(
            "{} injected configurations exceed the {} trial budget",
            opts.injected.len(),
            opts.trials
        )));
    }
    let f = train_set.header.padding_factor;
    let (rows, cols) = (train_set.header.rows, train_set.header.cols);
    let configs = (0..opts.trials)
        .map(|i| match opts.injected.get(i) {
            Some(c) => Ok(*c),
            None => sample_config(space, f, &mut rng_for(opts.seed, CONFIG_STREAM, i as u64)),
        })
        .collect::<Result<Vec<_>>>()?;

    let results: Vec<(TrialRecord, Option<Sequential<f32>>)> = configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| run_trial(i, cfg, rows, cols, train_set, test_set, weights, opts))
        .collect::<Result<_>>()?;

    let trials: Vec<TrialRecord> = results.iter().map(|(r, _)| r.clone()).collect();
    let ranking = rank_trials(&trials);
    let Some(&best) = ranking.first() else {
        return Err(Error::SearchFailed(format!(
            "none of {} trials trained successfully",
            trials.len()
        )));
    };
    let best_model = results.into_iter().nth(best).and_then(|(_, m)| m).expect("ok trials keep their model");
    Ok(SearchOutcome {
        trials,
        ranking,
        best_model,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    trial: usize,
    cfg: &DetectorConfig,
    rows: usize,
    cols: usize,
    train_set: &Dataset,
    test_set: &Dataset,
    weights: &[f64],
    opts: &SearchOptions,
) -> Result<(TrialRecord, Option<Sequential<f32>>)> {
    let start = Instant::now();
    let seed = split_seed(opts.seed, TRIAL_SEED_STREAM, trial as u64);
    let mut record = TrialRecord {
        trial,
        config: *cfg,
        seed,
        status: TrialStatus::Infeasible,
        test_loss: f64::NAN,
        test_accuracy: f64::NAN,
        params: 0,
        macs: 0,
        wall_time_s: 0.0,
    };
    let mut model = match build_detector(cfg, rows, cols, seed) {
        Ok(m) => m,
        Err(Error::Infeasible(_)) => return Ok((record, None)),
        Err(e) => return Err(e),
    };
    record.params = model.count_params();
    record.macs = model.forward_macs(&[1, INPUT_CHANNELS, rows, cols]);
    if opts.mac_budget.is_some_and(|b| record.macs > b) {
        return Ok((record, None));
    }
    let tc = TrainConfig {
        epochs: opts.epochs,
        seed,
        ..TrainConfig::default()
    };
    let outcome = match train(&mut model, train_set, test_set, &tc, weights) {
        Ok(history) => {
            let last = history.last().ok_or_else(|| Error::Config("search needs at least one epoch".into()))?;
            record.status = TrialStatus::Ok;
            record.test_loss = last.test_loss;
            record.test_accuracy = last.test_accuracy;
            Some(model)
        }
        Err(Error::Diverged { .. }) => {
            record.status = TrialStatus::Diverged;
            None
        }
        Err(e) => return Err(e),
    };
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok((record, outcome))
}

/// One row per trial with every hyperparameter and outcome. Contains no
/// timing, so equal inputs give byte-identical ledgers.
pub fn ledger_csv(trials: &[TrialRecord]) -> String {
    let ranking = rank_trials(trials);
    let mut rank = vec![None; trials.len()];
    for (r, &i) in ranking.iter().enumerate() {
        rank[i] = Some(r + 1);
    }
    let mut s = String::from(
        "trial,seed,blocks,kernel,first_kernel,conv_stride,out_channels,pool_kernel,pool_stride,hidden,dropout,\
         padding_factor,status,test_loss,test_accuracy,params,macs,rank\n",
    );
    for (t, r) in trials.iter().zip(&rank) {
        let c = &t.config;
        let num = |v: f64, digits: usize| {
            if v.is_nan() {
                String::new()
            } else {
                format!("{:.*}", digits, v)
            }
        };
        s += &format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            t.trial,
            t.seed,
            c.blocks,
            c.kernel,
            c.first_kernel,
            c.conv_stride,
            c.out_channels,
            c.pool_kernel,
            c.pool_stride,
            c.hidden,
            c.dropout,
            c.padding_factor,
            t.status.name(),
            num(t.test_loss, 9),
            num(t.test_accuracy, 6),
            t.params,
            t.macs,
            r.map_or(String::new(), |r| r.to_string()),
        );
    }
    s
}

/// Wall time per trial, kept apart from the reproducible ledger.
pub fn timing_csv(trials: &[TrialRecord]) -> String {
    let mut s = String::from("trial,wall_time_s\n");
    for t in trials {
        s += &format!("{},{:.3}\n", t.trial, t.wall_time_s);
    }
    s
}

/// Median of the ok-trial losses.
pub fn median_loss(trials: &[TrialRecord]) -> Option<f64> {
    let mut losses: Vec<f64> = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .map(|t| t.test_loss)
        .collect();
    if losses.is_empty() {
        return None;
    }
    losses.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = losses.len();
    Some(if n % 2 == 1 {
        losses[n / 2]
    } else {
        0.5 * (losses[n / 2 - 1] + losses[n / 2])
    })
}
