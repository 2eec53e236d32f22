//! Weighted Dice scoring and the controlled ablation grid.

mod bench;

pub use bench::{
    bmode_channel, build_benchmark, ClutterParams, nearest_power_of_two, prepare, simulate_dataset, BenchmarkSpec, Dataset,
    PreparedDataset,
};

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::net::{predict_sequence, train, w_dice_loss, LossKind, ResetPolicy, Sample, Tensor, UNet, UNetSpec};
use crate::phantom::split_train_test;

fn map_tensor(m: &FeatureMap) -> Tensor {
    Tensor::from_vec(1, m.rows(), m.cols(), m.data.data().to_vec()).expect("grid dims match")
}

/// `(2 sum pg + eps) / (sum p^2 + sum g^2 + eps)`, i.e. one minus the w-Dice
/// loss. Only pixels inside `mask` count.
pub fn weighted_dice_score(pred: &FeatureMap, label: &FeatureMap, mask: Option<&[bool]>) -> Result<f64> {
    weighted_dice_tensor(&map_tensor(pred), &map_tensor(label), mask)
}

pub fn weighted_dice_tensor(pred: &Tensor, label: &Tensor, mask: Option<&[bool]>) -> Result<f64> {
    Ok(1.0 - w_dice_loss(pred, label, mask)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Rnn,
    Cnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResetKind {
    FixedLength { k: usize },
    AlignWithScan,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSplit {
    UnseenImage,
    UnseenAnatomy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputChannels {
    BmodePlusFeature,
    BmodeOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub loss: LossKind,
    pub network: NetworkKind,
    pub reset: ResetKind,
    pub test_split: TestSplit,
    pub input_channels: InputChannels,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.network, self.reset) {
            (NetworkKind::Cnn, ResetKind::None) => Ok(()),
            (NetworkKind::Cnn, _) => Err(Error::InvalidParam(format!("{}: a CNN has no reset policy", self.experiment_id))),
            (NetworkKind::Rnn, ResetKind::None) => {
                Err(Error::InvalidParam(format!("{}: a recurrent network needs a reset policy", self.experiment_id)))
            }
            (NetworkKind::Rnn, ResetKind::FixedLength { k: 0 }) => {
                Err(Error::InvalidParam(format!("{}: fixed-length reset needs k >= 1", self.experiment_id)))
            }
            _ => Ok(()),
        }
    }

    fn reset_policy(&self) -> ResetPolicy {
        match self.reset {
            ResetKind::FixedLength { k } => ResetPolicy::FixedLength { k },
            // irrelevant without a recurrent state
            ResetKind::AlignWithScan | ResetKind::None => ResetPolicy::AlignWithScan,
        }
    }

    pub fn reset_label(&self) -> String {
        match self.reset {
            ResetKind::FixedLength { k } => format!("fixed_length({k})"),
            ResetKind::AlignWithScan => "align_with_scan".into(),
            ResetKind::None => "none".into(),
        }
    }
}

/// The six controlled experiments: loss, temporal model, reset policy, test
/// anatomy and input channels each varied against a reference arm.
pub fn standard_grid(fixed_k: usize) -> Vec<ExperimentConfig> {
    use InputChannels::*;
    use NetworkKind::*;
    use TestSplit::*;
    let exp = |id: &str, loss, network, reset, test_split, input_channels| ExperimentConfig {
        experiment_id: id.into(),
        loss,
        network,
        reset,
        test_split,
        input_channels,
    };
    let fixed = ResetKind::FixedLength { k: fixed_k };
    let align = ResetKind::AlignWithScan;
    vec![
        exp("exp1", LossKind::WDice, Rnn, fixed, UnseenImage, BmodePlusFeature),
        exp("exp2", LossKind::WCe, Rnn, fixed, UnseenImage, BmodePlusFeature),
        exp("exp3", LossKind::WDice, Cnn, ResetKind::None, UnseenImage, BmodePlusFeature),
        exp("exp4", LossKind::WDice, Rnn, align, UnseenImage, BmodePlusFeature),
        exp("exp5", LossKind::WDice, Rnn, align, UnseenAnatomy, BmodePlusFeature),
        exp("exp6", LossKind::WDice, Rnn, align, UnseenImage, BmodeOnly),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub avg_dice: f64,
    pub per_frame_dice: Vec<f64>,
    pub seed: u64,
    pub runtime_s: f64,
    pub final_train_loss: f64,
    /// Set when the row failed; the other fields are then zero.
    pub error: Option<String>,
}

/// Datasets the grid draws on: the seen anatomy (split by sweep into
/// train/test) and an optional held-out anatomy.
pub struct AblationData {
    pub seen: PreparedDataset,
    pub unseen: Option<PreparedDataset>,
}

impl AblationData {
    pub fn from_datasets(spec: &BenchmarkSpec, seen: &Dataset, unseen: Option<&Dataset>) -> Result<Self> {
        Ok(AblationData {
            seen: prepare(seen, &spec.features)?,
            unseen: unseen.map(|d| prepare(d, &spec.features)).transpose()?,
        })
    }
}

fn inputs(data: &PreparedDataset, idx: &[usize], channels: InputChannels) -> Vec<Tensor> {
    idx.iter()
        .map(|&i| {
            let feature = match channels {
                InputChannels::BmodePlusFeature => data.feature[i].clone(),
                InputChannels::BmodeOnly => Tensor::zeros(1, data.feature[i].h, data.feature[i].w),
            };
            Tensor::concat(&[&data.bmode[i], &feature])
        })
        .collect()
}

/// Trains one configuration and scores it on its test split.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    spec: &BenchmarkSpec,
    data: &AblationData,
    train_idx: &[usize],
    test_idx: &[usize],
    seed: u64,
) -> Result<(ExperimentResult, UNet)> {
    cfg.validate()?;
    let start = Instant::now();
    let net_spec = UNetSpec {
        in_channels: 2,
        use_convgru: cfg.network == NetworkKind::Rnn,
        ..spec.net
    };
    let train_cfg = crate::net::TrainConfig {
        loss: cfg.loss,
        reset_policy: cfg.reset_policy(),
        seed,
        ..spec.train
    };
    let samples: Vec<Sample> = inputs(&data.seen, train_idx, cfg.input_channels)
        .into_iter()
        .zip(train_idx)
        .map(|(input, &i)| Sample {
            input,
            label: data.seen.labels[i].clone(),
            sweep_id: data.seen.sweep_ids[i],
        })
        .collect();
    let mut net = UNet::new(net_spec, seed)?;
    let report = train(&mut net, &train_cfg, &samples)?;
    let (test_data, idx): (&PreparedDataset, Vec<usize>) = match cfg.test_split {
        TestSplit::UnseenImage => (&data.seen, test_idx.to_vec()),
        TestSplit::UnseenAnatomy => {
            let d = data
                .unseen
                .as_ref()
                .ok_or_else(|| Error::InvalidParam(format!("{}: no unseen-anatomy data", cfg.experiment_id)))?;
            (d, (0..d.labels.len()).collect())
        }
    };
    if idx.is_empty() {
        return Err(Error::Split(format!("{}: empty test split", cfg.experiment_id)));
    }
    let x = inputs(test_data, &idx, cfg.input_channels);
    let sweeps: Vec<usize> = idx.iter().map(|&i| test_data.sweep_ids[i]).collect();
    let preds = predict_sequence(&net, &train_cfg.reset_policy, &x, &sweeps)?;
    let per_frame_dice = preds
        .iter()
        .zip(&idx)
        .map(|(p, &i)| weighted_dice_tensor(p, &test_data.labels[i], None))
        .collect::<Result<Vec<_>>>()?;
    let avg_dice = per_frame_dice.iter().sum::<f64>() / per_frame_dice.len() as f64;
    Ok((
        ExperimentResult {
            config: cfg.clone(),
            avg_dice,
            per_frame_dice,
            seed,
            runtime_s: start.elapsed().as_secs_f64(),
            final_train_loss: report.final_loss,
            error: None,
        },
        net,
    ))
}

/// Runs every row of `grid`; a failing row is recorded and the rest still run.
pub fn run_ablation(grid: &[ExperimentConfig], spec: &BenchmarkSpec, data: &AblationData, seed: u64) -> Result<Vec<ExperimentResult>> {
    if grid.is_empty() {
        return Err(Error::InvalidParam("empty experiment grid".into()));
    }
    spec.validate()?;
    let (train_idx, test_idx) = split_train_test(&data.seen.frames, spec.train_fraction, spec.split_seed)?;
    Ok(grid
        .iter()
        .map(|cfg| match run_experiment(cfg, spec, data, &train_idx, &test_idx, seed) {
            Ok((r, _)) => r,
            Err(e) => ExperimentResult {
                config: cfg.clone(),
                avg_dice: 0.0,
                per_frame_dice: Vec::new(),
                seed,
                runtime_s: 0.0,
                final_train_loss: 0.0,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

pub const CSV_HEADER: &str = "experiment_id,loss_type,network_type,reset_type,test_data,input_channel,avg_dice,runtime_s,seed";

fn network_label(n: NetworkKind) -> &'static str {
    match n {
        NetworkKind::Rnn => "rnn",
        NetworkKind::Cnn => "cnn",
    }
}

fn split_label(t: TestSplit) -> &'static str {
    match t {
        TestSplit::UnseenImage => "unseen_image",
        TestSplit::UnseenAnatomy => "unseen_anatomy",
    }
}

fn channel_label(c: InputChannels) -> &'static str {
    match c {
        InputChannels::BmodePlusFeature => "bmode_plus_feature",
        InputChannels::BmodeOnly => "bmode_only",
    }
}

/// One CSV row per result. Wall-clock runtime is only written when
/// `with_runtime` is set, otherwise `NA`, so repeated runs produce identical
/// files. Failed rows carry `failed` in the score column.
pub fn results_csv(results: &[ExperimentResult], with_runtime: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let c = &r.config;
        let dice = match &r.error {
            Some(_) => "failed".to_string(),
            None => format!("{:.6}", r.avg_dice),
        };
        let runtime = if with_runtime { format!("{:.3}", r.runtime_s) } else { "NA".into() };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.experiment_id,
            c.loss.as_str(),
            network_label(c.network),
            c.reset_label(),
            split_label(c.test_split),
            channel_label(c.input_channels),
            dice,
            runtime,
            r.seed
        );
    }
    out
}

#[cfg(test)]
mod tests;
