//! End-to-end orchestration shared by the command-line tool and the
//! integration tests: labelling, embedding fits on the training split, and
//! decoder training and evaluation.

use std::collections::BTreeSet;

use log::info;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    feature_exclusions, filter_min_matches, label_instances, split, target_range, Dataset, LabeledInstance,
    MatchRecord, PerfField, Split, SplitSpec, Target, UserIndex, DEFAULT_MIN_MATCHES, DEFAULT_SESSION_GAP_SECS,
};
use crate::decoder::{self, DecoderModel, EmbeddingContext, FeatureMode, TrainConfig};
use crate::error::{Error, Result};
use crate::factorization::{
    factorize, holdout_slices, reconstruction_evaluator, select_rank, Fit, FitOptions, KruskalFactors,
    RankSelection, RankSelectionOptions, ScoreDirection,
};
use crate::metrics::{auc, nrmse, rmse, EvalBatch, EvalReport, EvalRow};
use crate::tensor_builder::{build_tensor, SparseMaskedTensor};

/// Labelled instances of a dataset after the minimum-activity filter.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub instances: Vec<LabeledInstance>,
    pub n_versions: usize,
    pub n_champions: usize,
}

pub fn prepare(dataset: &Dataset, min_matches: usize, session_gap_secs: f64) -> Result<Prepared> {
    let kept = filter_min_matches(&dataset.records, min_matches);
    if kept.is_empty() {
        return Err(Error::Empty(format!("no user has at least {min_matches} matches")));
    }
    info!(
        "{} of {} records kept after requiring {min_matches} matches per user",
        kept.len(),
        dataset.records.len()
    );
    Ok(Prepared {
        instances: label_instances(&kept, session_gap_secs)?,
        n_versions: dataset.n_versions,
        n_champions: dataset.n_champions,
    })
}

/// Factors with the user index their rows follow.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub factors: KruskalFactors,
    pub users: UserIndex,
}

impl Embeddings {
    pub fn context(&self) -> EmbeddingContext<'_> {
        EmbeddingContext {
            factors: &self.factors,
            users: &self.users,
        }
    }
}

/// Embeddings fitted on a tensor built from training records only.
#[derive(Debug, Clone)]
pub struct FittedEmbeddings {
    pub embeddings: Embeddings,
    pub fit: Fit,
    pub tensor: SparseMaskedTensor,
}

pub fn fit_embeddings(
    train: &[LabeledInstance],
    n_versions: usize,
    n_champions: usize,
    options: &FitOptions,
) -> Result<FittedEmbeddings> {
    let records: Vec<MatchRecord> = train.iter().map(|i| i.record.clone()).collect();
    let users = UserIndex::from_records(&records);
    let tensor = build_tensor(&records, &users, n_versions, n_champions)?;
    let fit = factorize(&tensor, options)?;
    info!("rank-{} fit: loss {:.6} after {} iterations", options.rank, fit.loss, fit.iterations);
    Ok(FittedEmbeddings {
        embeddings: Embeddings {
            factors: fit.factors.clone(),
            users,
        },
        fit,
        tensor,
    })
}

/// Scores predictions on `test`. Binary targets get AUC; regression targets
/// get RMSE and NRMSE against `range`.
pub fn score(
    mode: FeatureMode,
    target: Target,
    predictions: &[f64],
    test: &[LabeledInstance],
    range: (f64, f64),
    n_train: usize,
) -> Result<EvalRow> {
    let truths: Vec<f64> = test.iter().map(|i| target.value(i)).collect();
    let batch = EvalBatch::new(predictions, &truths, range)?;
    let mut row = EvalRow {
        mode: mode.as_str().to_string(),
        target: target.as_str().to_string(),
        auc: None,
        rmse: None,
        nrmse: None,
        n_train,
        n_test: test.len(),
    };
    if target.is_binary() {
        row.auc = Some(auc(&batch)?);
    } else {
        row.rmse = Some(rmse(&batch));
        row.nrmse = Some(nrmse(&batch)?);
    }
    Ok(row)
}

/// Everything a train-and-evaluate run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub target: Target,
    pub split: SplitSpec,
    pub rank: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub factor_seed: u64,
    pub decoder: TrainConfig,
    /// Drop all kill/death/assist/KDA inputs, not only those derived from
    /// the target.
    pub exclude_performance: bool,
    pub min_matches: usize,
    pub session_gap_secs: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            target: Target::Win,
            split: SplitSpec::default(),
            rank: 6,
            restarts: 3,
            max_iterations: 500,
            factor_seed: 0,
            decoder: TrainConfig::default(),
            exclude_performance: false,
            min_matches: DEFAULT_MIN_MATCHES,
            session_gap_secs: DEFAULT_SESSION_GAP_SECS,
        }
    }
}

impl ExperimentConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            rank: self.rank,
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            seed: self.factor_seed,
            ..FitOptions::default()
        }
    }

    pub fn exclusions(&self) -> BTreeSet<PerfField> {
        feature_exclusions(self.target, self.exclude_performance)
    }
}

/// A prepared dataset split into train and test instances.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub split: Split,
    pub train: Vec<LabeledInstance>,
    pub test: Vec<LabeledInstance>,
    /// Target range over all instances.
    pub range: (f64, f64),
}

pub fn split_data(prepared: &Prepared, target: Target, spec: &SplitSpec) -> Result<SplitData> {
    let s = split(&prepared.instances, spec)?;
    let (train, test) = s.materialize(&prepared.instances);
    if test.is_empty() {
        return Err(Error::Empty("the split left no test instances".into()));
    }
    let range = target_range(&prepared.instances, target).ok_or_else(|| Error::Empty("no instances".into()))?;
    Ok(SplitData {
        split: s,
        train,
        test,
        range,
    })
}

/// Trains one decoder on the split's training part.
pub fn train_decoder(
    data: &SplitData,
    prepared: &Prepared,
    embeddings: Option<&Embeddings>,
    mode: FeatureMode,
    config: &ExperimentConfig,
) -> Result<DecoderModel> {
    let ctx = embeddings.map(Embeddings::context);
    if mode == FeatureMode::Embedding && ctx.is_none() {
        return Err(Error::InvalidConfig("embedding mode needs fitted embeddings".into()));
    }
    let ctx = if mode == FeatureMode::Embedding { ctx } else { None };
    let mut model = decoder::train(
        &data.train,
        ctx.as_ref(),
        mode,
        config.target,
        &config.exclusions(),
        prepared.n_champions,
        &config.decoder,
    )?;
    model.split = Some(config.split);
    Ok(model)
}

pub fn evaluate_decoder(model: &DecoderModel, data: &SplitData, embeddings: Option<&Embeddings>) -> Result<EvalRow> {
    let ctx = match model.mode() {
        FeatureMode::Embedding => Some(
            embeddings
                .ok_or_else(|| Error::InvalidConfig("embedding-mode model needs its embeddings".into()))?
                .context(),
        ),
        FeatureMode::Baseline => None,
    };
    let preds = model.predict_instances(&data.test, ctx.as_ref())?;
    score(model.mode(), model.target, &preds, &data.test, data.range, data.train.len())
}

/// Trains and evaluates the embedding decoder and the one-hot baseline on
/// the same split.
pub fn compare_decoders(prepared: &Prepared, config: &ExperimentConfig) -> Result<EvalReport> {
    let data = split_data(prepared, config.target, &config.split)?;
    let fitted = fit_embeddings(&data.train, prepared.n_versions, prepared.n_champions, &config.fit_options())?;
    let embeddings = fitted.embeddings;
    let mut rows = Vec::new();
    for mode in [FeatureMode::Embedding, FeatureMode::Baseline] {
        let model = train_decoder(&data, prepared, Some(&embeddings), mode, config)?;
        let row = evaluate_decoder(&model, &data, Some(&embeddings))?;
        info!("{} {}: {:?}", row.mode, row.target, row);
        rows.push(row);
    }
    Ok(EvalReport {
        split_seed: config.split.seed,
        test_fraction: config.split.test_fraction,
        rows,
    })
}

/// How candidate ranks are scored during a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepEvaluator {
    /// `1 − relative error` on held-out observed slices.
    #[default]
    Reconstruction,
    /// Validation AUC (binary targets) or RMSE (regression targets) of an
    /// embedding decoder trained on the remaining training instances.
    Downstream,
}

/// Rank sweep over `candidates` using only the training instances of `data`.
/// `holdout_fraction` sets the share of slices (reconstruction) or of each
/// user's instances (downstream) held out for validation.
pub fn sweep_ranks(
    prepared: &Prepared,
    data: &SplitData,
    candidates: &[usize],
    config: &ExperimentConfig,
    evaluator: SweepEvaluator,
    holdout_fraction: f64,
    tolerance: f64,
) -> Result<RankSelection> {
    let fit = config.fit_options();
    match evaluator {
        SweepEvaluator::Reconstruction => {
            let records: Vec<MatchRecord> = data.train.iter().map(|i| i.record.clone()).collect();
            let users = UserIndex::from_records(&records);
            let tensor = build_tensor(&records, &users, prepared.n_versions, prepared.n_champions)?;
            let (fit_part, held) = holdout_slices(&tensor, holdout_fraction, config.split.seed)?;
            let selection = RankSelectionOptions {
                tolerance,
                direction: ScoreDirection::HigherIsBetter,
            };
            select_rank(&fit_part, candidates, &fit, &selection, reconstruction_evaluator(&held))
        }
        SweepEvaluator::Downstream => {
            let inner_spec = SplitSpec {
                test_fraction: holdout_fraction,
                seed: config.split.seed,
            };
            let inner = split(&data.train, &inner_spec)?;
            let (inner_train, validation) = inner.materialize(&data.train);
            if validation.is_empty() {
                return Err(Error::Empty("the validation carve-out is empty".into()));
            }
            let records: Vec<MatchRecord> = inner_train.iter().map(|i| i.record.clone()).collect();
            let users = UserIndex::from_records(&records);
            let tensor = build_tensor(&records, &users, prepared.n_versions, prepared.n_champions)?;
            let target = config.target;
            let direction = if target.is_binary() {
                ScoreDirection::HigherIsBetter
            } else {
                ScoreDirection::LowerIsBetter
            };
            let evaluate = |factors: &KruskalFactors| -> Result<f64> {
                let ctx = EmbeddingContext {
                    factors,
                    users: &users,
                };
                let model = decoder::train(
                    &inner_train,
                    Some(&ctx),
                    FeatureMode::Embedding,
                    target,
                    &config.exclusions(),
                    prepared.n_champions,
                    &config.decoder,
                )?;
                let preds = model.predict_instances(&validation, Some(&ctx))?;
                let row = score(FeatureMode::Embedding, target, &preds, &validation, data.range, inner_train.len())?;
                row.auc
                    .or(row.rmse)
                    .ok_or_else(|| Error::RankSelection("no validation score".into()))
            };
            let selection = RankSelectionOptions { tolerance, direction };
            select_rank(&tensor, candidates, &fit, &selection, evaluate)
        }
    }
}
