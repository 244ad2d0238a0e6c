//! Per-instance decoder inputs.
//!
//! In embedding mode an instance becomes `h = [u | f | t | x_m]`: the user's
//! factor row, the champion factor rows weighted by the instance's champion
//! indicator and summed, the version's factor row, and the remaining raw
//! features. Baseline mode replaces the three embedding blocks with one-hot
//! user and champion ids plus the numeric version index.

use std::collections::BTreeSet;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data_model::{included_perf_fields, ChampionType, LabeledInstance, PerfField, Target, UserIndex};
use crate::error::{Error, Result};
use crate::factorization::KruskalFactors;

/// Sums the rows of `F` weighted by `indicator` (the Hadamard product of the
/// indicator with `F`, reduced over champions).
pub fn fuse_individual_context(indicator: &[f64], f: &Array2<f64>) -> Result<Vec<f64>> {
    if indicator.len() != f.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "indicator has {} entries, champion factor has {} rows",
            indicator.len(),
            f.nrows()
        )));
    }
    if let Some(bad) = indicator.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidConfig(format!("indicator entries must be non-negative, got {bad}")));
    }
    let mut out = vec![0.0; f.ncols()];
    for (w, row) in indicator.iter().zip(f.rows()) {
        if *w != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += w * v);
        }
    }
    Ok(out)
}

/// A sparse decoder input of fixed width.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub len: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.len];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            d[i] = v;
        }
        d
    }

    fn push(&mut self, idx: usize, v: f64) {
        if v != 0.0 {
            self.indices.push(idx);
            self.values.push(v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Embedding,
    Baseline,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Embedding => "embedding",
            FeatureMode::Baseline => "baseline",
        }
    }
}

/// Factors plus the user-id → row mapping they were fitted with.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingContext<'a> {
    pub factors: &'a KruskalFactors,
    pub users: &'a UserIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuous {
    Duration,
    Timestamp,
    VersionIndex,
    Perf(PerfField),
}

impl Continuous {
    fn name(self) -> String {
        match self {
            Continuous::Duration => "duration".into(),
            Continuous::Timestamp => "timestamp".into(),
            Continuous::VersionIndex => "version_index".into(),
            Continuous::Perf(p) => p.as_str().into(),
        }
    }

    fn value(self, inst: &LabeledInstance) -> f64 {
        match self {
            Continuous::Duration => inst.record.duration,
            Continuous::Timestamp => inst.record.timestamp as f64,
            Continuous::VersionIndex => inst.record.version_index as f64,
            Continuous::Perf(p) => p.value(inst),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStat {
    pub feature: Continuous,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Categorical {
    Season,
    QueueType,
    ChampionType,
    Role,
    Lane,
    MapId,
}

impl Categorical {
    const ALL: [Categorical; 6] = [
        Categorical::Season,
        Categorical::QueueType,
        Categorical::ChampionType,
        Categorical::Role,
        Categorical::Lane,
        Categorical::MapId,
    ];

    fn name(self) -> &'static str {
        match self {
            Categorical::Season => "season",
            Categorical::QueueType => "queue_type",
            Categorical::ChampionType => "champion_type",
            Categorical::Role => "role",
            Categorical::Lane => "lane",
            Categorical::MapId => "map_id",
        }
    }

    fn value(self, inst: &LabeledInstance) -> &str {
        let r = &inst.record;
        match self {
            Categorical::Season => &r.season,
            Categorical::QueueType => &r.queue_type,
            Categorical::ChampionType => r.champion_type.as_str(),
            Categorical::Role => &r.role,
            Categorical::Lane => &r.lane,
            Categorical::MapId => &r.map_id,
        }
    }
}

/// Encoding dictionaries and normalisation statistics, fitted on training
/// data and reused unchanged at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub mode: FeatureMode,
    pub target: Target,
    pub excluded: BTreeSet<PerfField>,
    /// Embedding rank (embedding mode) or 0.
    pub rank: usize,
    /// Users with a one-hot column (baseline mode).
    pub baseline_users: Vec<String>,
    pub n_champions: usize,
    /// Sorted dictionaries in [`Categorical::ALL`] order.
    pub categories: Vec<Vec<String>>,
    pub continuous: Vec<ContinuousStat>,
}

impl FeatureEncoder {
    /// Fits dictionaries and z-score statistics on `train`.
    pub fn fit(
        train: &[LabeledInstance],
        mode: FeatureMode,
        target: Target,
        excluded: &BTreeSet<PerfField>,
        rank: usize,
        n_champions: usize,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("no training instances".into()));
        }
        if mode == FeatureMode::Embedding && rank == 0 {
            return Err(Error::InvalidConfig("embedding mode needs a positive rank".into()));
        }
        let categories = Categorical::ALL
            .iter()
            .map(|&c| {
                if c == Categorical::ChampionType {
                    ChampionType::ALL.iter().map(|t| t.as_str().to_string()).collect()
                } else {
                    train
                        .iter()
                        .map(|i| c.value(i).to_string())
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect()
                }
            })
            .collect();
        let mut cont = vec![Continuous::Duration, Continuous::Timestamp];
        if mode == FeatureMode::Baseline {
            cont.push(Continuous::VersionIndex);
        }
        cont.extend(included_perf_fields(target, excluded).into_iter().map(Continuous::Perf));
        let n = train.len() as f64;
        let continuous = cont
            .into_iter()
            .map(|feature| {
                let mean = train.iter().map(|i| feature.value(i)).sum::<f64>() / n;
                let var = train.iter().map(|i| (feature.value(i) - mean).powi(2)).sum::<f64>() / n;
                ContinuousStat {
                    feature,
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect();
        let baseline_users = if mode == FeatureMode::Baseline {
            train
                .iter()
                .map(|i| i.record.user_id.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        } else {
            Vec::new()
        };
        Ok(FeatureEncoder {
            mode,
            target,
            excluded: excluded.clone(),
            rank: if mode == FeatureMode::Embedding { rank } else { 0 },
            baseline_users,
            n_champions,
            categories,
            continuous,
        })
    }

    fn leading_width(&self) -> usize {
        match self.mode {
            FeatureMode::Embedding => 3 * self.rank,
            FeatureMode::Baseline => self.baseline_users.len() + self.n_champions,
        }
    }

    pub fn width(&self) -> usize {
        self.leading_width() + self.categories.iter().map(Vec::len).sum::<usize>() + self.continuous.len()
    }

    /// Column names in layout order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        match self.mode {
            FeatureMode::Embedding => {
                for block in ["u", "f", "t"] {
                    names.extend((0..self.rank).map(|r| format!("{block}{r}")));
                }
            }
            FeatureMode::Baseline => {
                names.extend(self.baseline_users.iter().map(|u| format!("user_id={u}")));
                names.extend((0..self.n_champions).map(|k| format!("champion_id={k}")));
            }
        }
        for (c, dict) in Categorical::ALL.iter().zip(&self.categories) {
            names.extend(dict.iter().map(|v| format!("{}={v}", c.name())));
        }
        names.extend(self.continuous.iter().map(|s| s.feature.name()));
        names
    }

    fn encode_inner(
        &self,
        inst: &LabeledInstance,
        ctx: Option<&EmbeddingContext<'_>>,
        unseen: &mut usize,
    ) -> Result<FeatureVector> {
        let r = &inst.record;
        let mut fv = FeatureVector {
            len: self.width(),
            indices: Vec::new(),
            values: Vec::new(),
        };
        let mut offset = 0;
        match self.mode {
            FeatureMode::Embedding => {
                let ctx = ctx.ok_or_else(|| Error::InvalidConfig("embedding mode needs factors".into()))?;
                let factors = ctx.factors;
                if factors.rank() != self.rank {
                    return Err(Error::DimensionMismatch(format!(
                        "encoder rank {} but factors have rank {}",
                        self.rank,
                        factors.rank()
                    )));
                }
                let i = ctx
                    .users
                    .get(&r.user_id)
                    .filter(|&i| i < factors.u.nrows())
                    .ok_or_else(|| Error::IndexOutOfRange(format!("user {} has no factor row", r.user_id)))?;
                if r.version_index >= factors.t.nrows() || r.champion_id >= factors.f.nrows() {
                    return Err(Error::IndexOutOfRange(format!(
                        "version {} / champion {} outside factor rows",
                        r.version_index, r.champion_id
                    )));
                }
                let mut indicator = vec![0.0; factors.f.nrows()];
                indicator[r.champion_id] = 1.0;
                let fused = fuse_individual_context(&indicator, &factors.f)?;
                let blocks = [factors.u.row(i).to_vec(), fused, factors.t.row(r.version_index).to_vec()];
                for block in blocks {
                    for (c, v) in block.into_iter().enumerate() {
                        fv.push(offset + c, v);
                    }
                    offset += self.rank;
                }
            }
            FeatureMode::Baseline => {
                match self.baseline_users.binary_search(&r.user_id) {
                    Ok(p) => fv.push(offset + p, 1.0),
                    Err(_) => *unseen += 1,
                }
                offset += self.baseline_users.len();
                if r.champion_id < self.n_champions {
                    fv.push(offset + r.champion_id, 1.0);
                } else {
                    *unseen += 1;
                }
                offset += self.n_champions;
            }
        }
        for (c, dict) in Categorical::ALL.iter().zip(&self.categories) {
            match dict.binary_search_by(|v| v.as_str().cmp(c.value(inst))) {
                Ok(p) => fv.push(offset + p, 1.0),
                Err(_) => *unseen += 1,
            }
            offset += dict.len();
        }
        for stat in &self.continuous {
            let z = if stat.std > 0.0 {
                (stat.feature.value(inst) - stat.mean) / stat.std
            } else {
                0.0
            };
            fv.push(offset, z);
            offset += 1;
        }
        debug_assert_eq!(offset, fv.len);
        Ok(fv)
    }

    /// Encodes one instance. Unseen categorical values produce an all-zero
    /// one-hot block and a warning.
    pub fn encode(&self, inst: &LabeledInstance, ctx: Option<&EmbeddingContext<'_>>) -> Result<FeatureVector> {
        let mut unseen = 0;
        let fv = self.encode_inner(inst, ctx, &mut unseen)?;
        if unseen > 0 {
            warn!("match {} has {unseen} categorical value(s) unseen in training", inst.record.match_id);
        }
        Ok(fv)
    }

    pub fn encode_batch(
        &self,
        instances: &[LabeledInstance],
        ctx: Option<&EmbeddingContext<'_>>,
    ) -> Result<Vec<FeatureVector>> {
        let mut unseen = 0;
        let out = instances
            .iter()
            .map(|inst| self.encode_inner(inst, ctx, &mut unseen))
            .collect::<Result<Vec<_>>>()?;
        if unseen > 0 {
            warn!("{unseen} categorical value(s) unseen in training were encoded as all-zero blocks");
        }
        Ok(out)
    }
}
