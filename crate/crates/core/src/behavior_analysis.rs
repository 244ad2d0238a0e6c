//! Interpretability procedures over records and fitted factors: champion-type
//! entropy, generalist/specialist deciles, component labels, champion-type
//! activation tables, pick rates and engagement summaries.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data_model::{ChampionType, MatchRecord, PerfField, UserIndex};
use crate::error::{Error, Result};

pub const LABEL_THRESHOLD: f64 = 0.4;
pub const ACTIVATION_COVERAGE: f64 = 0.95;
const SECONDS_PER_DAY: i64 = 86_400;

/// Shannon entropy in nats; `0 · ln 0` is 0.
pub fn champion_entropy(distribution: &[f64]) -> Result<f64> {
    if let Some(bad) = distribution.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::InvalidDistribution(format!("negative or NaN probability {bad}")));
    }
    let total: f64 = distribution.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
    }
    let h: f64 = -distribution.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    Ok(h.max(0.0))
}

/// Share of a user's matches on each champion type, in [`ChampionType::ALL`] order.
pub fn champion_type_distribution<'a>(records: impl IntoIterator<Item = &'a MatchRecord>) -> Option<[f64; 7]> {
    let mut counts = [0usize; ChampionType::COUNT];
    for r in records {
        counts[r.champion_type.index()] += 1;
    }
    let n: usize = counts.iter().sum();
    (n > 0).then(|| counts.map(|c| c as f64 / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserClass {
    Generalist,
    Specialist,
    Neither,
}

impl UserClass {
    pub fn as_str(self) -> &'static str {
        match self {
            UserClass::Generalist => "generalist",
            UserClass::Specialist => "specialist",
            UserClass::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub champion_type_distribution: [f64; 7],
    pub entropy: f64,
    pub class: UserClass,
    pub component_label: Option<usize>,
    pub days_online: usize,
}

/// Distinct UTC calendar days among `timestamps`.
pub fn days_online(timestamps: impl IntoIterator<Item = i64>) -> usize {
    timestamps
        .into_iter()
        .map(|t| t.div_euclid(SECONDS_PER_DAY))
        .collect::<BTreeSet<_>>()
        .len()
}

/// One profile per user of `users`, in index order. `labels`, if given, is
/// aligned with `users`. Every profile starts as [`UserClass::Neither`].
pub fn user_profiles(
    records: &[MatchRecord],
    users: &UserIndex,
    labels: Option<&[Option<usize>]>,
) -> Result<Vec<UserProfile>> {
    if let Some(l) = labels {
        if l.len() != users.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} users",
                l.len(),
                users.len()
            )));
        }
    }
    let mut by_user: Vec<Vec<&MatchRecord>> = vec![Vec::new(); users.len()];
    for r in records {
        let i = users
            .get(&r.user_id)
            .ok_or_else(|| Error::IndexOutOfRange(format!("user {} not in the user index", r.user_id)))?;
        by_user[i].push(r);
    }
    by_user
        .into_iter()
        .enumerate()
        .map(|(i, recs)| {
            let user_id = users.id(i).unwrap_or_default().to_string();
            let dist = champion_type_distribution(recs.iter().copied())
                .ok_or_else(|| Error::Empty(format!("user {user_id} has no matches")))?;
            Ok(UserProfile {
                entropy: champion_entropy(&dist)?,
                champion_type_distribution: dist,
                class: UserClass::Neither,
                component_label: labels.and_then(|l| l[i]),
                days_online: days_online(recs.iter().map(|r| r.timestamp)),
                user_id,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyDeciles {
    /// Bottom-decile mark; entropies at or below it are specialists.
    pub low: f64,
    /// Top-decile mark; entropies at or above it are generalists.
    pub high: f64,
}

/// Nearest-rank decile marks with `ceil(n / 10)` users in each tail.
///
/// Users at or beyond a mark fall in that tail. A user in both tails (only
/// possible when the marks coincide) is labelled neither.
pub fn classify_generalists_specialists(profiles: &mut [UserProfile]) -> Option<EntropyDeciles> {
    if profiles.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = profiles.iter().map(|p| p.entropy).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let tail = n.div_ceil(10);
    let marks = EntropyDeciles {
        low: sorted[tail - 1],
        high: sorted[n - tail],
    };
    for p in profiles.iter_mut() {
        let generalist = p.entropy >= marks.high;
        let specialist = p.entropy <= marks.low;
        p.class = match (generalist, specialist) {
            (true, false) => UserClass::Generalist,
            (false, true) => UserClass::Specialist,
            _ => UserClass::Neither,
        };
    }
    Some(marks)
}

/// Argmax component of each L1-normalised row of `u` when its share is at
/// least `threshold`. Ties go to the lowest index; all-zero rows are unlabelled.
pub fn component_labels(u: &Array2<f64>, threshold: f64) -> Vec<Option<usize>> {
    u.rows()
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if !(total > 0.0) {
                return None;
            }
            let (best, max) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (r, &v)| if v > acc.1 { (r, v) } else { acc });
            (max / total >= threshold).then_some(best)
        })
        .collect()
}

/// Users per component label, plus the unlabelled count.
pub fn label_counts(labels: &[Option<usize>], rank: usize) -> (Vec<usize>, usize) {
    let mut counts = vec![0; rank];
    let mut unlabeled = 0;
    for l in labels {
        match l {
            Some(r) if *r < rank => counts[*r] += 1,
            _ => unlabeled += 1,
        }
    }
    (counts, unlabeled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Masking {
    /// Rank raw entries; keep them until their cumulative sum covers the
    /// coverage fraction of the row total.
    #[default]
    Cumulative,
    /// Rank squared entries against the row's squared norm.
    SquaredNorm,
}

/// Zeroes every entry after the largest ones first cover `coverage` of the
/// row mass. Ties keep the lower index first.
pub fn mask_row(row: &mut [f64], coverage: f64, masking: Masking) {
    let weight = |v: f64| match masking {
        Masking::Cumulative => v,
        Masking::SquaredNorm => v * v,
    };
    let total: f64 = row.iter().map(|&v| weight(v)).sum();
    if !(total > 0.0) {
        return;
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let target = coverage * total - 1e-12 * total;
    let mut acc = 0.0;
    let mut covered = false;
    for idx in order {
        if covered {
            row[idx] = 0.0;
        } else {
            acc += weight(row[idx]);
            covered = acc >= target;
        }
    }
}

/// Champion-type × component activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTable {
    pub row_labels: Vec<String>,
    /// Column-normalised activations before masking.
    pub normalized: Array2<f64>,
    /// `normalized` with each row masked.
    pub masked: Array2<f64>,
}

/// Averages champion rows of `f` per champion type, normalises each component
/// column to sum 1 and masks each row. Types without champions get zero rows.
pub fn champion_type_activation(
    f: &Array2<f64>,
    champion_types: &[Option<ChampionType>],
    masking: Masking,
) -> Result<ActivationTable> {
    if champion_types.len() != f.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} champion types for {} factor rows",
            champion_types.len(),
            f.nrows()
        )));
    }
    let rank = f.ncols();
    let mut sums = Array2::<f64>::zeros((ChampionType::COUNT, rank));
    let mut counts = [0usize; ChampionType::COUNT];
    for (k, ty) in champion_types.iter().enumerate() {
        let ty = ty.ok_or_else(|| Error::InvalidConfig(format!("champion {k} has no known type")))?;
        let t = ty.index();
        counts[t] += 1;
        sums.row_mut(t).scaled_add(1.0, &f.row(k));
    }
    for (t, &c) in counts.iter().enumerate() {
        if c > 0 {
            sums.row_mut(t).mapv_inplace(|v| v / c as f64);
        }
    }
    for mut col in sums.columns_mut() {
        let s: f64 = col.sum();
        if s > 0.0 {
            col.mapv_inplace(|v| v / s);
        }
    }
    let mut masked = sums.clone();
    for mut row in masked.rows_mut() {
        mask_row(row.as_slice_mut().expect("standard layout"), ACTIVATION_COVERAGE, masking);
    }
    Ok(ActivationTable {
        row_labels: ChampionType::ALL.iter().map(|t| t.as_str().to_string()).collect(),
        normalized: sums,
        masked,
    })
}

/// `rates[j]` holds each champion's share of version `j`'s matches, or `None`
/// when the version has no matches.
pub fn pick_rates(records: &[MatchRecord], n_versions: usize, n_champions: usize) -> Result<Vec<Option<Vec<f64>>>> {
    let mut counts = vec![vec![0usize; n_champions]; n_versions];
    for r in records {
        if r.version_index >= n_versions || r.champion_id >= n_champions {
            return Err(Error::IndexOutOfRange(format!(
                "match {} has version {} / champion {} outside {n_versions} × {n_champions}",
                r.match_id, r.version_index, r.champion_id
            )));
        }
        counts[r.version_index][r.champion_id] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row.into_iter().map(|c| c as f64 / n as f64).collect())
        })
        .collect())
}

/// Per-version mean of `field` for each champion type, `None` where a type
/// has no matches in a version.
pub fn performance_by_type(
    records: &[MatchRecord],
    n_versions: usize,
    field: PerfField,
) -> Result<Vec<[Option<f64>; 7]>> {
    let mut sums = vec![[(0.0, 0usize); ChampionType::COUNT]; n_versions];
    for r in records {
        let cell = sums
            .get_mut(r.version_index)
            .ok_or_else(|| Error::IndexOutOfRange(format!("version {} ≥ {n_versions}", r.version_index)))?;
        let v = match field {
            PerfField::Kills => f64::from(r.kills),
            PerfField::Deaths => f64::from(r.deaths),
            PerfField::Assists => f64::from(r.assists),
            PerfField::Kda => r.kda(),
        };
        let slot = &mut cell[r.champion_type.index()];
        slot.0 += v;
        slot.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|row| row.map(|(s, n)| (n > 0).then(|| s / n as f64)))
        .collect())
}

/// Engagement per component label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementSummary {
    /// Per label (`None` = unlabelled): mean matches per active user in each
    /// version, `None` where no user with that label played.
    pub series: BTreeMap<Option<usize>, Vec<Option<f64>>>,
    /// Distinct active UTC days per user, aligned with the user index.
    pub days_online: Vec<usize>,
}

pub fn engagement_summary(
    records: &[MatchRecord],
    users: &UserIndex,
    labels: &[Option<usize>],
    n_versions: usize,
) -> Result<EngagementSummary> {
    if labels.len() != users.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} users",
            labels.len(),
            users.len()
        )));
    }
    let mut per_slice: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut stamps: Vec<Vec<i64>> = vec![Vec::new(); users.len()];
    for r in records {
        let i = users
            .get(&r.user_id)
            .ok_or_else(|| Error::IndexOutOfRange(format!("user {} not in the user index", r.user_id)))?;
        if r.version_index >= n_versions {
            return Err(Error::IndexOutOfRange(format!("version {} ≥ {n_versions}", r.version_index)));
        }
        *per_slice.entry((i, r.version_index)).or_default() += 1;
        stamps[i].push(r.timestamp);
    }
    let mut acc: BTreeMap<Option<usize>, Vec<(usize, usize)>> = BTreeMap::new();
    for l in labels.iter().copied().collect::<BTreeSet<_>>() {
        acc.insert(l, vec![(0, 0); n_versions]);
    }
    for ((i, j), n) in per_slice {
        let cell = &mut acc.get_mut(&labels[i]).expect("label present")[j];
        cell.0 += n;
        cell.1 += 1;
    }
    Ok(EngagementSummary {
        series: acc
            .into_iter()
            .map(|(l, v)| {
                let s = v
                    .into_iter()
                    .map(|(m, u)| (u > 0).then(|| m as f64 / u as f64))
                    .collect();
                (l, s)
            })
            .collect(),
        days_online: stamps.into_iter().map(days_online).collect(),
    })
}

/// Pearson correlation, `None` for fewer than two points or zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// For each component, the correlation across populated versions between the
/// component's pick rate (champion pick rates weighted by the component's
/// normalised champion column) and its temporal activation `T[:, r]`.
pub fn pick_rate_activation_correlation(
    rates: &[Option<Vec<f64>>],
    t: &Array2<f64>,
    f: &Array2<f64>,
) -> Result<Vec<Option<f64>>> {
    if rates.len() != t.nrows() || t.ncols() != f.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} versions of rates vs T {:?} and F {:?}",
            rates.len(),
            t.dim(),
            f.dim()
        )));
    }
    (0..f.ncols())
        .map(|r| {
            let col = f.column(r);
            let mass: f64 = col.sum();
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (j, rate) in rates.iter().enumerate() {
                let Some(rate) = rate else { continue };
                if rate.len() != f.nrows() {
                    return Err(Error::DimensionMismatch(format!(
                        "version {j} has {} champion rates, F has {} rows",
                        rate.len(),
                        f.nrows()
                    )));
                }
                if mass > 0.0 {
                    xs.push(rate.iter().zip(col).map(|(p, w)| p * w).sum::<f64>() / mass);
                    ys.push(t[[j, r]]);
                }
            }
            Ok(pearson(&xs, &ys))
        })
        .collect()
}

/// Equal-width histogram over `[lo, hi]`; values outside are clamped into the
/// end bins. Returns bin lower edges and counts.
pub fn histogram(values: &[f64], n_bins: usize, lo: f64, hi: f64) -> Vec<(f64, usize)> {
    if n_bins == 0 || !(hi > lo) {
        return Vec::new();
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + b as f64 * width, c))
        .collect()
}
