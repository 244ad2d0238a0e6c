//! Match records, ingestion, filtering, session labels and per-user splits.
//!
//! A [`MatchRecord`] is one user-match event. Records are read from a CSV
//! file with a fixed header (see [`CSV_HEADER`]), filtered to users with
//! enough activity, labelled with KDA and end-of-session flags, and then
//! partitioned into train and test sets stratified by user.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the match CSV.
pub const CSV_HEADER: [&str; 19] = [
    "user_id",
    "match_id",
    "timestamp",
    "duration",
    "version_index",
    "season",
    "queue_type",
    "map_id",
    "champion_id",
    "champion_type",
    "role",
    "lane",
    "kills",
    "deaths",
    "assists",
    "gold_earned",
    "gold_spent",
    "champion_level",
    "win",
];

/// Default session break threshold: 15 minutes.
pub const DEFAULT_SESSION_GAP_SECS: f64 = 900.0;

/// Default minimum number of matches a user needs to be kept.
pub const DEFAULT_MIN_MATCHES: usize = 15;

/// The official seven-way champion categorisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChampionType {
    Controller,
    Fighter,
    Mage,
    Marksman,
    Slayer,
    Tank,
    Unique,
}

impl ChampionType {
    pub const ALL: [ChampionType; 7] = [
        ChampionType::Controller,
        ChampionType::Fighter,
        ChampionType::Mage,
        ChampionType::Marksman,
        ChampionType::Slayer,
        ChampionType::Tank,
        ChampionType::Unique,
    ];

    pub const COUNT: usize = 7;

    pub fn as_str(self) -> &'static str {
        match self {
            ChampionType::Controller => "Controller",
            ChampionType::Fighter => "Fighter",
            ChampionType::Mage => "Mage",
            ChampionType::Marksman => "Marksman",
            ChampionType::Slayer => "Slayer",
            ChampionType::Tank => "Tank",
            ChampionType::Unique => "Unique",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    fn legal_values() -> String {
        Self::ALL
            .iter()
            .map(|t| t.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for ChampionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChampionType {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|t| {
                let name = t.as_str().to_ascii_lowercase();
                lower == name || lower == format!("{name}s")
            })
            .or_else(|| (lower == "unique playstyles").then_some(ChampionType::Unique))
            .ok_or(())
    }
}

/// One user-match event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub user_id: String,
    pub match_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// Match length in seconds.
    pub duration: f64,
    /// 0-based chronological game-version ordinal.
    pub version_index: usize,
    pub season: String,
    pub queue_type: String,
    pub map_id: String,
    /// 0-based champion ordinal.
    pub champion_id: usize,
    pub champion_type: ChampionType,
    pub role: String,
    pub lane: String,
    pub kills: u32,
    pub deaths: u32,
    pub assists: u32,
    pub gold_earned: f64,
    pub gold_spent: f64,
    pub champion_level: f64,
    pub win: bool,
}

impl MatchRecord {
    pub fn end_time(&self) -> f64 {
        self.timestamp as f64 + self.duration
    }

    pub fn kda(&self) -> f64 {
        compute_kda(self.kills, self.deaths, self.assists)
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    user_id: String,
    match_id: String,
    timestamp: i64,
    duration: f64,
    version_index: i64,
    season: String,
    queue_type: String,
    map_id: String,
    champion_id: i64,
    champion_type: String,
    role: String,
    lane: String,
    kills: i64,
    deaths: i64,
    assists: i64,
    gold_earned: f64,
    gold_spent: f64,
    champion_level: f64,
    win: u8,
}

/// Sorted dictionaries of every categorical value observed in a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dictionaries {
    pub season: Vec<String>,
    pub queue_type: Vec<String>,
    pub map_id: Vec<String>,
    pub role: Vec<String>,
    pub lane: Vec<String>,
}

impl Dictionaries {
    pub fn from_records(records: &[MatchRecord]) -> Self {
        fn collect<'a>(it: impl Iterator<Item = &'a String>) -> Vec<String> {
            it.cloned().collect::<BTreeSet<_>>().into_iter().collect()
        }
        Dictionaries {
            season: collect(records.iter().map(|r| &r.season)),
            queue_type: collect(records.iter().map(|r| &r.queue_type)),
            map_id: collect(records.iter().map(|r| &r.map_id)),
            role: collect(records.iter().map(|r| &r.role)),
            lane: collect(records.iter().map(|r| &r.lane)),
        }
    }
}

/// Parsed match log plus the index spaces it declares.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<MatchRecord>,
    pub dictionaries: Dictionaries,
    pub n_versions: usize,
    pub n_champions: usize,
    /// Type of each champion ordinal; `None` for champions never seen.
    pub champion_types: Vec<Option<ChampionType>>,
}

impl Dataset {
    /// Builds a dataset from already-validated records, deriving the index
    /// spaces from the largest ordinals seen.
    pub fn from_records(records: Vec<MatchRecord>) -> Result<Self> {
        let n_versions = records.iter().map(|r| r.version_index + 1).max().unwrap_or(0);
        let n_champions = records.iter().map(|r| r.champion_id + 1).max().unwrap_or(0);
        Self::with_dims(records, n_versions, n_champions)
    }

    pub fn with_dims(records: Vec<MatchRecord>, n_versions: usize, n_champions: usize) -> Result<Self> {
        let mut champion_types = vec![None; n_champions];
        let mut seen = BTreeSet::new();
        for (pos, r) in records.iter().enumerate() {
            let line = pos as u64 + 2;
            validate_record(r, n_versions, n_champions).map_err(|message| Error::Parse { line, message })?;
            if !seen.insert((r.user_id.as_str(), r.match_id.as_str())) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate (user_id, match_id) = ({}, {})", r.user_id, r.match_id),
                });
            }
            match champion_types[r.champion_id] {
                None => champion_types[r.champion_id] = Some(r.champion_type),
                Some(t) if t != r.champion_type => {
                    return Err(Error::Parse {
                        line,
                        message: format!(
                            "champion {} typed {} here but {} earlier",
                            r.champion_id, r.champion_type, t
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        let dictionaries = Dictionaries::from_records(&records);
        Ok(Dataset {
            records,
            dictionaries,
            n_versions,
            n_champions,
            champion_types,
        })
    }

    pub fn user_index(&self) -> UserIndex {
        UserIndex::from_records(&self.records)
    }
}

fn validate_record(r: &MatchRecord, n_versions: usize, n_champions: usize) -> std::result::Result<(), String> {
    if !(r.duration > 0.0) || !r.duration.is_finite() {
        return Err(format!("duration must be positive, got {}", r.duration));
    }
    if r.version_index >= n_versions {
        return Err(format!("version_index {} out of range 0..{}", r.version_index, n_versions));
    }
    if r.champion_id >= n_champions {
        return Err(format!("champion_id {} out of range 0..{}", r.champion_id, n_champions));
    }
    for (name, v) in [
        ("gold_earned", r.gold_earned),
        ("gold_spent", r.gold_spent),
        ("champion_level", r.champion_level),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(format!("{name} must be a non-negative number, got {v}"));
        }
    }
    Ok(())
}

fn non_negative(line: u64, name: &str, v: i64) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Parse {
        line,
        message: format!("{name} must be a non-negative integer, got {v}"),
    })
}

/// Parses a match CSV. Index spaces are derived from the data.
pub fn ingest<R: Read>(source: R) -> Result<Dataset> {
    let records = parse_records(source)?;
    Dataset::from_records(records)
}

/// Parses a match CSV against declared version and champion counts.
pub fn ingest_with_dims<R: Read>(source: R, n_versions: usize, n_champions: usize) -> Result<Dataset> {
    let records = parse_records(source)?;
    Dataset::with_dims(records, n_versions, n_champions)
}

pub fn ingest_path(path: &Path) -> Result<Dataset> {
    ingest(std::fs::File::open(path)?)
}

fn parse_records<R: Read>(source: R) -> Result<Vec<MatchRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader.headers()?.clone();
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    if found != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {:?}, found {:?}", CSV_HEADER.join(","), found.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let raw: RawRow = row.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let champion_type = ChampionType::from_str(&raw.champion_type).map_err(|_| Error::UnknownChampionType {
            line,
            found: raw.champion_type.clone(),
            legal: ChampionType::legal_values(),
        })?;
        let index = |name: &str, v: i64| {
            usize::try_from(v).map_err(|_| Error::Parse {
                line,
                message: format!("{name} must be a non-negative ordinal, got {v}"),
            })
        };
        let win = match raw.win {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("win must be 0 or 1, got {other}"),
                })
            }
        };
        let record = MatchRecord {
            user_id: raw.user_id,
            match_id: raw.match_id,
            timestamp: raw.timestamp,
            duration: raw.duration,
            version_index: index("version_index", raw.version_index)?,
            season: raw.season,
            queue_type: raw.queue_type,
            map_id: raw.map_id,
            champion_id: index("champion_id", raw.champion_id)?,
            champion_type,
            role: raw.role,
            lane: raw.lane,
            kills: non_negative(line, "kills", raw.kills)?,
            deaths: non_negative(line, "deaths", raw.deaths)?,
            assists: non_negative(line, "assists", raw.assists)?,
            gold_earned: raw.gold_earned,
            gold_spent: raw.gold_spent,
            champion_level: raw.champion_level,
            win,
        };
        if !(record.duration > 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("duration must be positive, got {}", record.duration),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records using the ingest schema.
pub fn write_csv<W: Write>(records: &[MatchRecord], sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(CSV_HEADER)?;
    for r in records {
        writer.write_record([
            r.user_id.clone(),
            r.match_id.clone(),
            r.timestamp.to_string(),
            r.duration.to_string(),
            r.version_index.to_string(),
            r.season.clone(),
            r.queue_type.clone(),
            r.map_id.clone(),
            r.champion_id.to_string(),
            r.champion_type.to_string(),
            r.role.clone(),
            r.lane.clone(),
            r.kills.to_string(),
            r.deaths.to_string(),
            r.assists.to_string(),
            r.gold_earned.to_string(),
            r.gold_spent.to_string(),
            r.champion_level.to_string(),
            u8::from(r.win).to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Keeps only records of users with at least `min_matches` records.
pub fn filter_min_matches(records: &[MatchRecord], min_matches: usize) -> Vec<MatchRecord> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.user_id.as_str()).or_default() += 1;
    }
    records
        .iter()
        .filter(|r| counts[r.user_id.as_str()] >= min_matches)
        .cloned()
        .collect()
}

/// `(kills + assists) / (deaths + 1)`.
pub fn compute_kda(kills: u32, deaths: u32, assists: u32) -> f64 {
    (f64::from(kills) + f64::from(assists)) / (f64::from(deaths) + 1.0)
}

/// A record with its derived labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub record: MatchRecord,
    pub kda: f64,
    pub end_of_session: bool,
}

/// Splits one user's time-sorted matches into sessions. A new session
/// starts whenever the break between the end of a match and the start of
/// the next is at least `gap_threshold_secs`.
pub fn sessionize(records: &[MatchRecord], gap_threshold_secs: f64) -> Result<Vec<LabeledInstance>> {
    if let Some(w) = records.windows(2).find(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Unsorted {
            user: w[0].user_id.clone(),
        });
    }
    Ok(records
        .iter()
        .enumerate()
        .map(|(idx, r)| {
            let end_of_session = match records.get(idx + 1) {
                None => true,
                Some(next) => next.timestamp as f64 - r.end_time() >= gap_threshold_secs,
            };
            LabeledInstance {
                record: r.clone(),
                kda: r.kda(),
                end_of_session,
            }
        })
        .collect())
}

/// Groups records by user, sorts each timeline by `(timestamp, match_id)`
/// and sessionizes it. Output is ordered by user id, then time.
pub fn label_instances(records: &[MatchRecord], gap_threshold_secs: f64) -> Result<Vec<LabeledInstance>> {
    let mut by_user: BTreeMap<&str, Vec<&MatchRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user_id.as_str()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(records.len());
    for (_, mut timeline) in by_user {
        timeline.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.match_id.cmp(&b.match_id)));
        let owned: Vec<MatchRecord> = timeline.into_iter().cloned().collect();
        out.extend(sessionize(&owned, gap_threshold_secs)?);
    }
    Ok(out)
}

/// Dense 0-based index over the distinct user ids, in sorted order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserIndex {
    ids: Vec<String>,
    #[serde(skip)]
    lookup: BTreeMap<String, usize>,
}

impl UserIndex {
    pub fn from_records(records: &[MatchRecord]) -> Self {
        Self::from_ids(records.iter().map(|r| r.user_id.clone()))
    }

    pub fn from_ids(ids: impl IntoIterator<Item = String>) -> Self {
        let ids: Vec<String> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let lookup = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        UserIndex { ids, lookup }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, user_id: &str) -> Option<usize> {
        self.lookup.get(user_id).copied()
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Parameters of the per-user train/test partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Indices into the instance list that was split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn materialize<T: Clone>(&self, items: &[T]) -> (Vec<T>, Vec<T>) {
        (
            self.train.iter().map(|&i| items[i].clone()).collect(),
            self.test.iter().map(|&i| items[i].clone()).collect(),
        )
    }
}

/// Random partition stratified by user id. Each user contributes
/// `round(n * test_fraction)` test instances, capped so that at least one
/// instance stays in train. Users with a single instance go to train.
pub fn split(instances: &[LabeledInstance], spec: &SplitSpec) -> Result<Split> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must lie in (0, 1), got {}",
            spec.test_fraction
        )));
    }
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, inst) in instances.iter().enumerate() {
        by_user.entry(inst.record.user_id.as_str()).or_default().push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::with_capacity(instances.len());
    let mut test = Vec::new();
    for (user, mut idxs) in by_user {
        let n = idxs.len();
        if n == 1 {
            warn!("user {user} has a single instance; assigned to train");
            train.push(idxs[0]);
            continue;
        }
        idxs.shuffle(&mut rng);
        let n_test = ((n as f64 * spec.test_fraction).round() as usize).min(n - 1);
        test.extend_from_slice(&idxs[..n_test]);
        train.extend_from_slice(&idxs[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Prediction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Win,
    EndOfSession,
    Kda,
    Kills,
    Deaths,
    Assists,
}

impl Target {
    pub const ALL: [Target; 6] = [
        Target::Win,
        Target::EndOfSession,
        Target::Kda,
        Target::Kills,
        Target::Deaths,
        Target::Assists,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Win => "win",
            Target::EndOfSession => "end_of_session",
            Target::Kda => "kda",
            Target::Kills => "kills",
            Target::Deaths => "deaths",
            Target::Assists => "assists",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Target::Win | Target::EndOfSession)
    }

    pub fn value(self, inst: &LabeledInstance) -> f64 {
        let r = &inst.record;
        match self {
            Target::Win => f64::from(u8::from(r.win)),
            Target::EndOfSession => f64::from(u8::from(inst.end_of_session)),
            Target::Kda => inst.kda,
            Target::Kills => f64::from(r.kills),
            Target::Deaths => f64::from(r.deaths),
            Target::Assists => f64::from(r.assists),
        }
    }

    /// The performance field this target coincides with, if any.
    pub fn as_perf_field(self) -> Option<PerfField> {
        match self {
            Target::Kda => Some(PerfField::Kda),
            Target::Kills => Some(PerfField::Kills),
            Target::Deaths => Some(PerfField::Deaths),
            Target::Assists => Some(PerfField::Assists),
            Target::Win | Target::EndOfSession => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownTarget(s.to_string()))
    }
}

/// In-game performance fields that may be used as decoder inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerfField {
    Kills,
    Deaths,
    Assists,
    Kda,
}

impl PerfField {
    pub const ALL: [PerfField; 4] = [PerfField::Kills, PerfField::Deaths, PerfField::Assists, PerfField::Kda];

    pub fn as_str(self) -> &'static str {
        match self {
            PerfField::Kills => "kills",
            PerfField::Deaths => "deaths",
            PerfField::Assists => "assists",
            PerfField::Kda => "kda",
        }
    }

    pub fn value(self, inst: &LabeledInstance) -> f64 {
        match self {
            PerfField::Kills => f64::from(inst.record.kills),
            PerfField::Deaths => f64::from(inst.record.deaths),
            PerfField::Assists => f64::from(inst.record.assists),
            PerfField::Kda => inst.kda,
        }
    }
}

/// Fields that leak the target and must be dropped from the inputs.
///
/// Kills, deaths and assists targets drop KDA; a KDA target drops the three
/// counts. Binary targets keep everything unless `exclude_performance` is
/// set, in which case all four fields are dropped.
pub fn feature_exclusions(target: Target, exclude_performance: bool) -> BTreeSet<PerfField> {
    match target {
        Target::Kills | Target::Deaths | Target::Assists => BTreeSet::from([PerfField::Kda]),
        Target::Kda => BTreeSet::from([PerfField::Kills, PerfField::Deaths, PerfField::Assists]),
        Target::Win | Target::EndOfSession => {
            if exclude_performance {
                PerfField::ALL.into_iter().collect()
            } else {
                BTreeSet::new()
            }
        }
    }
}

/// `feature_exclusions` keyed by target name.
pub fn feature_exclusions_by_name(target: &str, exclude_performance: bool) -> Result<BTreeSet<PerfField>> {
    Ok(feature_exclusions(target.parse()?, exclude_performance))
}

/// Performance fields that enter the inputs for `target`: everything not
/// excluded and not the target itself.
pub fn included_perf_fields(target: Target, exclusions: &BTreeSet<PerfField>) -> Vec<PerfField> {
    PerfField::ALL
        .into_iter()
        .filter(|f| !exclusions.contains(f) && target.as_perf_field() != Some(*f))
        .collect()
}

/// `(min, max)` of the target over the given instances.
pub fn target_range(instances: &[LabeledInstance], target: Target) -> Option<(f64, f64)> {
    instances.iter().map(|i| target.value(i)).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(user: &str, id: &str, ts: i64, duration: f64) -> MatchRecord {
        MatchRecord {
            user_id: user.into(),
            match_id: id.into(),
            timestamp: ts,
            duration,
            version_index: 0,
            season: "2014".into(),
            queue_type: "solo".into(),
            map_id: "11".into(),
            champion_id: 0,
            champion_type: ChampionType::Mage,
            role: "carry".into(),
            lane: "mid".into(),
            kills: 1,
            deaths: 1,
            assists: 1,
            gold_earned: 1.0,
            gold_spent: 1.0,
            champion_level: 10.0,
            win: true,
        }
    }

    const HEADER: &str = "user_id,match_id,timestamp,duration,version_index,season,queue_type,map_id,champion_id,champion_type,role,lane,kills,deaths,assists,gold_earned,gold_spent,champion_level,win\n";

    #[test]
    fn ingest_three_rows() {
        let csv = format!(
            "{HEADER}a,m1,100,1800,0,2014,solo,11,2,Mage,carry,mid,3,1,5,9000,8000,14,1\n\
             a,m2,2000,1500,1,2015,draft,11,0,Tank,support,bot,0,4,9,7000,7000,12,0\n\
             b,m3,500,2000,1,2015,solo,10,1,Slayer,carry,top,8,2,1,11000,10500,16,1\n"
        );
        let ds = ingest(csv.as_bytes()).unwrap();
        assert_eq!(ds.records.len(), 3);
        assert_eq!(ds.n_versions, 2);
        assert_eq!(ds.n_champions, 3);
        assert_eq!(ds.dictionaries.season, vec!["2014", "2015"]);
        assert_eq!(ds.dictionaries.queue_type, vec!["draft", "solo"]);
        assert_eq!(ds.dictionaries.map_id, vec!["10", "11"]);
        assert_eq!(ds.champion_types[1], Some(ChampionType::Slayer));
        assert!(ds.records[0].win && !ds.records[1].win);
    }

    #[test]
    fn ingest_negative_kills_reports_line() {
        let csv = format!(
            "{HEADER}a,m1,100,1800,0,2014,solo,11,2,Mage,carry,mid,3,1,5,9000,8000,14,1\n\
             a,m2,2000,1500,1,2015,draft,11,0,Tank,support,bot,-1,4,9,7000,7000,12,0\n"
        );
        match ingest(csv.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("kills"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_header_only_is_empty() {
        let ds = ingest(HEADER.as_bytes()).unwrap();
        assert!(ds.records.is_empty());
        assert_eq!(ds.n_versions, 0);
    }

    #[test]
    fn ingest_unknown_champion_type_lists_legal_values() {
        let csv = format!("{HEADER}a,m1,100,1800,0,2014,solo,11,2,Wizard,carry,mid,3,1,5,9000,8000,14,1\n");
        let err = ingest(csv.as_bytes()).unwrap_err();
        let text = err.to_string();
        assert!(matches!(err, Error::UnknownChampionType { line: 2, .. }));
        for t in ChampionType::ALL {
            assert!(text.contains(t.as_str()), "{text}");
        }
    }

    #[test]
    fn ingest_rejects_bad_header_and_duplicates() {
        assert!(matches!(
            ingest("a,b,c\n1,2,3\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let csv = format!(
            "{HEADER}a,m1,100,1800,0,2014,solo,11,2,Mage,carry,mid,3,1,5,9000,8000,14,1\n\
             a,m1,200,1800,0,2014,solo,11,2,Mage,carry,mid,3,1,5,9000,8000,14,1\n"
        );
        assert!(matches!(ingest(csv.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn ingest_declared_dims_are_enforced() {
        let csv = format!("{HEADER}a,m1,100,1800,4,2014,solo,11,2,Mage,carry,mid,3,1,5,9000,8000,14,1\n");
        assert!(ingest_with_dims(csv.as_bytes(), 4, 3).is_err());
        assert!(ingest_with_dims(csv.as_bytes(), 5, 3).is_ok());
    }

    #[test]
    fn csv_roundtrip() {
        let recs = vec![record("a", "m1", 10, 1200.0), record("b", "m2", 20, 1300.5)];
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let ds = ingest(buf.as_slice()).unwrap();
        assert_eq!(ds.records, recs);
    }

    #[test]
    fn filter_thresholds() {
        let mut recs = Vec::new();
        for m in 0..20 {
            recs.push(record("A", &format!("a{m}"), m, 10.0));
        }
        for m in 0..5 {
            recs.push(record("B", &format!("b{m}"), m, 10.0));
        }
        let kept = filter_min_matches(&recs, 15);
        assert_eq!(kept.len(), 20);
        assert!(kept.iter().all(|r| r.user_id == "A"));
        assert_eq!(filter_min_matches(&recs, 1), recs);
        assert!(filter_min_matches(&recs, 21).is_empty());
    }

    #[test]
    fn kda_examples() {
        assert_eq!(compute_kda(3, 1, 5), 4.0);
        assert_eq!(compute_kda(0, 0, 0), 0.0);
        assert_eq!(compute_kda(7, 0, 0), 7.0);
    }

    #[test]
    fn sessionize_examples() {
        let a = record("u", "1", 0, 1800.0);
        let b_close = record("u", "2", 1800 + 600, 1800.0);
        let b_far = record("u", "2", 1800 + 1200, 1800.0);
        let labels = |v: Vec<LabeledInstance>| v.iter().map(|i| i.end_of_session).collect::<Vec<_>>();
        assert_eq!(labels(sessionize(&[a.clone(), b_close], 900.0).unwrap()), [false, true]);
        assert_eq!(labels(sessionize(&[a.clone(), b_far.clone()], 900.0).unwrap()), [true, true]);
        assert_eq!(labels(sessionize(&[a.clone()], 900.0).unwrap()), [true]);
        // Exactly at the threshold starts a new session.
        let b_edge = record("u", "2", 1800 + 900, 1800.0);
        assert_eq!(labels(sessionize(&[a.clone(), b_edge], 900.0).unwrap()), [true, true]);
        assert!(matches!(sessionize(&[b_far, a], 900.0), Err(Error::Unsorted { .. })));
    }

    #[test]
    fn label_instances_sorts_each_timeline() {
        let recs = vec![
            record("u", "2", 3000, 100.0),
            record("v", "1", 0, 100.0),
            record("u", "1", 0, 100.0),
        ];
        let out = label_instances(&recs, 900.0).unwrap();
        let ids: Vec<_> = out.iter().map(|i| (i.record.user_id.as_str(), i.record.match_id.as_str())).collect();
        assert_eq!(ids, [("u", "1"), ("u", "2"), ("v", "1")]);
        assert!(out.iter().all(|i| i.end_of_session));
    }

    fn instances(user: &str, n: usize) -> Vec<LabeledInstance> {
        (0..n)
            .map(|m| {
                let r = record(user, &format!("{user}{m}"), m as i64 * 10_000, 100.0);
                LabeledInstance {
                    kda: r.kda(),
                    record: r,
                    end_of_session: true,
                }
            })
            .collect()
    }

    #[test]
    fn split_rounding_and_determinism() {
        let mut all = instances("a", 10);
        all.extend(instances("b", 1));
        let spec = SplitSpec {
            test_fraction: 0.2,
            seed: 42,
        };
        let s = split(&all, &spec).unwrap();
        let a_test = s.test.iter().filter(|&&i| all[i].record.user_id == "a").count();
        assert_eq!(a_test, 2);
        assert_eq!(s.train.len(), 9);
        assert!(s.train.contains(&10));
        assert_eq!(split(&all, &spec).unwrap(), s);
        assert!(split(&all, &SplitSpec { test_fraction: 1.0, seed: 0 }).is_err());
    }

    #[test]
    fn split_keeps_one_train_instance() {
        let all = instances("a", 2);
        let s = split(&all, &SplitSpec { test_fraction: 0.9, seed: 1 }).unwrap();
        assert_eq!(s.train.len(), 1);
        assert_eq!(s.test.len(), 1);
    }

    #[test]
    fn exclusion_rules() {
        assert_eq!(feature_exclusions(Target::Kills, false), BTreeSet::from([PerfField::Kda]));
        assert_eq!(
            feature_exclusions(Target::Kda, false),
            BTreeSet::from([PerfField::Kills, PerfField::Deaths, PerfField::Assists])
        );
        assert!(feature_exclusions(Target::Win, false).is_empty());
        assert_eq!(feature_exclusions(Target::Win, true).len(), 4);
        assert!(matches!(
            feature_exclusions_by_name("gold", false),
            Err(Error::UnknownTarget(_))
        ));
        let kept = included_perf_fields(Target::Kills, &feature_exclusions(Target::Kills, false));
        assert_eq!(kept, [PerfField::Deaths, PerfField::Assists]);
    }
}
