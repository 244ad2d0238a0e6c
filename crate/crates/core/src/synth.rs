//! Synthetic match corpora with planted low-rank structure.
//!
//! Champion `k` has type `k mod 7`. Each user gets a non-negative planted
//! row `U*[i]`, each version `T*[j]` and each champion `F*[k]`; an active
//! (user, version) slice draws its picks from the normalised
//! `Σ_r U*[i,r] T*[j,r] F*[k,r]`. Performance follows per-type archetypes
//! shifted by a per-user skill, and wins follow a logistic model of skill
//! plus a planted user × champion affinity. Sessions are laid out so that
//! breaks inside a session are always below the default session gap and
//! breaks between sessions always above it.

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::{ChampionType, MatchRecord};
use crate::error::{Error, Result};

/// Mean kills, deaths and assists for one champion type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub kills: f64,
    pub deaths: f64,
    pub assists: f64,
}

const fn arch(kills: f64, deaths: f64, assists: f64) -> Archetype {
    Archetype { kills, deaths, assists }
}

/// Archetypes in [`ChampionType::ALL`] order.
pub const DEFAULT_ARCHETYPES: [Archetype; 7] = [
    arch(1.5, 4.0, 12.0),
    arch(5.0, 5.5, 6.0),
    arch(6.0, 5.5, 7.0),
    arch(7.0, 5.0, 6.0),
    arch(8.0, 6.0, 5.0),
    arch(3.0, 5.0, 9.0),
    arch(5.0, 5.0, 7.0),
];

/// Break lengths in seconds. Breaks inside a session are drawn from
/// `intra_gap`, breaks between sessions from `inter_gap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionGaps {
    pub intra_gap: (f64, f64),
    pub inter_gap: (f64, f64),
    /// Probability that a match is followed by another in the same session.
    pub continue_prob: f64,
}

impl Default for SessionGaps {
    fn default() -> Self {
        SessionGaps {
            intra_gap: (30.0, 600.0),
            inter_gap: (1800.0, 14_400.0),
            continue_prob: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub n_versions: usize,
    pub n_champions: usize,
    pub rank: usize,
    pub activity_prob: f64,
    /// Inclusive range of matches per active slice.
    pub matches_per_active_slice: (usize, usize),
    /// Extra slices are activated until every user reaches this many matches.
    pub min_matches_per_user: usize,
    pub session_gaps: SessionGaps,
    pub performance_archetypes: [Archetype; 7],
    pub user_skill_spread: f64,
    /// Scale of a user's skill in kills, deaths and assists per unit of skill.
    pub skill_performance_scale: f64,
    pub performance_noise: f64,
    /// Weight of the standardised user × champion affinity in the win logit.
    pub interaction_strength: f64,
    pub win_bias: f64,
    /// Fraction of users who only play their favourite champion type.
    pub specialist_fraction: f64,
    /// Gamma shape of planted user rows; small values make users focus on
    /// few components.
    pub user_concentration: f64,
    /// Loading of a component on champions outside its own type.
    pub off_type_loading: f64,
    /// Planted version loadings are uniform on `[1 − s, 1 + s]`. Slices are
    /// normalised per (user, version), so the proportion tensor is exactly
    /// low-rank only at `s = 0`.
    pub version_spread: f64,
    pub start_timestamp: i64,
    pub version_spacing_secs: i64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_users: 200,
            n_versions: 20,
            n_champions: 30,
            rank: 4,
            activity_prob: 0.3,
            matches_per_active_slice: (2, 8),
            min_matches_per_user: 15,
            session_gaps: SessionGaps::default(),
            performance_archetypes: DEFAULT_ARCHETYPES,
            user_skill_spread: 0.5,
            skill_performance_scale: 1.0,
            performance_noise: 2.0,
            interaction_strength: 1.0,
            win_bias: 0.0,
            specialist_fraction: 0.05,
            user_concentration: 0.3,
            off_type_loading: 0.05,
            version_spread: 0.5,
            start_timestamp: 1_396_310_400,
            version_spacing_secs: 14 * 86_400,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("activity_prob", self.activity_prob)?;
        prob("specialist_fraction", self.specialist_fraction)?;
        prob("session_gaps.continue_prob", self.session_gaps.continue_prob)?;
        if self.rank == 0 || self.n_users == 0 || self.n_versions == 0 || self.n_champions == 0 {
            return Err(Error::InvalidConfig("rank and all dimensions must be positive".into()));
        }
        let (lo, hi) = self.matches_per_active_slice;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!("invalid matches_per_active_slice ({lo}, {hi})")));
        }
        let a_ok = self
            .performance_archetypes
            .iter()
            .all(|a| a.kills >= 0.0 && a.deaths >= 0.0 && a.assists >= 0.0);
        if !a_ok {
            return Err(Error::InvalidConfig("archetype means must be non-negative".into()));
        }
        let g = &self.session_gaps;
        if !(g.intra_gap.0 >= 0.0 && g.intra_gap.0 <= g.intra_gap.1 && g.inter_gap.0 <= g.inter_gap.1) {
            return Err(Error::InvalidConfig("invalid session gap ranges".into()));
        }
        if !(g.intra_gap.1 < g.inter_gap.0) {
            return Err(Error::InvalidConfig("session breaks must be longer than in-session breaks".into()));
        }
        let nonneg = [
            self.user_skill_spread,
            self.skill_performance_scale,
            self.performance_noise,
            self.off_type_loading,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) || !(self.user_concentration > 0.0) {
            return Err(Error::InvalidConfig("spreads, noise and loadings must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.version_spread) {
            return Err(Error::InvalidConfig(format!("version_spread must lie in [0, 1), got {}", self.version_spread)));
        }
        if !self.interaction_strength.is_finite() || !self.win_bias.is_finite() {
            return Err(Error::InvalidConfig("interaction_strength and win_bias must be finite".into()));
        }
        if self.version_spacing_secs <= 0 {
            return Err(Error::InvalidConfig("version_spacing_secs must be positive".into()));
        }
        Ok(())
    }
}

pub fn champion_type_of(champion: usize) -> ChampionType {
    ChampionType::ALL[champion % ChampionType::COUNT]
}

/// Planted quantities behind a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_ids: Vec<String>,
    pub u: Array2<f64>,
    pub t: Array2<f64>,
    /// Columns sum to 1.
    pub f: Array2<f64>,
    pub champion_types: Vec<ChampionType>,
    pub skill: Vec<f64>,
    /// Standardised user × champion affinity entering the win logit.
    pub affinity: Array2<f64>,
    pub specialists: Vec<String>,
    /// Match ids that end a session.
    pub session_ends: BTreeSet<String>,
    /// Observed (user, version) slices.
    pub active_slices: Vec<(usize, usize)>,
}

impl GroundTruth {
    /// The normalised planted pick distribution of slice `(i, j)`.
    pub fn slice_distribution(&self, i: usize, j: usize) -> Vec<f64> {
        let mut p: Vec<f64> = (0..self.f.nrows())
            .map(|k| (0..self.u.ncols()).map(|r| self.u[[i, r]] * self.t[[j, r]] * self.f[[k, r]]).sum())
            .collect();
        let specialist = self.specialists.binary_search(&self.user_ids[i]).is_ok();
        if specialist {
            let base: Vec<f64> = (0..self.f.nrows())
                .map(|k| (0..self.u.ncols()).map(|r| self.u[[i, r]] * self.f[[k, r]]).sum())
                .collect();
            let fav = favourite_type(&base, &self.champion_types);
            for (k, v) in p.iter_mut().enumerate() {
                if self.champion_types[k] != fav {
                    *v = 0.0;
                }
            }
        }
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }

    pub fn write_json<W: Write>(&self, sink: W) -> Result<()> {
        serde_json::to_writer(sink, self)?;
        Ok(())
    }
}

fn favourite_type(weights: &[f64], types: &[ChampionType]) -> ChampionType {
    let mut by_type = [0.0; ChampionType::COUNT];
    for (w, t) in weights.iter().zip(types) {
        by_type[t.index()] += w;
    }
    let best = (0..ChampionType::COUNT).fold(0, |b, t| if by_type[t] > by_type[b] { t } else { b });
    ChampionType::ALL[best]
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn sample_index(rng: &mut ChaCha8Rng, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().expect("non-empty");
    let x = rng.random::<f64>() * total;
    cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1)
}

fn planted_factors(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let gamma =
        Gamma::new(cfg.user_concentration, 1.0).map_err(|e| Error::InvalidConfig(format!("user_concentration: {e}")))?;
    let r = cfg.rank;
    let u = Array2::from_shape_fn((cfg.n_users, r), |_| gamma.sample(rng) + 1e-3);
    let spread = cfg.version_spread;
    let t = Array2::from_shape_fn((cfg.n_versions, r), |_| uniform(rng, (1.0 - spread, 1.0 + spread)));
    let mut f = Array2::from_shape_fn((cfg.n_champions, r), |(k, c)| {
        let own = champion_type_of(k).index() == c % ChampionType::COUNT;
        let base = if own { 1.0 } else { cfg.off_type_loading };
        base * rng.random_range(0.5..1.5)
    });
    for mut col in f.columns_mut() {
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
    Ok((u, t, f))
}

fn standardized_affinity(u: &Array2<f64>, f: &Array2<f64>) -> Array2<f64> {
    let sums = u.sum_axis(Axis(1));
    let un = u / &sums.insert_axis(Axis(1));
    let mut a = un.dot(&f.t());
    let mean = a.mean().unwrap_or(0.0);
    let std = a.std(0.0);
    if std > 0.0 {
        a.mapv_inplace(|v| (v - mean) / std);
    } else {
        a.fill(0.0);
    }
    a
}

fn role_lane(t: ChampionType) -> (&'static str, &'static str) {
    match t {
        ChampionType::Controller => ("DUO_SUPPORT", "BOTTOM"),
        ChampionType::Marksman => ("DUO_CARRY", "BOTTOM"),
        ChampionType::Slayer => ("NONE", "JUNGLE"),
        ChampionType::Mage | ChampionType::Unique => ("SOLO", "MIDDLE"),
        ChampionType::Fighter | ChampionType::Tank => ("SOLO", "TOP"),
    }
}

const QUEUES: [(&str, &str); 3] = [("RANKED_SOLO", "11"), ("NORMAL_DRAFT", "11"), ("ARAM", "12")];

/// Generates a corpus sorted by user then timestamp, with its ground truth.
pub fn generate(cfg: &GeneratorConfig) -> Result<(Vec<MatchRecord>, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (u, t, f) = planted_factors(cfg, &mut rng)?;
    let champion_types: Vec<ChampionType> = (0..cfg.n_champions).map(champion_type_of).collect();
    let affinity = standardized_affinity(&u, &f);
    let skill_dist = Normal::new(0.0, cfg.user_skill_spread).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.performance_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let skill: Vec<f64> = (0..cfg.n_users).map(|_| skill_dist.sample(&mut rng)).collect();
    let width = (cfg.n_users.max(1) as f64).log10().floor() as usize + 1;
    let user_ids: Vec<String> = (0..cfg.n_users).map(|i| format!("u{i:0width$}")).collect();
    let n_specialists = (cfg.specialist_fraction * cfg.n_users as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n_users).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let specialist_set: BTreeSet<usize> = order[..n_specialists].iter().copied().collect();

    let mut truth = GroundTruth {
        specialists: specialist_set.iter().map(|&i| user_ids[i].clone()).collect(),
        user_ids,
        u,
        t,
        f,
        champion_types,
        skill,
        affinity,
        session_ends: BTreeSet::new(),
        active_slices: Vec::new(),
    };
    truth.specialists.sort();

    let (lo, hi) = cfg.matches_per_active_slice;
    let mut records = Vec::new();
    let mut match_counter = 0usize;
    for i in 0..cfg.n_users {
        let mut counts = vec![0usize; cfg.n_versions];
        for c in counts.iter_mut() {
            if rng.random::<f64>() < cfg.activity_prob {
                *c = rng.random_range(lo..=hi);
            }
        }
        while counts.iter().sum::<usize>() < cfg.min_matches_per_user {
            let idle: Vec<usize> = (0..cfg.n_versions).filter(|&j| counts[j] == 0).collect();
            let j = match idle.choose(&mut rng) {
                Some(&j) => j,
                None => rng.random_range(0..cfg.n_versions),
            };
            counts[j] += rng.random_range(lo..=hi);
        }
        let mut clock = i64::MIN;
        let mut user_records = Vec::new();
        for (j, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            truth.active_slices.push((i, j));
            let dist = truth.slice_distribution(i, j);
            let mut cumulative = dist.clone();
            for k in 1..cumulative.len() {
                cumulative[k] += cumulative[k - 1];
            }
            let window = cfg.start_timestamp + j as i64 * cfg.version_spacing_secs;
            let offset = rng.random_range(0..cfg.version_spacing_secs / 4);
            let inter_min = cfg.session_gaps.inter_gap.0.ceil() as i64;
            clock = clock.saturating_add(inter_min).max(window + offset);
            for _ in 0..n {
                let k = sample_index(&mut rng, &cumulative);
                let ty = truth.champion_types[k];
                let duration = rng.random_range(1200.0_f64..2700.0).round();
                let arch = cfg.performance_archetypes[ty.index()];
                let s = truth.skill[i] * cfg.skill_performance_scale;
                let mut perf = |mean: f64, sign: f64| -> u32 { (mean + sign * s + noise.sample(&mut rng)).round().max(0.0) as u32 };
                let kills = perf(arch.kills, 1.0);
                let deaths = perf(arch.deaths, -1.0);
                let assists = perf(arch.assists, 1.0);
                let logit = cfg.win_bias + truth.skill[i] + cfg.interaction_strength * truth.affinity[[i, k]];
                let win = rng.random::<f64>() < crate::decoder::sigmoid(logit);
                let (queue, map_id) = QUEUES[rng.random_range(0..QUEUES.len())];
                let (role, lane) = role_lane(ty);
                let gold_earned = (5.0 * duration + 300.0 * f64::from(kills) + 150.0 * f64::from(assists)).round();
                let season = 2014 + (clock - cfg.start_timestamp).div_euclid(365 * 86_400);
                user_records.push(MatchRecord {
                    user_id: truth.user_ids[i].clone(),
                    match_id: format!("m{match_counter}"),
                    timestamp: clock,
                    duration,
                    version_index: j,
                    season: format!("S{season}"),
                    queue_type: queue.to_string(),
                    map_id: map_id.to_string(),
                    champion_id: k,
                    champion_type: ty,
                    role: role.to_string(),
                    lane: lane.to_string(),
                    kills,
                    deaths,
                    assists,
                    gold_earned,
                    gold_spent: (0.9 * gold_earned).round(),
                    champion_level: (6.0 + duration / 200.0).min(18.0).floor(),
                    win,
                });
                match_counter += 1;
                let end = clock + duration as i64;
                let continues = rng.random::<f64>() < cfg.session_gaps.continue_prob;
                let gap = if continues {
                    uniform(&mut rng, cfg.session_gaps.intra_gap)
                } else {
                    uniform(&mut rng, cfg.session_gaps.inter_gap)
                };
                clock = end + gap.round() as i64;
            }
        }
        // A match ends a session when the following break is at least the
        // smallest between-session break, or when it is the user's last.
        let gap_min = cfg.session_gaps.inter_gap.0;
        for w in 0..user_records.len() {
            let ends = match user_records.get(w + 1) {
                None => true,
                Some(next) => (next.timestamp as f64 - user_records[w].end_time()) >= gap_min,
            };
            if ends {
                truth.session_ends.insert(user_records[w].match_id.clone());
            }
        }
        records.extend(user_records);
    }
    if truth.active_slices.is_empty() {
        return Err(Error::InvalidConfig("configuration produced no active slices".into()));
    }
    Ok((records, truth))
}

/// Empirical pick distribution per observed slice, aligned with `slices`.
pub fn empirical_distributions(
    records: &[MatchRecord],
    user_ids: &[String],
    slices: &[(usize, usize)],
    n_champions: usize,
) -> Vec<Array1<f64>> {
    let index: std::collections::HashMap<&str, usize> =
        user_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let pos: std::collections::HashMap<(usize, usize), usize> =
        slices.iter().enumerate().map(|(s, &ij)| (ij, s)).collect();
    let mut out = vec![Array1::<f64>::zeros(n_champions); slices.len()];
    for r in records {
        if let Some(&s) = index.get(r.user_id.as_str()).and_then(|i| pos.get(&(*i, r.version_index))) {
            out[s][r.champion_id] += 1.0;
        }
    }
    for d in out.iter_mut() {
        let s = d.sum();
        if s > 0.0 {
            d.mapv_inplace(|v| v / s);
        }
    }
    out
}
