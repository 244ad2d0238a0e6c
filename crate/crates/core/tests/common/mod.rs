//! Oracles, fixtures and invariant checks shared by the integration suites.
//!
//! Every oracle here is written against dense arrays and plain loops so it
//! shares no code path with the library routine it checks.

#![allow(dead_code)]

pub mod invariants;

use ctxembed::data_model::{ChampionType, MatchRecord};
use ctxembed::decoder::TrainConfig;
use ctxembed::factorization::KruskalFactors;
use ctxembed::synth::{self, GeneratorConfig};
use ctxembed::tensor_builder::SparseMaskedTensor;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A masked tensor together with its dense values and slice mask.
pub struct DenseMasked {
    pub dims: (usize, usize, usize),
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DenseMasked {
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, nj, nk) = self.dims;
        self.values[(i * nj + j) * nk + k]
    }

    pub fn observed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.dims.1 + j]
    }

    pub fn tensor(&self) -> SparseMaskedTensor {
        SparseMaskedTensor::from_dense_masked(self.dims, &self.values, &self.mask).unwrap()
    }
}

pub fn random_factors(dims: (usize, usize, usize), rank: usize, rng: &mut ChaCha8Rng) -> KruskalFactors {
    let (ni, nj, nk) = dims;
    let mut m = |n: usize| Array2::from_shape_fn((n, rank), |_| rng.random::<f64>());
    let (u, t, f) = (m(ni), m(nj), m(nk));
    KruskalFactors::new(u, t, f).unwrap()
}

/// Exactly `round(fraction · I·J)` observed slices, chosen uniformly.
pub fn random_mask(ni: usize, nj: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let n_obs = ((ni * nj) as f64 * fraction).round() as usize;
    let mut mask: Vec<bool> = (0..ni * nj).map(|c| c < n_obs).collect();
    mask.shuffle(rng);
    mask
}

/// Dense `Σ_r U T F` for every cell.
pub fn dense_reconstruction(f: &KruskalFactors) -> Vec<f64> {
    let (ni, nj, nk) = (f.u.nrows(), f.t.nrows(), f.f.nrows());
    let mut out = vec![0.0; ni * nj * nk];
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                let mut s = 0.0;
                for r in 0..f.u.ncols() {
                    s += f.u[[i, r]] * f.t[[j, r]] * f.f[[k, r]];
                }
                out[(i * nj + j) * nk + k] = s;
            }
        }
    }
    out
}

/// Exactly low-rank data from planted factors, masked at `fraction` of slices.
pub fn planted(dims: (usize, usize, usize), rank: usize, fraction: f64, seed: u64) -> (KruskalFactors, DenseMasked) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A separate stream keeps planted factors apart from the fit initializer's draws.
    rng.set_stream(1);
    let factors = random_factors(dims, rank, &mut rng);
    let values = dense_reconstruction(&factors);
    let mask = random_mask(dims.0, dims.1, fraction, &mut rng);
    (factors, DenseMasked { dims, values, mask })
}

/// Unstructured non-negative data with about `zero_fraction` of cells zero
/// and `observed` of slices observed.
pub fn random_data(dims: (usize, usize, usize), observed: f64, zero_fraction: f64, rng: &mut ChaCha8Rng) -> DenseMasked {
    let (ni, nj, nk) = dims;
    let values = (0..ni * nj * nk)
        .map(|_| if rng.random::<f64>() < zero_fraction { 0.0 } else { rng.random::<f64>() })
        .collect();
    let mask = random_mask(ni, nj, observed, rng);
    DenseMasked { dims, values, mask }
}

/// `½ Σ_{observed (i,j)} Σ_k (x − x̂)²` by enumeration over the dense cube.
pub fn brute_force_loss(factors: &KruskalFactors, data: &DenseMasked) -> f64 {
    let recon = dense_reconstruction(factors);
    let (ni, nj, nk) = data.dims;
    let mut loss = 0.0;
    for i in 0..ni {
        for j in 0..nj {
            if !data.observed(i, j) {
                continue;
            }
            for k in 0..nk {
                let c = (i * nj + j) * nk + k;
                let r = data.values[c] - recon[c];
                loss += 0.5 * r * r;
            }
        }
    }
    loss
}

/// Central finite differences of [`brute_force_loss`], in `U, T, F`
/// row-major order.
pub fn finite_difference_gradient(factors: &KruskalFactors, data: &DenseMasked, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for which in 0..3 {
        let n = match which {
            0 => factors.u.len(),
            1 => factors.t.len(),
            _ => factors.f.len(),
        };
        for p in 0..n {
            let eval = |delta: f64| {
                let mut g = factors.clone();
                let m = match which {
                    0 => &mut g.u,
                    1 => &mut g.t,
                    _ => &mut g.f,
                };
                m.as_slice_mut().unwrap()[p] += delta;
                brute_force_loss(&g, data)
            };
            out.push((eval(step) - eval(-step)) / (2.0 * step));
        }
    }
    out
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_difference(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting
/// one half. Exact in rational arithmetic: returns `(numerator, denominator)`
/// with the numerator doubled.
pub fn pairwise_auc_parts(scores: &[f64], labels: &[f64]) -> (u64, u64) {
    let mut twice_wins = 0u64;
    let mut pairs = 0u64;
    for (sp, lp) in scores.iter().zip(labels) {
        if *lp != 1.0 {
            continue;
        }
        for (sn, ln) in scores.iter().zip(labels) {
            if *ln != 0.0 {
                continue;
            }
            pairs += 1;
            if sp > sn {
                twice_wins += 2;
            } else if sp == sn {
                twice_wins += 1;
            }
        }
    }
    (twice_wins, 2 * pairs)
}

pub fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (num, den) = pairwise_auc_parts(scores, labels);
    num as f64 / den as f64
}

/// RMSE by compensated summation.
pub fn reference_rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (p, t) in pred.iter().zip(truth) {
        let y = (p - t) * (p - t) - comp;
        let s = sum + y;
        comp = (s - sum) - y;
        sum = s;
    }
    (sum / pred.len() as f64).sqrt()
}

pub fn record(user: &str, match_id: &str, timestamp: i64, duration: f64, version: usize, champion: usize) -> MatchRecord {
    MatchRecord {
        user_id: user.to_string(),
        match_id: match_id.to_string(),
        timestamp,
        duration,
        version_index: version,
        season: "S1".into(),
        queue_type: "RANKED_SOLO".into(),
        map_id: "11".into(),
        champion_id: champion,
        champion_type: ChampionType::ALL[champion % ChampionType::COUNT],
        role: "SOLO".into(),
        lane: "TOP".into(),
        kills: (champion % 5) as u32,
        deaths: (version % 4) as u32,
        assists: ((champion + version) % 7) as u32,
        gold_earned: 9000.0,
        gold_spent: 8500.0,
        champion_level: 14.0,
        win: (champion + version) % 2 == 0,
    }
}

/// A corpus small enough for decoder training inside a property test.
pub fn small_corpus_config(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_users: 24,
        n_versions: 6,
        n_champions: 14,
        rank: 3,
        activity_prob: 0.6,
        matches_per_active_slice: (2, 5),
        min_matches_per_user: 15,
        seed,
        ..GeneratorConfig::default()
    }
}

pub fn small_corpus(seed: u64) -> Vec<MatchRecord> {
    synth::generate(&small_corpus_config(seed)).unwrap().0
}

/// A narrow network that trains in milliseconds.
pub fn quick_decoder(seed: u64) -> TrainConfig {
    TrainConfig {
        hidden_sizes: vec![8, 4, 2],
        max_epochs: 4,
        batch_size: 64,
        seed,
        ..TrainConfig::default()
    }
}
