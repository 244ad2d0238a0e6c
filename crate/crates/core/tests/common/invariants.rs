//! Invariant checks driven by a deterministic proptest runner. Each check
//! returns `Err` with the shrunk counterexample on failure.

use std::collections::{BTreeMap, BTreeSet};

use ctxembed::bounded::{minimize_nonnegative, BoundedOptions, Method};
use ctxembed::data_model::{
    included_perf_fields, label_instances, write_csv, Dataset, LabeledInstance, MatchRecord, PerfField, SplitSpec, Target, UserIndex,
};
use ctxembed::decoder::FeatureMode;
use ctxembed::factorization::{factorize, masked_gradient, masked_loss, FitOptions, KruskalFactors};
use ctxembed::pipeline::{fit_embeddings, prepare, split_data, train_decoder, ExperimentConfig};
use ctxembed::synth;
use ctxembed::tensor_builder::build_tensor;
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{brute_force_loss, quick_decoder, random_data, record, small_corpus, small_corpus_config, DenseMasked};

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// (user, version, champion, break before the match, duration)
type Event = (usize, usize, usize, i64, u16);

const N_VERSIONS: usize = 4;
const N_CHAMPIONS: usize = 9;

fn events() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0usize..5, 0..N_VERSIONS, 0..N_CHAMPIONS, 0i64..2400, 60u16..2400), 1..80)
}

/// Per-user timelines laid out from the events, in event order.
fn timeline(events: &[Event]) -> Vec<MatchRecord> {
    let mut clock: BTreeMap<usize, i64> = BTreeMap::new();
    events
        .iter()
        .enumerate()
        .map(|(n, &(u, v, c, gap, dur))| {
            let t = clock.entry(u).or_insert(1_500_000_000);
            *t += gap;
            let r = record(&format!("p{u}"), &format!("m{n}"), *t, f64::from(dur), v, c);
            *t += i64::from(dur);
            r
        })
        .collect()
}

fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// Every observed slice of a built tensor is the pick distribution of its
/// (user, version) pair, and the build ignores record order.
pub fn slice_stochasticity(cases: u32) -> Result<(), String> {
    run(cases, (events(), any::<u64>()), |(evs, seed)| {
        let records = timeline(&evs);
        let users = UserIndex::from_records(&records);
        let tensor = build_tensor(&records, &users, N_VERSIONS, N_CHAMPIONS).unwrap();

        let mut counts: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for r in &records {
            let i = users.get(&r.user_id).unwrap();
            counts.entry((i, r.version_index)).or_insert_with(|| vec![0.0; N_CHAMPIONS])[r.champion_id] += 1.0;
        }
        let expected: Vec<(usize, usize)> = counts.keys().copied().collect();
        prop_assert_eq!(tensor.observed_slices(), expected.as_slice());

        let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, k, v) in tensor.entries() {
            let c = &counts[&(i, j)];
            let total: f64 = c.iter().sum();
            prop_assert!((v - c[k] / total).abs() <= 1e-15);
            *sums.entry((i, j)).or_default() += v;
        }
        for ij in &expected {
            prop_assert!((sums[ij] - 1.0).abs() <= 1e-12, "slice {:?} sums to {}", ij, sums[ij]);
        }
        for (&(i, j), c) in &counts {
            for (k, &n) in c.iter().enumerate() {
                if n == 0.0 {
                    prop_assert_eq!(tensor.value(i, j, k), Some(0.0));
                }
            }
        }
        let permuted = build_tensor(&shuffled(&records, seed), &users, N_VERSIONS, N_CHAMPIONS).unwrap();
        prop_assert_eq!(&permuted, &tensor);
        Ok(())
    })
}

fn small_dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (2usize..7, 2usize..6, 2usize..7)
}

fn flatten(f: &KruskalFactors) -> Vec<f64> {
    f.u.iter().chain(f.t.iter()).chain(f.f.iter()).copied().collect()
}

fn unflatten(x: &[f64], (ni, nj, nk): (usize, usize, usize), r: usize) -> KruskalFactors {
    let a = ni * r;
    let b = a + nj * r;
    KruskalFactors::new(
        Array2::from_shape_vec((ni, r), x[..a].to_vec()).unwrap(),
        Array2::from_shape_vec((nj, r), x[a..b].to_vec()).unwrap(),
        Array2::from_shape_vec((nk, r), x[b..].to_vec()).unwrap(),
    )
    .unwrap()
}

/// Factors stay non-negative: at every point the bounded optimizer visits,
/// after every restart, and in the returned fit. The accepted-step loss
/// history never increases.
pub fn factor_nonnegativity(cases: u32) -> Result<(), String> {
    run(cases, (small_dims(), 1usize..4, any::<u64>(), any::<bool>()), |(dims, rank, seed, pg)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_data(dims, 0.5, 0.4, &mut rng);
        let tensor = data.tensor();
        let method = if pg { Method::ProjectedGradient } else { Method::QuasiNewtonBounded };

        let x0: Vec<f64> = (0..(dims.0 + dims.1 + dims.2) * rank).map(|_| rng.random::<f64>()).collect();
        let mut min_seen = f64::INFINITY;
        let objective = |x: &[f64], g: &mut [f64]| {
            min_seen = x.iter().copied().fold(min_seen, f64::min);
            let f = unflatten(x, dims, rank);
            let grad = masked_gradient(&f, &tensor).unwrap();
            for (o, v) in g.iter_mut().zip(grad.u.iter().chain(grad.t.iter()).chain(grad.f.iter())) {
                *o = *v;
            }
            brute_force_loss(&f, &data)
        };
        let opts = BoundedOptions {
            method,
            max_iterations: 40,
            ..BoundedOptions::default()
        };
        let res = minimize_nonnegative(objective, x0, &opts).unwrap();
        prop_assert!(min_seen >= 0.0, "optimizer evaluated a point with entry {}", min_seen);
        prop_assert!(res.x.iter().all(|v| *v >= 0.0));
        for w in res.history.windows(2) {
            prop_assert!(w[1] <= w[0], "loss rose from {} to {}", w[0], w[1]);
        }

        if tensor.n_observed_slices() > 0 {
            let fit = factorize(
                &tensor,
                &FitOptions {
                    rank,
                    max_iterations: 40,
                    restarts: 2,
                    seed,
                    optimizer: method,
                    ..FitOptions::default()
                },
            )
            .unwrap();
            prop_assert!(fit.factors.min_entry() >= 0.0);
            prop_assert!(fit.loss.is_finite());
            for w in fit.history.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert_eq!(fit.loss.to_bits(), masked_loss(&fit.factors, &tensor).unwrap().to_bits());
        }
        Ok(())
    })
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Rewriting every value in unobserved slices changes neither the tensor,
/// the loss, the gradient nor the fitted factors.
pub fn mask_insensitivity(cases: u32) -> Result<(), String> {
    run(cases, (small_dims(), 1usize..4, any::<u64>()), |(dims, rank, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_data(dims, 0.4, 0.3, &mut rng);
        if !data.mask.iter().any(|&m| m) {
            return Ok(());
        }
        let (ni, nj, nk) = dims;
        let mut values = data.values.clone();
        for i in 0..ni {
            for j in 0..nj {
                if !data.observed(i, j) {
                    for k in 0..nk {
                        values[(i * nj + j) * nk + k] = rng.random_range(0.0..1e6);
                    }
                }
            }
        }
        let other = DenseMasked {
            dims,
            values,
            mask: data.mask.clone(),
        };
        let (a, b) = (data.tensor(), other.tensor());
        prop_assert_eq!(&a, &b);

        let probe = super::random_factors(dims, rank, &mut rng);
        prop_assert_eq!(masked_loss(&probe, &a).unwrap().to_bits(), masked_loss(&probe, &b).unwrap().to_bits());
        let (ga, gb) = (masked_gradient(&probe, &a).unwrap(), masked_gradient(&probe, &b).unwrap());
        prop_assert_eq!(bits(ga.u.as_slice().unwrap()), bits(gb.u.as_slice().unwrap()));
        prop_assert_eq!(bits(ga.t.as_slice().unwrap()), bits(gb.t.as_slice().unwrap()));
        prop_assert_eq!(bits(ga.f.as_slice().unwrap()), bits(gb.f.as_slice().unwrap()));

        let opts = FitOptions {
            rank,
            max_iterations: 30,
            restarts: 2,
            seed,
            ..FitOptions::default()
        };
        let (fa, fb) = (factorize(&a, &opts).unwrap(), factorize(&b, &opts).unwrap());
        prop_assert_eq!(bits(&flatten(&fa.factors)), bits(&flatten(&fb.factors)));
        prop_assert_eq!(fa.loss.to_bits(), fb.loss.to_bits());
        Ok(())
    })
}

/// Session labels partition each user's timeline: every record appears
/// once, a session ends exactly where the next break reaches the gap, and
/// the number of sessions equals the number of end-of-session flags.
pub fn sessionization_partition(cases: u32) -> Result<(), String> {
    run(cases, (events(), any::<u64>(), 1u32..3000), |(evs, seed, gap)| {
        let gap = f64::from(gap);
        let records = timeline(&evs);
        let labelled = label_instances(&shuffled(&records, seed), gap).unwrap();

        let ids_in: BTreeSet<&str> = records.iter().map(|r| r.match_id.as_str()).collect();
        let ids_out: Vec<&str> = labelled.iter().map(|l| l.record.match_id.as_str()).collect();
        prop_assert_eq!(ids_out.len(), records.len());
        prop_assert_eq!(ids_out.iter().copied().collect::<BTreeSet<_>>(), ids_in);

        let mut by_user: BTreeMap<&str, Vec<&MatchRecord>> = BTreeMap::new();
        for r in &records {
            by_user.entry(&r.user_id).or_default().push(r);
        }
        let mut expected_end: BTreeMap<&str, bool> = BTreeMap::new();
        let mut sessions = 0usize;
        for timeline in by_user.values_mut() {
            timeline.sort_by_key(|r| r.timestamp);
            let mut start = 0;
            for n in 0..timeline.len() {
                let last = n + 1 == timeline.len();
                let ends = last || (timeline[n + 1].timestamp as f64) - (timeline[n].timestamp as f64 + timeline[n].duration) >= gap;
                expected_end.insert(&timeline[n].match_id, ends);
                if ends {
                    prop_assert!(n >= start);
                    sessions += 1;
                    start = n + 1;
                }
            }
        }
        for l in &labelled {
            prop_assert_eq!(l.end_of_session, expected_end[l.record.match_id.as_str()], "match {}", &l.record.match_id);
        }
        prop_assert_eq!(labelled.iter().filter(|l| l.end_of_session).count(), sessions);
        Ok(())
    })
}

fn set_field(inst: &mut LabeledInstance, field: PerfField, v: f64) {
    match field {
        PerfField::Kills => inst.record.kills = v as u32,
        PerfField::Deaths => inst.record.deaths = v as u32,
        PerfField::Assists => inst.record.assists = v as u32,
        PerfField::Kda => inst.kda = v,
    }
}

fn target_strategy() -> impl Strategy<Value = (Target, bool)> {
    prop_oneof![
        Just((Target::Kills, false)),
        Just((Target::Deaths, false)),
        Just((Target::Assists, false)),
        Just((Target::Kda, false)),
        Just((Target::Win, true)),
        Just((Target::EndOfSession, true)),
    ]
}

/// Shuffling the values of every excluded performance field across
/// instances, in both train and test, leaves trained predictions
/// bit-identical for both decoder modes.
pub fn excluded_feature_non_influence(cases: u32) -> Result<(), String> {
    run(cases, (0u64..1000, target_strategy()), |(seed, (target, exclude_performance))| {
        let dataset = Dataset::from_records(small_corpus(seed)).unwrap();
        let prepared = prepare(&dataset, 15, 900.0).unwrap();
        let config = ExperimentConfig {
            target,
            exclude_performance,
            rank: 3,
            restarts: 1,
            max_iterations: 30,
            decoder: quick_decoder(seed),
            split: SplitSpec {
                test_fraction: 0.2,
                seed,
            },
            ..ExperimentConfig::default()
        };
        let excluded = config.exclusions();
        prop_assert!(!excluded.is_empty());

        let mut permuted = prepared.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for &field in &excluded {
            let mut values: Vec<f64> = permuted.instances.iter().map(|i| field.value(i)).collect();
            values.shuffle(&mut rng);
            for (inst, v) in permuted.instances.iter_mut().zip(values) {
                set_field(inst, field, v);
            }
        }

        let data = split_data(&prepared, target, &config.split).unwrap();
        let data_p = split_data(&permuted, target, &config.split).unwrap();
        let emb = fit_embeddings(&data.train, prepared.n_versions, prepared.n_champions, &config.fit_options())
            .unwrap()
            .embeddings;
        for mode in [FeatureMode::Embedding, FeatureMode::Baseline] {
            let a = train_decoder(&data, &prepared, Some(&emb), mode, &config).unwrap();
            let b = train_decoder(&data_p, &permuted, Some(&emb), mode, &config).unwrap();
            let ctx = emb.context();
            let ctx = (mode == FeatureMode::Embedding).then_some(&ctx);
            let pa = a.predict_instances(&data.test, ctx).unwrap();
            let pb = b.predict_instances(&data_p.test, ctx).unwrap();
            prop_assert_eq!(bits(&pa), bits(&pb), "{:?} {:?}", mode, target);
        }

        if let Some(&field) = included_perf_fields(target, &excluded).first() {
            let mut control = prepared.clone();
            let mut values: Vec<f64> = control.instances.iter().map(|i| field.value(i)).collect();
            values.reverse();
            for (inst, v) in control.instances.iter_mut().zip(values) {
                set_field(inst, field, v);
            }
            let data_c = split_data(&control, target, &config.split).unwrap();
            let a = train_decoder(&data, &prepared, None, FeatureMode::Baseline, &config).unwrap();
            let c = train_decoder(&data_c, &control, None, FeatureMode::Baseline, &config).unwrap();
            let pa = a.predict_instances(&data.test, None).unwrap();
            let pc = c.predict_instances(&data_c.test, None).unwrap();
            prop_assert_ne!(bits(&pa), bits(&pc), "included field {:?} had no effect", field);
        }
        Ok(())
    })
}

/// Generation, factorization and decoder training reproduce bit-identical
/// outputs under a fixed seed.
pub fn deterministic_reruns(cases: u32) -> Result<(), String> {
    run(cases, 0u64..1_000_000, |seed| {
        let cfg = small_corpus_config(seed);
        let csv = |records: &[MatchRecord]| {
            let mut buf = Vec::new();
            write_csv(records, &mut buf).unwrap();
            buf
        };
        let (r1, g1) = synth::generate(&cfg).unwrap();
        let (r2, g2) = synth::generate(&cfg).unwrap();
        prop_assert_eq!(csv(&r1), csv(&r2));
        prop_assert!(g1 == g2);

        let dataset = Dataset::from_records(r1).unwrap();
        let prepared = prepare(&dataset, 15, 900.0).unwrap();
        let config = ExperimentConfig {
            rank: 3,
            restarts: 2,
            max_iterations: 30,
            factor_seed: seed,
            decoder: quick_decoder(seed),
            ..ExperimentConfig::default()
        };
        let data = split_data(&prepared, config.target, &config.split).unwrap();
        let fit = |_: ()| fit_embeddings(&data.train, prepared.n_versions, prepared.n_champions, &config.fit_options()).unwrap();
        let (e1, e2) = (fit(()), fit(()));
        prop_assert_eq!(bits(&flatten(&e1.embeddings.factors)), bits(&flatten(&e2.embeddings.factors)));
        prop_assert_eq!(e1.fit.loss.to_bits(), e2.fit.loss.to_bits());

        let emb = e1.embeddings;
        let m1 = train_decoder(&data, &prepared, Some(&emb), FeatureMode::Embedding, &config).unwrap();
        let m2 = train_decoder(&data, &prepared, Some(&emb), FeatureMode::Embedding, &config).unwrap();
        prop_assert_eq!(serde_json::to_string(&m1).unwrap(), serde_json::to_string(&m2).unwrap());
        let ctx = emb.context();
        prop_assert_eq!(
            bits(&m1.predict_instances(&data.test, Some(&ctx)).unwrap()),
            bits(&m2.predict_instances(&data.test, Some(&ctx)).unwrap())
        );
        Ok(())
    })
}
