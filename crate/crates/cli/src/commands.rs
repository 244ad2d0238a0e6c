use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ctxembed::behavior_analysis::{
    champion_type_activation, classify_generalists_specialists, component_labels, engagement_summary, histogram,
    label_counts, performance_by_type, pick_rate_activation_correlation, pick_rates, user_profiles, Masking,
    LABEL_THRESHOLD,
};
use ctxembed::data_model::{
    ingest_path, write_csv, ChampionType, Dataset, PerfField, SplitSpec, Target, UserIndex, DEFAULT_MIN_MATCHES,
    DEFAULT_SESSION_GAP_SECS,
};
use ctxembed::decoder::{self, DecoderModel, FeatureMode, TrainConfig};
use ctxembed::factorization::{read_factor_csv, write_factor_csv, KruskalFactors, RankSelection};
use ctxembed::pipeline::{
    evaluate_decoder, fit_embeddings, prepare, split_data, sweep_ranks, train_decoder, Embeddings,
    ExperimentConfig, Prepared, SweepEvaluator,
};
use ctxembed::synth::{generate, GeneratorConfig};
use ctxembed::tensor_builder::{build_tensor, density};
use ctxembed::metrics::EvalReport;

use crate::output::{effective, sha256_file, sha256_parts, Staging, VERSION};
use crate::{AnalyzeArgs, EvaluateArgs, FactorizeArgs, IngestArgs, SynthArgs, TrainArgs};

const FACTOR_META: &str = "factors.json";
const EFFECTIVE_CONFIG: &str = "effective_config.json";

fn load_config<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn load_dataset(path: &Path) -> Result<(Dataset, String)> {
    let dataset = ingest_path(path).with_context(|| format!("ingesting {}", path.display()))?;
    let hash = sha256_file(path)?;
    Ok((dataset, hash))
}

fn inputs(pairs: &[(&str, &Path)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|(k, p)| (k.to_string(), p.display().to_string()))
        .collect()
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg: GeneratorConfig = load_config(args.common.config.as_ref())?;
    if let Some(v) = args.users {
        cfg.n_users = v;
    }
    if let Some(v) = args.versions {
        cfg.n_versions = v;
    }
    if let Some(v) = args.champions {
        cfg.n_champions = v;
    }
    if let Some(v) = args.rank {
        cfg.rank = v;
    }
    if let Some(v) = args.interaction_strength {
        cfg.interaction_strength = v;
    }
    if let Some(v) = args.common.seed {
        cfg.seed = v;
    }
    let (records, truth) = generate(&cfg)?;
    let mut out = Staging::new(&args.output_dir)?;
    let mut w = out.create("matches.csv")?;
    write_csv(&records, &mut w)?;
    w.flush()?;
    drop(w);
    let mut w = out.create("ground_truth.json")?;
    truth.write_json(&mut w)?;
    w.flush()?;
    drop(w);
    out.write_json(EFFECTIVE_CONFIG, &effective("synth", Vec::new(), &cfg))?;
    out.commit()?;
    println!(
        "wrote {} matches for {} users to {}",
        records.len(),
        cfg.n_users,
        args.output_dir.join("matches.csv").display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct PrepConfig {
    min_matches: usize,
    session_gap_secs: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            min_matches: DEFAULT_MIN_MATCHES,
            session_gap_secs: DEFAULT_SESSION_GAP_SECS,
        }
    }
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    dataset_sha256: String,
    n_records: usize,
    n_users: usize,
    n_versions: usize,
    n_champions: usize,
    champion_types: Vec<Option<ChampionType>>,
    n_records_kept: usize,
    n_users_kept: usize,
    observed_slices: usize,
    nonzero_cells: usize,
    density: f64,
    sessions: usize,
    win_rate: f64,
    seasons: Vec<String>,
    queue_types: Vec<String>,
    roles: Vec<String>,
    lanes: Vec<String>,
    map_ids: Vec<String>,
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let cfg: PrepConfig = load_config(args.common.config.as_ref())?;
    let (dataset, hash) = load_dataset(&args.input)?;
    let prepared = prepare(&dataset, cfg.min_matches, cfg.session_gap_secs)?;
    let records: Vec<_> = prepared.instances.iter().map(|i| i.record.clone()).collect();
    let users = UserIndex::from_records(&records);
    let tensor = build_tensor(&records, &users, dataset.n_versions, dataset.n_champions)?;
    let d = &dataset.dictionaries;
    let summary = IngestSummary {
        dataset_sha256: hash,
        n_records: dataset.records.len(),
        n_users: dataset.user_index().len(),
        n_versions: dataset.n_versions,
        n_champions: dataset.n_champions,
        champion_types: dataset.champion_types.clone(),
        n_records_kept: records.len(),
        n_users_kept: users.len(),
        observed_slices: tensor.n_observed_slices(),
        nonzero_cells: tensor.n_nonzeros(),
        density: density(&tensor),
        sessions: prepared.instances.iter().filter(|i| i.end_of_session).count(),
        win_rate: records.iter().filter(|r| r.win).count() as f64 / records.len() as f64,
        seasons: d.season.clone(),
        queue_types: d.queue_type.clone(),
        roles: d.role.clone(),
        lanes: d.lane.clone(),
        map_ids: d.map_id.clone(),
    };
    if let Some(dir) = &args.output_dir {
        let mut out = Staging::new(dir)?;
        out.write_json("summary.json", &summary)?;
        out.write_json(EFFECTIVE_CONFIG, &effective("ingest", inputs(&[("input", &args.input)]), &cfg))?;
        out.commit()?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct FactorizeConfig {
    rank: usize,
    rank_sweep: Option<Vec<usize>>,
    sweep_evaluator: SweepEvaluator,
    /// Share of training slices (or instances) held out to score a sweep.
    holdout_fraction: f64,
    /// Relative slack within which the smallest rank wins a sweep.
    selection_tolerance: f64,
    restarts: usize,
    max_iterations: usize,
    seed: u64,
    split: SplitSpec,
    min_matches: usize,
    session_gap_secs: f64,
    /// Decoder settings used by the downstream sweep evaluator.
    target: Target,
    decoder: TrainConfig,
}

impl Default for FactorizeConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        FactorizeConfig {
            rank: e.rank,
            rank_sweep: None,
            sweep_evaluator: SweepEvaluator::Reconstruction,
            holdout_fraction: 0.1,
            selection_tolerance: 0.005,
            restarts: e.restarts,
            max_iterations: e.max_iterations,
            seed: 0,
            split: e.split,
            min_matches: e.min_matches,
            session_gap_secs: e.session_gap_secs,
            target: e.target,
            decoder: e.decoder,
        }
    }
}

impl FactorizeConfig {
    fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            target: self.target,
            split: self.split,
            rank: self.rank,
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            factor_seed: self.seed,
            decoder: self.decoder.clone(),
            exclude_performance: false,
            min_matches: self.min_matches,
            session_gap_secs: self.session_gap_secs,
        }
    }
}

/// Metadata written next to the factor CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FactorMeta {
    run_id: String,
    tool_version: String,
    dataset_sha256: String,
    rank: usize,
    seed: u64,
    loss: f64,
    iterations: usize,
    best_restart: usize,
    split: SplitSpec,
    min_matches: usize,
    session_gap_secs: f64,
    n_users: usize,
    n_versions: usize,
    n_champions: usize,
    sweep: Option<RankSelection>,
}

/// Parses `lo..hi` (inclusive), `lo..=hi` or `a,b,c`.
fn parse_ranks(spec: &str) -> Result<Vec<usize>> {
    let spec = spec.trim();
    let ranks: Vec<usize> = if let Some((lo, hi)) = spec.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let lo: usize = lo.trim().parse().with_context(|| format!("bad rank range {spec:?}"))?;
        let hi: usize = hi.trim().parse().with_context(|| format!("bad rank range {spec:?}"))?;
        (lo..=hi).collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad rank list {spec:?}")))
            .collect::<Result<_>>()?
    };
    ensure!(!ranks.is_empty() && ranks.iter().all(|&r| r > 0), "rank sweep {spec:?} must list positive ranks");
    Ok(ranks)
}

fn write_factor_file(out: &mut Staging, name: &str, m: &ndarray::Array2<f64>, ids: &[String]) -> Result<()> {
    let mut w = out.create(name)?;
    write_factor_csv(m, ids, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn factorize(args: FactorizeArgs) -> Result<()> {
    let mut cfg: FactorizeConfig = load_config(args.common.config.as_ref())?;
    if let Some(r) = args.rank {
        cfg.rank = r;
        cfg.rank_sweep = None;
    }
    if let Some(s) = &args.rank_sweep {
        cfg.rank_sweep = Some(parse_ranks(s)?);
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
        cfg.split.seed = s;
    }
    if let Some(f) = args.test_fraction {
        cfg.split.test_fraction = f;
    }
    if let Some(t) = args.target {
        cfg.target = t;
    }
    let (dataset, hash) = load_dataset(&args.input)?;
    let prepared = prepare(&dataset, cfg.min_matches, cfg.session_gap_secs)?;
    let data = split_data(&prepared, cfg.target, &cfg.split)?;

    let sweep = match &cfg.rank_sweep {
        Some(candidates) => {
            let sel = sweep_ranks(
                &prepared,
                &data,
                candidates,
                &cfg.experiment(),
                cfg.sweep_evaluator,
                cfg.holdout_fraction,
                cfg.selection_tolerance,
            )?;
            info!("rank sweep chose {}", sel.chosen);
            cfg.rank = sel.chosen;
            Some(sel)
        }
        None => None,
    };
    let fitted = fit_embeddings(&data.train, prepared.n_versions, prepared.n_champions, &cfg.experiment().fit_options())?;
    let f = &fitted.embeddings.factors;

    let mut out = Staging::new(&args.output_dir)?;
    let version_ids: Vec<String> = (0..prepared.n_versions).map(|j| j.to_string()).collect();
    let champion_ids: Vec<String> = (0..prepared.n_champions).map(|k| k.to_string()).collect();
    write_factor_file(&mut out, "U.csv", &f.u, fitted.embeddings.users.ids())?;
    write_factor_file(&mut out, "T.csv", &f.t, &version_ids)?;
    write_factor_file(&mut out, "F.csv", &f.f, &champion_ids)?;
    let bytes: Vec<Vec<u8>> = ["U.csv", "T.csv", "F.csv"]
        .iter()
        .map(|n| fs::read(out.staged(n)))
        .collect::<std::io::Result<_>>()?;
    let run_id = sha256_parts(
        [hash.as_bytes()]
            .into_iter()
            .chain(bytes.iter().map(Vec::as_slice)),
    );
    if let Some(sel) = &sweep {
        let mut w = out.create("rank_sweep.csv")?;
        writeln!(w, "rank,score,loss,chosen")?;
        for s in &sel.scores {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", s.rank, opt(s.score), opt(s.loss), u8::from(s.rank == sel.chosen))?;
        }
        w.flush()?;
    }
    let meta = FactorMeta {
        run_id: run_id.clone(),
        tool_version: VERSION.to_string(),
        dataset_sha256: hash,
        rank: cfg.rank,
        seed: cfg.seed,
        loss: fitted.fit.loss,
        iterations: fitted.fit.iterations,
        best_restart: fitted.fit.best_restart,
        split: cfg.split,
        min_matches: cfg.min_matches,
        session_gap_secs: cfg.session_gap_secs,
        n_users: fitted.embeddings.users.len(),
        n_versions: prepared.n_versions,
        n_champions: prepared.n_champions,
        sweep,
    };
    out.write_json(FACTOR_META, &meta)?;
    out.write_json(EFFECTIVE_CONFIG, &effective("factorize", inputs(&[("input", &args.input)]), &cfg))?;
    out.commit()?;
    println!("rank {} factors written to {} (run {})", meta.rank, args.output_dir.display(), &run_id[..16]);
    Ok(())
}

struct LoadedFactors {
    meta: FactorMeta,
    embeddings: Embeddings,
}

fn load_factors(dir: &Path, dataset_hash: &str) -> Result<LoadedFactors> {
    let meta_path = dir.join(FACTOR_META);
    let meta: FactorMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
    )
    .with_context(|| format!("parsing {}", meta_path.display()))?;
    if meta.dataset_sha256 != dataset_hash {
        bail!(
            "factors in {} were fitted on a different dataset (sha256 {} vs {})",
            dir.display(),
            &meta.dataset_sha256[..16.min(meta.dataset_sha256.len())],
            &dataset_hash[..16]
        );
    }
    let read = |name: &str| -> Result<(Vec<String>, ndarray::Array2<f64>)> {
        let p = dir.join(name);
        let file = fs::File::open(&p).with_context(|| format!("opening {}", p.display()))?;
        read_factor_csv(file).with_context(|| format!("reading {}", p.display()))
    };
    let (user_ids, u) = read("U.csv")?;
    let (_, t) = read("T.csv")?;
    let (_, f) = read("F.csv")?;
    let bytes: Vec<Vec<u8>> = ["U.csv", "T.csv", "F.csv"]
        .iter()
        .map(|n| fs::read(dir.join(n)))
        .collect::<std::io::Result<_>>()?;
    let run_id = sha256_parts([dataset_hash.as_bytes()].into_iter().chain(bytes.iter().map(Vec::as_slice)));
    ensure!(run_id == meta.run_id, "factor files in {} do not match their metadata run id", dir.display());
    let users = UserIndex::from_ids(user_ids.iter().cloned());
    ensure!(users.ids() == user_ids.as_slice(), "user rows in U.csv are not sorted and unique");
    let factors = KruskalFactors::new(u, t, f)?;
    Ok(LoadedFactors {
        meta,
        embeddings: Embeddings { factors, users },
    })
}

/// A decoder plus the data settings needed to reproduce its split.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    tool_version: String,
    dataset_sha256: String,
    min_matches: usize,
    session_gap_secs: f64,
    experiment: ExperimentConfig,
    model: DecoderModel,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = load_config(args.common.config.as_ref())?;
    if let Some(t) = args.target {
        cfg.target = t;
    }
    if let Some(d) = args.dropout {
        cfg.decoder.dropout = d;
    }
    if let Some(s) = args.common.seed {
        cfg.decoder.seed = s;
    }
    let (dataset, hash) = load_dataset(&args.input)?;
    let factors = match &args.factors {
        Some(dir) => Some(load_factors(dir, &hash)?),
        None if args.baseline => None,
        None => bail!("--factors is required unless --baseline is given"),
    };
    if let Some(lf) = &factors {
        if let Some(tf) = args.test_fraction {
            ensure!(
                tf == lf.meta.split.test_fraction,
                "--test-fraction {tf} differs from the factor run's {}; the embeddings would leak test data",
                lf.meta.split.test_fraction
            );
        }
        cfg.split = lf.meta.split;
        cfg.min_matches = lf.meta.min_matches;
        cfg.session_gap_secs = lf.meta.session_gap_secs;
        cfg.rank = lf.meta.rank;
    } else if let Some(tf) = args.test_fraction {
        cfg.split.test_fraction = tf;
    }
    let mode = if args.baseline {
        FeatureMode::Baseline
    } else {
        FeatureMode::Embedding
    };
    let prepared = prepare(&dataset, cfg.min_matches, cfg.session_gap_secs)?;
    let data = split_data(&prepared, cfg.target, &cfg.split)?;
    let mut model = train_decoder(&data, &prepared, factors.as_ref().map(|f| &f.embeddings), mode, &cfg)?;
    model.factor_run_id = factors.as_ref().map(|f| f.meta.run_id.clone());

    let name = if args.baseline { "model_baseline.json" } else { "model.json" };
    let log_name = if args.baseline {
        "training_log_baseline.csv"
    } else {
        "training_log.csv"
    };
    let mut out = Staging::new(&args.output_dir)?;
    let mut w = out.create(log_name)?;
    writeln!(w, "epoch,train_loss,validation_loss")?;
    for e in &model.log.epochs {
        writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.validation_loss)?;
    }
    w.flush()?;
    drop(w);
    let best = (model.log.best_epoch, model.log.best_validation_loss);
    out.write_json(
        name,
        &ModelFile {
            tool_version: VERSION.to_string(),
            dataset_sha256: hash,
            min_matches: cfg.min_matches,
            session_gap_secs: cfg.session_gap_secs,
            experiment: cfg.clone(),
            model,
        },
    )?;
    let mut ins = vec![("input", args.input.as_path())];
    if let Some(f) = &args.factors {
        ins.push(("factors", f.as_path()));
    }
    out.write_json(EFFECTIVE_CONFIG, &effective("train", inputs(&ins), &cfg))?;
    out.commit()?;
    println!(
        "{} model for {} written to {} (best epoch {}, validation loss {:.6})",
        mode.as_str(),
        cfg.target,
        args.output_dir.join(name).display(),
        best.0,
        best.1
    );
    Ok(())
}

fn read_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let primary = read_model(&args.model)?;
    if let Some(t) = args.target {
        ensure!(
            t == primary.model.target,
            "model {} predicts {}, not {t}",
            args.model.display(),
            primary.model.target
        );
    }
    let (dataset, hash) = load_dataset(&args.input)?;
    ensure!(
        primary.dataset_sha256 == hash,
        "model {} was trained on a different dataset",
        args.model.display()
    );
    let factors = match &args.factors {
        Some(dir) => Some(load_factors(dir, &hash)?),
        None => None,
    };
    if primary.model.mode() == FeatureMode::Embedding {
        let lf = factors
            .as_ref()
            .ok_or_else(|| anyhow!("an embedding model needs --factors"))?;
        ensure!(
            primary.model.factor_run_id.as_deref() == Some(lf.meta.run_id.as_str()),
            "model {} was trained against a different factorization run",
            args.model.display()
        );
    }
    let cfg = primary.experiment.clone();
    let prepared: Prepared = prepare(&dataset, primary.min_matches, primary.session_gap_secs)?;
    let data = split_data(&prepared, primary.model.target, &cfg.split)?;
    let embeddings = factors.as_ref().map(|f| &f.embeddings);
    let mut rows = vec![evaluate_decoder(&primary.model, &data, embeddings)?];

    if args.baseline && primary.model.mode() != FeatureMode::Baseline {
        let sibling = args.model.with_file_name("model_baseline.json");
        let baseline = if sibling.exists() {
            let b = read_model(&sibling)?;
            ensure!(
                b.dataset_sha256 == hash && b.model.target == primary.model.target && b.experiment.split == cfg.split,
                "{} does not match the model's dataset, target or split",
                sibling.display()
            );
            b.model
        } else {
            info!("no {} found; training the baseline on the same split", sibling.display());
            let mut b = decoder::train(
                &data.train,
                None,
                FeatureMode::Baseline,
                primary.model.target,
                &primary.model.encoder.excluded,
                prepared.n_champions,
                &cfg.decoder,
            )?;
            b.split = Some(cfg.split);
            b
        };
        rows.push(evaluate_decoder(&baseline, &data, None)?);
    } else if args.baseline {
        warn!("--baseline ignored: the model is already a baseline model");
    }
    let report = EvalReport {
        split_seed: cfg.split.seed,
        test_fraction: cfg.split.test_fraction,
        rows,
    };
    let mut out = Staging::new(&args.output_dir)?;
    out.write_json("report.json", &report)?;
    let mut ins = vec![("input", args.input.as_path()), ("model", args.model.as_path())];
    if let Some(f) = &args.factors {
        ins.push(("factors", f.as_path()));
    }
    out.write_json(EFFECTIVE_CONFIG, &effective("evaluate", inputs(&ins), &cfg))?;
    out.commit()?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct AnalyzeConfig {
    label_threshold: f64,
    masking: Masking,
    entropy_bins: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            label_threshold: LABEL_THRESHOLD,
            masking: Masking::Cumulative,
            entropy_bins: 20,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let mut cfg: AnalyzeConfig = load_config(args.common.config.as_ref())?;
    if args.squared_masking {
        cfg.masking = Masking::SquaredNorm;
    }
    let (dataset, hash) = load_dataset(&args.input)?;
    let lf = load_factors(&args.factors, &hash)?;
    let prepared = prepare(&dataset, lf.meta.min_matches, lf.meta.session_gap_secs)?;
    let records: Vec<_> = prepared.instances.iter().map(|i| i.record.clone()).collect();
    let factors = &lf.embeddings.factors;
    let rank = factors.rank();

    let users = UserIndex::from_records(&records);
    let factor_rows: BTreeMap<&str, usize> = lf
        .embeddings
        .users
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let factor_labels = component_labels(&factors.u, cfg.label_threshold);
    let labels: Vec<Option<usize>> = users
        .ids()
        .iter()
        .map(|id| factor_rows.get(id.as_str()).and_then(|&i| factor_labels[i]))
        .collect();
    let mut profiles = user_profiles(&records, &users, Some(&labels))?;
    let deciles = classify_generalists_specialists(&mut profiles);

    let mut out = Staging::new(&args.output_dir)?;

    let mut w = out.create("profiles.csv")?;
    let type_cols: Vec<String> = ChampionType::ALL.iter().map(|t| format!("p_{}", t.as_str().to_lowercase())).collect();
    writeln!(w, "user_id,{},entropy,class,component_label,days_online", type_cols.join(","))?;
    for p in &profiles {
        let dist: Vec<String> = p.champion_type_distribution.iter().map(f64::to_string).collect();
        let label = p.component_label.map(|l| l.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.user_id,
            dist.join(","),
            p.entropy,
            p.class.as_str(),
            label,
            p.days_online
        )?;
    }
    w.flush()?;
    drop(w);

    let entropies: Vec<f64> = profiles.iter().map(|p| p.entropy).collect();
    let mut w = out.create("entropy_histogram.csv")?;
    writeln!(w, "bin_start,count")?;
    for (lo, c) in histogram(&entropies, cfg.entropy_bins, 0.0, (ChampionType::COUNT as f64).ln()) {
        writeln!(w, "{lo},{c}")?;
    }
    w.flush()?;
    drop(w);

    let (counts, unlabeled) = label_counts(&labels, rank);
    let mut w = out.create("label_counts.csv")?;
    writeln!(w, "label,users")?;
    for (r, c) in counts.iter().enumerate() {
        writeln!(w, "{r},{c}")?;
    }
    writeln!(w, "unlabeled,{unlabeled}")?;
    w.flush()?;
    drop(w);

    let table = champion_type_activation(&factors.f, &dataset.champion_types, cfg.masking)?;
    for (name, m) in [("activation.csv", &table.normalized), ("activation_masked.csv", &table.masked)] {
        let mut w = out.create(name)?;
        let comps: Vec<String> = (0..rank).map(|r| format!("c{r}")).collect();
        writeln!(w, "champion_type,{}", comps.join(","))?;
        for (label, row) in table.row_labels.iter().zip(m.rows()) {
            let vals: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{label},{}", vals.join(","))?;
        }
        w.flush()?;
    }

    let rates = pick_rates(&records, prepared.n_versions, prepared.n_champions)?;
    let mut w = out.create("pick_rates.csv")?;
    writeln!(w, "version,champion,rate")?;
    for (j, row) in rates.iter().enumerate() {
        for k in 0..prepared.n_champions {
            writeln!(w, "{j},{k},{}", opt(row.as_ref().map(|r| r[k])))?;
        }
    }
    w.flush()?;
    drop(w);

    let corr = pick_rate_activation_correlation(&rates, &factors.t, &factors.f)?;
    let mut w = out.create("pick_rate_correlation.csv")?;
    writeln!(w, "component,pearson")?;
    for (r, c) in corr.iter().enumerate() {
        writeln!(w, "{r},{}", opt(*c))?;
    }
    w.flush()?;
    drop(w);

    let engagement = engagement_summary(&records, &users, &labels, prepared.n_versions)?;
    let mut w = out.create("engagement.csv")?;
    writeln!(w, "label,version,mean_matches_per_active_user")?;
    for (label, series) in &engagement.series {
        let l = label.map(|l| l.to_string()).unwrap_or_else(|| "unlabeled".into());
        for (j, v) in series.iter().enumerate() {
            writeln!(w, "{l},{j},{}", opt(*v))?;
        }
    }
    w.flush()?;
    drop(w);

    let mut w = out.create("performance_by_type.csv")?;
    writeln!(w, "version,champion_type,kills,deaths,assists,kda")?;
    let perf: Vec<_> = PerfField::ALL
        .iter()
        .map(|&f| performance_by_type(&records, prepared.n_versions, f))
        .collect::<ctxembed::Result<_>>()?;
    for j in 0..prepared.n_versions {
        for t in ChampionType::ALL {
            let cells: Vec<String> = perf.iter().map(|p| opt(p[j][t.index()])).collect();
            writeln!(w, "{j},{},{}", t.as_str(), cells.join(","))?;
        }
    }
    w.flush()?;
    drop(w);

    #[derive(Serialize)]
    struct Summary {
        users: usize,
        generalists: usize,
        specialists: usize,
        entropy_low_mark: Option<f64>,
        entropy_high_mark: Option<f64>,
        labeled: usize,
        unlabeled: usize,
    }
    let count = |c| profiles.iter().filter(|p| p.class == c).count();
    let summary = Summary {
        users: profiles.len(),
        generalists: count(ctxembed::behavior_analysis::UserClass::Generalist),
        specialists: count(ctxembed::behavior_analysis::UserClass::Specialist),
        entropy_low_mark: deciles.map(|d| d.low),
        entropy_high_mark: deciles.map(|d| d.high),
        labeled: labels.len() - unlabeled,
        unlabeled,
    };
    out.write_json("analysis_summary.json", &summary)?;
    out.write_json(
        EFFECTIVE_CONFIG,
        &effective("analyze", inputs(&[("input", &args.input), ("factors", &args.factors)]), &cfg),
    )?;
    out.commit()?;
    println!("analysis tables written to {}", args.output_dir.display());
    Ok(())
}
