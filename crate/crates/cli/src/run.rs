//! The experiment verbs. Each one loads data once, runs every repeat seed
//! (in parallel when allowed), then writes artifacts and the manifest from
//! the calling thread only.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lmc_core::analysis::{
    barrier, noise_scale, polar_trace, similarity, sweep, write_barriers_csv, BarrierResult,
    BarrierVariant, BnPolicy, InterpolationCurve, PolarTrace, SetCurve, SimilarityReport,
    LOCAL_MIN_RULE,
};
use lmc_core::data::write_partition_manifest;
use lmc_core::ensemble::{
    aggregate_reports, build_lmc_ensemble, compare_ensembles, ensemble_metrics, write_ensemble_csv,
    write_pairs_csv, EnsembleAggregate, EnsembleComparison, EnsembleKind, EnsembleReport,
    PredictionMatrix, PAIR_AVERAGING_RULE,
};
use lmc_core::nn::{decode_checkpoint, encode_checkpoint, evaluate, init_model, Checkpoint};
use lmc_core::training::{
    derive_seed, train_pair, train_single, NoiseMode, RunRecord, TrainConfig,
};
use lmc_core::Exec;
use log::{info, warn};
use serde::Serialize;

use crate::config::{ExperimentConfig, Protocol};
use crate::manifest::{sha256_hex, ArtifactKind, Store};
use crate::prepare::Prepared;

/// Options shared by every verb.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Results root; the experiment writes under `{out}/{name}/`.
    pub out: PathBuf,
    /// Run repeat seeds concurrently.
    pub parallel_seeds: bool,
    pub exec: Exec,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions {
            out: out.into(),
            parallel_seeds: false,
            exec: Exec::Parallel,
        }
    }

    fn seed_exec(&self) -> Exec {
        if self.parallel_seeds {
            self.exec
        } else {
            Exec::Sequential
        }
    }
}

/// Stream indices for [`derive_seed`].
const SECOND_INIT: u64 = 0;
const SECOND_NOISE: u64 = 1;
const MEMBER_BASE: u64 = 16;

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> lmc_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn serialize_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    for r in rows {
        out.serialize(r)?;
    }
    Ok(out.into_inner()?)
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}/{seed}", cfg.name)
}

fn lr_tag(lr: f64) -> String {
    format!("{lr:e}")
}

/// Writes the experiment-level provenance files: the normalized config and
/// the partition manifest.
///
/// Results of one experiment name must come from one definition: a stored
/// config that differs in anything but the seed list and output directory
/// is a conflict.
fn put_experiment_files(store: &mut Store, cfg: &ExperimentConfig, prep: &Prepared) -> Result<()> {
    let rel = format!("{}/config.toml", cfg.name);
    if store.index.get(&rel).is_some() {
        let text = std::fs::read_to_string(store.root.join(&rel))
            .with_context(|| format!("reading {rel}"))?;
        let stored = ExperimentConfig::from_toml(&text).with_context(|| rel.clone())?;
        if definition(&stored) != definition(cfg) {
            bail!(
                "{rel} holds a different definition of {:?}; use a new name or output directory",
                cfg.name
            );
        }
    }
    // The results root is where the copy lives, not part of what it
    // describes; leaving it out keeps hashes independent of `--out`.
    let stored = ExperimentConfig {
        output: Default::default(),
        ..cfg.clone()
    };
    store.put(&rel, ArtifactKind::Config, stored.to_toml().as_bytes())?;
    let tmp = tempfile_path(&store.root, "partition")?;
    write_partition_manifest(&tmp, &prep.train, &prep.partition)?;
    let bytes = std::fs::read(&tmp)?;
    std::fs::remove_file(&tmp)?;
    store.put(
        &format!("{}/partition.csv", cfg.name),
        ArtifactKind::Csv,
        &bytes,
    )
}

fn definition(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        seeds: Vec::new(),
        output: Default::default(),
        ..cfg.clone()
    }
}

fn tempfile_path(root: &Path, stem: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    Ok(root.join(format!(".{stem}.{}.tmp", std::process::id())))
}

fn stamp(ckpt: &mut Checkpoint, cfg: &ExperimentConfig) {
    ckpt.meta.dataset = Some(format!("{:?}", cfg.dataset.kind).to_lowercase());
    ckpt.meta.shift = Some(
        cfg.shift
            .to_spec()
            .map(|s| s.label().to_string())
            .unwrap_or_default(),
    );
    ckpt.meta.normalization = Some(cfg.dataset.normalization.label().to_string());
}

/// The two endpoint models of one repeat plus their learning curves.
pub struct Endpoints {
    pub a: Checkpoint,
    pub b: Checkpoint,
    pub record: RunRecord,
}

/// Trains the endpoints of repeat `seed` with the given batch size and
/// learning rate.
pub fn train_endpoints(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    seed: u64,
    batch_size: usize,
    learning_rate: f64,
    exec: Exec,
) -> Result<Endpoints> {
    let spec = cfg.model_spec();
    let tc = cfg.train_config(seed, batch_size, learning_rate);
    let p = &prep.partition;
    let (mut a, mut b, record) = match cfg.train.protocol {
        Protocol::Paired => {
            let init = init_model(&spec, seed)?;
            let run = train_pair(&init, &p.a, &p.b, Some(&prep.test), &tc, exec)
                .with_context(|| format!("seed {seed}: paired training"))?;
            (run.a, run.b, run.record)
        }
        Protocol::DifferentInit => {
            let tc_b = TrainConfig {
                init_seed: derive_seed(seed, SECOND_INIT),
                noise_seed: if cfg.train.noise_mode == NoiseMode::Fixed {
                    seed
                } else {
                    derive_seed(seed, SECOND_NOISE)
                },
                ..tc.clone()
            };
            let init_a = init_model(&spec, tc.init_seed)?;
            let init_b = init_model(&spec, tc_b.init_seed)?;
            let ((a, ra), (b, rb)) = {
                let (x, y) = exec.join(
                    || train_single(&init_a, &p.a, Some(&prep.test), &tc, "a", exec),
                    || train_single(&init_b, &p.a, Some(&prep.test), &tc_b, "b", exec),
                );
                (
                    x.with_context(|| format!("seed {seed}: model a"))?,
                    y.with_context(|| format!("seed {seed}: model b"))?,
                )
            };
            let mut rows = ra.rows;
            rows.extend(rb.rows);
            (a, b, RunRecord { rows })
        }
    };
    stamp(&mut a, cfg);
    stamp(&mut b, cfg);
    Ok(Endpoints { a, b, record })
}

fn put_endpoints(store: &mut Store, dir: &str, ep: &Endpoints) -> Result<()> {
    store.put(
        &format!("{dir}/model_a.ckpt"),
        ArtifactKind::Checkpoint,
        &encode_checkpoint(&ep.a)?,
    )?;
    store.put(
        &format!("{dir}/model_b.ckpt"),
        ArtifactKind::Checkpoint,
        &encode_checkpoint(&ep.b)?,
    )?;
    store.put(
        &format!("{dir}/metrics.csv"),
        ArtifactKind::Csv,
        &csv_bytes(|w| ep.record.write_csv(w))?,
    )
}

/// Reads a checkpoint the manifest vouches for. A listed file whose hash no
/// longer matches is an error; an unlisted or absent file yields `None`.
fn load_recorded(store: &Store, rel: &str) -> Result<Option<Checkpoint>> {
    let path = store.root.join(rel);
    let Some(entry) = store.index.get(rel) else {
        return Ok(None);
    };
    let bytes = std::fs::read(&path)
        .with_context(|| format!("manifest lists {rel} but it cannot be read"))?;
    if sha256_hex(&bytes) != entry.sha256 {
        bail!("{rel}: content does not match the manifest hash");
    }
    Ok(Some(
        decode_checkpoint(&bytes).with_context(|| rel.to_string())?,
    ))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub seed: u64,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
}

pub fn cmd_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<TrainOutcome>> {
    let prep = Prepared::load(cfg)?;
    let mut store = Store::open(&opts.out)?;
    put_experiment_files(&mut store, cfg, &prep)?;
    let (bs, lr) = (cfg.train.batch_size, cfg.train.learning_rate);
    let mut out = Vec::new();
    for (seed, ep) in run_seeds(cfg, opts, |seed| {
        train_endpoints(cfg, &prep, seed, bs, lr, opts.exec)
    }) {
        let ep = ep?;
        put_endpoints(&mut store, &seed_dir(cfg, seed), &ep)?;
        let acc = |s| ep.record.last(s, "test").map_or(f64::NAN, |r| r.accuracy);
        info!(
            "seed {seed}: test accuracy a={:.4} b={:.4}",
            acc("a"),
            acc("b")
        );
        out.push(TrainOutcome {
            seed,
            accuracy_a: acc("a"),
            accuracy_b: acc("b"),
        });
    }
    Ok(out)
}

/// Runs `f` for every seed, concurrently if configured, and returns the
/// results in seed-list order.
fn run_seeds<R: Send>(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    f: impl Fn(u64) -> Result<R> + Sync + Send,
) -> Vec<(u64, Result<R>)> {
    let results = opts.seed_exec().map(&cfg.seeds, |&s| f(s));
    cfg.seeds.iter().copied().zip(results).collect()
}

/// Interpolation results of one endpoint pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairAnalysis {
    pub seed: u64,
    #[serde(skip)]
    pub curve: InterpolationCurve,
    #[serde(skip)]
    pub polar: PolarTrace,
    pub barriers: Vec<BarrierResult>,
    pub similarity: SimilarityReport,
    pub noise_scale: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub bn_policy: String,
    pub local_min_rule: String,
    pub polar_monotone: bool,
}

impl PairAnalysis {
    pub fn barrier(&self, set: &str, variant: BarrierVariant) -> Option<&BarrierResult> {
        self.barriers
            .iter()
            .find(|b| b.set == set && b.variant == variant)
    }
}

/// Sweeps the segment between two endpoints and computes the configured
/// barriers and similarity measures.
pub fn analyze_pair(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    eval: &[(String, lmc_core::data::Dataset)],
    seed: u64,
    a: &Checkpoint,
    b: &Checkpoint,
    exec: Exec,
) -> Result<PairAnalysis> {
    let grid = cfg.interpolation.grid();
    let sets: Vec<(&str, &lmc_core::data::Dataset)> =
        eval.iter().map(|(n, d)| (n.as_str(), d)).collect();
    let curve = sweep(
        a,
        b,
        &grid,
        &sets,
        cfg.interpolation.bn_policy,
        &prep.recompute_sets(cfg),
        exec,
    )
    .with_context(|| format!("seed {seed}: interpolation sweep"))?;
    let mut barriers = Vec::new();
    for (name, _) in eval {
        for &v in &cfg.interpolation.barriers {
            match barrier(&curve, name, v) {
                Ok(r) => barriers.push(r),
                Err(lmc_core::LmcError::Undefined(m)) => {
                    warn!("seed {seed}: {} barrier on {name}: {m}", v.label())
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    let polar = polar_trace(&grid, a, b)?;
    let n = prep.partition.a.len();
    Ok(PairAnalysis {
        seed,
        barriers,
        similarity: similarity(&a.params, &b.params)?,
        noise_scale: noise_scale(a.meta.learning_rate, n, a.meta.batch_size.min(n))?,
        batch_size: a.meta.batch_size,
        learning_rate: a.meta.learning_rate,
        bn_policy: cfg.interpolation.bn_policy.label().to_string(),
        local_min_rule: LOCAL_MIN_RULE.to_string(),
        polar_monotone: polar.is_monotone(0.0),
        curve,
        polar,
    })
}

fn put_analysis(store: &mut Store, dir: &str, pa: &PairAnalysis) -> Result<()> {
    store.put(
        &format!("{dir}/curve.csv"),
        ArtifactKind::Csv,
        &csv_bytes(|w| pa.curve.write_csv(w, Some(&pa.polar)))?,
    )?;
    store.put(
        &format!("{dir}/barriers.csv"),
        ArtifactKind::Csv,
        &csv_bytes(|w| write_barriers_csv(w, &pa.barriers))?,
    )?;
    let mut json = serde_json::to_string_pretty(pa)?;
    json.push('\n');
    store.put(
        &format!("{dir}/summary.json"),
        ArtifactKind::Json,
        json.as_bytes(),
    )
}

/// Endpoints of repeat `seed`: reused from the results when the manifest
/// vouches for them, trained (and recorded) otherwise.
fn endpoints_for(
    store: &Store,
    cfg: &ExperimentConfig,
    prep: &Prepared,
    seed: u64,
    exec: Exec,
) -> Result<(Checkpoint, Checkpoint, Option<Endpoints>)> {
    let dir = seed_dir(cfg, seed);
    let a = load_recorded(store, &format!("{dir}/model_a.ckpt"))?;
    let b = load_recorded(store, &format!("{dir}/model_b.ckpt"))?;
    if let (Some(a), Some(b)) = (a, b) {
        if a.spec != cfg.model_spec() {
            bail!("{dir}: stored checkpoints do not match the configured model; retrain or change `name`");
        }
        return Ok((a, b, None));
    }
    let ep = train_endpoints(
        cfg,
        prep,
        seed,
        cfg.train.batch_size,
        cfg.train.learning_rate,
        exec,
    )?;
    Ok((ep.a.clone(), ep.b.clone(), Some(ep)))
}

/// Interpolates the endpoints of every seed (training them first when the
/// results hold none), or one explicit checkpoint pair.
pub fn cmd_interpolate(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    pair: Option<(&Path, &Path)>,
) -> Result<Vec<PairAnalysis>> {
    let prep = Prepared::load(cfg)?;
    let eval = prep.eval_sets(cfg)?;
    let mut store = Store::open(&opts.out)?;
    put_experiment_files(&mut store, cfg, &prep)?;

    if let Some((pa, pb)) = pair {
        let read = |p: &Path| -> Result<Checkpoint> {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            decode_checkpoint(&bytes).with_context(|| p.display().to_string())
        };
        let (a, b) = (read(pa)?, read(pb)?);
        let stem = |p: &Path| {
            p.file_stem()
                .map_or("model".into(), |s| s.to_string_lossy().into_owned())
        };
        let dir = format!("{}/pairs/{}--{}", cfg.name, stem(pa), stem(pb));
        let analysis = analyze_pair(cfg, &prep, &eval, a.meta.init_seed, &a, &b, opts.exec)?;
        put_analysis(&mut store, &dir, &analysis)?;
        return Ok(vec![analysis]);
    }

    let store_ref = &store;
    let results = run_seeds(cfg, opts, |seed| {
        let (a, b, trained) = endpoints_for(store_ref, cfg, &prep, seed, opts.exec)?;
        let analysis = analyze_pair(cfg, &prep, &eval, seed, &a, &b, opts.exec)?;
        Ok((trained, analysis))
    });
    let mut out = Vec::new();
    for (seed, r) in results {
        let (trained, analysis) = r?;
        let dir = seed_dir(cfg, seed);
        if let Some(ep) = &trained {
            put_endpoints(&mut store, &dir, ep)?;
        }
        put_analysis(&mut store, &dir, &analysis)?;
        for r in &analysis.barriers {
            info!(
                "seed {seed}: {:<10} {:<6} barrier {:.4} at λ={:.2}, Δ={:+.4}",
                r.variant.label(),
                r.set,
                r.value,
                r.lambda_star,
                r.delta
            );
        }
        out.push(analysis);
    }
    Ok(out)
}

/// One (batch size, learning rate) cell of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise_scale: f64,
    pub set: String,
    pub variant: BarrierVariant,
    pub seeds: usize,
    pub median_barrier: f64,
    pub median_delta: f64,
    /// Per-seed barrier values, `;`-separated in seed-list order.
    pub barriers: String,
}

pub fn cmd_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<SweepCell>> {
    let Some(sw) = &cfg.sweep else {
        bail!("config has no [sweep] section");
    };
    let prep = Prepared::load(cfg)?;
    let eval = prep.eval_sets(cfg)?;
    let set = sw.set.label();
    if !eval.iter().any(|(n, _)| n == set) {
        bail!("sweep.set {set:?} is not among interpolation.sets");
    }
    let mut store = Store::open(&opts.out)?;
    put_experiment_files(&mut store, cfg, &prep)?;
    let n = prep.partition.a.len();

    let mut cells = Vec::new();
    for &lr in &sw.learning_rates {
        for &bs in &sw.batch_sizes {
            if bs > n {
                bail!("sweep batch size {bs} exceeds the subset size {n}");
            }
            let results = run_seeds(cfg, opts, |seed| {
                let ep = train_endpoints(cfg, &prep, seed, bs, lr, opts.exec)?;
                let analysis = analyze_pair(cfg, &prep, &eval, seed, &ep.a, &ep.b, opts.exec)?;
                Ok((ep, analysis))
            });
            let (mut values, mut deltas) = (Vec::new(), Vec::new());
            for (seed, r) in results {
                let (ep, analysis) = r?;
                let dir = format!("{}/B{bs}-lr{}", seed_dir(cfg, seed), lr_tag(lr));
                put_endpoints(&mut store, &dir, &ep)?;
                put_analysis(&mut store, &dir, &analysis)?;
                let r = analysis.barrier(set, sw.variant).with_context(|| {
                    format!("seed {seed}: no {} barrier on {set}", sw.variant.label())
                })?;
                values.push(r.value);
                deltas.push(r.delta);
            }
            let cell = SweepCell {
                batch_size: bs,
                learning_rate: lr,
                noise_scale: noise_scale(lr, n, bs)?,
                set: set.to_string(),
                variant: sw.variant,
                seeds: values.len(),
                median_barrier: median(&values),
                median_delta: median(&deltas),
                barriers: values
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            };
            info!(
                "B={bs} lr={lr}: g={:.4} median barrier {:.4}, median Δ {:+.4}",
                cell.noise_scale, cell.median_barrier, cell.median_delta
            );
            cells.push(cell);
        }
    }
    store.put(
        &format!("{}/sweep.csv", cfg.name),
        ArtifactKind::Csv,
        &serialize_csv(&cells)?,
    )?;
    Ok(cells)
}

/// Ensemble comparison of one repeat.
#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub seed: u64,
    pub lmc: EnsembleReport,
    pub seeds: EnsembleReport,
    pub comparison: EnsembleComparison,
    /// Frankle test barrier over the LMC members, when their λ values form
    /// a grid from 0 to 1.
    pub lmc_barrier: Option<f64>,
}

#[derive(Serialize)]
struct ComparisonRow {
    d_wa: f64,
    d_wd: f64,
    d_acc_majority: f64,
    d_acc_avgpred: Option<f64>,
    lmc_barrier: Option<f64>,
    pair_averaging: &'static str,
}

#[derive(Serialize)]
struct AggregateRow {
    kind: &'static str,
    repeats: usize,
    median_wa: f64,
    median_wd: f64,
    median_acc_majority: f64,
    median_acc_avgpred: f64,
    wa_mean_of_means: f64,
    wd_mean_of_means: f64,
    wa_pooled: f64,
    wd_pooled: f64,
}

fn aggregate_row(kind: EnsembleKind, reports: &[EnsembleReport]) -> Result<AggregateRow> {
    let agg: EnsembleAggregate = aggregate_reports(reports)?;
    let med =
        |f: &dyn Fn(&EnsembleReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateRow {
        kind: kind.label(),
        repeats: reports.len(),
        median_wa: med(&|r| r.wa_mean),
        median_wd: med(&|r| r.wd_mean),
        median_acc_majority: med(&|r| r.acc_majority),
        median_acc_avgpred: med(&|r| r.acc_avgpred.unwrap_or(f64::NAN)),
        wa_mean_of_means: agg.wa_mean_of_means,
        wd_mean_of_means: agg.wd_mean_of_means,
        wa_pooled: agg.wa_pooled,
        wd_pooled: agg.wd_pooled,
    })
}

/// Builds, per seed, an ensemble of interpolated models and an ensemble of
/// independently initialized models trained on subset A, and compares them
/// on the test set.
pub fn cmd_ensemble(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<EnsembleOutcome>> {
    let Some(ens) = &cfg.ensemble else {
        bail!("config has no [ensemble] section");
    };
    let prep = Prepared::load(cfg)?;
    let mut store = Store::open(&opts.out)?;
    put_experiment_files(&mut store, cfg, &prep)?;
    let exec = opts.exec;
    let test = &prep.test;

    let store_ref = &store;
    let results = run_seeds(cfg, opts, |seed| {
        let (a, b, trained) = endpoints_for(store_ref, cfg, &prep, seed, exec)?;
        let lmc_models = build_lmc_ensemble(
            &a,
            &b,
            &ens.lambdas,
            cfg.interpolation.bn_policy,
            &prep.recompute_sets(cfg),
            exec,
        )?;

        let spec = cfg.model_spec();
        let mut members = Vec::with_capacity(ens.seed_members);
        for k in 0..ens.seed_members as u64 {
            let tc = TrainConfig {
                init_seed: derive_seed(seed, MEMBER_BASE + 2 * k),
                noise_seed: derive_seed(seed, MEMBER_BASE + 2 * k + 1),
                ..cfg.train_config(seed, cfg.train.batch_size, cfg.train.learning_rate)
            };
            let init = init_model(&spec, tc.init_seed)?;
            let (mut m, _) = train_single(
                &init,
                &prep.partition.a,
                None,
                &tc,
                &format!("member-{k}"),
                exec,
            )
            .with_context(|| format!("seed {seed}: ensemble member {k}"))?;
            stamp(&mut m, cfg);
            members.push(m);
        }

        let lmc = ensemble_metrics(
            &PredictionMatrix::collect(&lmc_models, test, exec)?,
            EnsembleKind::Lmc,
        )?;
        let seeds = ensemble_metrics(
            &PredictionMatrix::collect(&members, test, exec)?,
            EnsembleKind::DifferentSeeds,
        )?;
        let lmc_barrier = member_barrier(&ens.lambdas, &lmc_models, test, exec)?;
        Ok((trained, members, lmc, seeds, lmc_barrier))
    });

    let mut out = Vec::new();
    for (seed, r) in results {
        let (trained, members, lmc, seeds, lmc_barrier) = r?;
        let dir = seed_dir(cfg, seed);
        if let Some(ep) = &trained {
            put_endpoints(&mut store, &dir, ep)?;
        }
        for (k, m) in members.iter().enumerate() {
            store.put(
                &format!("{dir}/members/member_{k}.ckpt"),
                ArtifactKind::Checkpoint,
                &encode_checkpoint(m)?,
            )?;
        }
        let reports = [lmc.clone(), seeds.clone()];
        store.put(
            &format!("{dir}/ensemble.csv"),
            ArtifactKind::Csv,
            &csv_bytes(|w| write_ensemble_csv(w, &reports))?,
        )?;
        store.put(
            &format!("{dir}/ensemble_pairs.csv"),
            ArtifactKind::Csv,
            &csv_bytes(|w| write_pairs_csv(w, &reports))?,
        )?;
        let comparison = compare_ensembles(&lmc, &seeds);
        let row = ComparisonRow {
            d_wa: comparison.d_wa,
            d_wd: comparison.d_wd,
            d_acc_majority: comparison.d_acc_majority,
            d_acc_avgpred: comparison.d_acc_avgpred,
            lmc_barrier,
            pair_averaging: PAIR_AVERAGING_RULE,
        };
        store.put(
            &format!("{dir}/comparison.csv"),
            ArtifactKind::Csv,
            &serialize_csv(&[row])?,
        )?;
        match lmc_barrier {
            Some(v) if v > ens.lmc_threshold => {
                warn!(
                    "seed {seed}: endpoints are not linearly connected (test barrier {v:.4} > {})",
                    ens.lmc_threshold
                )
            }
            None => {
                warn!("seed {seed}: ensemble λ values do not span [0, 1]; connectivity unchecked")
            }
            _ => {}
        }
        info!(
            "seed {seed}: WA lmc {:.4} vs seeds {:.4}; majority acc lmc {:.4} vs seeds {:.4}",
            lmc.wa_mean, seeds.wa_mean, lmc.acc_majority, seeds.acc_majority
        );
        out.push(EnsembleOutcome {
            seed,
            lmc,
            seeds,
            comparison,
            lmc_barrier,
        });
    }

    let lmc: Vec<_> = out.iter().map(|o| o.lmc.clone()).collect();
    let seeds: Vec<_> = out.iter().map(|o| o.seeds.clone()).collect();
    let rows = [
        aggregate_row(EnsembleKind::Lmc, &lmc)?,
        aggregate_row(EnsembleKind::DifferentSeeds, &seeds)?,
    ];
    store.put(
        &format!("{}/ensemble_summary.csv", cfg.name),
        ArtifactKind::Csv,
        &serialize_csv(&rows)?,
    )?;
    Ok(out)
}

/// Frankle barrier of the test loss over the LMC members themselves.
fn member_barrier(
    lambdas: &[f64],
    models: &[Checkpoint],
    test: &lmc_core::data::Dataset,
    exec: Exec,
) -> Result<Option<f64>> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&i, &j| lambdas[i].total_cmp(&lambdas[j]));
    order.dedup_by(|i, j| lambdas[*i] == lambdas[*j]);
    let grid: Vec<f64> = order.iter().map(|&i| lambdas[i]).collect();
    if lmc_core::analysis::validate_grid(&grid).is_err() {
        return Ok(None);
    }
    let metrics = order
        .iter()
        .map(|&i| evaluate(&models[i], test, exec))
        .collect::<lmc_core::Result<Vec<_>>>()?;
    let curve = InterpolationCurve::new(
        grid,
        vec![SetCurve {
            name: "test".into(),
            loss: metrics.iter().map(|m| m.loss).collect(),
            accuracy: metrics.iter().map(|m| m.accuracy).collect(),
        }],
        BnPolicy::None,
    )?;
    Ok(Some(
        barrier(&curve, "test", BarrierVariant::Frankle)?.value,
    ))
}

/// Result of re-hashing every manifest entry.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checked: usize,
    pub problems: Vec<String>,
}

pub fn cmd_verify(root: &Path) -> Result<VerifyReport> {
    use crate::manifest::{Check, ResultsIndex, MANIFEST_FILE};
    if !root.join(MANIFEST_FILE).exists() {
        bail!("{} has no {MANIFEST_FILE}", root.display());
    }
    let index = ResultsIndex::load(root)?;
    let mut problems = Vec::new();
    for (path, check) in index.check(root) {
        match check {
            Check::Ok => {}
            Check::Missing => problems.push(format!("{path}: missing")),
            Check::Mismatch { expected, actual } => problems.push(format!(
                "{path}: sha256 {actual} does not match recorded {expected}"
            )),
        }
    }
    Ok(VerifyReport {
        checked: index.entries.len(),
        problems,
    })
}
