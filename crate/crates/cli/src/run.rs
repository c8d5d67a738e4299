//! Subcommand implementations. Each one loads what it needs from the run
//! directory, does its work, and writes artifacts back; consumed artifacts
//! that are missing produce an error naming the command that creates them.

use anyhow::{anyhow, bail, Context, Result};
use pcadv::attack::{
    attack_toward_class, interpolate_evolution, untargeted_attack, AttackConfig, AttackMode,
    PairOutcome, TargetSelection,
};
use pcadv::defense::{detect_attack, evaluate_defense, DefenseConfig, DefenseKind};
use pcadv::metrics;
use pcadv::models::{AEModel, ClassifierParams};
use pcadv::pointcloud::{CloudFormat, PointCloud, ShapeClass};
use pcadv::training::{classification_accuracy, train_ae, train_classifier, Dataset};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::artifacts::{
    class_by_name, read_json, sorted_subdirs, write_json, write_text, CloudEntry, DataManifest,
    DefenseRecord, PairRecord, RunDir,
};
use crate::config::{load_config, ExperimentConfig};

/// Everything a subcommand needs: the parsed config, the run directory, and
/// the worker count for attack sweeps.
pub struct Ctx {
    pub config: ExperimentConfig,
    pub run: RunDir,
    pub workers: usize,
}

impl Ctx {
    pub fn new(config_path: &Path, ply: bool, workers: usize) -> Result<Self> {
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        let config = load_config(config_path)?;
        let format = if ply {
            CloudFormat::PlyAscii
        } else {
            CloudFormat::Xyz
        };
        let run = RunDir::new(&config, format)?;
        Ok(Self {
            config,
            run,
            workers,
        })
    }
}

/// Run `f` over every job on a small thread pool, returning results in job
/// order. With one worker everything runs inline.
fn run_jobs<J, T, F>(jobs: &[J], workers: usize, f: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(&f).collect();
    }
    let cursor = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let result = f(&jobs[i]);
                slots.lock().expect("collector lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("collector lock")
        .into_iter()
        .map(|slot| slot.expect("every job ran"))
        .collect()
}

fn split_names() -> [&'static str; 3] {
    ["train", "val", "test"]
}

/// Generate the dataset and write one cloud file per instance plus a
/// manifest recording split membership and class labels.
pub fn gen_data(ctx: &Ctx) -> Result<()> {
    let dataset = Dataset::generate(&ctx.config.dataset_config())?;
    let data_dir = ctx.run.data_dir();
    let ext = ctx.run.cloud_ext();

    let mut splits = BTreeMap::new();
    for (name, clouds) in split_names()
        .into_iter()
        .zip([&dataset.train, &dataset.val, &dataset.test])
    {
        let mut entries = Vec::new();
        let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
        for cloud in clouds {
            let class = cloud.label().expect("generated clouds are labeled").to_string();
            let index = per_class.entry(class.clone()).or_insert(0);
            let file = format!("{name}/{class}_{index:03}.{ext}");
            *index += 1;
            ctx.run.save_cloud(&data_dir.join(&file), cloud)?;
            entries.push(CloudEntry { file, class });
        }
        splits.insert(name.to_string(), entries);
    }

    let manifest = DataManifest {
        classes: dataset.classes().iter().map(|c| c.to_string()).collect(),
        points: ctx.config.dataset.points,
        seed: ctx.config.dataset.seed,
        splits,
    };
    write_json(&ctx.run.data_manifest(), &manifest)?;
    write_text(&ctx.run.config_snapshot(), &ctx.config.canonical()?)?;
    println!(
        "generated {} train / {} val / {} test clouds under {}",
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        data_dir.display()
    );
    Ok(())
}

/// Load the generated dataset back from its manifest.
fn load_data(ctx: &Ctx) -> Result<Dataset> {
    let manifest_path = ctx.run.data_manifest();
    ctx.run.require(&manifest_path, "gen-data")?;
    let manifest: DataManifest = read_json(&manifest_path)?;
    let data_dir = ctx.run.data_dir();

    let mut loaded: BTreeMap<&str, Vec<PointCloud>> = BTreeMap::new();
    for name in split_names() {
        let entries = manifest
            .splits
            .get(name)
            .ok_or_else(|| anyhow!("manifest lacks the {name} split"))?;
        let mut clouds = Vec::with_capacity(entries.len());
        for entry in entries {
            let class = class_by_name(&entry.class)?;
            let cloud = ctx.run.load_cloud(&data_dir.join(&entry.file))?;
            clouds.push(cloud.with_label(class));
        }
        loaded.insert(name, clouds);
    }
    let dataset = Dataset::from_parts(
        &ctx.config.dataset_config(),
        loaded.remove("train").expect("inserted above"),
        loaded.remove("val").expect("inserted above"),
        loaded.remove("test").expect("inserted above"),
    )?;
    Ok(dataset)
}

fn load_victim(ctx: &Ctx) -> Result<AEModel> {
    let path = ctx.run.victim_model();
    ctx.run.require(&path, "train-ae")?;
    Ok(AEModel::load(&path)?)
}

fn load_classifier_if_present(ctx: &Ctx) -> Result<Option<ClassifierParams>> {
    let path = ctx.run.classifier_model();
    if path.exists() {
        Ok(Some(ClassifierParams::load(&path)?))
    } else {
        Ok(None)
    }
}

/// Train the victim autoencoder, or the transfer copy that differs only in
/// its initialization seed.
pub fn train_ae_cmd(ctx: &Ctx, transfer: bool) -> Result<()> {
    let dataset = load_data(ctx)?;
    let mut train_config = ctx.config.ae.training.to_train_config();
    let (path, stem) = if transfer {
        train_config.init_seed = ctx.config.ae.transfer_init_seed;
        if train_config.init_seed == ctx.config.ae.training.init_seed {
            log::warn!("transfer seed equals the victim seed; the models will be identical");
        }
        (ctx.run.transfer_model(), "ae_transfer")
    } else {
        (ctx.run.victim_model(), "ae_victim")
    };

    let trained = train_ae(&dataset, ctx.config.model_dims(), &train_config)?;
    let mut model = trained.model;
    model.freeze();
    std::fs::create_dir_all(ctx.run.models_dir())?;
    model.save(&path)?;

    let mut trace = String::from("epoch,train_cd,val_cd\n");
    writeln!(trace, "0,,{:.9}", trained.val_loss[0])?;
    for epoch in 1..trained.val_loss.len() {
        writeln!(
            trace,
            "{epoch},{:.9},{:.9}",
            trained.train_loss[epoch - 1],
            trained.val_loss[epoch]
        )?;
    }
    write_text(&ctx.run.train_trace(stem), &trace)?;

    let first = trained.val_loss[0];
    let last = trained.val_loss.last().copied().unwrap_or(first);
    println!(
        "{stem}: validation CD {first:.6} -> {last:.6} ({:.1}x) saved to {}",
        first / last,
        path.display()
    );
    Ok(())
}

fn labels_of(clouds: &[PointCloud]) -> Vec<usize> {
    clouds
        .iter()
        .map(|c| c.label().expect("dataset clouds are labeled").id())
        .collect()
}

/// Train the shape classifier used for semantic metrics and
/// classifier-gated target selection.
pub fn train_classifier_cmd(ctx: &Ctx) -> Result<()> {
    let dataset = load_data(ctx)?;
    let trained = train_classifier(
        &dataset.train,
        &labels_of(&dataset.train),
        &dataset.val,
        &labels_of(&dataset.val),
        ctx.config.dataset.classes,
        ctx.config.classifier.width_factor,
        &ctx.config.classifier.training.to_train_config(),
    )?;
    std::fs::create_dir_all(ctx.run.models_dir())?;
    trained.classifier.save(&ctx.run.classifier_model())?;

    let mut trace = String::from("epoch,train_loss,train_accuracy,val_accuracy\n");
    writeln!(trace, "0,,,{:.6}", trained.val_accuracy[0])?;
    for epoch in 1..trained.val_accuracy.len() {
        writeln!(
            trace,
            "{epoch},{:.9},{:.6},{:.6}",
            trained.train_loss[epoch - 1],
            trained.train_accuracy[epoch - 1],
            trained.val_accuracy[epoch]
        )?;
    }
    write_text(&ctx.run.train_trace("classifier"), &trace)?;

    let test_accuracy = classification_accuracy(
        &trained.classifier,
        &dataset.test,
        &labels_of(&dataset.test),
    )?;
    write_json(
        &ctx.run.classifier_eval(),
        &serde_json::json!({ "test_accuracy": test_accuracy }),
    )?;
    println!(
        "classifier: val accuracy {:.3}, test accuracy {test_accuracy:.3}",
        trained.val_accuracy.last().copied().unwrap_or(0.0)
    );
    Ok(())
}

/// One attack source: its cloud plus where it sits in the test split.
struct SweepSource<'a> {
    cloud: &'a PointCloud,
    class: ShapeClass,
    test_index: usize,
    local_index: usize,
}

fn sweep_sources<'a>(
    test: &'a [PointCloud],
    classes: &[ShapeClass],
    per_class: usize,
) -> Vec<SweepSource<'a>> {
    let mut sources = Vec::new();
    for &class in classes {
        let mut local = 0;
        for (test_index, cloud) in test.iter().enumerate() {
            if cloud.label() == Some(class) && local < per_class {
                sources.push(SweepSource {
                    cloud,
                    class,
                    test_index,
                    local_index: local,
                });
                local += 1;
            }
        }
    }
    sources
}

/// Target classes a source attacks, in palette order.
fn target_classes_for(source: ShapeClass, classes: &[ShapeClass], count: usize) -> Vec<ShapeClass> {
    classes
        .iter()
        .copied()
        .filter(|c| *c != source)
        .take(count)
        .collect()
}

pub struct AttackFlags {
    pub mode: Option<AttackMode>,
    pub untargeted: bool,
    pub lambda_sweep: Option<Vec<f64>>,
}

enum AttackJob<'a> {
    Targeted {
        source: &'a SweepSource<'a>,
        target_class: ShapeClass,
    },
    Untargeted {
        source: &'a SweepSource<'a>,
    },
}

fn keep_best_metric_name(mode: AttackMode) -> &'static str {
    match mode {
        AttackMode::Latent => "latent-distance",
        AttackMode::Output => "reconstruction-distance",
    }
}

/// Run one attack variant over the sweep and write its pair artifacts.
fn run_attack_variant(
    ctx: &Ctx,
    variant: &str,
    attack_config: &AttackConfig,
    model: &AEModel,
    pool: &[PointCloud],
    classes: &[ShapeClass],
    sources: &[SweepSource<'_>],
    classifier: Option<&ClassifierParams>,
    untargeted: bool,
) -> Result<()> {
    let mut jobs = Vec::new();
    if untargeted {
        for source in sources {
            jobs.push(AttackJob::Untargeted { source });
        }
    } else {
        for source in sources {
            for target_class in target_classes_for(
                source.class,
                classes,
                ctx.config.attack.sweep.target_classes,
            ) {
                jobs.push(AttackJob::Targeted {
                    source,
                    target_class,
                });
            }
        }
    }

    let outcomes = run_jobs(&jobs, ctx.workers, |job| {
        let (source, outcome) = match job {
            AttackJob::Targeted {
                source,
                target_class,
            } => (
                source,
                attack_toward_class(
                    model,
                    source.cloud,
                    pool,
                    *target_class,
                    attack_config,
                    classifier,
                )?,
            ),
            AttackJob::Untargeted { source } => (
                source,
                untargeted_attack(model, source.cloud, pool, classes, attack_config, classifier)?,
            ),
        };
        Ok::<(&SweepSource, PairOutcome), anyhow::Error>((source, outcome))
    })?;

    let variant_dir = ctx.run.attack_variant_dir(variant);
    let ext = ctx.run.cloud_ext();
    let mut records = Vec::new();
    for (source, outcome) in &outcomes {
        let best = outcome.best();
        let target = &pool[best.target_id];
        let target_class = best.target_class.expect("pool clouds are labeled");
        let pair = format!(
            "pair_{}{:02}_to_{}",
            source.class, source.local_index, target_class
        );
        let pair_dir = variant_dir.join(&pair);

        ctx.run.save_cloud(&pair_dir.join(format!("source.{ext}")), source.cloud)?;
        ctx.run.save_cloud(&pair_dir.join(format!("target.{ext}")), target)?;
        ctx.run
            .save_cloud(&pair_dir.join(format!("adversarial.{ext}")), &best.adversarial)?;
        ctx.run.save_cloud(
            &pair_dir.join(format!("reconstruction.{ext}")),
            &best.reconstruction,
        )?;

        let mut metrics_record = best.metrics.clone();
        if let Some(classifier) = classifier {
            let predicted = classifier.predict_index(&best.reconstruction)?;
            metrics_record.hit_target = Some(predicted == target_class.id());
            metrics_record.avoid_source = Some(predicted != source.class.id());
        }

        records.push(PairRecord {
            pair,
            source_class: source.class.to_string(),
            target_class: target_class.to_string(),
            source_index: source.test_index,
            target_index: best.target_id,
            mode: attack_config.mode.to_string(),
            lambda: best.lambda_used,
            rebalance_factor: best.rebalance_factor,
            keep_best_metric: keep_best_metric_name(attack_config.mode).to_string(),
            keep_best_iteration: best.keep_best_iteration,
            best_adversarial_loss: best.best_adversarial_loss,
            candidate_scores: outcome
                .candidates
                .iter()
                .map(|c| c.metrics.score)
                .collect(),
            metrics: metrics_record,
            total_loss_trace: best.loss_trace.clone(),
            adversarial_loss_trace: best.adv_trace.clone(),
        });
    }
    write_json(&ctx.run.attack_pairs(variant), &records)?;

    let mean = |f: &dyn Fn(&PairRecord) -> f64| {
        records.iter().map(|r| f(r)).sum::<f64>() / records.len() as f64
    };
    println!(
        "attack {variant}: {} pairs, mean OS {:.2}, mean S-CD {:.6}, mean T-NRE {:.4}",
        records.len(),
        mean(&|r| r.metrics.os_count as f64),
        mean(&|r| r.metrics.s_cd),
        mean(&|r| r.metrics.t_nre),
    );
    Ok(())
}

/// Run the configured attack sweep: targeted by default, untargeted or a
/// lambda sweep on request.
pub fn attack_cmd(ctx: &Ctx, flags: &AttackFlags) -> Result<()> {
    if flags.untargeted && flags.lambda_sweep.is_some() {
        bail!("--untargeted cannot be combined with --lambda-sweep");
    }
    let dataset = load_data(ctx)?;
    let model = load_victim(ctx)?;
    let classifier = load_classifier_if_present(ctx)?;

    let mut attack_config = ctx.config.attack_config();
    if let Some(mode) = flags.mode {
        attack_config.mode = mode;
    }
    if attack_config.target_selection == TargetSelection::GeometricClassifier
        && classifier.is_none()
    {
        ctx.run
            .require(&ctx.run.classifier_model(), "train-classifier")?;
    }

    let classes = dataset.classes();
    let sources = sweep_sources(
        &dataset.test,
        &classes,
        ctx.config.attack.sweep.sources_per_class,
    );
    if sources.is_empty() {
        bail!("the sweep selected no sources; check [attack.sweep] and the dataset");
    }

    if let Some(lambdas) = &flags.lambda_sweep {
        for &lambda in lambdas {
            let mut swept = attack_config;
            swept.lambda = Some(lambda);
            swept.candidates = 1;
            swept.validate().map_err(|e| anyhow!("lambda {lambda}: {e}"))?;
            let variant = format!("{}_lambda_{lambda}", swept.mode);
            run_attack_variant(
                ctx,
                &variant,
                &swept,
                &model,
                &dataset.test,
                &classes,
                &sources,
                classifier.as_ref(),
                false,
            )?;
        }
        return Ok(());
    }

    let variant = if flags.untargeted {
        format!("{}_untargeted", attack_config.mode)
    } else {
        attack_config.mode.to_string()
    };
    run_attack_variant(
        ctx,
        &variant,
        &attack_config,
        &model,
        &dataset.test,
        &classes,
        &sources,
        classifier.as_ref(),
        flags.untargeted,
    )
}

/// Clouds belonging to one stored attack variant, reloaded for defense or
/// transfer evaluation.
struct StoredPairs {
    names: Vec<String>,
    sources: Vec<PointCloud>,
    targets: Vec<PointCloud>,
    adversarials: Vec<PointCloud>,
    records: Vec<PairRecord>,
}

fn load_stored_pairs(ctx: &Ctx, variant: &str) -> Result<StoredPairs> {
    let pairs_path = ctx.run.attack_pairs(variant);
    let hint = match variant {
        "latent" | "output" => format!("attack --mode {variant}"),
        _ => "attack".to_string(),
    };
    ctx.run.require(&pairs_path, &hint)?;
    let records: Vec<PairRecord> = read_json(&pairs_path)?;
    if records.is_empty() {
        bail!("{} holds no pairs", pairs_path.display());
    }
    let variant_dir = ctx.run.attack_variant_dir(variant);
    let ext = ctx.run.cloud_ext();
    let mut out = StoredPairs {
        names: Vec::new(),
        sources: Vec::new(),
        targets: Vec::new(),
        adversarials: Vec::new(),
        records: Vec::new(),
    };
    for record in records {
        let pair_dir = variant_dir.join(&record.pair);
        let source_class = class_by_name(&record.source_class)?;
        let target_class = class_by_name(&record.target_class)?;
        let source = ctx
            .run
            .load_cloud(&pair_dir.join(format!("source.{ext}")))?
            .with_label(source_class);
        let target = ctx
            .run
            .load_cloud(&pair_dir.join(format!("target.{ext}")))?
            .with_label(target_class);
        let adversarial = ctx
            .run
            .load_cloud(&pair_dir.join(format!("adversarial.{ext}")))?
            .with_label(source_class);
        out.names.push(record.pair.clone());
        out.sources.push(source);
        out.targets.push(target);
        out.adversarials.push(adversarial);
        out.records.push(record);
    }
    Ok(out)
}

/// Attack variants that exist in the run directory, sorted by name.
pub(crate) fn stored_attack_variants(ctx: &Ctx) -> Result<Vec<String>> {
    Ok(sorted_subdirs(&ctx.run.attacks_dir())?
        .into_iter()
        .filter(|name| ctx.run.attack_pairs(name).exists())
        .collect())
}

pub struct DefendFlags {
    pub modes: Vec<String>,
    pub kinds: Vec<DefenseKind>,
}

/// Apply the configured defenses to clean sources and stored attack
/// variants, then train the decoder-side detector for each attacked combo.
pub fn defend_cmd(ctx: &Ctx, flags: &DefendFlags) -> Result<()> {
    let dataset = load_data(ctx)?;
    let model = load_victim(ctx)?;
    let classifier = load_classifier_if_present(ctx)?;

    let stored = stored_attack_variants(ctx)?;
    let modes: Vec<String> = if flags.modes.is_empty() {
        let mut modes = vec!["clean".to_string()];
        modes.extend(stored.iter().filter(|v| *v == "latent" || *v == "output").cloned());
        modes
    } else {
        for mode in &flags.modes {
            if mode != "clean" && !stored.contains(mode) {
                bail!(
                    "no stored attack variant {mode:?}; available: clean, {}",
                    stored.join(", ")
                );
            }
        }
        flags.modes.clone()
    };

    let classes = dataset.classes();
    let sweep = sweep_sources(
        &dataset.test,
        &classes,
        ctx.config.attack.sweep.sources_per_class,
    );
    let clean_sources: Vec<PointCloud> = sweep.iter().map(|s| s.cloud.clone()).collect();
    let clean_names: Vec<String> = sweep
        .iter()
        .map(|s| format!("clean_{}{:02}", s.class, s.local_index))
        .collect();

    // Defended clean reconstructions per kind, keyed by source name and
    // shared by every detector. Detection pairs each adversarial example
    // with its own clean source so the populations stay balanced.
    let mut clean_recons: BTreeMap<String, BTreeMap<String, PointCloud>> = BTreeMap::new();

    for &kind in &flags.kinds {
        let kind_name = kind.to_string();
        let defense = DefenseConfig {
            kind,
            k: ctx.config.defense.k,
            delta: ctx.config.defense.delta,
        };

        let (clean_results, clean_aggregate) = evaluate_defense(
            &model,
            &clean_sources,
            &clean_sources,
            &defense,
            classifier.as_ref(),
        )?;
        write_defense_combo(
            ctx,
            "clean",
            &kind_name,
            &clean_names,
            &clean_results,
            &clean_aggregate,
        )?;
        clean_recons.insert(
            kind_name.clone(),
            clean_names
                .iter()
                .zip(&clean_results)
                .map(|(name, r)| {
                    let source = name.trim_start_matches("clean_").to_string();
                    (source, r.reconstruction_after.clone())
                })
                .collect(),
        );

        for mode in &modes {
            if mode == "clean" {
                continue;
            }
            let pairs = load_stored_pairs(ctx, mode)?;
            let (results, aggregate) = evaluate_defense(
                &model,
                &pairs.adversarials,
                &pairs.sources,
                &defense,
                classifier.as_ref(),
            )?;
            write_defense_combo(ctx, mode, &kind_name, &pairs.names, &results, &aggregate)?;

            let adversarial_recons: Vec<PointCloud> = results
                .iter()
                .map(|r| r.reconstruction_after.clone())
                .collect();
            let clean_for_pairs: Vec<PointCloud> = pairs
                .names
                .iter()
                .map(|pair| {
                    let source = pair
                        .trim_start_matches("pair_")
                        .split("_to_")
                        .next()
                        .unwrap_or_default();
                    clean_recons[&kind_name]
                        .get(source)
                        .cloned()
                        .ok_or_else(|| {
                            anyhow!(
                                "no defended clean source {source} for pair {pair}; \
                                 the attack sweep and [attack.sweep] disagree"
                            )
                        })
                })
                .collect::<Result<_>>()?;
            let detection = detect_attack(
                &clean_for_pairs,
                &adversarial_recons,
                ctx.config.classifier.width_factor,
                &pcadv::defense::detector_train_config(),
            )?;
            write_json(
                &ctx.run.defend_combo_dir(mode, &kind_name).join("detection.json"),
                &serde_json::json!({
                    "test_accuracy": detection.test_accuracy,
                    "split_sizes": detection.split_sizes,
                    "labels": { "clean": 0, "adversarial": 1 },
                }),
            )?;
            println!(
                "defend {mode}+{kind_name}: mean S-NRE {:.3} -> {:.3}, detection accuracy {:.3}",
                aggregate.mean_s_nre_before, aggregate.mean_s_nre_after, detection.test_accuracy
            );
        }
        let clean_agg = read_aggregate(ctx, "clean", &kind_name)?;
        println!(
            "defend clean+{kind_name}: mean S-NRE {:.3} -> {:.3}",
            clean_agg.mean_s_nre_before, clean_agg.mean_s_nre_after
        );
    }
    Ok(())
}

fn write_defense_combo(
    ctx: &Ctx,
    mode: &str,
    kind: &str,
    names: &[String],
    results: &[pcadv::defense::DefenseResult],
    aggregate: &pcadv::defense::DefenseAggregate,
) -> Result<()> {
    let combo_dir = ctx.run.defend_combo_dir(mode, kind);
    let ext = ctx.run.cloud_ext();
    let mut records = Vec::new();
    for (name, result) in names.iter().zip(results) {
        let pair_dir = combo_dir.join(name);
        ctx.run
            .save_cloud(&pair_dir.join(format!("defended.{ext}")), &result.defended)?;
        ctx.run.save_cloud(
            &pair_dir.join(format!("reconstruction.{ext}")),
            &result.reconstruction_after,
        )?;
        records.push(DefenseRecord {
            pair: name.clone(),
            removed: result.removed.clone(),
            s_re_before: result.s_re_before,
            s_re_after: result.s_re_after,
            s_nre_before: result.s_nre_before,
            s_nre_after: result.s_nre_after,
            label_before: result.label_before,
            label_after: result.label_after,
        });
    }
    write_json(&combo_dir.join("records.json"), &records)?;
    write_json(&combo_dir.join("aggregate.json"), aggregate)?;
    Ok(())
}

fn read_aggregate(ctx: &Ctx, mode: &str, kind: &str) -> Result<pcadv::defense::DefenseAggregate> {
    read_json(&ctx.run.defend_combo_dir(mode, kind).join("aggregate.json"))
}

/// Per-variant transfer evaluation rows stored by `transfer-eval`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TransferVariant {
    pub pairs: Vec<TransferPair>,
    pub mean_t_re_victim: f64,
    pub mean_t_nre_victim: f64,
    pub mean_t_re_transfer: f64,
    pub mean_t_nre_transfer: f64,
    /// Fraction of pairs where the transfer model reconstructs the target
    /// worse than the victim does.
    pub frac_transfer_higher: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TransferPair {
    pub pair: String,
    pub t_re_victim: f64,
    pub t_nre_victim: f64,
    pub t_re_transfer: f64,
    pub t_nre_transfer: f64,
}

/// Re-run stored adversarial clouds through the victim and the
/// differently-initialized autoencoder and compare target errors.
pub fn transfer_eval_cmd(ctx: &Ctx, modes: &[String]) -> Result<()> {
    let victim = load_victim(ctx)?;
    let transfer_path = ctx.run.transfer_model();
    ctx.run.require(&transfer_path, "train-ae --transfer")?;
    let transfer = AEModel::load(&transfer_path)?;

    let stored = stored_attack_variants(ctx)?;
    let variants: Vec<String> = if modes.is_empty() {
        stored
            .iter()
            .filter(|v| *v == "latent" || *v == "output")
            .cloned()
            .collect()
    } else {
        modes.to_vec()
    };
    if variants.is_empty() {
        ctx.run.require(&ctx.run.attack_pairs("output"), "attack")?;
    }

    let mut report: BTreeMap<String, TransferVariant> = BTreeMap::new();
    for variant in &variants {
        let pairs = load_stored_pairs(ctx, variant)?;
        let mut rows = Vec::new();
        for ((name, target), adversarial) in pairs
            .names
            .iter()
            .zip(&pairs.targets)
            .zip(&pairs.adversarials)
        {
            let mut per_model = Vec::new();
            for model in [&victim, &transfer] {
                let recon = model.reconstruct(adversarial)?;
                let t_re = metrics::chamfer(&recon, target)?;
                let own = model.reconstruct(target)?;
                let denom = metrics::chamfer(&own, target)?;
                let t_nre = metrics::normalized_error(t_re, denom, "transfer target error")?;
                per_model.push((t_re, t_nre));
            }
            rows.push(TransferPair {
                pair: name.clone(),
                t_re_victim: per_model[0].0,
                t_nre_victim: per_model[0].1,
                t_re_transfer: per_model[1].0,
                t_nre_transfer: per_model[1].1,
            });
        }
        let n = rows.len() as f64;
        let variant_report = TransferVariant {
            mean_t_re_victim: rows.iter().map(|r| r.t_re_victim).sum::<f64>() / n,
            mean_t_nre_victim: rows.iter().map(|r| r.t_nre_victim).sum::<f64>() / n,
            mean_t_re_transfer: rows.iter().map(|r| r.t_re_transfer).sum::<f64>() / n,
            mean_t_nre_transfer: rows.iter().map(|r| r.t_nre_transfer).sum::<f64>() / n,
            frac_transfer_higher: rows
                .iter()
                .filter(|r| r.t_re_transfer > r.t_re_victim)
                .count() as f64
                / n,
            pairs: rows,
        };
        println!(
            "transfer {variant}: mean T-RE victim {:.6} vs transfer {:.6} (higher on {:.0}% of pairs)",
            variant_report.mean_t_re_victim,
            variant_report.mean_t_re_transfer,
            100.0 * variant_report.frac_transfer_higher
        );
        report.insert(variant.clone(), variant_report);
    }
    write_json(&ctx.run.transfer_results(), &report)?;
    Ok(())
}

/// Grid search over surface-defense parameters on the stored output-attack
/// pairs, minimizing the mean normalized source error after defense.
pub fn calibrate_defense_cmd(ctx: &Ctx, k_grid: &[usize], delta_grid: &[f64]) -> Result<()> {
    if k_grid.is_empty() || delta_grid.is_empty() {
        bail!("calibration grids must not be empty");
    }
    let model = load_victim(ctx)?;
    let pairs = load_stored_pairs(ctx, "output")
        .context("calibration runs on the stored output attack")?;

    let mut csv = String::from("k");
    for delta in delta_grid {
        write!(csv, ",delta_{delta}")?;
    }
    csv.push('\n');

    let mut best: Option<(usize, f64, f64)> = None;
    for &k in k_grid {
        write!(csv, "{k}")?;
        for &delta in delta_grid {
            let defense = DefenseConfig {
                kind: DefenseKind::Surface,
                k,
                delta,
            };
            let cell = match evaluate_defense(
                &model,
                &pairs.adversarials,
                &pairs.sources,
                &defense,
                None,
            ) {
                Ok((_, aggregate)) => aggregate.mean_s_nre_after,
                Err(_) => f64::NAN,
            };
            if cell.is_finite() && best.map_or(true, |(_, _, b)| cell < b) {
                best = Some((k, delta, cell));
            }
            write!(csv, ",{cell:.6}")?;
        }
        csv.push('\n');
    }
    write_text(&ctx.run.calibration_grid(), &csv)?;

    let best_json = match best {
        Some((k, delta, value)) => serde_json::json!({
            "k": k, "delta": delta, "mean_s_nre_after": value,
        }),
        None => serde_json::json!({
            "k": null, "delta": null, "mean_s_nre_after": null,
            "note": "every grid cell removed all points",
        }),
    };
    write_json(&ctx.run.calibration_best(), &best_json)?;
    match best {
        Some((k, delta, value)) => println!(
            "calibration: best k={k} delta={delta} with mean S-NRE after {value:.4}"
        ),
        None => println!("calibration: no usable cell, every setting removed all points"),
    }
    Ok(())
}

/// Reconstruct the source-to-adversarial interpolation for one stored pair.
pub fn interpolate_cmd(
    ctx: &Ctx,
    mode: Option<AttackMode>,
    pair: Option<&str>,
    alphas: &[f64],
) -> Result<()> {
    let model = load_victim(ctx)?;
    let variant = mode.unwrap_or(ctx.config.attack.mode).to_string();
    let pairs = load_stored_pairs(ctx, &variant)?;

    let index = match pair {
        Some(name) => pairs
            .names
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| {
                anyhow!(
                    "no pair {name:?} in variant {variant}; available: {}",
                    pairs.names.join(", ")
                )
            })?,
        None => 0,
    };
    let source = &pairs.sources[index];
    let target = &pairs.targets[index];
    let adversarial = &pairs.adversarials[index];

    let steps = interpolate_evolution(&model, source, adversarial, alphas)?;
    let out_dir = ctx.run.interp_dir().join(&variant).join(&pairs.names[index]);
    let ext = ctx.run.cloud_ext();
    let mut rows = Vec::new();
    for step in &steps {
        let cloud_file = format!("cloud_a{}.{ext}", step.alpha);
        let recon_file = format!("recon_a{}.{ext}", step.alpha);
        ctx.run.save_cloud(&out_dir.join(&cloud_file), &step.cloud)?;
        ctx.run
            .save_cloud(&out_dir.join(&recon_file), &step.reconstruction)?;
        rows.push(serde_json::json!({
            "alpha": step.alpha,
            "cloud_file": cloud_file,
            "recon_file": recon_file,
            "cd_cloud_to_source": metrics::chamfer(&step.cloud, source)?,
            "cd_recon_to_target": metrics::chamfer(&step.reconstruction, target)?,
        }));
    }
    write_json(&out_dir.join("evolution.json"), &rows)?;
    println!(
        "interpolated {} steps for {} into {}",
        steps.len(),
        pairs.names[index],
        out_dir.display()
    );
    Ok(())
}

/// Parse a comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(
            part.parse::<T>()
                .map_err(|e| anyhow!("invalid {what} value {part:?}: {e}"))?,
        );
    }
    if out.is_empty() {
        bail!("empty {what} list");
    }
    Ok(out)
}

/// Parse an attack mode name.
pub fn parse_mode(text: &str) -> Result<AttackMode> {
    match text {
        "latent" => Ok(AttackMode::Latent),
        "output" => Ok(AttackMode::Output),
        other => bail!("unknown attack mode {other:?}; use latent or output"),
    }
}

/// Parse a defense kind list: a name, or `all` for both.
pub fn parse_kinds(text: &str) -> Result<Vec<DefenseKind>> {
    match text {
        "surface" => Ok(vec![DefenseKind::Surface]),
        "critical" => Ok(vec![DefenseKind::Critical]),
        "all" => Ok(vec![DefenseKind::Surface, DefenseKind::Critical]),
        other => bail!("unknown defense kind {other:?}; use surface, critical, or all"),
    }
}

pub fn report_cmd(ctx: &Ctx) -> Result<()> {
    crate::report::render(ctx)
}
