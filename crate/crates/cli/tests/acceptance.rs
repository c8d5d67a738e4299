//! Acceptance suite: one test per criterion, each printing a [PASS] or
//! [FAIL] line with the measured numbers. A shared fixture trains the
//! victim, transfer and classifier networks once at full desk scale and
//! runs every attack sweep the criteria consume.

use anyhow::Result;
use pcadv::attack::{
    targeted_sweep, untargeted_attack, AttackConfig, AttackMode, DistanceLoss, PairOutcome,
};
use pcadv::autodiff::{finite_diff_check, Tape, Tensor};
use pcadv::defense::{
    detect_attack, detector_train_config, evaluate_defense, DefenseConfig, DefenseKind,
};
use pcadv::metrics::{self, brute};
use pcadv::models::{AEModel, ClassifierParams, ModelDims};
use pcadv::pointcloud::{generate_shape, NeighborIndex, PointCloud, ShapeClass};
use pcadv::training::{
    classification_accuracy, train_ae, train_classifier, Dataset, DatasetConfig, SplitFractions,
    TrainConfig,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

/// Residual source error that must survive any defense of an attacked
/// cloud, frozen at the first desk calibration. That run measured the
/// lowest combination (latent attack under the critical-point defense) at
/// 1.221 while clean clouds stayed at or below 1.086 under either defense,
/// so 1.15 separates the attacked band from the clean band.
const RESIDUAL_NRE_FLOOR: f64 = 1.15;

/// Validation reconstruction error the victim must reach at desk scale.
/// The first desk calibration measured 5.12e-3 after 100 epochs, a 72-fold
/// drop from the initial error.
const VICTIM_VAL_CD_CEILING: f64 = 6e-3;

fn verdict(criterion: usize, ok: bool, detail: &str) {
    println!("[{}] criterion {criterion}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} failed: {detail}");
}

struct DefenseSummary {
    mean_s_nre_before: f64,
    mean_s_nre_after: f64,
}

struct Fixture {
    dataset: Dataset,
    classes: Vec<ShapeClass>,
    victim: AEModel,
    victim_val: Vec<f64>,
    transfer: AEModel,
    transfer_val: Vec<f64>,
    classifier: ClassifierParams,
    classifier_test_accuracy: f64,
    /// Attack sources: the first three test clouds of every class.
    sources: Vec<PointCloud>,
    latent: Vec<PairOutcome>,
    output: Vec<PairOutcome>,
    /// Output-mode sweeps at fixed geometric weights, one candidate each.
    lambda: Vec<(f64, Vec<PairOutcome>)>,
    untargeted_latent: Vec<PairOutcome>,
    untargeted_output: Vec<PairOutcome>,
    latent_chamfer_single: Vec<PairOutcome>,
    latent_pl2_single: Vec<PairOutcome>,
    /// (attack mode, defense kind) -> source-error summary.
    defense: BTreeMap<(String, String), DefenseSummary>,
    clean_surface_zero_removal_frac: f64,
    clean_surface_mean_nre_after: f64,
    clean_critical_mean_nre_after: f64,
    /// Defended reconstructions for detection, per kind: (clean, attacked),
    /// one pair per attack of the wide single-candidate output sweep.
    detection_pops: BTreeMap<String, (Vec<PointCloud>, Vec<PointCloud>)>,
    attack_sweep_secs: f64,
}

static FIXTURE: OnceLock<std::result::Result<Fixture, String>> = OnceLock::new();

fn fixture() -> &'static Fixture {
    match FIXTURE.get_or_init(|| build_fixture().map_err(|e| format!("{e:#}"))) {
        Ok(f) => f,
        Err(e) => panic!("fixture build failed: {e}"),
    }
}

fn desk_defense(kind: DefenseKind) -> DefenseConfig {
    DefenseConfig {
        kind,
        k: 2,
        delta: 0.2,
    }
}

fn labels_of(clouds: &[PointCloud]) -> Vec<usize> {
    clouds
        .iter()
        .map(|c| c.label().expect("labeled").id())
        .collect()
}

fn build_fixture() -> Result<Fixture> {
    let total = Instant::now();
    let stage = |name: &str, t: Instant| eprintln!("fixture: {name} in {:.1}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let dataset_config = DatasetConfig {
        num_classes: 4,
        per_class: 200,
        points_per_cloud: 256,
        seed: 7,
        split: SplitFractions::default(),
    };
    let dataset = Dataset::generate(&dataset_config)?;
    let classes = dataset.classes();
    stage("dataset", t);

    let dims = ModelDims {
        n: 256,
        m: 32,
        width_factor: 0.25,
    };
    let ae_train = TrainConfig {
        epochs: 100,
        batch_size: 25,
        learning_rate: 5e-4,
        init_seed: 1,
        shuffle_seed: 3,
    };

    let t = Instant::now();
    let trained = train_ae(&dataset, dims, &ae_train)?;
    let mut victim = trained.model;
    victim.freeze();
    let victim_val = trained.val_loss;
    stage("victim autoencoder", t);

    let t = Instant::now();
    let transfer_train = TrainConfig {
        init_seed: 2,
        ..ae_train
    };
    let trained = train_ae(&dataset, dims, &transfer_train)?;
    let mut transfer = trained.model;
    transfer.freeze();
    let transfer_val = trained.val_loss;
    stage("transfer autoencoder", t);

    let t = Instant::now();
    let classifier_train = TrainConfig {
        epochs: 40,
        batch_size: 25,
        learning_rate: 1e-3,
        init_seed: 5,
        shuffle_seed: 6,
    };
    let trained = train_classifier(
        &dataset.train,
        &labels_of(&dataset.train),
        &dataset.val,
        &labels_of(&dataset.val),
        classes.len(),
        0.25,
        &classifier_train,
    )?;
    let classifier = trained.classifier;
    let classifier_test_accuracy =
        classification_accuracy(&classifier, &dataset.test, &labels_of(&dataset.test))?;
    stage("classifier", t);

    let mut sources = Vec::new();
    for &class in &classes {
        let mut taken = 0;
        for cloud in &dataset.test {
            if cloud.label() == Some(class) && taken < 3 {
                sources.push(cloud.clone());
                taken += 1;
            }
        }
    }

    let base = |mode| {
        let mut config = AttackConfig::new(mode);
        config.seed = 11;
        config
    };
    let pool = &dataset.test;

    let sweeps = Instant::now();
    let t = Instant::now();
    let latent = targeted_sweep(&victim, &sources, pool, &classes, &base(AttackMode::Latent), None)?;
    stage("latent sweep", t);
    let t = Instant::now();
    let output = targeted_sweep(&victim, &sources, pool, &classes, &base(AttackMode::Output), None)?;
    stage("output sweep", t);

    let t = Instant::now();
    let mut lambda = Vec::new();
    for value in [0.5, 1.0, 2.0, 4.0] {
        let mut config = base(AttackMode::Output);
        config.lambda = Some(value);
        config.candidates = 1;
        lambda.push((value, targeted_sweep(&victim, &sources, pool, &classes, &config, None)?));
    }
    stage("weight sweep", t);

    let t = Instant::now();
    let mut untargeted_latent = Vec::new();
    let mut untargeted_output = Vec::new();
    for source in &sources {
        untargeted_latent.push(untargeted_attack(
            &victim,
            source,
            pool,
            &classes,
            &base(AttackMode::Latent),
            None,
        )?);
        untargeted_output.push(untargeted_attack(
            &victim,
            source,
            pool,
            &classes,
            &base(AttackMode::Output),
            None,
        )?);
    }
    stage("untargeted sweeps", t);

    let t = Instant::now();
    let mut single = base(AttackMode::Latent);
    single.candidates = 1;
    let latent_chamfer_single = targeted_sweep(&victim, &sources, pool, &classes, &single, None)?;
    let mut pl2 = single;
    pl2.distance_loss = DistanceLoss::PerturbationL2;
    let latent_pl2_single = targeted_sweep(&victim, &sources, pool, &classes, &pl2, None)?;
    stage("regularizer comparison", t);
    let attack_sweep_secs = sweeps.elapsed().as_secs_f64();

    // Detection needs a wider population than the quality sweeps: every
    // test cloud is attacked once per other class with a single candidate,
    // giving one clean/adversarial pair per attack.
    let t = Instant::now();
    let detection_sources: Vec<PointCloud> = dataset.test.clone();
    let mut wide = base(AttackMode::Output);
    wide.candidates = 1;
    let detection_sweep = targeted_sweep(&victim, &detection_sources, pool, &classes, &wide, None)?;
    stage("detection sweep", t);

    let t = Instant::now();
    let mut defense = BTreeMap::new();
    let mut detection_pops = BTreeMap::new();
    for kind in [DefenseKind::Surface, DefenseKind::Critical] {
        let config = desk_defense(kind);
        for (mode, outcomes) in [("latent", &latent), ("output", &output)] {
            let suspects: Vec<PointCloud> =
                outcomes.iter().map(|o| o.best().adversarial.clone()).collect();
            let originals: Vec<PointCloud> =
                pair_sources_owned(&sources, outcomes);
            let (_, aggregate) = evaluate_defense(&victim, &suspects, &originals, &config, None)?;
            defense.insert(
                (mode.to_string(), kind.to_string()),
                DefenseSummary {
                    mean_s_nre_before: aggregate.mean_s_nre_before,
                    mean_s_nre_after: aggregate.mean_s_nre_after,
                },
            );
        }

        let suspects: Vec<PointCloud> = detection_sweep
            .iter()
            .map(|o| o.best().adversarial.clone())
            .collect();
        let originals: Vec<PointCloud> = pair_sources_owned(&detection_sources, &detection_sweep);
        let (attacked_results, _) =
            evaluate_defense(&victim, &suspects, &originals, &config, None)?;
        let (clean_results, _) =
            evaluate_defense(&victim, &originals, &originals, &config, None)?;
        detection_pops.insert(
            kind.to_string(),
            (
                clean_results
                    .iter()
                    .map(|r| r.reconstruction_after.clone())
                    .collect(),
                attacked_results
                    .iter()
                    .map(|r| r.reconstruction_after.clone())
                    .collect(),
            ),
        );
    }

    let everything: Vec<PointCloud> = dataset
        .train
        .iter()
        .chain(&dataset.val)
        .chain(&dataset.test)
        .cloned()
        .collect();
    let (surface_results, surface_aggregate) = evaluate_defense(
        &victim,
        &everything,
        &everything,
        &desk_defense(DefenseKind::Surface),
        None,
    )?;
    let clean_surface_zero_removal_frac = surface_results
        .iter()
        .filter(|r| r.removed.is_empty())
        .count() as f64
        / surface_results.len() as f64;
    let clean_surface_mean_nre_after = surface_aggregate.mean_s_nre_after;
    let (_, critical_aggregate) = evaluate_defense(
        &victim,
        &everything,
        &everything,
        &desk_defense(DefenseKind::Critical),
        None,
    )?;
    let clean_critical_mean_nre_after = critical_aggregate.mean_s_nre_after;
    stage("defenses", t);

    eprintln!("fixture: total {:.1}s", total.elapsed().as_secs_f64());
    Ok(Fixture {
        dataset,
        classes,
        victim,
        victim_val,
        transfer,
        transfer_val,
        classifier,
        classifier_test_accuracy,
        sources,
        latent,
        output,
        lambda,
        untargeted_latent,
        untargeted_output,
        latent_chamfer_single,
        latent_pl2_single,
        defense,
        clean_surface_zero_removal_frac,
        clean_surface_mean_nre_after,
        clean_critical_mean_nre_after,
        detection_pops,
        attack_sweep_secs,
    })
}

fn pair_sources_owned(sources: &[PointCloud], outcomes: &[PairOutcome]) -> Vec<PointCloud> {
    outcomes
        .iter()
        .map(|o| sources[o.source_id].clone())
        .collect()
}

fn mean<T, F: Fn(&T) -> f64>(items: &[T], f: F) -> f64 {
    items.iter().map(f).sum::<f64>() / items.len() as f64
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect()
}

#[test]
fn c01_gradients_match_finite_differences() {
    let start = Instant::now();
    let h = 1e-6;
    let dims = ModelDims {
        n: 32,
        m: 8,
        width_factor: 0.0625,
    };
    let mut worst = [0.0f64; 4];
    let mut checked = [0usize; 4];

    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let x = Tensor::from_points(&random_points(&mut rng, 16));
        let y = Tensor::from_points(&random_points(&mut rng, 20));
        let report = finite_diff_check(&x, h, None, |tape, input| {
            let y_node = tape.constant(y.clone())?;
            tape.chamfer(input, y_node)
        })
        .unwrap();
        worst[0] = worst[0].max(report.max_rel_err);
        checked[0] += report.checked;

        let model = AEModel::new(dims, 1000 + seed).unwrap();
        let palette = ShapeClass::palette(4).unwrap();
        let class = palette[(seed % 4) as usize];
        let target_class = palette[((seed + 1) % 4) as usize];
        let source = generate_shape(class, 32, 40 + seed).unwrap();
        let target = generate_shape(target_class, 32, 80 + seed).unwrap();
        let (target_latent, _) = model.encode(&target).unwrap();
        let source_tensor = Tensor::from_points(source.points());
        let target_tensor = Tensor::from_points(target.points());
        let perturbation = Tensor::matrix(
            32,
            3,
            random_points(&mut rng, 32).concat().iter().map(|v| v * 0.01).collect(),
        )
        .unwrap();

        let latent_distance = |tape: &mut Tape, p: pcadv::autodiff::NodeId| {
            let bound = model.bind_on_tape(tape, false)?;
            let s = tape.constant(source_tensor.clone())?;
            let q = tape.add(s, p)?;
            let z_q = bound.encode(tape, q)?;
            let z_t = tape.constant(Tensor::vector(target_latent.values().to_vec()))?;
            let diff = tape.sub(z_q, z_t)?;
            tape.l2_norm(diff)
        };
        let report = finite_diff_check(&perturbation, h, None, latent_distance).unwrap();
        worst[1] = worst[1].max(report.max_rel_err);
        checked[1] += report.checked;

        let report = finite_diff_check(&perturbation, h, None, |tape, p| {
            let bound = model.bind_on_tape(tape, false)?;
            let s = tape.constant(source_tensor.clone())?;
            let q = tape.add(s, p)?;
            let z_q = bound.encode(tape, q)?;
            let z_t = tape.constant(Tensor::vector(target_latent.values().to_vec()))?;
            let diff = tape.sub(z_q, z_t)?;
            let adv = tape.l2_norm(diff)?;
            let cd = tape.chamfer(q, s)?;
            let weighted = tape.scale(cd, 150.0)?;
            tape.add(adv, weighted)
        })
        .unwrap();
        worst[2] = worst[2].max(report.max_rel_err);
        checked[2] += report.checked;

        let report = finite_diff_check(&perturbation, h, None, |tape, p| {
            let bound = model.bind_on_tape(tape, false)?;
            let s = tape.constant(source_tensor.clone())?;
            let q = tape.add(s, p)?;
            let recon = bound.reconstruct(tape, q)?;
            let t = tape.constant(target_tensor.clone())?;
            let adv = tape.chamfer(recon, t)?;
            let cd = tape.chamfer(q, s)?;
            let weighted = tape.scale(cd, 1.0)?;
            tape.add(adv, weighted)
        })
        .unwrap();
        worst[3] = worst[3].max(report.max_rel_err);
        checked[3] += report.checked;
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst[0] <= 1e-4
        && worst[1] <= 1e-4
        && worst[2] <= 1e-4
        && worst[3] <= 1e-3
        && checked.iter().all(|&c| c > 0)
        && elapsed < 60.0;
    verdict(
        1,
        ok,
        &format!(
            "max relative errors: chamfer {:.2e}, latent distance {:.2e}, latent objective {:.2e}, \
             output objective {:.2e} ({} coordinates, {elapsed:.1}s)",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            checked.iter().sum::<usize>(),
        ),
    );
}

#[test]
fn c02_fast_metrics_match_brute_force() {
    let start = Instant::now();
    let mut max_chamfer_diff = 0.0f64;
    let mut knn_mismatches = 0usize;
    let mut os_mismatches = 0usize;

    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let nx = rng.gen_range(8..=64);
        let ny = rng.gen_range(8..=64);
        let xs = random_points(&mut rng, nx);
        let ys = random_points(&mut rng, ny);

        let fast = metrics::chamfer_points(&xs, &ys).unwrap();
        let slow = brute::chamfer_brute(&xs, &ys).unwrap();
        max_chamfer_diff = max_chamfer_diff.max((fast - slow).abs());

        let cloud = PointCloud::new(xs.clone()).unwrap();
        let index = NeighborIndex::new(&cloud).unwrap();
        let k = rng.gen_range(1..=4.min(nx - 1));
        let query_id = rng.gen_range(0..nx);
        let exclude = if seed % 2 == 0 { Some(query_id) } else { None };
        let fast_knn = index.knn(xs[query_id], k, exclude).unwrap();
        let slow_knn = brute::knn_brute(&xs, xs[query_id], k, exclude).unwrap();
        let same = fast_knn.len() == slow_knn.len()
            && fast_knn
                .iter()
                .zip(&slow_knn)
                .all(|(a, b)| a.id == b.id && a.dist == b.dist);
        knn_mismatches += usize::from(!same);

        let q_cloud = PointCloud::new(ys.clone()).unwrap();
        let (fast_count, fast_ids) = metrics::os_count(&q_cloud, &cloud, 0.05).unwrap();
        let (slow_count, slow_ids) = brute::os_count_brute(&ys, &xs, 0.05).unwrap();
        os_mismatches += usize::from(fast_count != slow_count || fast_ids != slow_ids);
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok = max_chamfer_diff <= 1e-12 && knn_mismatches == 0 && os_mismatches == 0 && elapsed < 30.0;
    verdict(
        2,
        ok,
        &format!(
            "chamfer max |fast-brute| {max_chamfer_diff:.2e}, knn mismatches {knn_mismatches}, \
             off-surface mismatches {os_mismatches} over 100 instances ({elapsed:.1}s)"
        ),
    );
}

#[test]
fn c03_critical_subsets_reproduce_latent_codes() {
    let fx = fixture();
    let start = Instant::now();
    let mut exact = 0usize;
    for i in 0..100u64 {
        let class = fx.classes[(i % fx.classes.len() as u64) as usize];
        let cloud = generate_shape(class, 256, 5000 + i).unwrap();
        let (code, critical_ids) = fx.victim.encode(&cloud).unwrap();
        let subset = cloud.subset(&critical_ids).unwrap();
        let (subset_code, _) = fx.victim.encode(&subset).unwrap();
        exact += usize::from(subset_code == code);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = exact == 100 && elapsed < 30.0;
    verdict(
        3,
        ok,
        &format!("{exact}/100 critical subsets reproduce the full latent exactly ({elapsed:.1}s)"),
    );
}

#[test]
fn c04_output_attack_beats_latent_and_no_attack_baselines() {
    let fx = fixture();
    let latent_t_nre = mean(&fx.latent, |o| o.best().metrics.t_nre);
    let output_t_nre = mean(&fx.output, |o| o.best().metrics.t_nre);
    let baseline_t_nre = mean(&fx.output, |o| {
        let source = &fx.sources[o.source_id];
        let target = &fx.dataset.test[o.best().target_id];
        let source_recon = fx.victim.reconstruct(source).unwrap();
        let own_recon = fx.victim.reconstruct(target).unwrap();
        let t_re = metrics::chamfer(&source_recon, target).unwrap();
        let denom = metrics::chamfer(&own_recon, target).unwrap();
        metrics::normalized_error(t_re, denom, "baseline").unwrap()
    });
    let ok = output_t_nre < latent_t_nre
        && output_t_nre < baseline_t_nre
        && fx.attack_sweep_secs < 900.0;
    verdict(
        4,
        ok,
        &format!(
            "mean T-NRE: output {output_t_nre:.3} < latent {latent_t_nre:.3} and < no-attack \
             baseline {baseline_t_nre:.3} over {} pairs (sweeps took {:.0}s)",
            fx.output.len(),
            fx.attack_sweep_secs,
        ),
    );
}

#[test]
fn c05_weight_sweep_trades_distortion_for_target_error() {
    let fx = fixture();
    let mut lambdas = Vec::new();
    let mut s_cds = Vec::new();
    let mut t_res = Vec::new();
    for (value, outcomes) in &fx.lambda {
        for outcome in outcomes {
            lambdas.push(*value);
            s_cds.push(outcome.best().metrics.s_cd);
            t_res.push(outcome.best().metrics.t_re);
        }
    }
    let rho_s_cd = metrics::spearman(&lambdas, &s_cds).unwrap();
    let rho_t_re = metrics::spearman(&lambdas, &t_res).unwrap();
    let ok = rho_s_cd < 0.0 && rho_t_re > 0.0;
    verdict(
        5,
        ok,
        &format!(
            "across {} weighted pairs, Spearman(weight, S-CD) = {rho_s_cd:.3} < 0 and \
             Spearman(weight, T-RE) = {rho_t_re:.3} > 0",
            lambdas.len(),
        ),
    );
}

#[test]
fn c06_defenses_restore_attacked_sources_and_spare_clean_ones() {
    let fx = fixture();
    let mut restored = true;
    let mut combos = String::new();
    for ((mode, kind), summary) in &fx.defense {
        restored &= summary.mean_s_nre_after < summary.mean_s_nre_before;
        combos.push_str(&format!(
            " {mode}+{kind} {:.2}->{:.2}",
            summary.mean_s_nre_before, summary.mean_s_nre_after
        ));
    }
    let clean_ok = fx.clean_surface_zero_removal_frac >= 0.95
        && fx.clean_surface_mean_nre_after >= 1.0
        && fx.clean_surface_mean_nre_after <= 1.05
        && fx.clean_critical_mean_nre_after <= 1.25;
    verdict(
        6,
        restored && clean_ok,
        &format!(
            "S-NRE drops under every defense:{combos}; clean surface removes 0 points on \
             {:.1}% of clouds with mean S-NRE {:.4}, clean critical mean S-NRE {:.3}",
            100.0 * fx.clean_surface_zero_removal_frac,
            fx.clean_surface_mean_nre_after,
            fx.clean_critical_mean_nre_after,
        ),
    );
}

#[test]
fn c07_defended_attacks_keep_a_residual_error_floor() {
    let fx = fixture();
    let lowest = fx
        .defense
        .values()
        .map(|s| s.mean_s_nre_after)
        .fold(f64::INFINITY, f64::min);
    let clean_band = fx
        .clean_surface_mean_nre_after
        .max(fx.clean_critical_mean_nre_after);
    let ok = lowest > RESIDUAL_NRE_FLOOR && lowest > clean_band;
    verdict(
        7,
        ok,
        &format!(
            "lowest defended mean S-NRE on attacked inputs is {lowest:.3}, above the \
             {RESIDUAL_NRE_FLOOR} floor and the clean band's {clean_band:.3}"
        ),
    );
}

#[test]
fn c08_attacks_degrade_under_a_reinitialized_model() {
    let fx = fixture();
    let mut higher = 0usize;
    let mut total = 0usize;
    for outcomes in [&fx.latent, &fx.output] {
        for outcome in outcomes.iter() {
            let best = outcome.best();
            let target = &fx.dataset.test[best.target_id];
            let victim_recon = fx.victim.reconstruct(&best.adversarial).unwrap();
            let transfer_recon = fx.transfer.reconstruct(&best.adversarial).unwrap();
            let victim_t_re = metrics::chamfer(&victim_recon, target).unwrap();
            let transfer_t_re = metrics::chamfer(&transfer_recon, target).unwrap();
            higher += usize::from(transfer_t_re > victim_t_re);
            total += 1;
        }
    }
    let frac = higher as f64 / total as f64;
    let ok = frac >= 0.8;
    verdict(
        8,
        ok,
        &format!("transfer T-RE exceeds victim T-RE on {higher}/{total} pairs ({:.0}%)", 100.0 * frac),
    );
}

#[test]
fn c09_untargeted_attacks_do_no_worse_than_targeted() {
    let fx = fixture();
    let mut details = String::new();
    let mut ok = true;
    for (mode, targeted, untargeted) in [
        ("latent", &fx.latent, &fx.untargeted_latent),
        ("output", &fx.output, &fx.untargeted_output),
    ] {
        let targeted_s_cd = mean(targeted, |o| o.best().metrics.s_cd);
        let targeted_t_nre = mean(targeted, |o| o.best().metrics.t_nre);
        let untargeted_s_cd = mean(untargeted, |o| o.best().metrics.s_cd);
        let untargeted_t_nre = mean(untargeted, |o| o.best().metrics.t_nre);
        ok &= untargeted_s_cd <= targeted_s_cd && untargeted_t_nre <= targeted_t_nre;
        details.push_str(&format!(
            " {mode}: S-CD {untargeted_s_cd:.5} vs {targeted_s_cd:.5}, T-NRE \
             {untargeted_t_nre:.3} vs {targeted_t_nre:.3};"
        ));
    }
    verdict(9, ok, &format!("untargeted means stay at or below targeted:{details}"));
}

#[test]
fn c10_output_attack_flips_classifier_labels_more() {
    let fx = fixture();
    let rates = |outcomes: &[PairOutcome]| {
        let mut hit = 0usize;
        let mut avoid = 0usize;
        for outcome in outcomes {
            let best = outcome.best();
            let source_class = fx.sources[outcome.source_id].label().expect("labeled");
            let predicted = fx.classifier.predict_index(&best.reconstruction).unwrap();
            hit += usize::from(predicted == outcome.target_class.id());
            avoid += usize::from(predicted != source_class.id());
        }
        let n = outcomes.len() as f64;
        (hit as f64 / n, avoid as f64 / n)
    };
    let (hit_latent, _) = rates(&fx.latent);
    let (hit_output, avoid_output) = rates(&fx.output);
    let ok = fx.classifier_test_accuracy >= 0.9 && hit_output > hit_latent && avoid_output > 0.6;
    verdict(
        10,
        ok,
        &format!(
            "classifier test accuracy {:.3}; hit-target output {hit_output:.2} > latent \
             {hit_latent:.2}; avoid-source output {avoid_output:.2} > 0.6",
            fx.classifier_test_accuracy,
        ),
    );
}

#[test]
fn c11_pipeline_reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let shipped = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let text = std::fs::read_to_string(shipped).unwrap();
    let outputs = dir.path().join("runs");
    let config = dir.path().join("smoke.toml");
    std::fs::write(
        &config,
        text.replace("dir = \"runs\"", &format!("dir = \"{}\"", outputs.display())),
    )
    .unwrap();

    let pipeline = [
        vec!["gen-data"],
        vec!["train-ae"],
        vec!["train-ae", "--transfer"],
        vec!["train-classifier"],
        vec!["attack", "--mode", "latent"],
        vec!["attack", "--mode", "output"],
        vec!["defend"],
        vec!["transfer-eval"],
        vec!["calibrate-defense", "--k-grid", "1,2", "--delta-grid", "0.3,0.45"],
        vec!["report"],
    ];
    let run_all = || {
        for args in &pipeline {
            let output = std::process::Command::new(env!("CARGO_BIN_EXE_pcadv"))
                .args(args)
                .arg("--config")
                .arg(&config)
                .output()
                .expect("spawn pcadv");
            assert!(
                output.status.success(),
                "pcadv {args:?} failed: {}",
                String::from_utf8_lossy(&output.stderr)
            );
        }
    };

    run_all();
    let run_dir = std::fs::read_dir(&outputs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .unwrap();
    let report_dir = run_dir.join("report");
    let snapshot = |dir: &std::path::Path| -> BTreeMap<String, Vec<u8>> {
        std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let path = e.unwrap().path();
                (
                    path.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&path).unwrap(),
                )
            })
            .collect()
    };
    let first = snapshot(&report_dir);
    std::fs::remove_dir_all(&run_dir).unwrap();
    run_all();
    let second = snapshot(&report_dir);

    let same_names: Vec<&String> = first.keys().collect();
    let identical = first == second;
    verdict(
        11,
        identical && !first.is_empty(),
        &format!(
            "two full pipeline runs produced byte-identical reports ({} files: {})",
            first.len(),
            same_names
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        ),
    );
}

#[test]
fn c12_detector_separates_defended_output_attacks() {
    let fx = fixture();
    let detector_train = detector_train_config();
    let mut details = String::new();
    let mut ok = true;
    for (kind, (clean, attacked)) in &fx.detection_pops {
        let outcome = detect_attack(clean, attacked, 0.25, &detector_train).unwrap();
        ok &= outcome.test_accuracy > 0.55;
        details.push_str(&format!(
            " {kind}: {:.2} on {} held-out reconstructions;",
            outcome.test_accuracy, outcome.split_sizes.2,
        ));
    }
    verdict(
        12,
        ok,
        &format!("held-out detection accuracy exceeds 0.55 for the output attack:{details}"),
    );
}

#[test]
fn training_quality_and_regularizer_side_checks() {
    let fx = fixture();
    let first = fx.victim_val[0];
    let last = *fx.victim_val.last().unwrap();
    let transfer_last = *fx.transfer_val.last().unwrap();
    let os_chamfer = mean(&fx.latent_chamfer_single, |o| o.best().metrics.os_count as f64);
    let os_pl2 = mean(&fx.latent_pl2_single, |o| o.best().metrics.os_count as f64);

    let ok = last < VICTIM_VAL_CD_CEILING
        && first / last >= 5.0
        && transfer_last <= 2.0 * last
        && os_pl2 >= os_chamfer;
    println!(
        "[{}] side checks: victim val CD {first:.4}->{last:.5} ({:.0}x, ceiling {VICTIM_VAL_CD_CEILING}), \
         transfer val CD {transfer_last:.5}, mean OS {os_pl2:.1} (perturbation-norm) >= {os_chamfer:.1} (chamfer)",
        if ok { "PASS" } else { "FAIL" },
        first / last,
    );
    assert!(ok, "training quality or regularizer side checks failed");
}
