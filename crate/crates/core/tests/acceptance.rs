//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line and
//! asserts the criterion with its pinned tolerance.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retain_asd::audio::{mean_power, mix_at_snr_scalenoise, mix_at_snr_unitnoise, snr_db_from_powers, Waveform, SAMPLE_RATE};
use retain_asd::bench::{
    build_subset, run_eval, run_eval_many, synth_machine_pool, synth_noise_pool, ClipSource, EvalSettings,
    ExperimentConfig, MachinePool, NoisePool, OracleEmbedder, PoolSpec, Scorer, Split, SplitCounts, SubsetName,
    SubsetSpec, TrainedModel,
};
use retain_asd::encoder::{backward_trace, forward_trace, head_logits, init, EncoderConfig, Upstream};
use retain_asd::features::{MelFeatures, NormStats, SpecAugmentConfig, N_MELS};
use retain_asd::losses::{
    combined_loss, denoise_loss, mixture_mse, tagging_loss, LabelVector, LossWeights, Reduction,
};
use retain_asd::metrics::{auc, official_score, pauc, Domain, ScoredClip, LOW_SNR_SET};
use retain_asd::par::Execution;
use retain_asd::scoring::{embed_clip, embedding_mixture_oracle};
use retain_asd::trainer::{synth_corpus, tiny_encoder, CorpusSpec, Objective, PretrainCorpus, SnrPolicy, TrainConfig, Trainer};

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    // Written straight to the handle so the line shows up without --nocapture.
    // One write per line keeps concurrent tests from interleaving it.
    let line = format!("criterion {n}: {verdict} ({detail})\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn random_waveform(rng: &mut ChaCha8Rng, n: usize) -> Waveform {
    let scale = 10f64.powf(rng.random_range(-3.0..1.0));
    Waveform::new((0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect(), SAMPLE_RATE)
}

fn small_corpus() -> &'static PretrainCorpus {
    static CORPUS: OnceLock<PretrainCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        synth_corpus(
            &CorpusSpec {
                machine_types: vec!["pump".into(), "drill".into(), "press".into()],
                attributes_per_type: 2,
                clips_per_class: 1,
                clips_per_noise_class: 2,
                duration_s: 0.5,
                seed: 11,
                ..CorpusSpec::default()
            },
            Execution::Parallel,
        )
        .unwrap()
    })
}

#[test]
fn criterion_1_snr_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(16..4000);
        let x1 = random_waveform(&mut rng, n);
        let x2 = random_waveform(&mut rng, n);
        let snr = rng.random_range(-40.0..=40.0);
        for mix in [mix_at_snr_unitnoise(&x1, &x2, snr).unwrap(), mix_at_snr_scalenoise(&x1, &x2, snr).unwrap()] {
            let p1 = mean_power(&x1.scaled(mix.a1)).unwrap();
            let p2 = mean_power(&x2.scaled(mix.a2)).unwrap();
            worst = worst.max((snr_db_from_powers(p1, p2) - snr).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-9 && secs < 10.0;
    report(1, pass, &format!("max |SNR error| {worst:.2e} dB over 2x1000 mixes, {secs:.2} s"));
    assert!(pass);
}

#[test]
fn criterion_2_gradients() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (c, n_noise) = (3, 2);
    let retain_cfg = EncoderConfig { d_model: 6, n_layers: 2, n_classes: c + n_noise, seed: 5, ..tiny_encoder() };
    let denoise_cfg = EncoderConfig { n_classes: c, ..retain_cfg.clone() };
    let feats = MelFeatures::new((0..20 * N_MELS).map(|_| rng.random_range(-2.0..2.0)).collect(), 20, N_MELS).unwrap();
    let label = LabelVector::mixture(c, n_noise, 1, 0);
    let weights = LossWeights::new(1.0, 1.0);

    let retain_params = init(&retain_cfg).unwrap();
    let n_layers = retain_cfg.n_layers;
    let l = forward_trace(&retain_params, &feats).len();
    let teacher = retain_asd::encoder::FrameEmbedding {
        values: Array2::from_shape_fn((l, retain_cfg.d_model), |_| rng.random_range(-1.0..1.0)),
        t_patches: 2,
        f_patches: 8,
        layer_index: n_layers,
    };

    let feats = &feats;
    type Objective<'a> = Box<dyn Fn(&retain_asd::encoder::Parameters) -> (f64, Vec<f64>) + 'a>;
    let value_and_grad = |which: &'static str| -> Objective<'_> {
        let teacher = teacher.clone();
        let label = label.clone();
        Box::new(move |p| {
            let tr = forward_trace(p, feats);
            let logits = || head_logits(p, &tr).unwrap();
            let mix = || mixture_mse(&tr.tap(n_layers).unwrap(), &teacher, Reduction::Sum).unwrap();
            let (v, up) = match which {
                "denoise" => {
                    let (v, g) = denoise_loss(&logits(), &label).unwrap();
                    (v, Upstream::logits(g))
                }
                "tagging" => {
                    let (v, g) = tagging_loss(&logits(), &label).unwrap();
                    (v, Upstream::logits(g))
                }
                "mixture" => {
                    let (v, g) = mix();
                    (v, Upstream::at_layer(n_layers, g))
                }
                _ => {
                    let (vt, gt) = tagging_loss(&logits(), &label).unwrap();
                    let (vm, gm) = mix();
                    let gt = gt.iter().map(|x| weights.alpha * x).collect();
                    (combined_loss(vt, vm, &weights), Upstream::logits(gt).with_tap(n_layers, gm.mapv(|x| weights.beta * x)))
                }
            };
            (v, backward_trace(p, &tr, &up).unwrap())
        })
    };

    let h = 1e-4;
    let mut summary = Vec::new();
    let mut pass = true;
    for which in ["denoise", "tagging", "mixture", "combined"] {
        let params = if which == "denoise" { init(&denoise_cfg).unwrap() } else { retain_params.clone() };
        let f = value_and_grad(which);
        let (_, grad) = f(&params);
        let mut worst: f64 = 0.0;
        for _ in 0..60 {
            let i = rng.random_range(0..params.len());
            let mut plus = params.clone();
            plus.values[i] += h;
            let mut minus = params.clone();
            minus.values[i] -= h;
            let fd = (f(&plus).0 - f(&minus).0) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        pass &= worst < 1e-3;
        summary.push(format!("{which} {worst:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    report(2, pass, &format!("max relative error on 60 coords each: {}; {secs:.1} s", summary.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_3_frozen_teacher() {
    let cfg = TrainConfig {
        steps: 500,
        warmup_steps: 20,
        batch_size: 2,
        lr: 1e-3,
        encoder: EncoderConfig { d_model: 8, n_layers: 2, ..tiny_encoder() },
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(small_corpus(), cfg, Execution::Parallel).unwrap();
    let teacher0 = t.teacher().hash();
    let student0 = t.params().hash();
    t.run().unwrap();
    let pass = t.step() == 500 && t.teacher().hash() == teacher0 && t.teacher().is_intact() && t.params().hash() != student0;
    report(3, pass, &format!("teacher hash {} after {} steps, student moved: {}", &teacher0[..12], t.step(), t.params().hash() != student0));
    assert!(pass);
}

/// ROC by sweeping every observed score as a threshold (score >= t is positive).
fn brute_roc(clips: &[ScoredClip]) -> Vec<(f64, f64)> {
    let pos = clips.iter().filter(|c| c.is_anomalous).count() as f64;
    let neg = clips.len() as f64 - pos;
    let mut thresholds: Vec<f64> = clips.iter().map(|c| c.anomaly_score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = clips.iter().filter(|c| c.is_anomalous && c.anomaly_score >= t).count() as f64;
        let fp = clips.iter().filter(|c| !c.is_anomalous && c.anomaly_score >= t).count() as f64;
        pts.push((fp / neg, tp / pos));
    }
    pts
}

/// Integrates the ROC polyline over fpr in [0, p] by clipping each segment.
fn brute_partial_area(pts: &[(f64, f64)], p: f64) -> f64 {
    let tpr_at = |x: f64, (x0, y0): (f64, f64), (x1, y1): (f64, f64)| {
        if x1 == x0 { y1 } else { y0 + (y1 - y0) * (x - x0) / (x1 - x0) }
    };
    let mut area = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let hi = b.0.min(p);
        if hi > a.0 {
            area += (hi - a.0) * (a.1 + tpr_at(hi, a, b)) / 2.0;
        }
    }
    area / p
}

/// Pairwise Mann-Whitney count, ties one half.
fn brute_auc(clips: &[ScoredClip]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for a in clips.iter().filter(|c| c.is_anomalous) {
        for n in clips.iter().filter(|c| !c.is_anomalous) {
            den += 1.0;
            num += if a.anomaly_score > n.anomaly_score {
                1.0
            } else if a.anomaly_score == n.anomaly_score {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

#[test]
fn criterion_4_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(2..=20);
        let mut clips: Vec<ScoredClip> = (0..n)
            .map(|i| ScoredClip {
                clip_id: format!("{case}/{i}"),
                // Coarse grid so ties are common.
                anomaly_score: (rng.random_range(0..8) as f64) / 8.0,
                is_anomalous: rng.random_bool(0.5),
                domain: Domain::Source,
            })
            .collect();
        clips[0].is_anomalous = true;
        clips[1].is_anomalous = false;
        let p = rng.random_range(0.05..=1.0);
        let pts = brute_roc(&clips);
        worst = worst
            .max((auc(&clips).unwrap() - brute_auc(&clips)).abs())
            .max((auc(&clips).unwrap() - brute_partial_area(&pts, 1.0)).abs())
            .max((pauc(&clips, p).unwrap() - brute_partial_area(&pts, p)).abs())
            .max((pauc(&clips, 1.0).unwrap() - auc(&clips).unwrap()).abs());
        let (a, b, c) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
        worst = worst.max((official_score(a, b, c).unwrap() - 3.0 / (1.0 / a + 1.0 / b + 1.0 / c)).abs());
    }
    let unit = official_score(1.0, 1.0, 1.0).unwrap();
    let pass = worst < 1e-10 && unit == 1.0;
    report(4, pass, &format!("max deviation from brute-force oracles {worst:.1e} on 200 sets; official(1,1,1) = {unit}"));
    assert!(pass);
}

#[test]
fn criterion_5_pooling_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = init(&EncoderConfig { d_model: 16, n_layers: 2, seed: 3, ..tiny_encoder() }).unwrap();
    let stats = NormStats { mean: -10.0, std: 5.0 };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1600..4800);
        let clean = random_waveform(&mut rng, n);
        let noise = random_waveform(&mut rng, n);
        let layer = rng.random_range(1..=2);
        let ec = embed_clip(&params, &clean, layer, &stats).unwrap();
        let en = embed_clip(&params, &noise, layer, &stats).unwrap();
        for lambda in [0.0, 0.5, 1.0] {
            let oracle = embedding_mixture_oracle(&params, &clean, &noise, lambda, layer, &stats).unwrap();
            for ((o, a), b) in oracle.values.iter().zip(&ec.values).zip(&en.values) {
                worst = worst.max((o - (lambda * a + (1.0 - lambda) * b)).abs());
            }
        }
    }
    let pass = worst <= 1e-12;
    report(5, pass, &format!("max |oracle - convex(pooled)| {worst:.1e} over 100 pairs x 3 lambdas"));
    assert!(pass);
}

#[test]
fn criterion_6_benchmark_protocol() {
    let pools = PoolSpec { seed: 6, ..PoolSpec::default() };
    let machines = synth_machine_pool(&pools, Execution::Parallel).unwrap();
    let noises = synth_noise_pool(&pools, Execution::Parallel).unwrap();
    let mut failures = Vec::new();
    let mut rows_checked = 0;
    let mut worst: f64 = 0.0;
    for name in SubsetName::ALL {
        let spec = SubsetSpec::new(name);
        let b = build_subset(&spec, &machines, &noises, 6, Execution::Parallel).unwrap();
        let rows = b.rows();
        let mut seen = HashSet::new();
        let mut cells: BTreeMap<(String, i64, Split, Domain, bool), usize> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            if !seen.insert((r.machine_type.clone(), r.snr_db, r.noise_clip_id.clone())) {
                failures.push(format!("{} reuses {}", name.as_str(), r.noise_clip_id));
            }
            if r.split == Split::Reference && r.is_anomalous {
                failures.push(format!("anomalous reference {}", r.clip_path));
            }
            *cells.entry((r.machine_type.clone(), r.snr_db, r.split, r.domain, r.is_anomalous)).or_default() += 1;
            worst = worst.max((b.remeasured_snr_db(i).unwrap() - r.snr_db as f64).abs());
            rows_checked += 1;
        }
        let c = spec.counts;
        let expected = [
            (Split::Reference, Domain::Source, false, c.ref_source),
            (Split::Reference, Domain::Target, false, c.ref_target),
            (Split::Test, Domain::Source, false, c.test_source_normal),
            (Split::Test, Domain::Source, true, c.test_source_anomalous),
            (Split::Test, Domain::Target, false, c.test_target_normal),
            (Split::Test, Domain::Target, true, c.test_target_anomalous),
        ];
        for m in machines.machine_types() {
            for &snr in &spec.snr_grid {
                for (split, domain, anomalous, want) in expected {
                    let got = cells.get(&(m.clone(), snr, split, domain, anomalous)).copied().unwrap_or(0);
                    if got != want {
                        failures.push(format!("{} {m} {snr} dB {split:?}/{domain:?}/{anomalous}: {got} != {want}", name.as_str()));
                    }
                }
            }
        }
        let kinds_ok = rows.iter().all(|r| {
            let want = if r.split == Split::Reference { spec.reference_noise_kind } else { spec.test_noise_kind };
            r.noise_clip_id.starts_with(retain_asd::bench::factory_noise(want).name)
        });
        if !kinds_ok {
            failures.push(format!("{} uses the wrong noise kind", name.as_str()));
        }
    }
    let pass = failures.is_empty() && worst < 1e-6;
    report(
        6,
        pass,
        &format!("{rows_checked} rows, max re-measured SNR error {worst:.1e} dB, {} violations", failures.len()),
    );
    assert!(pass, "{failures:?}");
}

#[test]
fn criterion_7_overfit() {
    let cfg = TrainConfig {
        steps: 500,
        warmup_steps: 5,
        batch_size: 4,
        lr: 3e-3,
        weight_decay: 0.0,
        loss_weights: LossWeights::new(1.0, 1.0),
        snr_policy: SnrPolicy::Fixed(0.0),
        spec_augment: SpecAugmentConfig::OFF,
        encoder: tiny_encoder(),
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(small_corpus(), cfg, Execution::Parallel).unwrap();
    let batch = vec![t.draw_records(0, 0)];
    let first = t.train_step(&batch).unwrap().loss_total;
    let mut last = first;
    let mut reached = None;
    for step in 1..500 {
        last = t.train_step(&batch).unwrap().loss_total;
        if last < 0.1 * first && reached.is_none() {
            reached = Some(step + 1);
        }
    }
    let pass = reached.is_some();
    report(7, pass, &format!("combined loss {first:.3} -> {last:.3}, below 10% at step {reached:?}"));
    assert!(pass);
}

struct SeedOutcome {
    wave: f64,
    oracle: f64,
    retain: f64,
    denoise: f64,
}

/// Desk-scale experiment for one seed: retain and denoise encoders trained on the
/// same corpus and schedule, scored with KNN at the default tap.
fn directional_run(seed: u64) -> SeedOutcome {
    let counts = SplitCounts {
        test_source_normal: 50,
        test_source_anomalous: 50,
        test_target_normal: 50,
        test_target_anomalous: 50,
        ..SplitCounts::default()
    };
    let exp = ExperimentConfig {
        corpus: CorpusSpec { attributes_per_type: 2, clips_per_class: 2, clips_per_noise_class: 6, seed, ..CorpusSpec::default() },
        train: TrainConfig {
            steps: 1000,
            warmup_steps: 100,
            batch_size: 8,
            lr: 1e-3,
            seed,
            snr_policy: SnrPolicy::Fixed(0.0),
            loss_weights: LossWeights::new(1.0, 1.0),
            encoder: EncoderConfig { seed, ..tiny_encoder() },
            ..TrainConfig::default()
        },
        pools: PoolSpec { counts, noise_clips_per_kind: 300, seed, ..PoolSpec::default() },
        subsets: SubsetName::ALL.into_iter().map(|n| SubsetSpec::new(n).with_snrs(&LOW_SNR_SET).with_counts(counts)).collect(),
        subset_seed: seed,
        ..ExperimentConfig::default()
    };
    let mode = Execution::Parallel;
    let corpus = exp.synth_corpus(mode).unwrap();
    let (machines, noises): (MachinePool, NoisePool) = exp.synth_pools(mode).unwrap();
    let subsets = exp.build_subsets(&machines, &noises, mode).unwrap();
    let sources: Vec<&dyn ClipSource> = subsets.iter().map(|s| s as &dyn ClipSource).collect();

    let retain = retain_asd::bench::train_model(&corpus, &exp.train, mode, None).unwrap();
    let denoise_cfg = TrainConfig { objective: Objective::Denoise, ..exp.train.clone() };
    let denoise = retain_asd::bench::train_model(&corpus, &denoise_cfg, mode, None).unwrap();
    let layer = retain.scoring_layer(None).unwrap();
    let r = retain.evaluate(&sources, &[layer], &exp.eval).unwrap().remove(0);
    let d = denoise.evaluate(&sources, &[layer], &exp.eval).unwrap().remove(0);

    let mismatch0 = build_subset(
        &SubsetSpec::new(SubsetName::Mismatch).with_snrs(&[0]).with_counts(counts),
        &machines,
        &noises,
        seed,
        mode,
    )
    .unwrap();
    let wave = retain.embedder(layer);
    let oracle = OracleEmbedder::new(&retain.params, layer, retain.norm);
    let table3 = run_eval_many(&[&mismatch0], &[Scorer::knn(&wave), Scorer::knn(&oracle)], &exp.eval).unwrap();
    SeedOutcome {
        wave: table3[0].hmean_all,
        oracle: table3[1].hmean_all,
        retain: r.hmean_low_snr.unwrap(),
        denoise: d.hmean_low_snr.unwrap(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn criterion_8_directional_replication() {
    let start = Instant::now();
    let outcomes: Vec<SeedOutcome> = (0..5).map(directional_run).collect();
    let mut seeds = String::new();
    for (seed, o) in outcomes.iter().enumerate() {
        seeds.push_str(&format!(
            "  seed {seed}: mismatch@0 dB wave {:.3} oracle {:.3} | low-SNR retain {:.3} denoise {:.3}\n",
            o.wave, o.oracle, o.retain, o.denoise
        ));
    }
    let _ = std::io::stderr().write_all(seeds.as_bytes());
    let a_wins = outcomes.iter().filter(|o| o.oracle > o.wave).count();
    let b_wins = outcomes.iter().filter(|o| o.retain >= o.denoise).count();
    let secs = start.elapsed().as_secs_f64();
    let pass_a = a_wins >= 4;
    let pass_b = b_wins >= 4;
    let detail = format!(
        "(a) oracle > wave in {a_wins}/5, medians {:.3} vs {:.3}; (b) retain >= denoise in {b_wins}/5, medians {:.3} vs {:.3}; {:.0} s",
        median(outcomes.iter().map(|o| o.oracle).collect()),
        median(outcomes.iter().map(|o| o.wave).collect()),
        median(outcomes.iter().map(|o| o.retain).collect()),
        median(outcomes.iter().map(|o| o.denoise).collect()),
        secs
    );
    report(8, pass_a && pass_b && secs < 1800.0, &detail);
    assert!(pass_a, "8(a): {detail}");
    assert!(pass_b, "8(b): {detail}");
    assert!(secs < 1800.0, "8 runtime: {detail}");
}

#[test]
fn criterion_9_determinism() {
    let pools = PoolSpec {
        machine_types: vec!["fan".into()],
        counts: SplitCounts { ref_source: 9, ref_target: 1, test_source_normal: 4, test_source_anomalous: 4, test_target_normal: 4, test_target_anomalous: 4 },
        noise_clips_per_kind: 26,
        duration_s: 0.5,
        seed: 9,
        ..PoolSpec::default()
    };
    let spec = SubsetSpec::new(SubsetName::Mismatch).with_snrs(&[-5, 0, 10]).with_counts(pools.counts);
    let build = |mode| {
        let m = synth_machine_pool(&pools, mode).unwrap();
        let n = synth_noise_pool(&pools, mode).unwrap();
        let b = build_subset(&spec, &m, &n, 9, mode).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.write_dir(dir.path(), mode).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = b
            .rows()
            .iter()
            .map(|r| (r.clip_path.clone(), std::fs::read(dir.path().join(&r.clip_path)).unwrap()))
            .collect();
        files.push(("manifest.csv".into(), std::fs::read(dir.path().join("manifest.csv")).unwrap()));
        files
    };
    let manifests_equal = build(Execution::Parallel) == build(Execution::Sequential);

    let cfg = TrainConfig {
        steps: 100,
        warmup_steps: 10,
        batch_size: 2,
        lr: 1e-3,
        encoder: EncoderConfig { d_model: 8, n_layers: 2, ..tiny_encoder() },
        ..TrainConfig::default()
    };
    let train = |mode| {
        let mut t = Trainer::new(small_corpus(), cfg.clone(), mode).unwrap();
        t.run().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("step_100.bin");
        t.checkpoint().save(&path).unwrap();
        (std::fs::read(&path).unwrap(), t.checkpoint())
    };
    let (bytes_a, ck_a) = train(Execution::Parallel);
    let (bytes_b, _) = train(Execution::Sequential);
    let checkpoints_equal = bytes_a == bytes_b;

    let model = TrainedModel::from_checkpoint(&ck_a);
    let m = synth_machine_pool(&pools, Execution::Parallel).unwrap();
    let n = synth_noise_pool(&pools, Execution::Parallel).unwrap();
    let b = build_subset(&spec, &m, &n, 9, Execution::Parallel).unwrap();
    let layer = model.scoring_layer(None).unwrap();
    let wave = model.embedder(layer);
    let r1 = run_eval(&b, Scorer::knn(&wave), &EvalSettings::default()).unwrap();
    let r2 = run_eval(&b, Scorer::knn(&wave), &EvalSettings { mode: Execution::Sequential, ..EvalSettings::default() }).unwrap();
    let reports_equal = r1 == r2 && serde_json::to_string(&r1).unwrap() == serde_json::to_string(&r2).unwrap();

    let pass = manifests_equal && checkpoints_equal && reports_equal;
    report(
        9,
        pass,
        &format!("manifest+WAV bytes equal: {manifests_equal}, step-100 checkpoint bytes equal: {checkpoints_equal}, EvalReports equal: {reports_equal}"),
    );
    assert!(pass);
}
