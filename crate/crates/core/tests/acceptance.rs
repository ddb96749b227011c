//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use noisemil::aggregate::{compute_metrics, majority_vote, patient_threshold, ConfusionMatrix, Diagnosis, VoteRule};
use noisemil::data::{generate_synthetic, Dataset, SyntheticSpec};
use noisemil::exec::Execution;
use noisemil::loss::{cross_entropy, smooth_cross_entropy, LossSpec};
use noisemil::nn::{grad_check, mlp, GradCheckOptions, Matrix};
use noisemil::pipeline::{evaluate_dataset, run_pipeline, AggregationConfig, ExperimentConfig};
use noisemil::rng::Rng;
use noisemil::sampling::{inject_noise, stratified_split, NoiseSpec, SplitSpec, StratifyKey};
use noisemil::train::{early_stop_check_values, train_with, EarlyStopping, Monitor, StopDecision, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(0xacce_0001);
    let mut worst: f64 = 0.0;
    for net_idx in 0..20 {
        let hidden_layers = 1 + rng.below(2);
        let input = 1 + rng.below(32);
        let hidden: Vec<usize> = (0..hidden_layers).map(|_| 1 + rng.below(32)).collect();
        let classes = 2 + rng.below(31);
        let specs = mlp(input, &hidden, classes);
        for loss in [LossSpec::plain(), LossSpec::smooth(0.2)] {
            let opts = GradCheckOptions {
                loss,
                ..GradCheckOptions::default()
            };
            let report = grad_check(&specs, rng.next_u64(), &opts).map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_error);
            ensure(report.passed, || {
                format!("network {net_idx} ({specs:?}) {loss:?}: rel error {:e}", report.max_rel_error)
            })?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("max rel error {worst:.2e} in {:.1}s", elapsed.as_secs_f64()))
}

fn loss_identities() -> Outcome {
    let mut rng = Rng::new(0xacce_0002);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = 2 + rng.below(9);
        let scale = 10f64.powf(rng.uniform() * 3.0 - 1.0);
        let z: Vec<f64> = (0..k).map(|_| rng.normal() * scale).collect();
        let y = rng.below(k);
        let m = Matrix::from_rows(&[z]).unwrap();
        let a = smooth_cross_entropy(&m, &[y], 0.0).unwrap();
        let b = cross_entropy(&m, &[y]).unwrap();
        worst = worst.max((a.loss - b.loss).abs());
        for (ga, gb) in a.grad.as_slice().iter().zip(b.grad.as_slice()) {
            worst = worst.max((ga - gb).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("eps=0 differs from CE by {worst:e}"))?;

    for k in [2usize, 4] {
        for eps in [0.0, 0.1, 0.2, 0.5] {
            for c in [-3.0, 0.0, 7.5] {
                let m = Matrix::from_rows(&[vec![c; k]]).unwrap();
                let loss = smooth_cross_entropy(&m, &[k - 1], eps).unwrap().loss;
                let want = (k as f64).ln();
                ensure((loss - want).abs() <= 1e-12, || format!("uniform K={k}: {loss} vs {want}"))?;
            }
        }
    }

    let mut worst_norm: f64 = 0.0;
    for k in [2usize, 3, 4, 8] {
        for eps in [0.05, 0.2, 0.5, 0.9] {
            for y in 0..k {
                let c = rng.normal() * 5.0;
                let z: Vec<f64> = (0..k)
                    .map(|j| {
                        let q = if j == y { 1.0 - eps + eps / k as f64 } else { eps / k as f64 };
                        q.ln() + c
                    })
                    .collect();
                let m = Matrix::from_rows(&[z]).unwrap();
                let g = smooth_cross_entropy(&m, &[y], eps).unwrap().grad;
                let norm = g.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
                worst_norm = worst_norm.max(norm);
            }
        }
    }
    ensure(worst_norm < 1e-10, || format!("gradient norm at optimum {worst_norm:e}"))?;
    Ok(format!("eps=0 gap {worst:.1e}, optimum grad norm {worst_norm:.1e}"))
}

fn random_dataset(rng: &mut Rng) -> Dataset {
    let spec = SyntheticSpec {
        num_classes: if rng.bernoulli(0.5) { 2 } else { 4 },
        dim: 4,
        patients_per_class: 3 + rng.below(8),
        cells_per_patient_min: 3,
        cells_per_patient_max: 3 + rng.below(10),
        class_center_separation: 3.0,
        within_class_stddev: 1.0,
        seed: rng.next_u64(),
    };
    generate_synthetic(&spec).unwrap()
}

fn random_fractions(rng: &mut Rng) -> Vec<f64> {
    let parts = 2 + rng.below(2);
    let raw: Vec<f64> = (0..parts).map(|_| 0.1 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

fn sampler_invariants() -> Outcome {
    let mut rng = Rng::new(0xacce_0003);
    let mut worst_dev: f64 = 0.0;
    for trial in 0..100 {
        let ds = random_dataset(&mut rng);
        let fractions = random_fractions(&mut rng);
        for key in [StratifyKey::CellLabel, StratifyKey::BagLabel] {
            let spec = SplitSpec::new(&fractions, key, rng.next_u64());
            let parts = stratified_split(&ds, &spec).map_err(|e| format!("trial {trial}: {e}"))?;

            let mut seen: Vec<u64> = parts.iter().flat_map(|p| p.cells().iter().map(|c| c.cell_id)).collect();
            seen.sort_unstable();
            let mut all: Vec<u64> = ds.cells().iter().map(|c| c.cell_id).collect();
            all.sort_unstable();
            ensure(seen == all, || format!("trial {trial} {key:?}: parts do not partition the cells"))?;

            let (stratum_sizes, per_part): (Vec<usize>, Vec<Vec<usize>>) = match key {
                StratifyKey::CellLabel => (ds.class_counts(), parts.iter().map(|p| p.class_counts()).collect()),
                StratifyKey::BagLabel => (
                    ds.bag_class_counts(),
                    parts.iter().map(|p| p.bag_class_counts()).collect(),
                ),
            };
            for (p, counts) in per_part.iter().enumerate() {
                for (class, &size) in stratum_sizes.iter().enumerate() {
                    let dev = (counts[class] as f64 - fractions[p] * size as f64).abs();
                    worst_dev = worst_dev.max(dev);
                    ensure(dev < 1.0, || format!("trial {trial} {key:?}: part {p} class {class} off by {dev}"))?;
                }
            }

            if key == StratifyKey::BagLabel {
                let mut owner: BTreeMap<u64, usize> = BTreeMap::new();
                for (p, part) in parts.iter().enumerate() {
                    for c in part.cells() {
                        let prev = *owner.entry(c.patient_id).or_insert(p);
                        ensure(prev == p, || format!("trial {trial}: patient {} split across parts", c.patient_id))?;
                    }
                }
                for part in &parts {
                    for b in part.bags() {
                        let original = ds.bags().iter().find(|o| o.patient_id == b.patient_id).unwrap();
                        ensure(b.cell_ids == original.cell_ids, || {
                            format!("trial {trial}: bag {} lost cells", b.patient_id)
                        })?;
                    }
                }
            }
        }
    }
    Ok(format!("max proportionality deviation {worst_dev:.3}"))
}

fn noise_statistics() -> Outcome {
    let ds = generate_synthetic(&SyntheticSpec {
        num_classes: 4,
        dim: 4,
        patients_per_class: 25,
        cells_per_patient_min: 100,
        cells_per_patient_max: 100,
        class_center_separation: 3.0,
        within_class_stddev: 1.0,
        seed: 7,
    })
    .unwrap();
    ensure(ds.len() == 10_000, || format!("expected 10000 labels, got {}", ds.len()))?;
    let (noisy, mask) = inject_noise(&ds, &NoiseSpec { rate: 0.2, seed: 0xacce_0004 }).unwrap();
    let flips = mask.flipped_count();
    ensure((1883..=2117).contains(&flips), || format!("{flips} flips outside [1883, 2117]"))?;
    let mut changed = 0;
    for ((before, after), &(id, flipped)) in ds.cells().iter().zip(noisy.cells()).zip(&mask.entries) {
        ensure(before.cell_id == id && after.cell_id == id, || "mask out of cell order".into())?;
        if flipped {
            ensure(before.label != after.label, || format!("cell {id} flipped onto its own label"))?;
        } else {
            ensure(before.label == after.label, || format!("cell {id} changed without a flip"))?;
        }
        changed += usize::from(before.label != after.label);
    }
    ensure(changed == flips, || "changed labels differ from flip count".into())?;
    let (same, none) = inject_noise(&ds, &NoiseSpec { rate: 0.0, seed: 1 }).unwrap();
    ensure(same == ds && none.flipped_count() == 0, || "rate 0 changed the dataset".into())?;
    Ok(format!("{flips} of 10000 flipped"))
}

fn sequences(k: usize, n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..k.pow(n as u32)).map(move |mut code| {
        (0..n)
            .map(|_| {
                let c = code % k;
                code /= k;
                c
            })
            .collect()
    })
}

/// Probability row in sixteenths: 8 on the cell's class, 6 on a runner-up,
/// the remaining 2 spread over the others.
fn sixteenths(k: usize, class: usize, runner_up: usize) -> Vec<u32> {
    let mut row = vec![0u32; k];
    match k {
        1 => row[0] = 16,
        2 => {
            row[class] = 10;
            row[1 - class] = 6;
        }
        _ => {
            row[class] = 8;
            row[runner_up] = 6;
            let others = k - 2;
            for (j, v) in row.iter_mut().enumerate() {
                if j != class && j != runner_up {
                    *v = 2 / others as u32;
                }
            }
        }
    }
    row
}

fn aggregation_oracle() -> Outcome {
    let mut checked = 0usize;
    for n in 1..=6usize {
        for hits in 0..=n {
            for a in 0..=20u32 {
                let threshold = f64::from(a) / 20.0;
                for layout in 0..3 {
                    let flags: Vec<bool> = (0..n)
                        .map(|i| match layout {
                            0 => i < hits,
                            1 => i >= n - hits,
                            _ => (i * 7 + 3) % n < hits,
                        })
                        .collect();
                    let got = patient_threshold(0, &flags, threshold).unwrap();
                    let want = if hits as u32 * 20 >= a * n as u32 {
                        Diagnosis::Cancerous
                    } else {
                        Diagnosis::NonCancerous
                    };
                    ensure(got.decision == want, || format!("threshold {threshold}, {hits}/{n}: {:?}", got.decision))?;
                    checked += 1;
                }
            }
        }
    }
    let flags = |hits: usize| -> Vec<bool> { (0..100).map(|i| i < hits).collect() };
    ensure(
        patient_threshold(0, &flags(5), 0.05).unwrap().decision == Diagnosis::Cancerous,
        || "5/100 not cancerous".into(),
    )?;
    ensure(
        patient_threshold(0, &flags(4), 0.05).unwrap().decision == Diagnosis::NonCancerous,
        || "4/100 not non-cancerous".into(),
    )?;

    for k in 1..=4usize {
        for n in 1..=6usize {
            for classes in sequences(k, n) {
                for variant in 0..k.max(1) {
                    let rows: Vec<Vec<u32>> = classes
                        .iter()
                        .enumerate()
                        .map(|(i, &c)| {
                            let runner_up = if k > 1 { (c + 1 + (i + variant) % (k - 1)) % k } else { 0 };
                            sixteenths(k, c, runner_up)
                        })
                        .collect();
                    let probs: Vec<Vec<f64>> =
                        rows.iter().map(|r| r.iter().map(|&v| f64::from(v) / 16.0).collect()).collect();
                    let refs: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();

                    let mut votes = vec![0usize; k];
                    let mut mass = vec![0u32; k];
                    for (&c, r) in classes.iter().zip(&rows) {
                        votes[c] += 1;
                        for (m, v) in mass.iter_mut().zip(r) {
                            *m += v;
                        }
                    }
                    let by_count = (0..k).fold(0, |best, c| {
                        if (votes[c], mass[c]) > (votes[best], mass[best]) {
                            c
                        } else {
                            best
                        }
                    });
                    let by_mass = (0..k).fold(0, |best, c| if mass[c] > mass[best] { c } else { best });

                    let got = majority_vote(0, &classes, &refs, VoteRule::Count).unwrap();
                    ensure(got.predicted_class == by_count, || {
                        format!("count vote {classes:?} (K={k}): got {}, want {by_count}", got.predicted_class)
                    })?;
                    ensure(got.vote_counts == votes, || format!("vote counts for {classes:?}"))?;
                    let got = majority_vote(0, &classes, &refs, VoteRule::MeanProbability).unwrap();
                    ensure(got.predicted_class == by_mass, || {
                        format!("mean vote {classes:?} (K={k}): got {}, want {by_mass}", got.predicted_class)
                    })?;
                    checked += 2;
                }
            }
        }
    }
    Ok(format!("{checked} cases"))
}

struct SeedRun {
    instance_acc: f64,
    bag_acc: f64,
}

fn robustness_run(seed: u64, epsilon: f64) -> noisemil::Result<SeedRun> {
    let ds = generate_synthetic(&SyntheticSpec {
        num_classes: 4,
        dim: 16,
        patients_per_class: 40,
        cells_per_patient_min: 90,
        cells_per_patient_max: 110,
        class_center_separation: 6.0,
        within_class_stddev: 1.0,
        seed,
    })?;
    let parts = stratified_split(&ds, &SplitSpec::new(&[0.72, 0.18, 0.10], StratifyKey::BagLabel, seed ^ 0x5eed))?;
    let (train, _) = inject_noise(&parts[0], &NoiseSpec { rate: 0.2, seed: seed ^ 0x0a })?;
    let (val, _) = inject_noise(&parts[1], &NoiseSpec { rate: 0.2, seed: seed ^ 0x0b })?;
    let config = TrainConfig {
        loss: LossSpec::smooth(epsilon),
        seed,
        ..TrainConfig::mutation()
    };
    let layers = mlp(16, &[64, 32], 4);
    let (net, _) = train_with(&train, &val, &layers, &config, Execution::Sequential)?;
    let eval = evaluate_dataset(&net, &parts[2], &AggregationConfig::default(), Execution::Sequential)?;
    Ok(SeedRun {
        instance_acc: eval.instance.accuracy,
        bag_acc: eval.bag_vote.accuracy,
    })
}

fn noise_robustness() -> Outcome {
    let start = Instant::now();
    let seeds = [11u64, 22, 33, 44, 55];
    let jobs: Vec<(u64, f64)> = seeds.iter().flat_map(|&s| [(s, 0.2), (s, 0.0)]).collect();
    let runs = Execution::default().map_slice(&jobs, |&(s, eps)| robustness_run(s, eps));
    let runs: Vec<SeedRun> = runs.into_iter().collect::<noisemil::Result<_>>().map_err(|e| e.to_string())?;
    let mean = |eps_idx: usize, f: fn(&SeedRun) -> f64| -> f64 {
        runs.iter().skip(eps_idx).step_by(2).map(f).sum::<f64>() / seeds.len() as f64
    };
    let smooth_inst = mean(0, |r| r.instance_acc);
    let smooth_bag = mean(0, |r| r.bag_acc);
    let plain_inst = mean(1, |r| r.instance_acc);
    let summary = format!(
        "eps=0.2 instance {:.4} bag {:.4}; eps=0 instance {:.4}; {:.0}s",
        smooth_inst,
        smooth_bag,
        plain_inst,
        start.elapsed().as_secs_f64()
    );
    ensure(smooth_inst >= 0.85, || format!("instance accuracy below 0.85: {summary}"))?;
    ensure(smooth_bag >= 0.95, || format!("bag accuracy below 0.95: {summary}"))?;
    ensure(smooth_inst >= plain_inst - 0.005, || format!("smoothing hurt: {summary}"))?;
    ensure(start.elapsed() < Duration::from_secs(600), || format!("too slow: {summary}"))?;
    Ok(summary)
}

fn small_experiment(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        control_patients: 20,
        noise_sweep: vec![0.0, 0.4],
        ..ExperimentConfig::default()
    };
    cfg.synthetic.patients_per_class = 10;
    cfg.synthetic.cells_per_patient_min = 20;
    cfg.synthetic.cells_per_patient_max = 30;
    cfg.detection.max_epochs = 15;
    cfg.mutation.max_epochs = 15;
    cfg
}

fn pipeline_determinism() -> Outcome {
    let cfg = small_experiment(42);
    let a = run_pipeline(&cfg, Execution::default()).map_err(|e| e.to_string())?;
    let b = run_pipeline(&cfg, Execution::default()).map_err(|e| e.to_string())?;
    let c = run_pipeline(&cfg, Execution::Sequential).map_err(|e| e.to_string())?;
    let (ja, jb, jc) = (
        a.report.to_json().unwrap(),
        b.report.to_json().unwrap(),
        c.report.to_json().unwrap(),
    );
    ensure(ja == jb, || "two runs produced different reports".into())?;
    ensure(ja == jc, || "sequential and parallel reports differ".into())?;
    ensure(a.report.sweep_csv() == b.report.sweep_csv(), || "sweep CSV differs".into())?;
    Ok(format!("{} byte report reproduced", ja.len()))
}

fn early_stopping_semantics() -> Outcome {
    let policy = |patience| EarlyStopping {
        patience,
        min_delta: 0.02,
        monitor: Monitor::ValLoss,
    };

    let falling: Vec<f64> = (0..300).map(|i| 40.0 - 0.1 * i as f64).collect();
    for n in 1..=falling.len() {
        ensure(early_stop_check_values(&falling[..n], &policy(50)) == StopDecision::Continue, || {
            format!("stopped a 0.1/epoch improving curve at epoch {}", n - 1)
        })?;
    }

    // 0.01 per epoch never clears min_delta: stop exactly at the 50th such epoch
    let creeping: Vec<f64> = (0..=60).map(|i| 1.0 - 0.01 * i as f64).collect();
    for n in 1..=creeping.len() {
        let want = if n > 50 { StopDecision::Stop } else { StopDecision::Continue };
        let got = early_stop_check_values(&creeping[..n], &policy(50));
        ensure(got == want, || format!("after {} small improvements: {got:?}", n - 1))?;
    }

    let curve = [1.0, 0.5, 0.3, 0.31];
    for n in 1..=curve.len() {
        let want = if n == 4 { StopDecision::Stop } else { StopDecision::Continue };
        let got = early_stop_check_values(&curve[..n], &policy(1));
        ensure(got == want, || format!("patience 1 at epoch {}: {got:?}", n - 1))?;
    }

    let acc = EarlyStopping {
        patience: 2,
        min_delta: 0.02,
        monitor: Monitor::ValAccuracy,
    };
    let curve = [0.5, 0.6, 0.61, 0.615];
    let got: Vec<StopDecision> = (1..=curve.len()).map(|n| early_stop_check_values(&curve[..n], &acc)).collect();
    ensure(
        got == [StopDecision::Continue, StopDecision::Continue, StopDecision::Continue, StopDecision::Stop],
        || format!("accuracy monitor: {got:?}"),
    )?;
    Ok("all constructed curves match".into())
}

struct Expected {
    counts: Vec<Vec<u64>>,
    accuracy: f64,
    precision: Vec<f64>,
    recall: Vec<f64>,
    f1: Vec<f64>,
    undefined_precision: Vec<usize>,
    undefined_recall: Vec<usize>,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn metrics_cases() -> Vec<Expected> {
    vec![
        Expected {
            counts: vec![vec![50, 0], vec![0, 50]],
            accuracy: 1.0,
            precision: vec![1.0, 1.0],
            recall: vec![1.0, 1.0],
            f1: vec![1.0, 1.0],
            undefined_precision: vec![],
            undefined_recall: vec![],
        },
        Expected {
            counts: vec![vec![8, 2], vec![1, 9]],
            accuracy: 17.0 / 20.0,
            precision: vec![8.0 / 9.0, 9.0 / 11.0],
            recall: vec![8.0 / 10.0, 9.0 / 10.0],
            f1: vec![16.0 / 19.0, 18.0 / 21.0],
            undefined_precision: vec![],
            undefined_recall: vec![],
        },
        Expected {
            counts: vec![vec![5, 0], vec![3, 0]],
            accuracy: 5.0 / 8.0,
            precision: vec![5.0 / 8.0, 0.0],
            recall: vec![1.0, 0.0],
            f1: vec![10.0 / 13.0, 0.0],
            undefined_precision: vec![1],
            undefined_recall: vec![],
        },
        Expected {
            counts: vec![vec![0, 0], vec![4, 6]],
            accuracy: 6.0 / 10.0,
            precision: vec![0.0, 1.0],
            recall: vec![0.0, 6.0 / 10.0],
            f1: vec![0.0, 12.0 / 16.0],
            undefined_precision: vec![],
            undefined_recall: vec![0],
        },
        Expected {
            counts: vec![vec![0, 3], vec![2, 0]],
            accuracy: 0.0,
            precision: vec![0.0, 0.0],
            recall: vec![0.0, 0.0],
            f1: vec![0.0, 0.0],
            undefined_precision: vec![],
            undefined_recall: vec![],
        },
        Expected {
            counts: vec![vec![3, 1, 0], vec![0, 2, 2], vec![1, 0, 5]],
            accuracy: 10.0 / 14.0,
            precision: vec![3.0 / 4.0, 2.0 / 3.0, 5.0 / 7.0],
            recall: vec![3.0 / 4.0, 2.0 / 4.0, 5.0 / 6.0],
            f1: vec![3.0 / 4.0, 8.0 / 14.0, 10.0 / 13.0],
            undefined_precision: vec![],
            undefined_recall: vec![],
        },
        Expected {
            counts: vec![vec![4, 0, 0, 0], vec![0, 4, 0, 0], vec![0, 0, 4, 0], vec![0, 0, 0, 4]],
            accuracy: 1.0,
            precision: vec![1.0; 4],
            recall: vec![1.0; 4],
            f1: vec![1.0; 4],
            undefined_precision: vec![],
            undefined_recall: vec![],
        },
        Expected {
            counts: vec![vec![10, 0, 0, 0], vec![0, 0, 0, 0], vec![5, 0, 5, 0], vec![0, 0, 0, 0]],
            accuracy: 15.0 / 20.0,
            precision: vec![10.0 / 15.0, 0.0, 1.0, 0.0],
            recall: vec![1.0, 0.0, 5.0 / 10.0, 0.0],
            f1: vec![20.0 / 25.0, 0.0, 10.0 / 15.0, 0.0],
            undefined_precision: vec![1, 3],
            undefined_recall: vec![1, 3],
        },
        Expected {
            counts: vec![vec![1, 1, 1, 1], vec![1, 1, 1, 1], vec![1, 1, 1, 1], vec![1, 1, 1, 1]],
            accuracy: 0.25,
            precision: vec![0.25; 4],
            recall: vec![0.25; 4],
            f1: vec![0.25; 4],
            undefined_precision: vec![],
            undefined_recall: vec![],
        },
        Expected {
            counts: vec![vec![7, 2, 1, 0], vec![3, 6, 0, 1], vec![0, 0, 9, 1], vec![2, 0, 0, 8]],
            accuracy: 30.0 / 40.0,
            precision: vec![7.0 / 12.0, 6.0 / 8.0, 9.0 / 10.0, 8.0 / 10.0],
            recall: vec![7.0 / 10.0, 6.0 / 10.0, 9.0 / 10.0, 8.0 / 10.0],
            f1: vec![14.0 / 22.0, 12.0 / 18.0, 0.9, 0.8],
            undefined_precision: vec![],
            undefined_recall: vec![],
        },
    ]
}

fn metrics_exactness() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let all_close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y));
    let cases = metrics_cases();
    for (i, case) in cases.iter().enumerate() {
        for c in 0..case.f1.len() {
            ensure(close(case.f1[c], f1(case.precision[c], case.recall[c])), || {
                format!("case {i}: hand F1 for class {c} is inconsistent")
            })?;
        }
        let r = compute_metrics(&ConfusionMatrix {
            counts: case.counts.clone(),
        })
        .map_err(|e| format!("case {i}: {e}"))?;
        let macro_f1 = case.f1.iter().sum::<f64>() / case.f1.len() as f64;
        ensure(close(r.accuracy, case.accuracy), || format!("case {i}: accuracy {}", r.accuracy))?;
        ensure(all_close(&r.precision, &case.precision), || format!("case {i}: precision {:?}", r.precision))?;
        ensure(all_close(&r.recall, &case.recall), || format!("case {i}: recall {:?}", r.recall))?;
        ensure(all_close(&r.f1, &case.f1), || format!("case {i}: f1 {:?}", r.f1))?;
        ensure(close(r.macro_f1, macro_f1), || format!("case {i}: macro f1 {}", r.macro_f1))?;
        ensure(r.undefined_precision == case.undefined_precision, || format!("case {i}: precision flags"))?;
        ensure(r.undefined_recall == case.undefined_recall, || format!("case {i}: recall flags"))?;
    }
    Ok(format!("{} matrices", cases.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_correctness),
        ("loss identities", loss_identities),
        ("sampler invariants", sampler_invariants),
        ("noise injection statistics", noise_statistics),
        ("aggregation oracle equivalence", aggregation_oracle),
        ("noise robustness on synthetic data", noise_robustness),
        ("end-to-end determinism", pipeline_determinism),
        ("early stopping semantics", early_stopping_semantics),
        ("metrics exactness", metrics_exactness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = HashSet::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran.insert(i);
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} run, {failed} failed", ran.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
