//! The two-stage pipeline (cell detection → patient threshold → subtype
//! vote) and the experiment driver that trains and evaluates both stages.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aggregate::{
    evaluate_labels, majority_vote, patient_threshold, BagVote, Diagnosis, EvalReport, PatientDecision, VoteRule,
    DEFAULT_PATIENT_THRESHOLD,
};
use crate::data::{generate_cohort, load_dataset, Cohort, Dataset, LabelSpace, SyntheticSpec};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::nn::{mlp, Network};
use crate::rng::derive_seed;
use crate::sampling::{inject_noise, stratified_split, FlipMask, NoiseSpec, SplitSpec, StratifyKey};
use crate::train::{predict, train_with, InstancePredictions, TrainConfig, TrainHistory};

/// Class index of "leukemic" in the binary label space.
pub const CANCEROUS_CLASS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub threshold: f64,
    pub vote_rule: VoteRule,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            threshold: DEFAULT_PATIENT_THRESHOLD,
            vote_rule: VoteRule::Count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientOutcome {
    pub patient_id: u64,
    pub decision: PatientDecision,
    /// Cells passed to the subtype model (those predicted cancerous).
    pub stage2_cells: usize,
    /// `None` for patients called non-cancerous.
    pub mutation: Option<BagVote>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub patients: Vec<PatientOutcome>,
    /// Total cells the subtype model was run on.
    pub stage2_cells: usize,
}

fn check_model(net: &Network, ds: &Dataset, outputs: usize, which: &str) -> Result<()> {
    if net.input_dim() != ds.dim() || net.output_dim() != outputs {
        return Err(Error::Shape(format!(
            "{which} model is {}->{}, expected {}->{outputs}",
            net.input_dim(),
            net.output_dim(),
            ds.dim()
        )));
    }
    Ok(())
}

/// Runs both stages over every bag of `ds`. Cell and bag labels of `ds` are
/// not used.
///
/// Stage 1 classifies every cell and applies the patient threshold. Stage 2
/// classifies only the cells stage 1 called cancerous, only for patients
/// called cancerous, and majority-votes a subtype per patient.
pub fn end_to_end_pipeline(
    detection: &Network,
    mutation: &Network,
    ds: &Dataset,
    cfg: &AggregationConfig,
    exec: Execution,
) -> Result<PipelineOutput> {
    check_model(detection, ds, 2, "detection")?;
    check_model(mutation, ds, 4, "mutation")?;
    let stage1 = predict(detection, ds, exec)?;
    let bags = ds.bag_positions();
    let decisions = exec.map_range(bags.len(), |b| {
        let flags: Vec<bool> = bags[b]
            .iter()
            .map(|&i| stage1.predicted[i] == CANCEROUS_CLASS)
            .collect();
        patient_threshold(ds.bags()[b].patient_id, &flags, cfg.threshold)
    });
    let decisions = decisions.into_iter().collect::<Result<Vec<_>>>()?;

    // stage-2 input: predicted-cancerous cells of cancerous patients
    let mut stage2_positions = Vec::new();
    let mut spans = Vec::with_capacity(bags.len());
    for (b, d) in decisions.iter().enumerate() {
        let start = stage2_positions.len();
        if d.decision == Diagnosis::Cancerous {
            stage2_positions.extend(bags[b].iter().copied().filter(|&i| stage1.predicted[i] == CANCEROUS_CLASS));
        }
        spans.push(start..stage2_positions.len());
    }
    let stage2 = if stage2_positions.is_empty() {
        None
    } else {
        let x = crate::train::gather_features(ds, &stage2_positions);
        let logits = mutation.logits_with(&x, exec)?;
        Some(InstancePredictions {
            predicted: logits.row_iter().map(crate::nn::argmax).collect(),
            probabilities: crate::nn::softmax(&logits),
        })
    };

    let votes = exec.map_range(bags.len(), |b| -> Result<Option<BagVote>> {
        let span = spans[b].clone();
        match &stage2 {
            Some(p) if !span.is_empty() => {
                let rows: Vec<&[f64]> = span.clone().map(|i| p.probabilities.row(i)).collect();
                majority_vote(ds.bags()[b].patient_id, &p.predicted[span], &rows, cfg.vote_rule).map(Some)
            }
            _ => Ok(None),
        }
    });
    let patients = decisions
        .into_iter()
        .zip(votes)
        .zip(spans)
        .map(|((decision, vote), span)| {
            Ok(PatientOutcome {
                patient_id: decision.patient_id,
                decision,
                stage2_cells: span.len(),
                mutation: vote?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PipelineOutput {
        patients,
        stage2_cells: stage2_positions.len(),
    })
}

/// Instance-level and bag-level evaluation of one model on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetEvaluation {
    pub instance: EvalReport,
    /// Majority-vote call per bag against the bag label.
    pub bag_vote: EvalReport,
    /// Binary datasets only: patient threshold against the bag label.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patient_threshold: Option<EvalReport>,
}

pub fn evaluate_dataset(net: &Network, ds: &Dataset, cfg: &AggregationConfig, exec: Execution) -> Result<DatasetEvaluation> {
    let eval = crate::train::evaluate_instances(net, ds, exec)?;
    let preds = &eval.predictions;
    let bags = ds.bag_positions();
    let k = ds.num_classes();
    let votes = exec.map_range(bags.len(), |b| {
        let classes: Vec<usize> = bags[b].iter().map(|&i| preds.predicted[i]).collect();
        let rows: Vec<&[f64]> = bags[b].iter().map(|&i| preds.probabilities.row(i)).collect();
        majority_vote(ds.bags()[b].patient_id, &classes, &rows, cfg.vote_rule).map(|v| v.predicted_class)
    });
    let voted = votes.into_iter().collect::<Result<Vec<_>>>()?;
    let bag_truth: Vec<usize> = ds.bags().iter().map(|b| b.bag_label).collect();
    let bag_vote = evaluate_labels(&bag_truth, &voted, k)?;
    let patient_threshold = if ds.label_space() == LabelSpace::Binary {
        let called = bags
            .iter()
            .zip(ds.bags())
            .map(|(pos, bag)| {
                let flags: Vec<bool> = pos.iter().map(|&i| preds.predicted[i] == CANCEROUS_CLASS).collect();
                patient_threshold(bag.patient_id, &flags, cfg.threshold)
                    .map(|d| usize::from(d.decision == Diagnosis::Cancerous))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(evaluate_labels(&bag_truth, &called, 2)?)
    } else {
        None
    };
    Ok(DatasetEvaluation {
        instance: eval.report,
        bag_vote,
        patient_threshold,
    })
}

/// Everything the `pipeline` command needs. Sub-seeds for generation,
/// splitting, noise and both training runs are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Used when no dataset paths are given.
    pub synthetic: SyntheticSpec,
    /// Healthy patients added to the synthetic cohort.
    pub control_patients: usize,
    /// Binary dataset of all patients; loaded together with `mutation_data`.
    pub detection_data: Option<PathBuf>,
    /// Subtype-labelled subset of the leukemic patients in `detection_data`.
    pub mutation_data: Option<PathBuf>,
    pub detection_split: Vec<f64>,
    pub mutation_split: Vec<f64>,
    /// Fraction of control patients held out for the end-to-end test.
    pub control_holdout: f64,
    pub noise_rate: f64,
    /// Additional noise rates to retrain the subtype stage at.
    pub noise_sweep: Vec<f64>,
    /// Train the subtype model only on cells the detector calls cancerous.
    pub filter_by_detection: bool,
    pub hidden: Vec<usize>,
    pub detection: TrainConfig,
    pub mutation: TrainConfig,
    pub aggregation: AggregationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            synthetic: SyntheticSpec::default(),
            control_patients: 40,
            detection_data: None,
            mutation_data: None,
            detection_split: vec![0.8, 0.2],
            mutation_split: vec![0.72, 0.18, 0.10],
            control_holdout: 0.1,
            noise_rate: 0.2,
            noise_sweep: Vec::new(),
            filter_by_detection: true,
            hidden: vec![64, 32],
            detection: TrainConfig::detection(),
            mutation: TrainConfig::mutation(),
            aggregation: AggregationConfig::default(),
        }
    }
}

const GEN_STREAM: u64 = 10;
const MUTATION_SPLIT_STREAM: u64 = 11;
const CONTROL_SPLIT_STREAM: u64 = 12;
const DETECTION_SPLIT_STREAM: u64 = 13;
const NOISE_STREAM: u64 = 14;
const DETECTION_TRAIN_STREAM: u64 = 15;
const MUTATION_TRAIN_STREAM: u64 = 16;

impl ExperimentConfig {
    /// Writes the derived sub-seeds into the nested specs.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.synthetic.seed = derive_seed(self.seed, &[GEN_STREAM]);
        c.detection.seed = derive_seed(self.seed, &[DETECTION_TRAIN_STREAM]);
        c.mutation.seed = derive_seed(self.seed, &[MUTATION_TRAIN_STREAM]);
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.detection_data.is_some() != self.mutation_data.is_some() {
            return Err(Error::config(
                "mutation_data",
                "detection_data and mutation_data must be given together",
            ));
        }
        if self.detection_data.is_none() {
            self.synthetic.validate()?;
        }
        SplitSpec::new(&self.detection_split, StratifyKey::BagLabel, 0).validate()?;
        SplitSpec::new(&self.mutation_split, StratifyKey::BagLabel, 0).validate()?;
        if self.mutation_split.len() != 3 {
            return Err(Error::config("mutation_split", "expected train/validation/test fractions"));
        }
        if self.detection_split.len() != 2 {
            return Err(Error::config("detection_split", "expected train/validation fractions"));
        }
        if !(self.control_holdout > 0.0 && self.control_holdout < 1.0) {
            return Err(Error::config("control_holdout", "must be in (0, 1)"));
        }
        for &rate in std::iter::once(&self.noise_rate).chain(&self.noise_sweep) {
            NoiseSpec { rate, seed: 0 }.validate()?;
        }
        self.detection.validate()?;
        self.mutation.validate()?;
        if !(0.0..=1.0).contains(&self.aggregation.threshold) {
            return Err(Error::config("threshold", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Loads or generates the cohort.
    pub fn cohort(&self) -> Result<Cohort> {
        match (&self.detection_data, &self.mutation_data) {
            (Some(d), Some(m)) => cohort_from(load_dataset(d)?, load_dataset(m)?),
            _ => generate_cohort(&self.resolved().synthetic, self.control_patients),
        }
    }
}

/// Checks that `mutation` is a subtype-labelled subset of the leukemic
/// patients of `detection`, with identical cells.
pub fn cohort_from(detection: Dataset, mutation: Dataset) -> Result<Cohort> {
    if detection.label_space() != LabelSpace::Binary || mutation.label_space() != LabelSpace::Mutation {
        return Err(Error::LabelSpaceMismatch(
            "expected a binary detection dataset and a mutation dataset".into(),
        ));
    }
    if detection.dim() != mutation.dim() {
        return Err(Error::LabelSpaceMismatch("datasets differ in feature dimension".into()));
    }
    let pos = detection.cell_positions();
    for c in mutation.cells() {
        match pos.get(&c.cell_id).map(|&i| &detection.cells()[i]) {
            Some(d) if d.patient_id == c.patient_id && d.features == c.features => {}
            _ => {
                return Err(Error::InvalidDataset(format!(
                    "mutation cell {} does not match the detection dataset",
                    c.cell_id
                )))
            }
        }
    }
    let leukemic: HashSet<u64> = detection
        .bags()
        .iter()
        .filter(|b| b.bag_label == CANCEROUS_CLASS)
        .map(|b| b.patient_id)
        .collect();
    if let Some(b) = mutation.bags().iter().find(|b| !leukemic.contains(&b.patient_id)) {
        return Err(Error::InvalidDataset(format!(
            "mutation patient {} is not leukemic in the detection dataset",
            b.patient_id
        )));
    }
    Ok(Cohort { detection, mutation })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop_reason: crate::train::StopReason,
    pub best_val_loss: f64,
    pub best_val_acc: f64,
}

impl From<&TrainHistory> for TrainingSummary {
    fn from(h: &TrainHistory) -> Self {
        TrainingSummary {
            best_epoch: h.best_epoch,
            epochs_run: h.epochs.len() - 1,
            stop_reason: h.stop_reason,
            best_val_loss: h.best().val_loss,
            best_val_acc: h.best().val_acc,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionStage {
    pub train_cells: usize,
    pub val_cells: usize,
    pub training: TrainingSummary,
    /// Cell-level metrics on the validation split.
    pub instance: EvalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct MutationStage {
    pub noise_rate: f64,
    pub train_cells: usize,
    pub val_cells: usize,
    pub test_cells: usize,
    pub flipped_train_cells: usize,
    pub training: TrainingSummary,
    /// Cell-level metrics on the clean test split.
    pub instance: EvalReport,
    /// Majority-vote subtype per test patient against its bag label.
    pub bag: EvalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PatientRow {
    pub patient_id: u64,
    pub cancer_fraction: f64,
    pub decision: Diagnosis,
    pub predicted_subtype: Option<&'static str>,
    pub true_subtype: Option<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EndToEndStage {
    pub patients: usize,
    /// Patient threshold against leukemic/non-leukemic ground truth.
    pub patient_detection: EvalReport,
    /// Five classes: the four subtypes plus "none" (index 4) for patients
    /// called, or truly, non-cancerous.
    pub patient_subtype: EvalReport,
    pub stage2_cells: usize,
    pub calls: Vec<PatientRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub noise_rate: f64,
    pub instance_accuracy: f64,
    pub bag_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub detection: DetectionStage,
    pub mutation: MutationStage,
    pub end_to_end: EndToEndStage,
    pub sweep: Vec<SweepPoint>,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `noise_rate,instance_accuracy,bag_accuracy`, one row per trained rate.
    pub fn sweep_csv(&self) -> String {
        let mut s = String::from("noise_rate,instance_accuracy,bag_accuracy\n");
        for p in &self.sweep {
            s.push_str(&format!("{:?},{:?},{:?}\n", p.noise_rate, p.instance_accuracy, p.bag_accuracy));
        }
        s
    }
}

/// Artifacts of a pipeline run besides the report.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub report: PipelineReport,
    pub detection_model: Network,
    pub mutation_model: Network,
    pub detection_history: TrainHistory,
    pub mutation_history: TrainHistory,
    pub flip_mask: FlipMask,
}

fn patient_set(ds: &Dataset) -> HashSet<u64> {
    ds.patient_ids().into_iter().collect()
}

struct MutationRun {
    stage: MutationStage,
    model: Network,
    history: TrainHistory,
    mask: FlipMask,
}

fn run_mutation_stage(
    cfg: &ExperimentConfig,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    rate: f64,
    exec: Execution,
) -> Result<MutationRun> {
    let noise_seed = derive_seed(cfg.seed, &[NOISE_STREAM, rate.to_bits()]);
    let (noisy_train, mask) = inject_noise(train, &NoiseSpec { rate, seed: noise_seed })?;
    let (noisy_val, _) = inject_noise(val, &NoiseSpec { rate, seed: derive_seed(noise_seed, &[1]) })?;
    let layers = mlp(train.dim(), &cfg.hidden, 4);
    let (model, history) = train_with(&noisy_train, &noisy_val, &layers, &cfg.mutation, exec)?;
    let eval = evaluate_dataset(&model, test, &cfg.aggregation, exec)?;
    Ok(MutationRun {
        stage: MutationStage {
            noise_rate: rate,
            train_cells: train.len(),
            val_cells: val.len(),
            test_cells: test.len(),
            flipped_train_cells: mask.flipped_count(),
            training: (&history).into(),
            instance: eval.instance,
            bag: eval.bag_vote,
        },
        model,
        history,
        mask,
    })
}

/// Runs the whole experiment: splits, detector training, subtype training
/// under label noise, and the end-to-end evaluation on held-out patients.
pub fn run_pipeline(config: &ExperimentConfig, exec: Execution) -> Result<PipelineArtifacts> {
    config.validate()?;
    let cfg = config.resolved();
    let cohort = cfg.cohort()?;
    let truth = cohort.truth();

    let m_parts = stratified_split(
        &cohort.mutation,
        &SplitSpec::new(&cfg.mutation_split, StratifyKey::BagLabel, derive_seed(cfg.seed, &[MUTATION_SPLIT_STREAM])),
    )?;
    let (m_train, m_val, m_test) = (&m_parts[0], &m_parts[1], &m_parts[2]);

    let control_ids: HashSet<u64> = truth.iter().filter(|(_, t)| t.is_none()).map(|(&p, _)| p).collect();
    let controls = cohort.detection.select_patients(&control_ids)?;
    let c_parts = stratified_split(
        &controls,
        &SplitSpec::new(
            &[1.0 - cfg.control_holdout, cfg.control_holdout],
            StratifyKey::BagLabel,
            derive_seed(cfg.seed, &[CONTROL_SPLIT_STREAM]),
        ),
    )?;

    let mut dev_ids = patient_set(m_train);
    dev_ids.extend(patient_set(m_val));
    dev_ids.extend(patient_set(&c_parts[0]));
    let det_dev = cohort.detection.select_patients(&dev_ids)?;
    let d_parts = stratified_split(
        &det_dev,
        &SplitSpec::new(&cfg.detection_split, StratifyKey::BagLabel, derive_seed(cfg.seed, &[DETECTION_SPLIT_STREAM])),
    )?;
    let det_layers = mlp(cohort.detection.dim(), &cfg.hidden, 2);
    let (det_model, det_history) = train_with(&d_parts[0], &d_parts[1], &det_layers, &cfg.detection, exec)?;
    let det_eval = crate::train::evaluate_instances(&det_model, &d_parts[1], exec)?;
    let detection = DetectionStage {
        train_cells: d_parts[0].len(),
        val_cells: d_parts[1].len(),
        training: (&det_history).into(),
        instance: det_eval.report,
    };

    let keep_called = |ds: &Dataset| -> Result<Dataset> {
        if !cfg.filter_by_detection {
            return Ok(ds.clone());
        }
        let called = predict(&det_model, ds, exec)?;
        let keep: HashSet<u64> = ds
            .cells()
            .iter()
            .zip(&called.predicted)
            .filter(|(_, &p)| p == CANCEROUS_CLASS)
            .map(|(c, _)| c.cell_id)
            .collect();
        ds.filter_cells(|c| keep.contains(&c.cell_id))
    };
    let m_train_called = keep_called(m_train)?;
    let m_val_called = keep_called(m_val)?;

    let main = run_mutation_stage(&cfg, &m_train_called, &m_val_called, m_test, cfg.noise_rate, exec)?;
    let mut sweep = vec![SweepPoint {
        noise_rate: cfg.noise_rate,
        instance_accuracy: main.stage.instance.accuracy,
        bag_accuracy: main.stage.bag.accuracy,
    }];
    for &rate in &cfg.noise_sweep {
        if rate == cfg.noise_rate {
            continue;
        }
        let run = run_mutation_stage(&cfg, &m_train_called, &m_val_called, m_test, rate, exec)?;
        sweep.push(SweepPoint {
            noise_rate: rate,
            instance_accuracy: run.stage.instance.accuracy,
            bag_accuracy: run.stage.bag.accuracy,
        });
    }
    sweep.sort_by(|a, b| a.noise_rate.total_cmp(&b.noise_rate));

    let mut test_ids = patient_set(m_test);
    test_ids.extend(patient_set(&c_parts[1]));
    let e2e_set = cohort.detection.select_patients(&test_ids)?;
    let out = end_to_end_pipeline(&det_model, &main.model, &e2e_set, &cfg.aggregation, exec)?;
    let end_to_end = score_end_to_end(&out, &truth)?;

    Ok(PipelineArtifacts {
        report: PipelineReport {
            seed: cfg.seed,
            detection,
            mutation: main.stage,
            end_to_end,
            sweep,
        },
        detection_model: det_model,
        mutation_model: main.model,
        detection_history: det_history,
        mutation_history: main.history,
        flip_mask: main.mask,
    })
}

/// Scores pipeline calls against per-patient truth (`None` = healthy).
pub fn score_end_to_end(out: &PipelineOutput, truth: &BTreeMap<u64, Option<usize>>) -> Result<EndToEndStage> {
    const NONE: usize = 4;
    let names = LabelSpace::MUTATION_NAMES;
    let mut det_truth = Vec::new();
    let mut det_pred = Vec::new();
    let mut sub_truth = Vec::new();
    let mut sub_pred = Vec::new();
    let mut calls = Vec::new();
    for p in &out.patients {
        let t = *truth
            .get(&p.patient_id)
            .ok_or_else(|| Error::InvalidDataset(format!("no ground truth for patient {}", p.patient_id)))?;
        let predicted = p.mutation.as_ref().map(|v| v.predicted_class);
        det_truth.push(usize::from(t.is_some()));
        det_pred.push(usize::from(p.decision.decision == Diagnosis::Cancerous));
        sub_truth.push(t.unwrap_or(NONE));
        sub_pred.push(predicted.unwrap_or(NONE));
        calls.push(PatientRow {
            patient_id: p.patient_id,
            cancer_fraction: p.decision.cancer_fraction,
            decision: p.decision.decision,
            predicted_subtype: predicted.map(|c| names[c]),
            true_subtype: t.map(|c| names[c]),
        });
    }
    Ok(EndToEndStage {
        patients: out.patients.len(),
        patient_detection: evaluate_labels(&det_truth, &det_pred, 2)?,
        patient_subtype: evaluate_labels(&sub_truth, &sub_pred, 5)?,
        stage2_cells: out.stage2_cells,
        calls,
    })
}
