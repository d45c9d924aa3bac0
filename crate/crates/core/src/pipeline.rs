//! Pipeline stages, shared by the command-line front end and the tests.
//!
//! In-memory stages (`simulate_expert`, `infer_log`, `train_variant`,
//! `evaluate`, `infer_demo`) are pure functions of the config; the `run_*`
//! wrappers add the on-disk artifacts.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dataset::{self, DatasetRecord, Header};
use crate::dynamics::{step_team, observe_team, ControllerId, TeamState};
use crate::eval::{
    accuracy_csv, fit_random_policy, imitation_accuracy, inference_accuracy, AccuracyReport, LearningScore,
    MetricsReport, MissionScore,
};
use crate::imm::{ImmFilter, ImmOutput, LibraryBank};
use crate::policy::{
    model_from_str, model_to_string, Dataset, ImitatorPolicy, Inference, MlpParams, Samples, TrainReport, Variant,
};
use crate::scenario::{run_mission, ExpertPolicy, MissionLog, Policy};
use crate::{seed, Error, Point, Result};

pub const DEMO_STAGE: &str = "demo";
pub const EVAL_STAGE: &str = "eval";

pub fn simulate_expert(config: &PipelineConfig, episodes: usize) -> Result<MissionLog> {
    let setup = config.mission_setup()?;
    let mut expert = ExpertPolicy::new(&setup)?;
    run_mission(&setup, &mut expert, config.seed, DEMO_STAGE, episodes)
}

/// Runs the filter over the logged team measurements.
///
/// The filter output at step `k + 1` scores the controller that moved the
/// team from `k` to `k + 1`, so step `k` is labeled with the MAP mode of the
/// next output (the last step keeps its own). The state estimate of step `k`
/// is the fused estimate after measurement `k`. Setpoints for each
/// prediction come from the intruder measurement of the step it starts from.
pub fn infer_log(log: &MissionLog, config: &PipelineConfig) -> Result<Vec<Inference>> {
    let setup = config.mission_setup()?;
    let rule = setup.setpoint_rule();
    let mut filter = ImmFilter::new(config.transition()?, config.dt, config.noise);
    let mut outputs: Vec<ImmOutput> = Vec::with_capacity(log.steps.len());
    let mut params = None;
    for step in &log.steps {
        let p = params.unwrap_or_else(|| rule.params(&step.env_meas_points()));
        let bank = LibraryBank::canonical(&setup.library, &p);
        let z = DVector::from_column_slice(&step.team_meas);
        outputs.push(filter.step(&z, &bank)?);
        params = Some(rule.params(&step.env_meas_points()));
    }
    let order: Vec<ControllerId> = setup.library.controllers.iter().map(|c| c.id).collect();
    Ok((0..outputs.len())
        .map(|k| {
            let next = outputs.get(k + 1).unwrap_or(&outputs[k]);
            Inference {
                label: order[next.map_mode],
                mu: next.mu.as_slice().to_vec(),
                estimate: outputs[k].fused_estimate.as_slice().to_vec(),
            }
        })
        .collect())
}

pub fn inference_report(log: &MissionLog, inferred: &[Inference]) -> Result<AccuracyReport> {
    let truth: Vec<ControllerId> = log.steps.iter().map(|s| s.controller).collect();
    let guess: Vec<ControllerId> = inferred.iter().map(|i| i.label).collect();
    inference_accuracy(&truth, &guess)
}

pub fn train_variant(dataset: &Dataset, config: &PipelineConfig, variant: Variant) -> Result<(MlpParams, TrainReport)> {
    let (train_records, val_records) = dataset.split(config.training.train_fraction)?;
    let train_set = Samples::from_records(&train_records, &config.arena)?;
    let val_set = Samples::from_records(&val_records, &config.arena)?;
    let mut rng = seed::stream(config.seed, &format!("train-{}", variant.name()), 0);
    crate::policy::train(&train_set, &val_set, ControllerId::COUNT, &config.training, &mut rng)
}

/// Everything the evaluation stage produces.
pub struct Evaluation {
    pub report: MetricsReport,
    pub logs: Vec<(String, MissionLog)>,
}

/// Paired-seed missions for the expert, both imitators and the random
/// baseline, plus off-policy imitation replay over the expert's run. The
/// random baseline's switching rate is fitted to that same expert run.
pub fn evaluate(
    config: &PipelineConfig,
    gt: &MlpParams,
    imm: &MlpParams,
    learning: Vec<LearningScore>,
    episodes: usize,
) -> Result<Evaluation> {
    let setup = config.mission_setup()?;
    let expert_log = {
        let mut expert = ExpertPolicy::new(&setup)?;
        run_mission(&setup, &mut expert, config.seed, EVAL_STAGE, episodes)?
    };
    let random = fit_random_policy(&expert_log, seed::stream(config.seed, "random-policy", 0))?;
    let imitator = |params: &MlpParams| ImitatorPolicy {
        params: params.clone(),
        arena: config.arena,
    };

    let jobs: Vec<(&str, Box<dyn Policy + Send>)> = vec![
        ("phi_gt", Box::new(imitator(gt))),
        ("phi_imm", Box::new(imitator(imm))),
        ("phi_rand", Box::new(random)),
    ];
    let runs: Vec<(String, MissionLog)> = jobs
        .into_par_iter()
        .map(|(name, mut policy)| {
            run_mission(&setup, policy.as_mut(), config.seed, EVAL_STAGE, episodes).map(|log| (name.to_string(), log))
        })
        .collect::<Result<_>>()?;

    let mut logs = vec![("expert".to_string(), expert_log)];
    logs.extend(runs);
    let mission = logs
        .iter()
        .map(|(name, log)| MissionScore::from_log(name, log))
        .collect::<Result<Vec<_>>>()?;
    let imitation = vec![
        ("phi_gt".to_string(), imitation_accuracy(&mut imitator(gt), &logs[0].1)?),
        ("phi_imm".to_string(), imitation_accuracy(&mut imitator(imm), &logs[0].1)?),
    ];
    Ok(Evaluation {
        report: MetricsReport {
            inference: None,
            learning,
            imitation,
            mission,
        },
        logs,
    })
}

/// One random-switching run of the standalone filter test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRun {
    pub run: usize,
    pub accuracy: f64,
    /// Accuracy over the second half of every sojourn interval.
    pub tail_accuracy: f64,
    pub switches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoTraceRow {
    pub k: usize,
    pub truth: ControllerId,
    pub estimate: ControllerId,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferDemo {
    pub runs: Vec<DemoRun>,
    /// Trace of run 0.
    pub trace: Vec<DemoTraceRow>,
}

impl InferDemo {
    pub fn mean_accuracy(&self) -> f64 {
        self.runs.iter().map(|r| r.accuracy).sum::<f64>() / self.runs.len() as f64
    }

    pub fn mean_tail_accuracy(&self) -> f64 {
        self.runs.iter().map(|r| r.tail_accuracy).sum::<f64>() / self.runs.len() as f64
    }
}

/// Controller sequence with exponential sojourns (mean `mean_steps`, at least
/// one step) and a uniformly drawn different controller at each switch.
pub fn random_switching<R: Rng + ?Sized>(horizon: usize, mean_steps: f64, rng: &mut R) -> Vec<ControllerId> {
    let gap = Exp::new(1.0 / mean_steps).expect("positive mean");
    let mut current = ControllerId::ALL[rng.random_range(0..ControllerId::COUNT)];
    let mut seq = Vec::with_capacity(horizon);
    while seq.len() < horizon {
        let len = (gap.sample(rng).ceil() as usize).max(1);
        seq.extend(std::iter::repeat_n(current, len.min(horizon - seq.len())));
        let shift = rng.random_range(1..ControllerId::COUNT);
        current = ControllerId::from_index((current.index() + shift) % ControllerId::COUNT).expect("in range");
    }
    seq
}

fn demo_run(config: &PipelineConfig, run: usize) -> Result<(DemoRun, Vec<DemoTraceRow>)> {
    let setup = config.mission_setup()?;
    let demo = &config.infer_demo;
    let mut rng = seed::stream(config.seed, "infer-demo", run as u64);
    let truth = random_switching(demo.horizon_steps, demo.mean_sojourn_steps, &mut rng);
    let spread = demo.initial_spread;
    let start: Vec<Point> = (0..config.library.num_robots)
        .map(|_| Point::new(rng.random_range(-spread..=spread), rng.random_range(-spread..=spread)))
        .collect();
    let mut team = TeamState::from_points(&start)?;
    let params = &setup.library.defaults;
    let bank = LibraryBank::canonical(&setup.library, params);
    let mut filter = ImmFilter::new(config.transition()?, config.dt, config.noise);

    let mut outputs = Vec::with_capacity(truth.len());
    for &controller in &truth {
        let z = observe_team(&team, &config.noise, &mut rng);
        outputs.push(filter.step(&z, &bank)?);
        let u = setup.library.velocity(controller, &team.positions, params)?;
        team = step_team(&team, &u, config.dt, &config.noise, &config.arena, &mut rng)?;
    }
    // Label of step k comes from the output after the measurement at k + 1.
    let estimate: Vec<ControllerId> = (0..truth.len())
        .map(|k| {
            let out = outputs.get(k + 1).unwrap_or(&outputs[k]);
            bank.order[out.map_mode]
        })
        .collect();

    let correct = truth.iter().zip(&estimate).filter(|(a, b)| a == b).count();
    let (mut tail_hits, mut tail_total, mut switches) = (0, 0, 0);
    let mut start = 0;
    for end in 1..=truth.len() {
        if end == truth.len() || truth[end] != truth[start] {
            let half = start + (end - start) / 2;
            tail_total += end - half;
            tail_hits += (half..end).filter(|&k| truth[k] == estimate[k]).count();
            if end < truth.len() {
                switches += 1;
            }
            start = end;
        }
    }
    let trace = (0..truth.len())
        .map(|k| DemoTraceRow {
            k,
            truth: truth[k],
            estimate: estimate[k],
            mu: outputs.get(k + 1).unwrap_or(&outputs[k]).mu.as_slice().to_vec(),
        })
        .collect();
    Ok((
        DemoRun {
            run,
            accuracy: correct as f64 / truth.len() as f64,
            tail_accuracy: tail_hits as f64 / tail_total as f64,
            switches,
        },
        trace,
    ))
}

/// Random-switching inference test over `infer_demo.runs` seeds, default
/// setpoints, no intruders.
pub fn infer_demo(config: &PipelineConfig) -> Result<InferDemo> {
    let results: Vec<(DemoRun, Vec<DemoTraceRow>)> = (0..config.infer_demo.runs)
        .into_par_iter()
        .map(|r| demo_run(config, r))
        .collect::<Result<_>>()?;
    let mut runs = Vec::new();
    let mut trace = Vec::new();
    for (i, (run, t)) in results.into_iter().enumerate() {
        if i == 0 {
            trace = t;
        }
        runs.push(run);
    }
    Ok(InferDemo { runs, trace })
}

// ---- artifacts -------------------------------------------------------------

pub const GT_DATASET: &str = "dataset_gt.jsonl";
pub const IMM_DATASET: &str = "dataset_imm.jsonl";

pub fn dataset_file(variant: Variant) -> &'static str {
    match variant {
        Variant::Gt => GT_DATASET,
        Variant::Imm => IMM_DATASET,
    }
}

pub fn model_file(variant: Variant) -> String {
    format!("model_{}.txt", variant.name())
}

pub fn train_report_file(variant: Variant) -> String {
    format!("train_{}.json", variant.name())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_hash(found: &str, expected: &str, what: &Path, force: bool) -> Result<()> {
    if found != expected && !force {
        return Err(Error::Config(format!(
            "{} was produced with config hash {found}, current config hashes to {expected} (use --force to override)",
            what.display()
        )));
    }
    Ok(())
}

pub fn run_simulate_expert(config: &PipelineConfig, out: &Path) -> Result<String> {
    let hash = config.hash();
    let log = simulate_expert(config, config.episodes.demo)?;
    dataset::write_mission(out, &log, &hash)?;
    dataset::write_records(&out.join(GT_DATASET), &Header::new("dataset-gt", &hash), &dataset::gt_records(&log))?;
    let mut counts = [0usize; ControllerId::COUNT];
    for s in &log.steps {
        counts[s.controller.index()] += 1;
    }
    let mut summary = format!(
        "episodes {}  steps {}  attacks thwarted {}/{}\n",
        log.num_episodes(),
        log.steps.len(),
        log.thwarted(),
        log.attacks.len()
    );
    for id in ControllerId::ALL {
        let _ = writeln!(summary, "  {:<16} {} steps", id.name(), counts[id.index()]);
    }
    Ok(summary)
}

pub fn run_infer(config: &PipelineConfig, log_dir: &Path, out: &Path, force: bool) -> Result<String> {
    let hash = config.hash();
    let (header, log) = dataset::read_mission(log_dir, config.dt)?;
    check_hash(&header.config_hash, &hash, &log_dir.join(dataset::MISSION_FILE), force)?;
    let inferred = infer_log(&log, config)?;
    let records = dataset::imm_records(&log, &inferred)?;
    dataset::write_records(&out.join(IMM_DATASET), &Header::new("dataset-imm", &hash), &records)?;
    let report = inference_report(&log, &inferred)?;
    let text = MetricsReport {
        inference: Some(report.clone()),
        ..Default::default()
    }
    .to_text();
    write_text(&out.join("inference_report.txt"), &text)?;
    write_text(&out.join("inference.csv"), &accuracy_csv(&report))?;
    Ok(text)
}

pub fn run_infer_demo(config: &PipelineConfig, out: &Path) -> Result<String> {
    let demo = infer_demo(config)?;
    let mut runs = String::from("run,accuracy,tail_accuracy,switches\n");
    for r in &demo.runs {
        let _ = writeln!(runs, "{},{:.6},{:.6},{}", r.run, r.accuracy, r.tail_accuracy, r.switches);
    }
    let mut trace = String::from("k,true_label,map_label,mu1,mu2,mu3,mu4,mu5\n");
    for row in &demo.trace {
        let mu: Vec<String> = row.mu.iter().map(|v| format!("{v:.6e}")).collect();
        let _ = writeln!(trace, "{},{},{},{}", row.k, row.truth.label(), row.estimate.label(), mu.join(","));
    }
    let text = format!(
        "random-switching inference over {} runs ({} steps, mean sojourn {} steps)\n  accuracy {:.4}\n  second-half-of-sojourn accuracy {:.4}\n",
        demo.runs.len(),
        config.infer_demo.horizon_steps,
        config.infer_demo.mean_sojourn_steps,
        demo.mean_accuracy(),
        demo.mean_tail_accuracy()
    );
    write_text(&out.join("infer_demo.csv"), &runs)?;
    write_text(&out.join("infer_demo_trace.csv"), &trace)?;
    write_text(&out.join("infer_demo_report.txt"), &text)?;
    Ok(text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainArtifact {
    pub config_hash: String,
    pub variant: Variant,
    pub report: TrainReport,
}

pub fn run_train(config: &PipelineConfig, variant: Variant, dataset_path: &Path, out: &Path, force: bool) -> Result<String> {
    let hash = config.hash();
    let (header, records): (Header, Vec<DatasetRecord>) = dataset::read_records(dataset_path)?;
    check_hash(&header.config_hash, &hash, dataset_path, force)?;
    let data = dataset::to_dataset(&records, variant)?;
    let (params, report) = train_variant(&data, config, variant)?;
    write_text(&out.join(model_file(variant)), &model_to_string(&params, &hash, variant))?;
    let artifact = TrainArtifact {
        config_hash: hash,
        variant,
        report: report.clone(),
    };
    write_text(&out.join(train_report_file(variant)), &(dataset::to_line(&artifact)? + "\n"))?;
    let mut csv = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    for e in &report.epochs {
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6}",
            e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        );
    }
    write_text(&out.join(format!("train_{}.csv", variant.name())), &csv)?;
    Ok(format!(
        "[{}] {} epochs, best epoch {}, validation accuracy {:.4}\n",
        variant.name(),
        report.epochs_run,
        report.best_epoch,
        report.final_val_accuracy
    ))
}

pub fn load_model(path: &Path, expected_hash: &str, force: bool) -> Result<MlpParams> {
    let model = model_from_str(&read_text(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;
    check_hash(&model.config_hash, expected_hash, path, force)?;
    Ok(model.params)
}

pub fn run_evaluate(config: &PipelineConfig, model_dir: &Path, out: &Path, force: bool) -> Result<String> {
    let hash = config.hash();
    let gt = load_model(&model_dir.join(model_file(Variant::Gt)), &hash, force)?;
    let imm = load_model(&model_dir.join(model_file(Variant::Imm)), &hash, force)?;
    let mut learning = Vec::new();
    for variant in [Variant::Gt, Variant::Imm] {
        let path = model_dir.join(train_report_file(variant));
        if path.exists() {
            let artifact: TrainArtifact = dataset::from_line(read_text(&path)?.trim())?;
            check_hash(&artifact.config_hash, &hash, &path, force)?;
            learning.push(LearningScore::from_report(variant.name(), &artifact.report));
        }
    }
    let eval = evaluate(config, &gt, &imm, learning, config.episodes.eval)?;
    let report = eval.report;
    let text = report.to_text();
    write_text(&out.join("metrics.txt"), &text)?;
    write_text(&out.join("metrics.json"), &(dataset::to_line(&report)? + "\n"))?;
    write_text(&out.join("mission.csv"), &report.mission_csv())?;
    write_text(&out.join("imitation.csv"), &report.imitation_csv())?;
    write_text(&out.join("learning.csv"), &report.learning_csv())?;
    Ok(text)
}
