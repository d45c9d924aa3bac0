//! Behavior cloning: feature/label datasets built from mission logs, a small
//! tanh MLP classifier trained by mini-batch SGD with momentum, and the
//! resulting imitator policy.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Arena, ControllerId};
use crate::scenario::{MissionLog, Observation, Policy};
use crate::{Error, Result};

pub const HIDDEN: [usize; 2] = [32, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// True labels and true robot states.
    Gt,
    /// Filter-inferred labels and fused state estimates.
    Imm,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Gt => "gt",
            Variant::Imm => "imm",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gt" => Ok(Variant::Gt),
            "imm" => Ok(Variant::Imm),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?} (expected gt or imm)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub episode_id: usize,
    pub step_index: u64,
    pub label: ControllerId,
    pub robot_state: Vec<f64>,
    pub env_meas: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<Vec<StepRecord>>,
}

impl Dataset {
    pub fn num_steps(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    /// Episode-level split: the first `round(train_fraction * E)` episodes
    /// train, the rest validate.
    pub fn split(&self, train_fraction: f64) -> Result<(Vec<&StepRecord>, Vec<&StepRecord>)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside [0, 1]")));
        }
        let cut = (train_fraction * self.episodes.len() as f64).round() as usize;
        if cut == 0 || cut == self.episodes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} episodes are too few to split {train_fraction}/{}",
                self.episodes.len(),
                1.0 - train_fraction
            )));
        }
        let train = self.episodes[..cut].iter().flatten().collect();
        let val = self.episodes[cut..].iter().flatten().collect();
        Ok((train, val))
    }
}

/// Filter output attached to one logged step: the label is the MAP
/// controller that moved the team out of this step.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub label: ControllerId,
    pub mu: Vec<f64>,
    pub estimate: Vec<f64>,
}

pub fn assemble_dataset(log: &MissionLog, variant: Variant, inferred: Option<&[Inference]>) -> Result<Dataset> {
    let inferred = match (variant, inferred) {
        (Variant::Imm, None) => return Err(Error::InvalidArgument("IMM dataset needs filter outputs".into())),
        (Variant::Imm, Some(v)) if v.len() != log.steps.len() => {
            return Err(Error::Dimension(format!(
                "{} filter outputs for {} logged steps",
                v.len(),
                log.steps.len()
            )))
        }
        (_, v) => v,
    };
    let mut episodes = vec![Vec::new(); log.num_episodes()];
    for (i, step) in log.steps.iter().enumerate() {
        let (label, robot_state) = match variant {
            Variant::Gt => (step.controller, step.team.clone()),
            Variant::Imm => {
                let inf = &inferred.expect("checked above")[i];
                (inf.label, inf.estimate.clone())
            }
        };
        episodes[step.episode].push(StepRecord {
            episode_id: step.episode,
            step_index: step.k,
            label,
            robot_state,
            env_meas: step.env_meas.clone(),
        });
    }
    Ok(Dataset { episodes })
}

/// `[robot_state; env_meas]` with x coordinates divided by the arena
/// half-width and y coordinates by the half-height.
pub fn build_features(robot_state: &[f64], env_meas: &[f64], arena: &Arena) -> Result<Vec<f64>> {
    if robot_state.len() % 2 != 0 || env_meas.len() % 2 != 0 {
        return Err(Error::Dimension("state vectors must stack planar points".into()));
    }
    let features: Vec<f64> = robot_state
        .iter()
        .chain(env_meas)
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { v / arena.half_width } else { v / arena.half_height })
        .collect();
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature".into()));
    }
    Ok(features)
}

/// Inverse of [`build_features`]; splits after `robot_coords` entries.
pub fn denormalize(features: &[f64], robot_coords: usize, arena: &Arena) -> (Vec<f64>, Vec<f64>) {
    let raw: Vec<f64> = features
        .iter()
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { v * arena.half_width } else { v * arena.half_height })
        .collect();
    let (x, e) = raw.split_at(robot_coords);
    (x.to_vec(), e.to_vec())
}

/// Features as columns plus label indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn from_records(records: &[&StepRecord], arena: &Arena) -> Result<Self> {
        let dim = records
            .first()
            .map(|r| r.robot_state.len() + r.env_meas.len())
            .unwrap_or(0);
        let mut data = Vec::with_capacity(dim * records.len());
        for r in records {
            let f = build_features(&r.robot_state, &r.env_meas, arena)?;
            if f.len() != dim {
                return Err(Error::Dimension(format!("record has {} features, expected {dim}", f.len())));
            }
            data.extend(f);
        }
        Ok(Self {
            features: DMatrix::from_vec(dim, records.len(), data),
            labels: records.iter().map(|r| r.label.index()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn columns(&self, idx: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
        let x = DMatrix::from_fn(self.features.nrows(), idx.len(), |r, c| self.features[(r, idx[c])]);
        (x, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
}

/// Fully connected net: tanh on hidden layers, softmax on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

fn add_bias(mut z: DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    for mut col in z.column_iter_mut() {
        col += b;
    }
    z
}

/// Column-wise softmax with max shift.
pub fn softmax(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = z.clone();
    for mut col in p.column_iter_mut() {
        let m = col.max();
        col.apply(|v| *v = (*v - m).exp());
        let s = col.sum();
        col /= s;
    }
    p
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes
                .windows(2)
                .map(|w| Layer {
                    weights: DMatrix::zeros(w[1], w[0]),
                    biases: DVector::zeros(w[1]),
                })
                .collect(),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut params = Self::zeros(sizes);
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.weights.nrows() + layer.weights.ncols()) as f64).sqrt();
            layer.weights.apply(|w| *w = rng.random_range(-limit..limit));
        }
        params
    }

    /// `[input, hidden.., output]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.ncols()];
        s.extend(self.layers.iter().map(|l| l.weights.nrows()));
        s
    }

    pub fn architecture(&self) -> String {
        let dims: Vec<String> = self.sizes().iter().map(usize::to_string).collect();
        format!("{};tanh;softmax", dims.join("-"))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }

    /// Flat view in storage order (per layer: weights column-major, then
    /// biases).
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *v = *it.next().expect("flat parameter vector too short");
            }
        }
    }

    /// Output-layer pre-activations, one column per input column.
    pub fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            a = add_bias(&l.weights * &a, &l.biases);
            if i < last {
                a.apply(|v| *v = v.tanh());
            }
        }
        a
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        softmax(&self.logits(x))
    }

    pub fn forward(&self, features: &[f64]) -> DVector<f64> {
        let x = DMatrix::from_column_slice(features.len(), 1, features);
        self.forward_batch(&x).column(0).into_owned()
    }

    fn axpy(&mut self, alpha: f64, other: &MlpParams) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.weights.zip_apply(&o.weights, |a, b| *a += alpha * b);
            l.biases.axpy(alpha, &o.biases, 1.0);
        }
    }

    fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights *= alpha;
            l.biases *= alpha;
        }
    }
}

/// `-ln softmax(z)[label]` through log-sum-exp; NaN propagates.
pub fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[label]
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over the columns of `x` and its gradient.
pub fn loss_and_gradient(params: &MlpParams, x: &DMatrix<f64>, labels: &[usize]) -> (f64, MlpParams) {
    let batch = labels.len() as f64;
    let last = params.layers.len() - 1;
    let mut activations = vec![x.clone()];
    for (i, l) in params.layers.iter().enumerate() {
        let mut z = add_bias(&l.weights * activations.last().unwrap(), &l.biases);
        if i < last {
            z.apply(|v| *v = v.tanh());
        }
        activations.push(z);
    }
    let logits = activations.last().unwrap();
    let loss = labels
        .iter()
        .enumerate()
        .map(|(c, &y)| cross_entropy(logits.column(c).as_slice(), y))
        .sum::<f64>()
        / batch;
    let probs = softmax(logits);

    let mut delta = probs;
    for (c, &y) in labels.iter().enumerate() {
        delta[(y, c)] -= 1.0;
    }
    delta /= batch;

    let mut grad = MlpParams::zeros(&params.sizes());
    for i in (0..=last).rev() {
        let input = &activations[i];
        grad.layers[i].weights = &delta * input.transpose();
        grad.layers[i].biases = delta.column_sum();
        if i > 0 {
            let mut back = params.layers[i].weights.transpose() * &delta;
            back.zip_apply(input, |d, a| *d *= 1.0 - a * a);
            delta = back;
        }
    }
    (loss, grad)
}

/// Analytic gradient against central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    /// `|g - g_fd| / max(|g|, |g_fd|)` over the whole parameter vector.
    pub relative: f64,
    /// Largest per-parameter `|g_i - g_fd_i|`.
    pub max_abs: f64,
    /// Largest per-parameter relative error, denominators floored at `1e-7`.
    /// Dominated by rounding for near-zero components.
    pub max_elementwise: f64,
}

pub fn gradient_check(params: &MlpParams, x: &DMatrix<f64>, labels: &[usize], step: f64) -> GradientCheck {
    let (_, analytic) = loss_and_gradient(params, x, labels);
    let analytic = DVector::from_vec(analytic.flat());
    let base = params.flat();
    let mut probe = params.clone();
    let mut numeric = DVector::zeros(base.len());
    let mut v = base.clone();
    for i in 0..base.len() {
        v[i] = base[i] + step;
        probe.set_flat(&v);
        let up = loss_and_gradient(&probe, x, labels).0;
        v[i] = base[i] - step;
        probe.set_flat(&v);
        let down = loss_and_gradient(&probe, x, labels).0;
        v[i] = base[i];
        numeric[i] = (up - down) / (2.0 * step);
    }
    let diff = &analytic - &numeric;
    let max_elementwise = diff
        .iter()
        .zip(analytic.iter().zip(numeric.iter()))
        .map(|(d, (a, n))| d.abs() / a.abs().max(n.abs()).max(1e-7))
        .fold(0.0, f64::max);
    GradientCheck {
        relative: diff.norm() / analytic.norm().max(numeric.norm()).max(f64::MIN_POSITIVE),
        max_abs: diff.amax(),
        max_elementwise,
    }
}

/// Mean loss, accuracy and per-class `(correct, total)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub per_class: Vec<(usize, usize)>,
}

pub fn evaluate(params: &MlpParams, samples: &Samples) -> Evaluation {
    let classes = params.sizes().last().copied().unwrap_or(0);
    let mut per_class = vec![(0usize, 0usize); classes];
    let mut loss = 0.0;
    let mut correct = 0;
    let n = samples.len();
    for start in (0..n).step_by(4096) {
        let idx: Vec<usize> = (start..(start + 4096).min(n)).collect();
        let (x, y) = samples.columns(&idx);
        let z = params.logits(&x);
        for (c, &label) in y.iter().enumerate() {
            let col = z.column(c);
            loss += cross_entropy(col.as_slice(), label);
            let hit = argmax(col.as_slice()) == label;
            per_class[label].1 += 1;
            if hit {
                per_class[label].0 += 1;
                correct += 1;
            }
        }
    }
    let denom = n.max(1) as f64;
    Evaluation {
        loss: loss / denom,
        accuracy: correct as f64 / denom,
        per_class,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs without validation-accuracy improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            patience: 10,
            max_epochs: 200,
            train_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and max_epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument("train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub final_val_accuracy: f64,
    pub epochs_run: usize,
    /// Validation `(correct, total)` per class for the returned parameters.
    pub val_per_class: Vec<(usize, usize)>,
}

/// Mini-batch SGD with momentum on mean cross-entropy. Stops after
/// `patience` epochs without a validation-accuracy gain and returns the best
/// parameters seen. An empty validation set monitors training accuracy.
pub fn train<R: Rng + ?Sized>(
    train_set: &Samples,
    val_set: &Samples,
    classes: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(MlpParams, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training partition".into()));
    }
    let mut sizes = vec![train_set.features.nrows()];
    sizes.extend(HIDDEN);
    sizes.push(classes);
    let mut params = MlpParams::glorot(&sizes, rng);
    let mut velocity = MlpParams::zeros(&sizes);
    let monitor = if val_set.is_empty() { train_set } else { val_set };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = (params.clone(), f64::NEG_INFINITY, 0usize);
    let mut epochs = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let (x, y) = train_set.columns(batch);
            let (loss, grad) = loss_and_gradient(&params, &x, &y);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite training loss in epoch {epoch}; lower the learning rate (now {})",
                    config.learning_rate
                )));
            }
            velocity.scale(config.momentum);
            velocity.axpy(-config.learning_rate, &grad);
            params.axpy(1.0, &velocity);
        }
        let tr = evaluate(&params, train_set);
        let va = evaluate(&params, monitor);
        if !tr.loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite training loss after epoch {epoch}")));
        }
        epochs.push(EpochStats {
            epoch,
            train_loss: tr.loss,
            train_accuracy: tr.accuracy,
            val_loss: va.loss,
            val_accuracy: va.accuracy,
        });
        if va.accuracy > best.1 {
            best = (params.clone(), va.accuracy, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (params, accuracy, best_epoch) = best;
    let per_class = evaluate(&params, monitor).per_class;
    Ok((
        params,
        TrainReport {
            epochs_run: epochs.len(),
            epochs,
            best_epoch,
            final_val_accuracy: accuracy,
            val_per_class: per_class,
        },
    ))
}

pub fn predict_controller(params: &MlpParams, features: &[f64]) -> ControllerId {
    let p = params.forward(features);
    ControllerId::from_index(argmax(p.as_slice())).expect("output layer has one unit per controller")
}

/// The trained classifier as a [`Policy`], fed by the team's own state and
/// the measured intruder positions.
#[derive(Clone, Debug)]
pub struct ImitatorPolicy {
    pub params: MlpParams,
    pub arena: Arena,
}

impl Policy for ImitatorPolicy {
    fn select(&mut self, obs: &Observation<'_>) -> ControllerId {
        let env: Vec<f64> = obs.env_meas.iter().flat_map(|p| [p.x, p.y]).collect();
        match build_features(obs.team.positions.as_slice(), &env, &self.arena) {
            Ok(f) => predict_controller(&self.params, &f),
            // Unreachable for clamped, finite states; fall back to the
            // first controller rather than abort the rollout.
            Err(_) => ControllerId::CyclicPursuit,
        }
    }
}

pub const MODEL_MAGIC: &str = "swarm-imitation-mlp";
pub const MODEL_VERSION: u32 = 1;

/// Text model file: header, then per layer a `layer <out> <in>` line, one
/// line per weight row and one bias line, all at 17 significant digits.
pub fn model_to_string(params: &MlpParams, config_hash: &str, variant: Variant) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MODEL_MAGIC} {MODEL_VERSION}");
    let _ = writeln!(s, "architecture {}", params.architecture());
    let _ = writeln!(s, "variant {}", variant.name());
    let _ = writeln!(s, "config_hash {config_hash}");
    for l in &params.layers {
        let _ = writeln!(s, "layer {} {}", l.weights.nrows(), l.weights.ncols());
        for r in 0..l.weights.nrows() {
            let row: Vec<String> = l.weights.row(r).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        let b: Vec<String> = l.biases.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "{}", b.join(" "));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub params: MlpParams,
    pub variant: Variant,
    pub config_hash: String,
}

pub fn model_from_str(text: &str) -> Result<ModelFile> {
    let bad = |line: usize, msg: &str| Error::Format(format!("model line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut field = |key: &str| -> Result<String> {
        let (n, line) = lines.next().ok_or_else(|| bad(0, "truncated header"))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(n, &format!("expected `{key} ...`")))
    };
    let version = field(MODEL_MAGIC)?;
    if version != MODEL_VERSION.to_string() {
        return Err(bad(1, &format!("unsupported version {version}")));
    }
    let architecture = field("architecture")?;
    let variant: Variant = field("variant")?.parse()?;
    let config_hash = field("config_hash")?;

    let floats = |n: usize, line: &str, want: usize| -> Result<Vec<f64>> {
        let v: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let v = v.map_err(|e| bad(n, &format!("{e}")))?;
        if v.len() != want {
            return Err(bad(n, &format!("expected {want} values, found {}", v.len())));
        }
        Ok(v)
    };
    let mut layers = Vec::new();
    while let Some((n, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let dims: Vec<usize> = line
            .strip_prefix("layer ")
            .ok_or_else(|| bad(n, "expected `layer <out> <in>`"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(n, "bad layer size")))
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(bad(n, "expected two layer sizes"));
        };
        let mut weights = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let (n, line) = lines.next().ok_or_else(|| bad(n, "truncated weights"))?;
            for (c, v) in floats(n, line, cols)?.into_iter().enumerate() {
                weights[(r, c)] = v;
            }
        }
        let (n, line) = lines.next().ok_or_else(|| bad(n, "truncated biases"))?;
        let biases = DVector::from_vec(floats(n, line, rows)?);
        layers.push(Layer { weights, biases });
    }
    if layers.is_empty() {
        return Err(bad(0, "no layers"));
    }
    let params = MlpParams { layers };
    if params.sizes().windows(2).any(|w| w.len() == 2 && w[0] == 0) || params.architecture() != architecture {
        return Err(Error::Format(format!(
            "architecture header {architecture:?} does not match layers {:?}",
            params.architecture()
        )));
    }
    if !params.is_finite() {
        return Err(Error::Format("non-finite model parameter".into()));
    }
    Ok(ModelFile {
        params,
        variant,
        config_hash,
    })
}
