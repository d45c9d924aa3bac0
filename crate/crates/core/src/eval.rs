//! Metrics: controller-inference accuracy, imitation accuracy, mission
//! performance, and the random switching baseline.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::dynamics::ControllerId;
use crate::policy::TrainReport;
use crate::scenario::{MissionLog, Observation, Policy};
use crate::seed::Rng as SeedRng;
use crate::{Error, Point, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorAccuracy {
    pub controller: ControllerId,
    pub correct: usize,
    pub total: usize,
}

impl BehaviorAccuracy {
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub correct: usize,
    pub total: usize,
    pub per_behavior: Vec<BehaviorAccuracy>,
}

impl AccuracyReport {
    pub fn overall(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn behavior(&self, id: ControllerId) -> &BehaviorAccuracy {
        &self.per_behavior[id.index()]
    }

    fn tally(pairs: impl Iterator<Item = (ControllerId, ControllerId)>) -> Result<Self> {
        let mut per_behavior: Vec<BehaviorAccuracy> = ControllerId::ALL
            .iter()
            .map(|&controller| BehaviorAccuracy {
                controller,
                correct: 0,
                total: 0,
            })
            .collect();
        for (truth, guess) in pairs {
            let b = &mut per_behavior[truth.index()];
            b.total += 1;
            b.correct += usize::from(truth == guess);
        }
        let total = per_behavior.iter().map(|b| b.total).sum();
        if total == 0 {
            return Err(Error::InvalidArgument("accuracy over an empty sequence".into()));
        }
        Ok(Self {
            correct: per_behavior.iter().map(|b| b.correct).sum(),
            total,
            per_behavior,
        })
    }
}

/// Step-wise agreement of the MAP sequence with the true one, overall and
/// grouped by the true controller.
pub fn inference_accuracy(truth: &[ControllerId], estimate: &[ControllerId]) -> Result<AccuracyReport> {
    if truth.len() != estimate.len() {
        return Err(Error::Dimension(format!(
            "{} true labels vs {} estimates",
            truth.len(),
            estimate.len()
        )));
    }
    AccuracyReport::tally(truth.iter().copied().zip(estimate.iter().copied()))
}

/// Off-policy agreement: every logged step is shown to `policy` (true team
/// state, measured intruders) and its choice compared to the expert's.
pub fn imitation_accuracy(policy: &mut dyn Policy, log: &MissionLog) -> Result<AccuracyReport> {
    let mut pairs = Vec::with_capacity(log.steps.len());
    for step in &log.steps {
        let team = step.team_state();
        let env: Vec<Point> = step.env_meas_points();
        let choice = policy.select(&Observation {
            team: &team,
            env_meas: &env,
            step: step.k,
            time: step.k as f64 * log.dt,
        });
        pairs.push((step.controller, choice));
    }
    AccuracyReport::tally(pairs.into_iter())
}

/// Fraction of initiated attacks that were thwarted.
pub fn mission_performance(log: &MissionLog) -> Result<f64> {
    if log.attacks.is_empty() {
        return Err(Error::InvalidArgument("no attacks in the log".into()));
    }
    Ok(log.thwarted() as f64 / log.attacks.len() as f64)
}

/// 95% two-sided normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes / trials`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Switches to a uniformly drawn controller at exponentially distributed
/// intervals.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    pub rate: f64,
    gap: Exp<f64>,
    rng: SeedRng,
    current: ControllerId,
    next_switch: f64,
}

impl RandomPolicy {
    pub fn new(rate: f64, rng: SeedRng) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("switch rate must be > 0, got {rate}")));
        }
        Ok(Self {
            rate,
            gap: Exp::new(rate).map_err(|e| Error::InvalidArgument(e.to_string()))?,
            rng,
            current: ControllerId::CircleFormation,
            next_switch: 0.0,
        })
    }

    pub fn draw_controller(&mut self) -> ControllerId {
        ControllerId::ALL[self.rng.random_range(0..ControllerId::COUNT)]
    }

    pub fn draw_gap(&mut self) -> f64 {
        self.gap.sample(&mut self.rng)
    }
}

impl Policy for RandomPolicy {
    fn select(&mut self, obs: &Observation<'_>) -> ControllerId {
        while obs.time >= self.next_switch {
            self.current = self.draw_controller();
            self.next_switch += self.draw_gap();
        }
        self.current
    }
}

/// Times (s) at which the logged controller changes.
pub fn switch_times(log: &MissionLog) -> Vec<f64> {
    log.steps
        .windows(2)
        .filter(|w| w[0].controller != w[1].controller)
        .map(|w| w[1].k as f64 * log.dt)
        .collect()
}

/// Maximum-likelihood exponential fit to the expert's inter-switch intervals.
pub fn fit_random_policy(log: &MissionLog, rng: SeedRng) -> Result<RandomPolicy> {
    let times = switch_times(log);
    if times.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 controller switches to fit a rate, found {}",
            times.len()
        )));
    }
    let mean = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    RandomPolicy::new(1.0 / mean, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionScore {
    pub policy: String,
    pub thwarted: usize,
    pub initiated: usize,
    pub performance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MissionScore {
    pub fn from_log(policy: &str, log: &MissionLog) -> Result<Self> {
        let performance = mission_performance(log)?;
        let (ci_low, ci_high) = wilson_interval(log.thwarted(), log.attacks.len(), Z95);
        Ok(Self {
            policy: policy.to_string(),
            thwarted: log.thwarted(),
            initiated: log.attacks.len(),
            performance,
            ci_low,
            ci_high,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningScore {
    pub variant: String,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub best_epoch: usize,
}

impl LearningScore {
    pub fn from_report(variant: &str, report: &TrainReport) -> Self {
        let best = &report.epochs[report.best_epoch - 1];
        Self {
            variant: variant.to_string(),
            train_accuracy: best.train_accuracy,
            val_accuracy: report.final_val_accuracy,
            best_epoch: report.best_epoch,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub inference: Option<AccuracyReport>,
    pub learning: Vec<LearningScore>,
    pub imitation: Vec<(String, AccuracyReport)>,
    pub mission: Vec<MissionScore>,
}

fn fmt_fraction(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |f| format!("{f:.4}"))
}

pub fn accuracy_csv(report: &AccuracyReport) -> String {
    let mut s = String::from("behavior,label,correct,total,accuracy\n");
    for b in &report.per_behavior {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            b.controller.name(),
            b.controller.label(),
            b.correct,
            b.total,
            fmt_fraction(b.fraction())
        );
    }
    let _ = writeln!(s, "overall,,{},{},{:.4}", report.correct, report.total, report.overall());
    s
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(inf) = &self.inference {
            let _ = writeln!(s, "controller inference: {:.4} ({}/{})", inf.overall(), inf.correct, inf.total);
            for b in &inf.per_behavior {
                let _ = writeln!(s, "  {:<16} {} ({}/{})", b.controller.name(), fmt_fraction(b.fraction()), b.correct, b.total);
            }
        }
        for l in &self.learning {
            let _ = writeln!(
                s,
                "learning [{}]: train {:.4}, validation {:.4} (epoch {})",
                l.variant, l.train_accuracy, l.val_accuracy, l.best_epoch
            );
        }
        for (name, acc) in &self.imitation {
            let _ = writeln!(s, "imitation [{name}]: {:.4} ({}/{})", acc.overall(), acc.correct, acc.total);
            for b in &acc.per_behavior {
                let _ = writeln!(s, "  {:<16} {} ({}/{})", b.controller.name(), fmt_fraction(b.fraction()), b.correct, b.total);
            }
        }
        for m in &self.mission {
            let _ = writeln!(
                s,
                "mission [{}]: {:.4} ({}/{}), 95% CI [{:.4}, {:.4}]",
                m.policy, m.performance, m.thwarted, m.initiated, m.ci_low, m.ci_high
            );
        }
        s
    }

    pub fn mission_csv(&self) -> String {
        let mut s = String::from("policy,thwarted,initiated,performance,ci_low,ci_high\n");
        for m in &self.mission {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6}",
                m.policy, m.thwarted, m.initiated, m.performance, m.ci_low, m.ci_high
            );
        }
        s
    }

    pub fn imitation_csv(&self) -> String {
        let mut s = String::from("policy,behavior,label,correct,total,accuracy\n");
        for (name, acc) in &self.imitation {
            for b in &acc.per_behavior {
                let _ = writeln!(
                    s,
                    "{name},{},{},{},{},{}",
                    b.controller.name(),
                    b.controller.label(),
                    b.correct,
                    b.total,
                    fmt_fraction(b.fraction())
                );
            }
        }
        s
    }

    pub fn learning_csv(&self) -> String {
        let mut s = String::from("variant,train_accuracy,val_accuracy,best_epoch\n");
        for l in &self.learning {
            let _ = writeln!(s, "{},{:.6},{:.6},{}", l.variant, l.train_accuracy, l.val_accuracy, l.best_epoch);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AttackOutcome, AttackRecord, IntruderMode, MissionStep};
    use crate::seed;

    use ControllerId::*;

    fn log_of(controllers: &[ControllerId], dt: f64) -> MissionLog {
        MissionLog {
            dt,
            steps: controllers
                .iter()
                .enumerate()
                .map(|(k, &controller)| MissionStep {
                    episode: 0,
                    k: k as u64,
                    team: vec![0.0; 10],
                    team_meas: vec![0.0; 10],
                    env: vec![1.2; 6],
                    env_meas: vec![1.2; 6],
                    controller,
                    intruder_modes: vec![IntruderMode::Loiter; 3],
                })
                .collect(),
            attacks: vec![],
            episode_starts: vec![0],
        }
    }

    #[test]
    fn identical_sequences_score_one() {
        let s = [CircleFormation, StarFormation, StarFormation, CyclicPursuit];
        let r = inference_accuracy(&s, &s).unwrap();
        assert_eq!(r.overall(), 1.0);
        for b in &r.per_behavior {
            assert!(b.fraction().is_none_or(|f| f == 1.0));
        }
    }

    #[test]
    fn half_matching_scores_half() {
        let t = [CircleFormation, CircleFormation, WedgeFormation, WedgeFormation];
        let e = [CircleFormation, StarFormation, WedgeFormation, StarFormation];
        let r = inference_accuracy(&t, &e).unwrap();
        assert_eq!(r.overall(), 0.5);
        assert_eq!(r.behavior(CircleFormation).correct, 1);
        assert_eq!(r.behavior(StarFormation).total, 0);
        assert!(inference_accuracy(&[], &[]).is_err());
        assert!(inference_accuracy(&t, &e[..3]).is_err());
    }

    #[test]
    fn accuracy_is_order_free() {
        let t = [CircleFormation, StarFormation, WedgeFormation, CyclicPursuit, LeaderFollower];
        let e = [CircleFormation, CircleFormation, WedgeFormation, LeaderFollower, LeaderFollower];
        let a = inference_accuracy(&t, &e).unwrap();
        let idx = [3, 0, 4, 2, 1];
        let t2: Vec<_> = idx.iter().map(|&i| t[i]).collect();
        let e2: Vec<_> = idx.iter().map(|&i| e[i]).collect();
        assert_eq!(a, inference_accuracy(&t2, &e2).unwrap());
    }

    #[test]
    fn constant_policy_matches_expert_share() {
        let seq = [CircleFormation, CircleFormation, StarFormation, CircleFormation, WedgeFormation];
        let log = log_of(&seq, 0.05);
        let mut constant = |_: &Observation<'_>| CircleFormation;
        let r = imitation_accuracy(&mut constant, &log).unwrap();
        assert_eq!(r.overall(), 3.0 / 5.0);

        let mut replay = {
            let seq = seq.to_vec();
            move |obs: &Observation<'_>| seq[obs.step as usize]
        };
        assert_eq!(imitation_accuracy(&mut replay, &log).unwrap().overall(), 1.0);
    }

    fn with_attacks(outcomes: &[AttackOutcome]) -> MissionLog {
        let mut log = log_of(&[CircleFormation], 0.05);
        log.attacks = outcomes
            .iter()
            .enumerate()
            .map(|(id, &o)| AttackRecord {
                id,
                start_step: 0,
                members: vec![0],
                outcome: Some(o),
            })
            .collect();
        log
    }

    #[test]
    fn mission_performance_examples() {
        use AttackOutcome::*;
        assert_eq!(mission_performance(&with_attacks(&[Thwarted, Thwarted])).unwrap(), 1.0);
        assert_eq!(mission_performance(&with_attacks(&[Breached, Breached])).unwrap(), 0.0);
        assert_eq!(mission_performance(&with_attacks(&[Thwarted, Breached, Breached, Thwarted])).unwrap(), 0.5);
        assert!(mission_performance(&with_attacks(&[])).is_err());
    }

    #[test]
    fn wilson_reference_values() {
        // 8/10: (0.4902, 0.9433), standard tabulated value.
        let (lo, hi) = wilson_interval(8, 10, Z95);
        assert!((lo - 0.4902).abs() < 1e-4 && (hi - 0.9433).abs() < 1e-4, "{lo} {hi}");
        let (lo, hi) = wilson_interval(0, 120, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.04);
    }

    #[test]
    fn constant_intervals_fit_rate() {
        // Switch every 100 steps of 0.05 s = 5 s.
        let seq: Vec<ControllerId> = (0..1000).map(|k| ControllerId::ALL[(k / 100) % 5]).collect();
        let policy = fit_random_policy(&log_of(&seq, 0.05), seed::stream(0, "t", 0)).unwrap();
        assert!((policy.rate - 0.2).abs() < 1e-12);
        let few: Vec<ControllerId> = (0..100).map(|k| if k < 50 { CircleFormation } else { StarFormation }).collect();
        assert!(fit_random_policy(&log_of(&few, 0.05), seed::stream(0, "t", 0)).is_err());
    }

    #[test]
    fn random_controllers_are_uniform() {
        let mut p = RandomPolicy::new(0.2, seed::stream(1, "random", 0)).unwrap();
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[p.draw_controller().index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn random_switch_gaps_have_fitted_mean() {
        let mut p = RandomPolicy::new(0.2, seed::stream(2, "random", 0)).unwrap();
        let n = 10_000;
        let mean = (0..n).map(|_| p.draw_gap()).sum::<f64>() / n as f64;
        assert!((mean - 5.0).abs() < 0.05 * 5.0, "{mean}");
    }

    #[test]
    fn random_schedule_is_reproducible() {
        let run = || {
            let mut p = RandomPolicy::new(1.0, seed::stream(3, "random", 0)).unwrap();
            let team = crate::dynamics::TeamState::from_points(&[Point::zeros(); 5]).unwrap();
            (0..500)
                .map(|k| {
                    p.select(&Observation {
                        team: &team,
                        env_meas: &[],
                        step: k,
                        time: k as f64 * 0.05,
                    })
                })
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn csv_has_five_behavior_rows() {
        let t = [CircleFormation, StarFormation];
        let r = inference_accuracy(&t, &t).unwrap();
        let report = MetricsReport {
            imitation: vec![("imm".into(), r)],
            ..Default::default()
        };
        assert_eq!(report.imitation_csv().lines().count(), 6);
    }
}
