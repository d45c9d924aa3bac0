//! Perimeter-defense world.
//!
//! Three intruders loiter in a spawn band around the protected region and
//! attack it at Poisson instants. The defending team runs one controller of
//! the library at a time, chosen by a [`Policy`]. A mission is one
//! closed-loop rollout, segmented into episodes at attack initiations.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    step_team, observe_team, Arena, ControllerId, ControllerLibrary, Law, LibraryConfig, ModeParams,
    NoiseModel, Setpoint, TeamState,
};
use crate::seed::{self, Rng as SeedRng};
use crate::{Error, Point, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub center: [f64; 2],
    /// Radius of the protected region B.
    pub protected_radius: f64,
    /// Inner alert radius `r_r`.
    pub inner_alert_radius: f64,
    /// Outer alert radius `r_R`.
    pub outer_alert_radius: f64,
    /// Spawn band S: annulus `[spawn_inner_radius, spawn_outer_radius]`
    /// intersected with the arena.
    pub spawn_inner_radius: f64,
    pub spawn_outer_radius: f64,
    /// Defender distance that makes an attacker retreat.
    pub capture_radius: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            protected_radius: 0.2,
            inner_alert_radius: 0.6,
            outer_alert_radius: 1.0,
            spawn_inner_radius: 1.1,
            spawn_outer_radius: 1.4,
            capture_radius: 0.2,
        }
    }
}

impl Geometry {
    pub fn center(&self) -> Point {
        Point::new(self.center[0], self.center[1])
    }

    pub fn validate(&self, arena: &Arena) -> Result<()> {
        let ok = 0.0 < self.protected_radius
            && self.protected_radius < self.inner_alert_radius
            && self.inner_alert_radius < self.outer_alert_radius
            && self.outer_alert_radius < self.spawn_inner_radius
            && self.spawn_inner_radius < self.spawn_outer_radius
            && self.capture_radius > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(
                "geometry must satisfy 0 < protected < inner alert < outer alert < spawn inner < spawn outer, capture > 0"
                    .into(),
            ));
        }
        if !arena.contains(&self.center()) {
            return Err(Error::InvalidArgument("geometry center lies outside the arena".into()));
        }
        for side in [1.0, -1.0] {
            if !arena.contains(&self.lobe_axis_point(side, self.spawn_outer_radius)) {
                return Err(Error::InvalidArgument(
                    "spawn band does not reach into the arena along the x axis".into(),
                ));
            }
        }
        Ok(())
    }

    fn lobe_axis_point(&self, side: f64, radius: f64) -> Point {
        self.center() + Point::new(side * radius, 0.0)
    }

    pub fn distance_to_center(&self, p: &Point) -> f64 {
        (p - self.center()).norm()
    }

    pub fn in_spawn(&self, p: &Point, arena: &Arena) -> bool {
        let r = self.distance_to_center(p);
        arena.contains(p) && r >= self.spawn_inner_radius - 1e-12 && r <= self.spawn_outer_radius + 1e-12
    }

    /// Uniform sample of the spawn band, optionally restricted to the lobe
    /// on one side (`side` > 0: right of center).
    pub fn sample_spawn<R: Rng + ?Sized>(&self, arena: &Arena, side: Option<f64>, rng: &mut R) -> Point {
        let c = self.center();
        let r = self.spawn_outer_radius;
        loop {
            let p = c + Point::new(rng.random_range(-r..=r), rng.random_range(-r..=r));
            if !self.in_spawn(&p, arena) {
                continue;
            }
            if let Some(s) = side {
                if (p.x - c.x) * s < 0.0 {
                    continue;
                }
            }
            return p;
        }
    }

    /// Nearest-in-angle projection into the spawn lobe on the side of `p`.
    pub fn project_spawn(&self, p: Point, arena: &Arena) -> Point {
        let c = self.center();
        let mut d = p - c;
        let mut r = d.norm();
        if r < 1e-12 {
            d = Point::new(1.0, 0.0);
            r = 1.0;
        }
        let radius = r.clamp(self.spawn_inner_radius, self.spawn_outer_radius);
        let side = if d.x >= 0.0 { 1.0 } else { -1.0 };
        let angle = d.y.atan2(d.x);
        let axis = if side > 0.0 { 0.0 } else { std::f64::consts::PI };
        let mut offset = angle - axis;
        while offset > std::f64::consts::PI {
            offset -= 2.0 * std::f64::consts::PI;
        }
        while offset < -std::f64::consts::PI {
            offset += 2.0 * std::f64::consts::PI;
        }
        let at = |off: f64| c + radius * Point::new((axis + off).cos(), (axis + off).sin());
        let candidate = at(offset);
        if arena.contains(&candidate) {
            return candidate;
        }
        // The axis point is inside the arena (checked by validate); bisect
        // toward it for the boundary.
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if arena.contains(&at(offset * mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(offset * lo)
    }
}

/// Parameters of the rule-based expert and of the environment-driven
/// setpoints shared by every policy and by the filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Circle radius used while contracting toward B before cyclic pursuit.
    pub tight_circle_radius: f64,
    /// Pairwise distance tolerance that ends the contraction.
    pub contraction_tolerance: f64,
    /// Contraction time limit (s).
    pub contraction_timeout: f64,
    /// Distance from the center toward the nearest intruder of the star
    /// leader goal.
    pub star_offset: f64,
    /// Same for the wedge apex.
    pub wedge_offset: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            tight_circle_radius: 0.3,
            contraction_tolerance: 0.05,
            contraction_timeout: 3.0,
            star_offset: 0.35,
            wedge_offset: 0.45,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: Geometry,
    pub num_intruders: usize,
    /// Intruder speed (m/s).
    pub intruder_speed: f64,
    /// Poisson rate of attack initiations (1/s).
    pub attack_rate: f64,
    /// A loiterer picks a new waypoint after this many seconds.
    pub waypoint_timeout: f64,
    pub expert: ExpertConfig,
    /// Explicit starting positions of the defenders; defaults to the circle
    /// formation around the center.
    pub initial_team: Option<Vec<[f64; 2]>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            num_intruders: 3,
            intruder_speed: 0.1,
            attack_rate: 1.0 / 20.0,
            waypoint_timeout: 20.0,
            expert: ExpertConfig::default(),
            initial_team: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, arena: &Arena, library: &LibraryConfig) -> Result<()> {
        self.geometry.validate(arena)?;
        if self.num_intruders == 0 {
            return Err(Error::InvalidArgument("num_intruders must be >= 1".into()));
        }
        for (name, v) in [
            ("intruder_speed", self.intruder_speed),
            ("attack_rate", self.attack_rate),
            ("waypoint_timeout", self.waypoint_timeout),
            ("tight_circle_radius", self.expert.tight_circle_radius),
            ("contraction_tolerance", self.expert.contraction_tolerance),
            ("contraction_timeout", self.expert.contraction_timeout),
            ("star_offset", self.expert.star_offset),
            ("wedge_offset", self.expert.wedge_offset),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if let Some(team) = &self.initial_team {
            if team.len() != library.num_robots {
                return Err(Error::InvalidArgument(format!(
                    "initial_team has {} robots, expected {}",
                    team.len(),
                    library.num_robots
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntruderMode {
    Loiter,
    Attack,
    Retreat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Intruder {
    pub position: Point,
    pub mode: IntruderMode,
    pub retreat_target: Option<Point>,
    pub waypoint: Option<Point>,
    /// Steps spent heading to the current waypoint.
    pub waypoint_age: u32,
    /// Attack this intruder currently belongs to.
    pub attack: Option<usize>,
}

impl Intruder {
    pub fn loitering(position: Point) -> Self {
        Self {
            position,
            mode: IntruderMode::Loiter,
            retreat_target: None,
            waypoint: None,
            waypoint_age: 0,
            attack: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub intruders: Vec<Intruder>,
}

impl EnvState {
    pub fn positions(&self) -> Vec<Point> {
        self.intruders.iter().map(|i| i.position).collect()
    }

    pub fn stacked(&self) -> DVector<f64> {
        crate::dynamics::stack(&self.positions())
    }

    pub fn loiterers(&self) -> Vec<usize> {
        self.intruders
            .iter()
            .enumerate()
            .filter(|(_, i)| i.mode == IntruderMode::Loiter)
            .map(|(k, _)| k)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvEvent {
    /// An attacker met a defender and turned to retreat.
    Repelled { intruder: usize, attack: usize },
    /// An attacker entered the protected region.
    Breach { intruder: usize, attack: usize },
}

fn move_toward(p: Point, target: Point, step: f64) -> (Point, bool) {
    let d = target - p;
    let dist = d.norm();
    if dist <= step {
        (target, true)
    } else {
        (p + d * (step / dist), false)
    }
}

/// Advances every intruder one step and reports attack events.
///
/// Capture is checked against the defenders' positions after their own step
/// and takes precedence over a breach in the same step.
pub fn intruder_step<R: Rng + ?Sized>(
    env: &EnvState,
    defenders: &TeamState,
    config: &ScenarioConfig,
    arena: &Arena,
    dt: f64,
    rng: &mut R,
) -> (EnvState, Vec<EnvEvent>) {
    let geometry = &config.geometry;
    let center = geometry.center();
    let step = config.intruder_speed * dt;
    let timeout = (config.waypoint_timeout / dt).ceil() as u32;
    let team = defenders.points();
    let mut next = env.clone();
    let mut events = Vec::new();

    for (k, intruder) in next.intruders.iter_mut().enumerate() {
        match intruder.mode {
            IntruderMode::Loiter => {
                let side = if intruder.position.x >= center.x { 1.0 } else { -1.0 };
                let waypoint = match intruder.waypoint {
                    Some(w) if intruder.waypoint_age < timeout => w,
                    _ => {
                        intruder.waypoint_age = 0;
                        geometry.sample_spawn(arena, Some(side), rng)
                    }
                };
                let (p, reached) = move_toward(intruder.position, waypoint, step);
                intruder.position = geometry.project_spawn(p, arena);
                intruder.waypoint = if reached { None } else { Some(waypoint) };
                intruder.waypoint_age += 1;
            }
            IntruderMode::Attack => {
                let attack = intruder.attack.expect("attacking intruder without an attack id");
                let captured = team
                    .iter()
                    .any(|d| (d - intruder.position).norm() < geometry.capture_radius);
                if captured {
                    intruder.mode = IntruderMode::Retreat;
                    intruder.retreat_target = Some(geometry.sample_spawn(arena, None, rng));
                    events.push(EnvEvent::Repelled { intruder: k, attack });
                    continue;
                }
                intruder.position = move_toward(intruder.position, center, step).0;
                if geometry.distance_to_center(&intruder.position) < geometry.protected_radius {
                    *intruder = Intruder::loitering(geometry.sample_spawn(arena, None, rng));
                    events.push(EnvEvent::Breach { intruder: k, attack });
                }
            }
            IntruderMode::Retreat => {
                let target = intruder
                    .retreat_target
                    .expect("retreating intruder without a target");
                let (p, reached) = move_toward(intruder.position, target, step);
                intruder.position = p;
                if reached {
                    *intruder = Intruder::loitering(p);
                }
            }
        }
    }
    (next, events)
}

/// One scheduled attack initiation.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackEvent {
    pub time: f64,
    pub members: Vec<usize>,
}

/// Exponential inter-attack gaps and uniform attacker subsets.
#[derive(Clone, Copy, Debug)]
pub struct AttackScheduler {
    gap: Exp<f64>,
}

impl AttackScheduler {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("attack rate must be > 0, got {rate}")));
        }
        Ok(Self {
            gap: Exp::new(rate).map_err(|e| Error::InvalidArgument(e.to_string()))?,
        })
    }

    pub fn next_gap<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.gap.sample(rng)
    }

    /// Uniform subset size in `1..=available.len()`, members drawn without
    /// replacement. Empty when nobody is available.
    pub fn draw_subset<R: Rng + ?Sized>(&self, available: &[usize], rng: &mut R) -> Vec<usize> {
        if available.is_empty() {
            return Vec::new();
        }
        let size = rng.random_range(1..=available.len());
        let mut picked: Vec<usize> = sample(rng, available.len(), size).into_iter().map(|k| available[k]).collect();
        picked.sort_unstable();
        picked
    }
}

/// Attack stream over `[0, horizon)` assuming every intruder is available.
pub fn schedule_attacks<R: Rng + ?Sized>(
    rng: &mut R,
    rate: f64,
    num_intruders: usize,
    horizon: f64,
) -> Result<Vec<AttackEvent>> {
    let scheduler = AttackScheduler::new(rate)?;
    let everyone: Vec<usize> = (0..num_intruders).collect();
    let mut events = Vec::new();
    let mut t = scheduler.next_gap(rng);
    while t < horizon {
        events.push(AttackEvent {
            time: t,
            members: scheduler.draw_subset(&everyone, rng),
        });
        t += scheduler.next_gap(rng);
    }
    Ok(events)
}

/// Intruder counts per alert ring, from measured positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThreatCounts {
    /// Closer than the inner alert radius.
    pub inner: usize,
    /// Between the inner and outer alert radii.
    pub middle: usize,
}

pub fn threat_counts(env_meas: &[Point], geometry: &Geometry) -> ThreatCounts {
    let mut counts = ThreatCounts { inner: 0, middle: 0 };
    for p in env_meas {
        let d = geometry.distance_to_center(p);
        if d < geometry.inner_alert_radius {
            counts.inner += 1;
        } else if d < geometry.outer_alert_radius {
            counts.middle += 1;
        }
    }
    counts
}

/// Environment-driven setpoints. Every policy and the inference filter use
/// the same rule, so the controllers' parameters depend only on the measured
/// intruder positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SetpointRule {
    pub geometry: Geometry,
    pub circle_radius: f64,
    pub tight_circle_radius: f64,
    pub star_offset: f64,
    pub wedge_offset: f64,
}

impl SetpointRule {
    pub fn new(geometry: &Geometry, library: &LibraryConfig, expert: &ExpertConfig) -> Self {
        Self {
            geometry: geometry.clone(),
            circle_radius: library.circle_radius,
            tight_circle_radius: expert.tight_circle_radius,
            star_offset: expert.star_offset,
            wedge_offset: expert.wedge_offset,
        }
    }

    /// Star and wedge leader goals face the intruder closest to the center;
    /// the follower goal is that intruder itself. The circle is a fixed
    /// patrol ring around the center (leader on the +x axis) that shrinks
    /// while two or more intruders are inside the inner alert radius.
    pub fn params(&self, env_meas: &[Point]) -> ModeParams {
        let c = self.geometry.center();
        let nearest = env_meas
            .iter()
            .min_by(|a, b| (*a - c).norm().total_cmp(&(*b - c).norm()))
            .copied()
            .unwrap_or(c + Point::new(1.0, 0.0));
        let offset = nearest - c;
        let bearing = if offset.norm() > 1e-9 {
            offset / offset.norm()
        } else {
            Point::new(1.0, 0.0)
        };
        let tight = threat_counts(env_meas, &self.geometry).inner >= 2;
        let circle_radius = if tight { self.tight_circle_radius } else { self.circle_radius };
        ModeParams {
            setpoints: [
                Setpoint::at(nearest),
                Setpoint::at(nearest),
                Setpoint {
                    goal: Some(c),
                    scale: circle_radius / self.circle_radius,
                },
                Setpoint::at(c + bearing * self.wedge_offset),
                Setpoint::at(c + bearing * self.star_offset),
            ],
        }
    }
}

/// What a policy sees at each step.
pub struct Observation<'a> {
    pub team: &'a TeamState,
    pub env_meas: &'a [Point],
    pub step: u64,
    pub time: f64,
}

/// Controller selection `(x, e_hat) -> controller`.
pub trait Policy {
    fn select(&mut self, obs: &Observation<'_>) -> ControllerId;
}

impl<F: FnMut(&Observation<'_>) -> ControllerId> Policy for F {
    fn select(&mut self, obs: &Observation<'_>) -> ControllerId {
        self(obs)
    }
}

/// Memory of the expert between steps: when the contraction toward B
/// started and whether cyclic pursuit has been engaged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpertPhase {
    pub contraction_start: Option<u64>,
    pub pursuit: bool,
}

/// Rule table of the expert.
pub fn expert_policy(
    team: &TeamState,
    env_meas: &[Point],
    geometry: &Geometry,
    contraction: &ContractionRule,
    phase: &mut ExpertPhase,
    step: u64,
) -> ControllerId {
    let counts = threat_counts(env_meas, geometry);
    if counts.inner < 2 {
        *phase = ExpertPhase::default();
    }
    match counts {
        ThreatCounts { inner: 0, middle: 0 } => ControllerId::CircleFormation,
        ThreatCounts { inner: 1, .. } => ControllerId::LeaderFollower,
        ThreatCounts { inner: 0, middle: 1 } => ControllerId::StarFormation,
        ThreatCounts { inner: 0, .. } => ControllerId::WedgeFormation,
        _ => {
            if !phase.pursuit {
                let start = *phase.contraction_start.get_or_insert(step);
                if contraction.reached(team) || step - start >= contraction.timeout_steps {
                    phase.pursuit = true;
                }
            }
            if phase.pursuit {
                ControllerId::CyclicPursuit
            } else {
                ControllerId::CircleFormation
            }
        }
    }
}

/// End-of-contraction test: every pairwise distance within tolerance of the
/// tightened circle.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionRule {
    pub separations: DMatrix<f64>,
    pub tolerance: f64,
    pub timeout_steps: u64,
}

impl ContractionRule {
    pub fn new(library: &ControllerLibrary, config: &LibraryConfig, expert: &ExpertConfig, dt: f64) -> Result<Self> {
        let Law::Formation { separations } = &library.get(ControllerId::CircleFormation)?.law else {
            return Err(Error::InvalidArgument("circle controller is not a formation".into()));
        };
        Ok(Self {
            separations: separations * (expert.tight_circle_radius / config.circle_radius),
            tolerance: expert.contraction_tolerance,
            timeout_steps: (expert.contraction_timeout / dt).round() as u64,
        })
    }

    pub fn reached(&self, team: &TeamState) -> bool {
        let n = team.num_robots();
        (0..n).all(|i| {
            (i + 1..n).all(|j| ((team.robot(i) - team.robot(j)).norm() - self.separations[(i, j)]).abs() < self.tolerance)
        })
    }
}

/// The expert as a [`Policy`].
#[derive(Clone, Debug)]
pub struct ExpertPolicy {
    pub geometry: Geometry,
    pub contraction: ContractionRule,
    pub phase: ExpertPhase,
}

impl ExpertPolicy {
    pub fn new(setup: &MissionSetup) -> Result<Self> {
        Ok(Self {
            geometry: setup.scenario.geometry.clone(),
            contraction: ContractionRule::new(&setup.library, &setup.library_config, &setup.scenario.expert, setup.dt)?,
            phase: ExpertPhase::default(),
        })
    }
}

impl Policy for ExpertPolicy {
    fn select(&mut self, obs: &Observation<'_>) -> ControllerId {
        expert_policy(obs.team, obs.env_meas, &self.geometry, &self.contraction, &mut self.phase, obs.step)
    }
}

/// Everything a rollout needs besides the policy and the seed.
#[derive(Clone, Debug)]
pub struct MissionSetup {
    pub library: ControllerLibrary,
    pub library_config: LibraryConfig,
    pub scenario: ScenarioConfig,
    pub noise: NoiseModel,
    pub arena: Arena,
    pub dt: f64,
}

impl MissionSetup {
    pub fn setpoint_rule(&self) -> SetpointRule {
        SetpointRule::new(&self.scenario.geometry, &self.library_config, &self.scenario.expert)
    }

    pub fn initial_team(&self) -> Result<TeamState> {
        match &self.scenario.initial_team {
            Some(points) => {
                let pts: Vec<Point> = points.iter().map(|p| Point::new(p[0], p[1])).collect();
                TeamState::from_points(&pts)
            }
            None => {
                let c = self.scenario.geometry.center();
                let pts: Vec<Point> = crate::dynamics::circle_shape(self.library_config.num_robots, self.library_config.circle_radius)
                    .into_iter()
                    .map(|p| p + c)
                    .collect();
                TeamState::from_points(&pts)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackOutcome {
    Thwarted,
    Breached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub id: usize,
    /// Index into [`MissionLog::steps`] of the initiation step.
    pub start_step: usize,
    pub members: Vec<usize>,
    pub outcome: Option<AttackOutcome>,
}

/// Everything recorded at one step, before the step's motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionStep {
    pub episode: usize,
    pub k: u64,
    pub team: Vec<f64>,
    pub team_meas: Vec<f64>,
    pub env: Vec<f64>,
    pub env_meas: Vec<f64>,
    pub controller: ControllerId,
    pub intruder_modes: Vec<IntruderMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionLog {
    pub dt: f64,
    pub steps: Vec<MissionStep>,
    pub attacks: Vec<AttackRecord>,
    /// Index into `steps` of the first step of each episode.
    pub episode_starts: Vec<usize>,
}

impl MissionLog {
    pub fn num_episodes(&self) -> usize {
        self.episode_starts.len()
    }

    /// Step index range of episode `e`.
    pub fn episode_range(&self, e: usize) -> std::ops::Range<usize> {
        let start = self.episode_starts[e];
        let end = self.episode_starts.get(e + 1).copied().unwrap_or(self.steps.len());
        start..end
    }

    pub fn thwarted(&self) -> usize {
        self.attacks
            .iter()
            .filter(|a| a.outcome == Some(AttackOutcome::Thwarted))
            .count()
    }
}

fn points_of(v: &[f64]) -> Vec<Point> {
    v.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect()
}

impl MissionStep {
    pub fn env_meas_points(&self) -> Vec<Point> {
        points_of(&self.env_meas)
    }

    pub fn team_state(&self) -> TeamState {
        TeamState {
            positions: DVector::from_column_slice(&self.team),
            time_index: self.k,
        }
    }
}

/// Per-episode random streams. Re-deriving them at every attack initiation
/// keeps rollouts of different policies on the same seed paired episode by
/// episode.
struct Streams {
    process: SeedRng,
    team_meas: SeedRng,
    env_meas: SeedRng,
    intruders: SeedRng,
    attacks: SeedRng,
}

impl Streams {
    fn derive(master: u64, stage: &str, episode: u64) -> Self {
        let s = |name: &str| seed::stream(master, &format!("{stage}/{name}"), episode);
        Self {
            process: s("process"),
            team_meas: s("team-meas"),
            env_meas: s("env-meas"),
            intruders: s("intruders"),
            attacks: s("attacks"),
        }
    }
}

fn measure_env<R: Rng + ?Sized>(env: &EnvState, noise: &NoiseModel, rng: &mut R) -> Vec<Point> {
    env.positions()
        .into_iter()
        .map(|p| {
            if noise.env_meas_std > 0.0 {
                let wx: f64 = rng.sample(StandardNormal);
                let wy: f64 = rng.sample(StandardNormal);
                p + Point::new(wx, wy) * noise.env_meas_std
            } else {
                p
            }
        })
        .collect()
}

/// Steps without any attack resolution after the last initiation before the
/// rollout is declared stuck.
const MAX_TAIL_STEPS: u64 = 200_000;

/// Closed-loop rollout until `episodes` attacks have been initiated and all
/// of them resolved. Steps before the first initiation are simulated but not
/// logged. `stage` namespaces the random streams derived from `master_seed`.
pub fn run_mission(
    setup: &MissionSetup,
    policy: &mut dyn Policy,
    master_seed: u64,
    stage: &str,
    episodes: usize,
) -> Result<MissionLog> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be >= 1".into()));
    }
    let dt = setup.dt;
    let scenario = &setup.scenario;
    let scheduler = AttackScheduler::new(scenario.attack_rate)?;
    let rule = setup.setpoint_rule();

    let mut init = seed::stream(master_seed, &format!("{stage}/init"), 0);
    let mut env = EnvState {
        intruders: (0..scenario.num_intruders)
            .map(|_| Intruder::loitering(scenario.geometry.sample_spawn(&setup.arena, None, &mut init)))
            .collect(),
    };
    let mut team = setup.initial_team()?;
    let mut streams = Streams::derive(master_seed, stage, 0);
    let mut next_attack = scheduler.next_gap(&mut streams.attacks);

    let mut log = MissionLog {
        dt,
        steps: Vec::new(),
        attacks: Vec::new(),
        episode_starts: Vec::new(),
    };
    let mut pending: Vec<Vec<usize>> = Vec::new();
    let mut k: u64 = 0;
    let mut tail_steps: u64 = 0;

    loop {
        let time = k as f64 * dt;
        if time >= next_attack {
            if log.attacks.len() < episodes {
                let members = scheduler.draw_subset(&env.loiterers(), &mut streams.attacks);
                if !members.is_empty() {
                    let id = log.attacks.len();
                    for &m in &members {
                        let intruder = &mut env.intruders[m];
                        intruder.mode = IntruderMode::Attack;
                        intruder.attack = Some(id);
                        intruder.waypoint = None;
                    }
                    log.episode_starts.push(log.steps.len());
                    log.attacks.push(AttackRecord {
                        id,
                        start_step: log.steps.len(),
                        members: members.clone(),
                        outcome: None,
                    });
                    pending.push(members);
                    streams = Streams::derive(master_seed, stage, id as u64 + 1);
                }
                next_attack += scheduler.next_gap(&mut streams.attacks);
            } else if log.attacks.iter().all(|a| a.outcome.is_some()) {
                break;
            }
        }
        if log.attacks.len() == episodes {
            tail_steps += 1;
            if tail_steps > MAX_TAIL_STEPS {
                return Err(Error::Numeric("mission did not resolve its attacks".into()));
            }
        }

        let env_meas = measure_env(&env, &setup.noise, &mut streams.env_meas);
        let team_meas = observe_team(&team, &setup.noise, &mut streams.team_meas);
        let controller = policy.select(&Observation {
            team: &team,
            env_meas: &env_meas,
            step: k,
            time,
        });
        if !log.episode_starts.is_empty() {
            log.steps.push(MissionStep {
                episode: log.episode_starts.len() - 1,
                k,
                team: team.positions.as_slice().to_vec(),
                team_meas: team_meas.as_slice().to_vec(),
                env: env.stacked().as_slice().to_vec(),
                env_meas: crate::dynamics::stack(&env_meas).as_slice().to_vec(),
                controller,
                intruder_modes: env.intruders.iter().map(|i| i.mode).collect(),
            });
        }

        let params = rule.params(&env_meas);
        let u = setup.library.velocity(controller, &team.positions, &params)?;
        team = step_team(&team, &u, dt, &setup.noise, &setup.arena, &mut streams.process)?;
        let (next_env, events) = intruder_step(&env, &team, scenario, &setup.arena, dt, &mut streams.intruders);
        env = next_env;
        for event in events {
            match event {
                EnvEvent::Repelled { intruder, attack } => {
                    pending[attack].retain(|&m| m != intruder);
                    if pending[attack].is_empty() && log.attacks[attack].outcome.is_none() {
                        log.attacks[attack].outcome = Some(AttackOutcome::Thwarted);
                    }
                }
                EnvEvent::Breach { attack, .. } => {
                    if log.attacks[attack].outcome.is_none() {
                        log.attacks[attack].outcome = Some(AttackOutcome::Breached);
                    }
                }
            }
        }
        k += 1;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::build_library;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> MissionSetup {
        let library_config = LibraryConfig::default();
        MissionSetup {
            library: build_library(&library_config).unwrap(),
            library_config,
            scenario: ScenarioConfig::default(),
            noise: NoiseModel::default(),
            arena: Arena::default(),
            dt: 0.05,
        }
    }

    fn far_team() -> TeamState {
        TeamState::from_points(&vec![Point::new(-1.5, -0.9); 5]).unwrap()
    }

    fn expert_choice(env: &[Point], phase: &mut ExpertPhase, team: &TeamState, step: u64) -> ControllerId {
        let s = setup();
        let rule = ContractionRule::new(&s.library, &s.library_config, &s.scenario.expert, s.dt).unwrap();
        expert_policy(team, env, &s.scenario.geometry, &rule, phase, step)
    }

    #[test]
    fn expert_rule_table() {
        let team = setup().initial_team().unwrap();
        let far = [Point::new(1.2, 0.0), Point::new(-1.2, 0.3), Point::new(1.1, -0.4)];
        let mut phase = ExpertPhase::default();
        assert_eq!(expert_choice(&far, &mut phase, &team, 0), ControllerId::CircleFormation);

        let one_inside = [Point::new(0.4, 0.0), Point::new(-1.2, 0.3), Point::new(1.1, -0.4)];
        assert_eq!(expert_choice(&one_inside, &mut phase, &team, 0), ControllerId::LeaderFollower);
        let s = setup();
        let params = s.setpoint_rule().params(&one_inside);
        assert_eq!(params.get(ControllerId::LeaderFollower).goal, Some(Point::new(0.4, 0.0)));

        let one_mid = [Point::new(0.8, 0.0), Point::new(-1.2, 0.3), Point::new(1.1, -0.4)];
        assert_eq!(expert_choice(&one_mid, &mut phase, &team, 0), ControllerId::StarFormation);
        let two_mid = [Point::new(0.8, 0.0), Point::new(-0.9, 0.0), Point::new(1.1, -0.4)];
        assert_eq!(expert_choice(&two_mid, &mut phase, &team, 0), ControllerId::WedgeFormation);
    }

    #[test]
    fn two_inside_contract_then_pursue() {
        let two_in = [Point::new(0.5, 0.0), Point::new(-0.5, 0.1), Point::new(1.1, -0.4)];
        let team = far_team();
        let mut phase = ExpertPhase::default();
        assert_eq!(expert_choice(&two_in, &mut phase, &team, 100), ControllerId::CircleFormation);
        assert_eq!(expert_choice(&two_in, &mut phase, &team, 159), ControllerId::CircleFormation);
        // 3 s timeout at dt = 0.05.
        assert_eq!(expert_choice(&two_in, &mut phase, &team, 160), ControllerId::CyclicPursuit);
        assert_eq!(expert_choice(&two_in, &mut phase, &team, 161), ControllerId::CyclicPursuit);

        // Already at the tightened circle: pursuit engages at once.
        let c = crate::dynamics::circle_shape(5, 0.3);
        let tight = TeamState::from_points(&c).unwrap();
        let mut phase = ExpertPhase::default();
        assert_eq!(expert_choice(&two_in, &mut phase, &tight, 0), ControllerId::CyclicPursuit);

        // Leaving the two-inside condition resets the phase.
        let far = [Point::new(1.2, 0.0), Point::new(-1.2, 0.3), Point::new(1.1, -0.4)];
        expert_choice(&far, &mut phase, &tight, 1);
        assert_eq!(phase, ExpertPhase::default());
    }

    #[test]
    fn expert_is_deterministic() {
        let env = [Point::new(0.5, 0.0), Point::new(-0.55, 0.1), Point::new(0.7, -0.4)];
        let team = far_team();
        let a: Vec<_> = (0..100).scan(ExpertPhase::default(), |p, k| Some(expert_choice(&env, p, &team, k))).collect();
        let b: Vec<_> = (0..100).scan(ExpertPhase::default(), |p, k| Some(expert_choice(&env, p, &team, k))).collect();
        assert_eq!(a, b);
    }

    fn env_with(intruder: Intruder) -> EnvState {
        EnvState {
            intruders: vec![intruder],
        }
    }

    #[test]
    fn attacker_descends_straight() {
        let s = setup();
        let mut i = Intruder::loitering(Point::new(1.0, 0.0));
        i.mode = IntruderMode::Attack;
        i.attack = Some(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, events) = intruder_step(&env_with(i), &far_team(), &s.scenario, &s.arena, 0.05, &mut rng);
        assert!(events.is_empty());
        assert!((next.intruders[0].position - Point::new(1.0 - 0.1 * 0.05, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn attacker_near_defender_retreats() {
        let s = setup();
        let mut i = Intruder::loitering(Point::new(0.8, 0.0));
        i.mode = IntruderMode::Attack;
        i.attack = Some(4);
        let eps = s.scenario.geometry.capture_radius;
        let next_pos = 0.8 - 0.1 * 0.05;
        let mut pts = vec![Point::new(-1.5, -0.9); 5];
        pts[2] = Point::new(next_pos - (eps - 0.01), 0.0);
        let team = TeamState::from_points(&pts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, events) = intruder_step(&env_with(i), &team, &s.scenario, &s.arena, 0.05, &mut rng);
        assert_eq!(next.intruders[0].mode, IntruderMode::Retreat);
        let target = next.intruders[0].retreat_target.unwrap();
        assert!(s.scenario.geometry.in_spawn(&target, &s.arena));
        assert_eq!(events, vec![EnvEvent::Repelled { intruder: 0, attack: 4 }]);
    }

    #[test]
    fn breach_resets_to_loiter() {
        let s = setup();
        let mut i = Intruder::loitering(Point::new(0.202, 0.0));
        i.mode = IntruderMode::Attack;
        i.attack = Some(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, events) = intruder_step(&env_with(i), &far_team(), &s.scenario, &s.arena, 0.05, &mut rng);
        assert_eq!(events, vec![EnvEvent::Breach { intruder: 0, attack: 1 }]);
        assert_eq!(next.intruders[0].mode, IntruderMode::Loiter);
        assert!(s.scenario.geometry.in_spawn(&next.intruders[0].position, &s.arena));
    }

    #[test]
    fn loiterer_stays_in_spawn_band() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = &s.scenario.geometry;
        let mut env = EnvState {
            intruders: (0..3).map(|_| Intruder::loitering(g.sample_spawn(&s.arena, None, &mut rng))).collect(),
        };
        let team = far_team();
        for _ in 0..10_000 {
            let (next, events) = intruder_step(&env, &team, &s.scenario, &s.arena, 0.05, &mut rng);
            assert!(events.is_empty());
            for i in &next.intruders {
                assert_eq!(i.mode, IntruderMode::Loiter);
                assert!(g.in_spawn(&i.position, &s.arena), "{:?}", i.position);
            }
            env = next;
        }
    }

    #[test]
    fn retreat_ends_in_loiter_at_target() {
        let s = setup();
        let mut i = Intruder::loitering(Point::new(0.5, 0.0));
        i.mode = IntruderMode::Retreat;
        i.retreat_target = Some(Point::new(1.2, 0.0));
        let mut env = env_with(i);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut modes = Vec::new();
        let mut positions = Vec::new();
        for _ in 0..200 {
            env = intruder_step(&env, &far_team(), &s.scenario, &s.arena, 0.05, &mut rng).0;
            modes.push(env.intruders[0].mode);
            positions.push(env.intruders[0].position);
        }
        // 0.7 m at 5 mm per step: arrival on step 140, give or take rounding.
        let arrived = modes.iter().position(|m| *m == IntruderMode::Loiter).unwrap();
        assert!((139..=140).contains(&arrived), "{arrived}");
        assert!(modes[arrived..].iter().all(|m| *m == IntruderMode::Loiter));
        assert_eq!(positions[arrived], Point::new(1.2, 0.0));
    }

    #[test]
    fn attack_gaps_are_exponential() {
        let scheduler = AttackScheduler::new(0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mean = (0..n).map(|_| scheduler.next_gap(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 20.0).abs() < 0.05 * 20.0, "{mean}");
    }

    #[test]
    fn attack_subsets_respect_support() {
        let scheduler = AttackScheduler::new(0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sizes = [0usize; 4];
        for _ in 0..3000 {
            let avail = [0, 2];
            let s = scheduler.draw_subset(&avail, &mut rng);
            assert!(!s.is_empty() && s.len() <= 2);
            assert!(s.iter().all(|m| avail.contains(m)));
            sizes[s.len()] += 1;
        }
        assert!(sizes[1] > 1300 && sizes[2] > 1300);
        assert!(scheduler.draw_subset(&[], &mut rng).is_empty());
    }

    #[test]
    fn schedule_is_seed_reproducible() {
        let a = schedule_attacks(&mut ChaCha8Rng::seed_from_u64(8), 0.05, 3, 1000.0).unwrap();
        let b = schedule_attacks(&mut ChaCha8Rng::seed_from_u64(8), 0.05, 3, 1000.0).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(schedule_attacks(&mut ChaCha8Rng::seed_from_u64(8), 0.0, 3, 10.0).is_err());
    }

    #[test]
    fn spawn_projection_lands_in_band() {
        let s = setup();
        let g = &s.scenario.geometry;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let p = Point::new(rng.random_range(-1.6..1.6), rng.random_range(-1.0..1.0));
            let q = g.project_spawn(p, &s.arena);
            assert!(g.in_spawn(&q, &s.arena), "{p:?} -> {q:?}");
        }
    }
}
