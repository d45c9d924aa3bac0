//! Controller library and team kinematics.
//!
//! Each controller is a weighted-consensus law over an interaction graph plus
//! an optional leader (or centering) term. Robots are single integrators in a
//! rectangular arena; the team state stacks the planar positions of all
//! robots into one vector `[x_1, y_1, x_2, y_2, ...]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

/// The five coordinated behaviors, in canonical label order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControllerId {
    CyclicPursuit,
    LeaderFollower,
    CircleFormation,
    WedgeFormation,
    StarFormation,
}

impl ControllerId {
    pub const ALL: [ControllerId; 5] = [
        ControllerId::CyclicPursuit,
        ControllerId::LeaderFollower,
        ControllerId::CircleFormation,
        ControllerId::WedgeFormation,
        ControllerId::StarFormation,
    ];

    pub const COUNT: usize = 5;

    /// Zero-based position in the canonical order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// One-based class label as used in datasets and reports.
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_label(label: u8) -> Option<Self> {
        (label as usize).checked_sub(1).and_then(Self::from_index)
    }

    pub fn name(self) -> &'static str {
        match self {
            ControllerId::CyclicPursuit => "cyclic-pursuit",
            ControllerId::LeaderFollower => "leader-follower",
            ControllerId::CircleFormation => "circle",
            ControllerId::WedgeFormation => "wedge",
            ControllerId::StarFormation => "star",
        }
    }
}

impl std::fmt::Display for ControllerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Rectangular arena centered at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Arena {
    pub half_width: f64,
    pub half_height: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Self {
            half_width: 1.6,
            half_height: 1.0,
        }
    }
}

impl Arena {
    pub fn clamp(&self, p: Point) -> Point {
        Point::new(
            p.x.clamp(-self.half_width, self.half_width),
            p.y.clamp(-self.half_height, self.half_height),
        )
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x.abs() <= self.half_width && p.y.abs() <= self.half_height
    }
}

/// Stacked positions of the defending robots.
#[derive(Clone, Debug, PartialEq)]
pub struct TeamState {
    pub positions: DVector<f64>,
    pub time_index: u64,
}

impl TeamState {
    pub fn new(positions: DVector<f64>) -> Result<Self> {
        if positions.is_empty() || positions.len() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "team state length {} is not 2N with N >= 1",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("team state has non-finite coordinates".into()));
        }
        Ok(Self {
            positions,
            time_index: 0,
        })
    }

    pub fn from_points(points: &[Point]) -> Result<Self> {
        Self::new(stack(points))
    }

    pub fn num_robots(&self) -> usize {
        self.positions.len() / 2
    }

    pub fn robot(&self, i: usize) -> Point {
        robot(&self.positions, i)
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.num_robots()).map(|i| self.robot(i)).collect()
    }
}

pub fn robot(x: &DVector<f64>, i: usize) -> Point {
    Point::new(x[2 * i], x[2 * i + 1])
}

pub fn stack(points: &[Point]) -> DVector<f64> {
    DVector::from_iterator(points.len() * 2, points.iter().flat_map(|p| [p.x, p.y]))
}

/// Noise standard deviations (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Process noise per step and coordinate.
    pub process_std: f64,
    /// Team position measurement noise.
    pub state_meas_std: f64,
    /// Intruder position measurement noise.
    pub env_meas_std: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            process_std: 0.002,
            state_meas_std: 0.01,
            env_meas_std: 0.01,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            process_std: 0.0,
            state_meas_std: 0.0,
            env_meas_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("process_std", self.process_std),
            ("state_meas_std", self.state_meas_std),
            ("env_meas_std", self.env_meas_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Controller-specific shape of the consensus law.
#[derive(Clone, Debug, PartialEq)]
pub enum Law {
    /// Rotated neighbor differences plus centering on the cycle center.
    CyclicPursuit { radius: f64 },
    /// Uniform desired separation along the interaction graph.
    LeaderFollower { separation: f64 },
    /// Pairwise desired separations (symmetric, zero diagonal).
    Formation { separations: DMatrix<f64> },
}

/// Runtime anchor of a controller: the leader goal (cycle center for cyclic
/// pursuit) and a multiplicative scale on the desired separations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Setpoint {
    pub goal: Option<Point>,
    pub scale: f64,
}

impl Setpoint {
    pub fn at(goal: Point) -> Self {
        Self {
            goal: Some(goal),
            scale: 1.0,
        }
    }

    pub fn free() -> Self {
        Self {
            goal: None,
            scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerSpec {
    pub id: ControllerId,
    /// `neighbors[i]` lists the robots robot `i` reacts to.
    pub neighbors: Vec<Vec<usize>>,
    pub law: Law,
}

impl ControllerSpec {
    pub fn num_robots(&self) -> usize {
        self.neighbors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_robots();
        if n == 0 {
            return Err(Error::InvalidArgument(format!("{}: empty team", self.id)));
        }
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                if j == i {
                    return Err(Error::InvalidArgument(format!("{}: self-loop at robot {i}", self.id)));
                }
                if j >= n {
                    return Err(Error::Dimension(format!("{}: neighbor {j} out of range", self.id)));
                }
            }
        }
        match &self.law {
            Law::CyclicPursuit { radius } if !(*radius > 0.0) => Err(Error::InvalidArgument(format!(
                "cycle radius must be > 0, got {radius}"
            ))),
            Law::LeaderFollower { separation } if !(*separation > 0.0) => Err(Error::InvalidArgument(
                format!("leader-follower separation must be > 0, got {separation}"),
            )),
            Law::Formation { separations } => {
                if separations.nrows() != n || separations.ncols() != n {
                    return Err(Error::Dimension(format!("{}: separation table is not {n}x{n}", self.id)));
                }
                for (i, list) in self.neighbors.iter().enumerate() {
                    for &j in list {
                        let d = separations[(i, j)];
                        if !(d > 0.0) {
                            return Err(Error::InvalidArgument(format!(
                                "{}: separation ({i},{j}) must be > 0",
                                self.id
                            )));
                        }
                        if self.neighbors[j].contains(&i) && (d - separations[(j, i)]).abs() > 1e-12 {
                            return Err(Error::InvalidArgument(format!(
                                "{}: separation ({i},{j}) is not symmetric",
                                self.id
                            )));
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The graph-coupling part of the law, without the leader or centering
    /// term.
    pub fn consensus(&self, x: &DVector<f64>, scale: f64) -> Result<DVector<f64>> {
        let n = self.num_robots();
        if x.len() != 2 * n {
            return Err(Error::Dimension(format!(
                "{} expects {} robots, state has length {}",
                self.id,
                n,
                x.len()
            )));
        }
        let mut u = DVector::zeros(2 * n);
        match &self.law {
            Law::CyclicPursuit { radius } => {
                let rot = rotation(2.0 * radius * (PI / n as f64).sin());
                for i in 0..n {
                    let xi = robot(x, i);
                    let mut acc = Point::zeros();
                    for &j in &self.neighbors[i] {
                        acc += rot * (robot(x, j) - xi);
                    }
                    u[2 * i] = acc.x;
                    u[2 * i + 1] = acc.y;
                }
            }
            Law::LeaderFollower { separation } => {
                let d2 = (separation * scale).powi(2);
                for i in 0..n {
                    let acc = weighted_sum(x, i, &self.neighbors[i], |_| d2);
                    u[2 * i] = acc.x;
                    u[2 * i + 1] = acc.y;
                }
            }
            Law::Formation { separations } => {
                for i in 0..n {
                    let acc = weighted_sum(x, i, &self.neighbors[i], |j| (separations[(i, j)] * scale).powi(2));
                    u[2 * i] = acc.x;
                    u[2 * i + 1] = acc.y;
                }
            }
        }
        Ok(u)
    }

    /// Full control law: consensus plus the goal term. Cyclic pursuit centers
    /// every robot on the goal; the other laws pull only the leader (robot 0).
    pub fn evaluate(&self, x: &DVector<f64>, setpoint: &Setpoint) -> Result<DVector<f64>> {
        let mut u = self.consensus(x, setpoint.scale)?;
        if let Some(goal) = setpoint.goal {
            match self.law {
                Law::CyclicPursuit { .. } => {
                    for i in 0..self.num_robots() {
                        let d = goal - robot(x, i);
                        u[2 * i] += d.x;
                        u[2 * i + 1] += d.y;
                    }
                }
                _ => {
                    let d = goal - robot(x, 0);
                    u[0] += d.x;
                    u[1] += d.y;
                }
            }
        }
        Ok(u)
    }
}

fn weighted_sum(x: &DVector<f64>, i: usize, neighbors: &[usize], desired_sq: impl Fn(usize) -> f64) -> Point {
    let xi = robot(x, i);
    let mut acc = Point::zeros();
    for &j in neighbors {
        let diff = robot(x, j) - xi;
        acc += (diff.norm_squared() - desired_sq(j)) * diff;
    }
    acc
}

/// Planar rotation by `theta` radians.
pub fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Per-controller setpoints, indexed by canonical controller index.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeParams {
    pub setpoints: [Setpoint; ControllerId::COUNT],
}

impl ModeParams {
    pub fn get(&self, id: ControllerId) -> &Setpoint {
        &self.setpoints[id.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerLibrary {
    pub controllers: Vec<ControllerSpec>,
    /// Per-robot speed cap applied before integration (m/s).
    pub max_speed: f64,
    /// Setpoints used when no environment-driven override is supplied.
    pub defaults: ModeParams,
}

impl ControllerLibrary {
    pub fn new(controllers: Vec<ControllerSpec>, max_speed: f64, defaults: ModeParams) -> Result<Self> {
        for (k, spec) in controllers.iter().enumerate() {
            spec.validate()?;
            if controllers[..k].iter().any(|s| s.id == spec.id) {
                return Err(Error::InvalidArgument(format!("duplicate controller {}", spec.id)));
            }
            if spec.num_robots() != controllers[0].num_robots() {
                return Err(Error::Dimension("controllers disagree on team size".into()));
            }
        }
        if !(max_speed >= 0.0) {
            return Err(Error::InvalidArgument(format!("max_speed must be >= 0, got {max_speed}")));
        }
        Ok(Self {
            controllers,
            max_speed,
            defaults,
        })
    }

    pub fn len(&self) -> usize {
        self.controllers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controllers.is_empty()
    }

    pub fn num_robots(&self) -> usize {
        self.controllers.first().map_or(0, |c| c.num_robots())
    }

    /// True when the library holds all five controllers in canonical order.
    pub fn is_canonical(&self) -> bool {
        self.controllers.iter().map(|c| c.id).eq(ControllerId::ALL)
    }

    pub fn get(&self, id: ControllerId) -> Result<&ControllerSpec> {
        self.controllers
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("controller {id} is not in the library")))
    }

    /// Raw control law of `id` at the default setpoints.
    pub fn evaluate(&self, id: ControllerId, x: &TeamState) -> Result<DVector<f64>> {
        self.get(id)?.evaluate(&x.positions, self.defaults.get(id))
    }

    /// Speed-limited velocity command of `id` under `params`.
    pub fn velocity(&self, id: ControllerId, x: &DVector<f64>, params: &ModeParams) -> Result<DVector<f64>> {
        let u = self.get(id)?.evaluate(x, params.get(id))?;
        Ok(saturate(u, self.max_speed))
    }
}

/// `evaluate_controller` at the library's default setpoints.
pub fn evaluate_controller(library: &ControllerLibrary, id: ControllerId, x: &TeamState) -> Result<DVector<f64>> {
    library.evaluate(id, x)
}

/// Scales every robot's velocity down to at most `max_speed`.
pub fn saturate(mut u: DVector<f64>, max_speed: f64) -> DVector<f64> {
    for i in 0..u.len() / 2 {
        let speed = u[2 * i].hypot(u[2 * i + 1]);
        if speed > max_speed {
            let k = if speed.is_finite() { max_speed / speed } else { 0.0 };
            u[2 * i] *= k;
            u[2 * i + 1] *= k;
        }
    }
    u
}

/// Forward-Euler step `x + dt*u + v`, `v ~ N(0, process_std^2 I)`, clamped to
/// the arena.
pub fn step_team<R: Rng + ?Sized>(
    x: &TeamState,
    u: &DVector<f64>,
    dt: f64,
    noise: &NoiseModel,
    arena: &Arena,
    rng: &mut R,
) -> Result<TeamState> {
    if u.len() != x.positions.len() {
        return Err(Error::Dimension(format!(
            "velocity length {} does not match state length {}",
            u.len(),
            x.positions.len()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite velocity command".into()));
    }
    let mut next = &x.positions + u * dt;
    if noise.process_std > 0.0 {
        for v in next.iter_mut() {
            let w: f64 = rng.sample(StandardNormal);
            *v += noise.process_std * w;
        }
    }
    for i in 0..x.num_robots() {
        let p = arena.clamp(robot(&next, i));
        next[2 * i] = p.x;
        next[2 * i + 1] = p.y;
    }
    Ok(TeamState {
        positions: next,
        time_index: x.time_index + 1,
    })
}

/// Full-state position measurement `z = x + w`, `w ~ N(0, state_meas_std^2 I)`.
pub fn observe_team<R: Rng + ?Sized>(x: &TeamState, noise: &NoiseModel, rng: &mut R) -> DVector<f64> {
    let mut z = x.positions.clone();
    if noise.state_meas_std > 0.0 {
        for v in z.iter_mut() {
            let w: f64 = rng.sample(StandardNormal);
            *v += noise.state_meas_std * w;
        }
    }
    z
}

/// Geometry and gain parameters of the controller library.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibraryConfig {
    pub num_robots: usize,
    /// Cycle radius `r` of cyclic pursuit; sets the rotation angle
    /// `2 r sin(pi/N)`.
    pub cycle_radius: f64,
    /// Leader-follower separation.
    pub follower_separation: f64,
    /// Circumradius of the circle formation.
    pub circle_radius: f64,
    /// Spacing between consecutive robots along a wedge arm.
    pub wedge_spacing: f64,
    pub wedge_half_angle_deg: f64,
    /// Star formation: the leader is the hub, followers alternate between
    /// the inner and outer radius on evenly spaced rays.
    pub star_inner_radius: f64,
    pub star_outer_radius: f64,
    pub max_speed: f64,
    /// Default setpoints (used when no intruder information is available).
    pub cycle_center: [f64; 2],
    pub follower_goal: [f64; 2],
    pub circle_goal: [f64; 2],
    pub wedge_goal: [f64; 2],
    pub star_goal: [f64; 2],
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            num_robots: 5,
            cycle_radius: 0.3,
            follower_separation: 0.2,
            circle_radius: 0.6,
            wedge_spacing: 0.25,
            wedge_half_angle_deg: 35.0,
            star_inner_radius: 0.25,
            star_outer_radius: 0.5,
            max_speed: 0.2,
            cycle_center: [0.0, 0.0],
            follower_goal: [0.7, 0.3],
            circle_goal: [0.0, 0.0],
            wedge_goal: [-0.4, 0.3],
            star_goal: [0.0, -0.35],
        }
    }
}

impl LibraryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_robots == 0 {
            return Err(Error::InvalidArgument("num_robots must be >= 1".into()));
        }
        for (name, v) in [
            ("cycle_radius", self.cycle_radius),
            ("follower_separation", self.follower_separation),
            ("circle_radius", self.circle_radius),
            ("wedge_spacing", self.wedge_spacing),
            ("star_inner_radius", self.star_inner_radius),
            ("star_outer_radius", self.star_outer_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.wedge_half_angle_deg > 0.0 && self.wedge_half_angle_deg < 90.0) {
            return Err(Error::InvalidArgument(format!(
                "wedge_half_angle_deg must be in (0, 90), got {}",
                self.wedge_half_angle_deg
            )));
        }
        if (self.star_inner_radius - self.star_outer_radius).abs() < 1e-9 {
            return Err(Error::InvalidArgument(
                "star_inner_radius and star_outer_radius must differ".into(),
            ));
        }
        if !(self.max_speed >= 0.0 && self.max_speed.is_finite()) {
            return Err(Error::InvalidArgument(format!("max_speed must be >= 0, got {}", self.max_speed)));
        }
        Ok(())
    }

    pub fn default_params(&self) -> ModeParams {
        let p = |a: [f64; 2]| Setpoint::at(Point::new(a[0], a[1]));
        ModeParams {
            setpoints: [
                p(self.cycle_center),
                p(self.follower_goal),
                p(self.circle_goal),
                p(self.wedge_goal),
                p(self.star_goal),
            ],
        }
    }
}

/// Reference placement of the circle formation: robot 0 at the center,
/// the others evenly spaced on a ring of the given radius.
pub fn circle_shape(n: usize, radius: f64) -> Vec<Point> {
    let ring = n.saturating_sub(1).max(1);
    (0..n)
        .map(|i| {
            if i == 0 {
                return Point::zeros();
            }
            let a = 2.0 * PI * (i - 1) as f64 / ring as f64;
            Point::new(radius * a.cos(), radius * a.sin())
        })
        .collect()
}

/// Reference placement of the wedge: leader at the apex, followers
/// alternating between the two arms at increasing distance.
pub fn wedge_shape(n: usize, spacing: f64, half_angle: f64) -> Vec<Point> {
    let left = Point::new(-half_angle.cos(), half_angle.sin());
    let right = Point::new(-half_angle.cos(), -half_angle.sin());
    (0..n)
        .map(|i| {
            if i == 0 {
                return Point::zeros();
            }
            let rank = i.div_ceil(2) as f64;
            let arm = if i % 2 == 1 { left } else { right };
            arm * spacing * rank
        })
        .collect()
}

/// Reference placement of the star: leader at the hub, followers on evenly
/// spaced rays with alternating radii.
pub fn star_shape(n: usize, inner: f64, outer: f64) -> Vec<Point> {
    let arms = n.saturating_sub(1).max(1);
    (0..n)
        .map(|i| {
            if i == 0 {
                return Point::zeros();
            }
            let a = 2.0 * PI * (i - 1) as f64 / arms as f64 + PI / 4.0;
            let r = if i % 2 == 1 { inner } else { outer };
            Point::new(r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Pairwise distance table of a placement.
pub fn separation_table(points: &[Point]) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| (points[i] - points[j]).norm())
}

fn complete_graph(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect()
}

fn line_graph(n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let mut v = Vec::new();
            if i > 0 {
                v.push(i - 1);
            }
            if i + 1 < n {
                v.push(i + 1);
            }
            v
        })
        .collect()
}

fn directed_cycle(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| if n > 1 { vec![(i + 1) % n] } else { Vec::new() }).collect()
}

/// Builds the five canonical controllers.
pub fn build_library(config: &LibraryConfig) -> Result<ControllerLibrary> {
    config.validate()?;
    let n = config.num_robots;
    let formation = |id, shape: Vec<Point>| ControllerSpec {
        id,
        neighbors: complete_graph(n),
        law: Law::Formation {
            separations: separation_table(&shape),
        },
    };
    let controllers = vec![
        ControllerSpec {
            id: ControllerId::CyclicPursuit,
            neighbors: directed_cycle(n),
            law: Law::CyclicPursuit {
                radius: config.cycle_radius,
            },
        },
        ControllerSpec {
            id: ControllerId::LeaderFollower,
            neighbors: line_graph(n),
            law: Law::LeaderFollower {
                separation: config.follower_separation,
            },
        },
        formation(ControllerId::CircleFormation, circle_shape(n, config.circle_radius)),
        formation(
            ControllerId::WedgeFormation,
            wedge_shape(n, config.wedge_spacing, config.wedge_half_angle_deg.to_radians()),
        ),
        formation(
            ControllerId::StarFormation,
            star_shape(n, config.star_inner_radius, config.star_outer_radius),
        ),
    ];
    ControllerLibrary::new(controllers, config.max_speed, config.default_params())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(law: Law, neighbors: Vec<Vec<usize>>, id: ControllerId) -> ControllerSpec {
        ControllerSpec { id, neighbors, law }
    }

    /// Scalar-by-scalar evaluation of the formation law, written out
    /// coordinate by coordinate.
    fn formation_oracle(x: &[f64], delta: &[Vec<f64>], nbrs: &[Vec<usize>], goal: Option<(f64, f64)>) -> Vec<f64> {
        let n = x.len() / 2;
        let mut u = vec![0.0; 2 * n];
        for i in 0..n {
            for &j in &nbrs[i] {
                let dx = x[2 * j] - x[2 * i];
                let dy = x[2 * j + 1] - x[2 * i + 1];
                let w = dx * dx + dy * dy - delta[i][j] * delta[i][j];
                u[2 * i] += w * dx;
                u[2 * i + 1] += w * dy;
            }
        }
        if let Some((gx, gy)) = goal {
            u[0] += gx - x[0];
            u[1] += gy - x[1];
        }
        u
    }

    #[test]
    fn single_robot_cyclic_pursuit_is_pure_centering() {
        let spec = single(Law::CyclicPursuit { radius: 0.3 }, vec![vec![]], ControllerId::CyclicPursuit);
        let u = spec
            .evaluate(&DVector::from_vec(vec![1.0, 0.0]), &Setpoint::at(Point::zeros()))
            .unwrap();
        assert_eq!(u.as_slice(), &[-1.0, 0.0]);
    }

    #[test]
    fn leader_follower_equilibrium_is_zero() {
        let spec = single(
            Law::LeaderFollower { separation: 0.3 },
            vec![vec![1], vec![0]],
            ControllerId::LeaderFollower,
        );
        let x = DVector::from_vec(vec![0.0, 0.0, 0.3, 0.0]);
        let u = spec.evaluate(&x, &Setpoint::at(Point::zeros())).unwrap();
        assert!(u.iter().all(|v| v.abs() < 1e-15), "{u}");
    }

    #[test]
    fn two_robot_formation_matches_hand_value_and_oracle() {
        let spec = single(
            Law::Formation {
                separations: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            },
            vec![vec![1], vec![0]],
            ControllerId::CircleFormation,
        );
        let x = DVector::from_vec(vec![0.0, 0.0, 2.0, 0.0]);
        let u = spec.evaluate(&x, &Setpoint::free()).unwrap();
        assert_eq!(u.as_slice(), &[6.0, 0.0, -6.0, 0.0]);
        let oracle = formation_oracle(
            x.as_slice(),
            &[vec![0.0, 1.0], vec![1.0, 0.0]],
            &[vec![1], vec![0]],
            None,
        );
        assert_eq!(u.as_slice(), oracle.as_slice());
    }

    #[test]
    fn library_formations_match_oracle_at_random_states() {
        let lib = build_library(&LibraryConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
            for id in [ControllerId::CircleFormation, ControllerId::WedgeFormation, ControllerId::StarFormation] {
                let spec = lib.get(id).unwrap();
                let Law::Formation { separations } = &spec.law else { unreachable!() };
                let delta: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| separations[(i, j)]).collect()).collect();
                let goal = lib.defaults.get(id).goal.unwrap();
                let oracle = formation_oracle(x.as_slice(), &delta, &spec.neighbors, Some((goal.x, goal.y)));
                let u = lib.evaluate(id, &TeamState::new(x.clone()).unwrap()).unwrap();
                for (a, b) in u.iter().zip(&oracle) {
                    assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
            }
        }
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(rotation(0.0), Matrix2::identity());
        let v = rotation(PI / 2.0) * Point::new(1.0, 0.0);
        assert!((v - Point::new(0.0, 1.0)).norm() < 1e-15);
        let r = rotation(0.7);
        assert!((r.transpose() * r - Matrix2::identity()).norm() < 1e-12);
    }

    #[test]
    fn euler_step_examples() {
        let noise = NoiseModel::noiseless();
        let arena = Arena::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = TeamState::from_points(&[Point::new(0.0, 0.0)]).unwrap();
        let next = step_team(&x, &DVector::from_vec(vec![1.0, 0.0]), 0.05, &noise, &arena, &mut rng).unwrap();
        assert_eq!(next.positions.as_slice(), &[0.05, 0.0]);
        assert_eq!(next.time_index, 1);
        let still = step_team(&x, &DVector::zeros(2), 0.05, &noise, &arena, &mut rng).unwrap();
        assert_eq!(still.positions, x.positions);
        assert_eq!(still.time_index, 1);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let noise = NoiseModel::noiseless();
        let arena = Arena::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = TeamState::from_points(&[Point::new(0.0, 0.0)]).unwrap();
        let bad = DVector::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(step_team(&x, &bad, 0.05, &noise, &arena, &mut rng), Err(Error::Numeric(_))));
        assert!(matches!(
            step_team(&x, &DVector::zeros(2), 0.0, &noise, &arena, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            step_team(&x, &DVector::zeros(4), 0.05, &noise, &arena, &mut rng),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn noisy_steps_are_seed_reproducible() {
        let noise = NoiseModel::default();
        let arena = Arena::default();
        let lib = build_library(&LibraryConfig::default()).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut x = TeamState::from_points(&circle_shape(5, 0.45)).unwrap();
            for _ in 0..100 {
                let u = lib.velocity(ControllerId::StarFormation, &x.positions, &lib.defaults).unwrap();
                x = step_team(&x, &u, 0.05, &noise, &arena, &mut rng).unwrap();
            }
            x
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn positions_are_clamped_to_arena() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = TeamState::from_points(&[Point::new(1.59, 0.99)]).unwrap();
        let next = step_team(
            &x,
            &DVector::from_vec(vec![1.0, 1.0]),
            0.05,
            &NoiseModel::noiseless(),
            &Arena::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(next.positions.as_slice(), &[1.6, 1.0]);
    }

    #[test]
    fn observation_examples() {
        let x = TeamState::from_points(&[Point::new(0.3, -0.2), Point::new(1.0, 0.5)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(observe_team(&x, &NoiseModel::noiseless(), &mut rng), x.positions);
        let noise = NoiseModel::default();
        let a = observe_team(&x, &noise, &mut ChaCha8Rng::seed_from_u64(9));
        let b = observe_team(&x, &noise, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn observation_noise_is_zero_mean() {
        let x = TeamState::from_points(&[Point::new(0.3, -0.2)]).unwrap();
        let noise = NoiseModel {
            state_meas_std: 0.05,
            ..NoiseModel::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..draws {
            let z = observe_team(&x, &noise, &mut rng);
            sum[0] += z[0] - x.positions[0];
            sum[1] += z[1] - x.positions[1];
        }
        let bound = 4.0 * noise.state_meas_std / (draws as f64).sqrt();
        for s in sum {
            assert!((s / draws as f64).abs() < bound);
        }
    }

    #[test]
    fn unknown_controller_and_bad_dimensions() {
        let full = build_library(&LibraryConfig::default()).unwrap();
        let partial = ControllerLibrary::new(full.controllers[..2].to_vec(), 0.2, full.defaults.clone()).unwrap();
        let x = TeamState::from_points(&circle_shape(5, 0.4)).unwrap();
        assert!(matches!(
            partial.evaluate(ControllerId::StarFormation, &x),
            Err(Error::InvalidArgument(_))
        ));
        let small = TeamState::from_points(&circle_shape(3, 0.4)).unwrap();
        assert!(matches!(full.evaluate(ControllerId::CircleFormation, &small), Err(Error::Dimension(_))));
    }

    #[test]
    fn default_library_is_canonical() {
        let lib = build_library(&LibraryConfig::default()).unwrap();
        assert_eq!(lib.len(), 5);
        assert!(lib.is_canonical());
        for spec in &lib.controllers {
            for (i, list) in spec.neighbors.iter().enumerate() {
                assert!(!list.contains(&i));
            }
        }
    }

    #[test]
    fn circle_chords_match_geometry() {
        let cfg = LibraryConfig::default();
        let lib = build_library(&cfg).unwrap();
        let Law::Formation { separations } = &lib.get(ControllerId::CircleFormation).unwrap().law else {
            panic!()
        };
        // Hub to ring, and neighbors on the four-robot ring.
        let chord = 2.0 * cfg.circle_radius * (PI / 4.0).sin();
        for i in 1..5 {
            assert!((separations[(0, i)] - cfg.circle_radius).abs() < 1e-12);
            let next = i % 4 + 1;
            assert!((separations[(i, next)] - chord).abs() < 1e-12);
        }
    }

    #[test]
    fn library_rejects_invalid_specs() {
        let bad = ControllerSpec {
            id: ControllerId::CircleFormation,
            neighbors: vec![vec![0]],
            law: Law::Formation {
                separations: DMatrix::zeros(1, 1),
            },
        };
        assert!(bad.validate().is_err());
        let cfg = LibraryConfig {
            follower_separation: 0.0,
            ..LibraryConfig::default()
        };
        assert!(build_library(&cfg).is_err());
        let neg = NoiseModel {
            process_std: -1.0,
            ..NoiseModel::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn saturation_caps_speed_and_preserves_direction() {
        let u = saturate(DVector::from_vec(vec![3.0, 4.0, 0.01, 0.0]), 0.2);
        assert!((u[0] - 0.12).abs() < 1e-15 && (u[1] - 0.16).abs() < 1e-15);
        assert_eq!(u[2], 0.01);
    }

    proptest! {
        #[test]
        fn consensus_is_translation_invariant(
            coords in proptest::collection::vec(-1.0f64..1.0, 10),
            dx in -2.0f64..2.0, dy in -2.0f64..2.0,
        ) {
            let lib = build_library(&LibraryConfig::default()).unwrap();
            let x = DVector::from_vec(coords);
            let shifted = DVector::from_fn(10, |k, _| x[k] + if k % 2 == 0 { dx } else { dy });
            for spec in &lib.controllers {
                let a = spec.consensus(&x, 1.0).unwrap();
                let b = spec.consensus(&shifted, 1.0).unwrap();
                prop_assert!((a - b).amax() <= 1e-12);
            }
        }

        #[test]
        fn outputs_are_finite(coords in proptest::collection::vec(-1e3f64..1e3, 10)) {
            let lib = build_library(&LibraryConfig::default()).unwrap();
            let x = TeamState::new(DVector::from_vec(coords)).unwrap();
            for id in ControllerId::ALL {
                prop_assert!(lib.evaluate(id, &x).unwrap().iter().all(|v| v.is_finite()));
            }
        }

        #[test]
        fn rotation_is_orthonormal(theta in -10.0f64..10.0) {
            let r = rotation(theta);
            prop_assert!((r.transpose() * r - Matrix2::identity()).amax() <= 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
        }
    }
}
