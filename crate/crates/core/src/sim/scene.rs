use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{DistanceField, GridSpec, OccupancyGrid};
use super::kinematics::{integrate, waypoints, SpeedProfile, YawProfile};
use super::SimError;
use crate::decision::{classify_trajectory, DecisionCategory, RuleThresholds};
use crate::trajectory::{EgoStatus, Trajectory, MAX_SPEED, STEP_SECONDS, WAYPOINTS};

/// Occupancy snapshots at t = 0.0, 0.5, …, 3.0 s.
pub const OCCUPANCY_STEPS: usize = WAYPOINTS + 1;
pub const MAX_AGENTS: usize = 8;
pub const MAX_ATTEMPTS: usize = 100;
/// Clearance the expert keeps from occupied cell centres.
pub const EXPERT_CLEARANCE: f64 = 1.0;
pub const LANE_WIDTH: f64 = 3.5;

const CAR_HALF: [f64; 2] = [2.2, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    /// Vehicle ahead in the ego lane.
    Lead,
    /// Vehicle behind in the ego lane.
    Follower,
    /// Parked vehicle or other static obstacle.
    Parked,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    /// Axis-aligned footprint half extents (m), both positive.
    pub half_extents: [f64; 2],
    pub role: AgentRole,
}

impl Agent {
    pub fn position_at(&self, t: f64) -> [f64; 2] {
        [
            self.position[0] + self.velocity[0] * t,
            self.position[1] + self.velocity[1] * t,
        ]
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub centerline: Vec<[f64; 2]>,
    pub width: f64,
}

impl Lane {
    pub fn straight(width: f64) -> Self {
        Lane {
            centerline: vec![[-32.0, 0.0], [32.0, 0.0]],
            width,
        }
    }

    /// Closest point on the centreline: (distance, unit tangent, arc length
    /// of the closest point measured from the point nearest the ego origin).
    pub fn project(&self, x: f64, y: f64) -> (f64, [f64; 2], f64) {
        let origin_s = self.arc_length_of_nearest(0.0, 0.0);
        let (d, tangent, s) = self.nearest(x, y);
        (d, tangent, s - origin_s)
    }

    fn arc_length_of_nearest(&self, x: f64, y: f64) -> f64 {
        self.nearest(x, y).2
    }

    fn nearest(&self, x: f64, y: f64) -> (f64, [f64; 2], f64) {
        let mut best = (f64::INFINITY, [1.0, 0.0], 0.0);
        let mut s0 = 0.0;
        for seg in self.centerline.windows(2) {
            let [a, b] = [seg[0], seg[1]];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            if len == 0.0 {
                continue;
            }
            let u = (((x - a[0]) * dx + (y - a[1]) * dy) / (len * len)).clamp(0.0, 1.0);
            let (px, py) = (a[0] + u * dx, a[1] + u * dy);
            let d = (x - px).hypot(y - py);
            if d < best.0 {
                best = (d, [dx / len, dy / len], s0 + u * len);
            }
            s0 += len;
        }
        best
    }

    /// Heading change of the centreline between the ego and `ahead` metres
    /// further along it.
    pub fn heading_change(&self, ahead: f64) -> f64 {
        let s_ego = self.arc_length_of_nearest(0.0, 0.0);
        let tangent_at = |s_target: f64| -> [f64; 2] {
            let mut s0 = 0.0;
            let mut last = [1.0, 0.0];
            for seg in self.centerline.windows(2) {
                let (dx, dy) = (seg[1][0] - seg[0][0], seg[1][1] - seg[0][1]);
                let len = dx.hypot(dy);
                if len == 0.0 {
                    continue;
                }
                last = [dx / len, dy / len];
                if s0 + len >= s_target {
                    return last;
                }
                s0 += len;
            }
            last
        };
        let a = tangent_at(s_ego);
        let b = tangent_at(s_ego + ahead);
        (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub tag: DecisionCategory,
    pub ego: EgoStatus,
    pub agents: Vec<Agent>,
    pub lane: Lane,
    pub expert: Trajectory,
    pub grid: GridSpec,
    /// One grid per lattice time, index k ↔ t = 0.5·k s.
    pub occupancy: Vec<OccupancyGrid>,
}

impl Scene {
    /// Builds a scene and rasterizes its occupancy snapshots.
    pub fn new(
        seed: u64,
        tag: DecisionCategory,
        ego: EgoStatus,
        agents: Vec<Agent>,
        lane: Lane,
        expert: Trajectory,
        grid: GridSpec,
    ) -> Self {
        let occupancy = (0..OCCUPANCY_STEPS)
            .map(|k| rasterize_agents(&grid, &agents, k as f64 * STEP_SECONDS))
            .collect();
        Scene {
            seed,
            tag,
            ego,
            agents,
            lane,
            expert,
            grid,
            occupancy,
        }
    }

    /// Occupancy snapshot index for a lattice time.
    pub fn lattice_index(t: f64) -> Result<usize, SimError> {
        let k = (t / STEP_SECONDS).round();
        if !(0.0..=(OCCUPANCY_STEPS - 1) as f64).contains(&k) || (k * STEP_SECONDS - t).abs() > 1e-9 {
            return Err(SimError::OffLattice(t));
        }
        Ok(k as usize)
    }

    pub fn occupancy_at(&self, t: f64) -> Result<&OccupancyGrid, SimError> {
        Ok(&self.occupancy[Self::lattice_index(t)?])
    }

    /// Occupancy at the time of waypoint `k`.
    pub fn occupancy_for_waypoint(&self, k: usize) -> &OccupancyGrid {
        &self.occupancy[k + 1]
    }

    /// Distance fields for each waypoint time (`None` where nothing is occupied).
    pub fn waypoint_distance_fields(&self) -> Vec<Option<DistanceField>> {
        (0..WAYPOINTS)
            .map(|k| DistanceField::from_occupancy(&self.grid, self.occupancy_for_waypoint(k)))
            .collect()
    }

    /// Checks the structural invariants a loaded scene must satisfy.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScene(m));
        if self.occupancy.len() != OCCUPANCY_STEPS {
            return bad(format!(
                "expected {OCCUPANCY_STEPS} occupancy grids, got {}",
                self.occupancy.len()
            ));
        }
        if self
            .occupancy
            .iter()
            .any(|g| g.rows != self.grid.rows || g.cols != self.grid.cols)
        {
            return bad("occupancy grid size does not match grid spec".into());
        }
        if !(self.ego.speed >= 0.0 && self.ego.speed.is_finite()) {
            return bad(format!("ego speed {} must be finite and non-negative", self.ego.speed));
        }
        if self.agents.iter().any(|a| a.half_extents.iter().any(|&h| h <= 0.0)) {
            return bad("agent half extents must be positive".into());
        }
        if !self.expert.is_finite() || self.expert.max_step() > MAX_SPEED * STEP_SECONDS + 1e-9 {
            return bad("expert waypoints non-finite or too far apart".into());
        }
        Ok(())
    }
}

/// Marks every cell whose interior overlaps an agent footprint at time `t`.
pub fn rasterize_agents(spec: &GridSpec, agents: &[Agent], t: f64) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(spec.rows, spec.cols);
    for a in agents {
        let [x, y] = a.position_at(t);
        let [hx, hy] = a.half_extents;
        if let Some(((r0, r1), (c0, c1))) = spec.cells_overlapping([x - hx, x + hx], [y - hy, y + hy]) {
            for r in r0..=r1 {
                for c in c0..=c1 {
                    grid.set(r, c, true);
                }
            }
        }
    }
    grid
}

/// Options for `generate_scene`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Number of agents, 0..=8. The first one is the scenario's key agent.
    pub agents: usize,
    /// Scenario to realize; `None` draws one uniformly.
    pub tag: Option<DecisionCategory>,
    /// Fixes the ego's initial speed instead of sampling it.
    pub ego_speed: Option<f64>,
    pub grid: GridSpec,
    pub thresholds: RuleThresholds,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            agents: 3,
            tag: None,
            ego_speed: None,
            grid: GridSpec::default(),
            thresholds: RuleThresholds::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.agents > MAX_AGENTS {
            return Err(SimError::Config(format!(
                "agent count {} exceeds {MAX_AGENTS}",
                self.agents
            )));
        }
        if let Some(v) = self.ego_speed {
            if !(0.0..=MAX_SPEED).contains(&v) {
                return Err(SimError::Config(format!("ego speed {v} outside [0, {MAX_SPEED}]")));
            }
        }
        if self.grid.rows < 2 || self.grid.cols < 2 || self.grid.cell_size.is_nan() || self.grid.cell_size <= 0.0 {
            return Err(SimError::Config(
                "grid needs at least 2×2 cells of positive size".into(),
            ));
        }
        self.thresholds.validate().map_err(SimError::Config)
    }
}

/// Ego maneuver realizing a scenario tag.
#[derive(Debug, Clone, PartialEq)]
struct Maneuver {
    speed: SpeedProfile,
    yaw: YawProfile,
}

fn sample_maneuver(tag: DecisionCategory, fixed_v0: Option<f64>, rng: &mut ChaCha8Rng) -> Maneuver {
    use DecisionCategory::*;
    let mut v0 = |lo: f64, hi: f64| fixed_v0.unwrap_or_else(|| rng.gen_range(lo..hi));
    match tag {
        Forward => Maneuver {
            speed: SpeedProfile::Constant { speed: v0(3.0, 10.0) },
            yaw: YawProfile::straight(),
        },
        Accelerate => {
            let v = v0(3.0, 8.0);
            Maneuver {
                speed: SpeedProfile::Linear {
                    v0: v,
                    accel: rng.gen_range(1.5..3.0),
                },
                yaw: YawProfile::straight(),
            }
        }
        Decelerate => {
            let v = v0(5.0, 10.0);
            Maneuver {
                speed: SpeedProfile::Linear {
                    v0: v,
                    accel: -rng.gen_range(1.0..1.5),
                },
                yaw: YawProfile::straight(),
            }
        }
        Stop => {
            let v = v0(2.0, 6.0);
            let t_stop = rng.gen_range(1.0..2.4);
            Maneuver {
                speed: SpeedProfile::Linear {
                    v0: v,
                    accel: -v / t_stop,
                },
                yaw: YawProfile::straight(),
            }
        }
        TurnLeft | TurnRight => {
            let sign = if tag == TurnLeft { 1.0 } else { -1.0 };
            let v = v0(4.0, 8.0);
            Maneuver {
                speed: SpeedProfile::Constant { speed: v },
                yaw: YawProfile::constant(sign * rng.gen_range(0.2..0.5), 3.0),
            }
        }
        LaneChangeLeft | LaneChangeRight => {
            let sign = if tag == LaneChangeLeft { 1.0 } else { -1.0 };
            let v = v0(4.0, 8.0);
            let w = rng.gen_range(0.25..0.4);
            let half = rng.gen_range(1.0..1.4);
            Maneuver {
                speed: SpeedProfile::Constant { speed: v },
                yaw: YawProfile {
                    segments: vec![(half, sign * w), (half, -sign * w)],
                },
            }
        }
    }
}

/// Route centreline: straight behind the ego, the expert path ahead of it,
/// then extended along the final heading.
fn route_lane(m: &Maneuver) -> Lane {
    let times: Vec<f64> = (1..=30).map(|i| i as f64 * 0.1).collect();
    let path = integrate(&m.speed, &m.yaw, 0.0, &times);
    let mut centerline = vec![[-32.0, 0.0], [0.0, 0.0]];
    for p in path {
        let last = centerline[centerline.len() - 1];
        if (p[0] - last[0]).hypot(p[1] - last[1]) > 1e-3 {
            centerline.push(p);
        }
    }
    let end = centerline[centerline.len() - 1];
    let h = m.yaw.heading_at(3.0);
    centerline.push([end[0] + 40.0 * h.cos(), end[1] + 40.0 * h.sin()]);
    Lane {
        centerline,
        width: LANE_WIDTH,
    }
}

fn key_agent(tag: DecisionCategory, m: &Maneuver, rng: &mut ChaCha8Rng) -> Agent {
    use DecisionCategory::*;
    let v0 = m.speed.initial_speed();
    let car = |x: f64, y: f64, vx: f64, role| Agent {
        position: [x, y],
        velocity: [vx, 0.0],
        half_extents: CAR_HALF,
        role,
    };
    match tag {
        Forward => car(rng.gen_range(9.0..13.0), 0.0, v0, AgentRole::Lead),
        Accelerate => car(-rng.gen_range(7.0..10.0), 0.0, v0, AgentRole::Follower),
        Decelerate => {
            let decel = match m.speed {
                SpeedProfile::Linear { accel, .. } => -accel,
                SpeedProfile::Constant { .. } => 0.0,
            };
            let v_lead = (v0 - 2.5 * decel).max(0.5);
            car(rng.gen_range(11.0..15.0), 0.0, v_lead, AgentRole::Lead)
        }
        Stop => {
            let stop_at = m.speed.distance_at(3.0);
            car(
                stop_at + CAR_HALF[0] + rng.gen_range(2.5..4.0),
                0.0,
                0.0,
                AgentRole::Parked,
            )
        }
        TurnLeft => car(
            rng.gen_range(4.0..10.0),
            -rng.gen_range(3.5..5.0),
            0.0,
            AgentRole::Parked,
        ),
        TurnRight => car(
            rng.gen_range(4.0..10.0),
            rng.gen_range(3.5..5.0),
            0.0,
            AgentRole::Parked,
        ),
        LaneChangeLeft | LaneChangeRight => car(rng.gen_range(9.0..13.0), 0.0, 0.4 * v0, AgentRole::Lead),
    }
}

fn background_agent(spec: &GridSpec, rng: &mut ChaCha8Rng) -> Agent {
    let (x0, x1) = spec.x_range();
    let (y0, y1) = spec.y_range();
    let x = rng.gen_range(x0 + 2.0..x1 - 2.0);
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let y_lim = if side > 0.0 { y1 } else { -y0 };
    let y = side * rng.gen_range(5.0..(y_lim - 1.0).max(5.5));
    let pedestrian = rng.gen_bool(0.25);
    if pedestrian {
        Agent {
            position: [x, y],
            velocity: [rng.gen_range(-1.5..1.5), 0.0],
            half_extents: [0.4, 0.4],
            role: AgentRole::Background,
        }
    } else {
        Agent {
            position: [x, y],
            velocity: [side * -rng.gen_range(0.0..8.0), 0.0],
            half_extents: CAR_HALF,
            role: AgentRole::Background,
        }
    }
}

/// True when no expert waypoint lies in, or within the clearance of, an
/// occupied cell at its own time.
pub fn expert_is_clear(scene: &Scene) -> bool {
    let fields = scene.waypoint_distance_fields();
    scene.expert.points().iter().enumerate().all(|(k, p)| {
        if scene.occupancy_for_waypoint(k).occupied_at(&scene.grid, p[0], p[1]) {
            return false;
        }
        match (&fields[k], fields[k].as_ref().and_then(|f| f.sample(p[0], p[1]))) {
            (Some(_), Some((d, _))) => d >= EXPERT_CLEARANCE,
            _ => true,
        }
    })
}

/// Generates a scene whose expert realizes the requested scenario.
/// Deterministic in `(seed, cfg)`.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = match cfg.tag {
        Some(t) => t,
        None => *DecisionCategory::ALL.choose(&mut rng).expect("non-empty"),
    };
    for _ in 0..MAX_ATTEMPTS {
        let m = sample_maneuver(tag, cfg.ego_speed, &mut rng);
        let ego = EgoStatus::new(m.speed.initial_speed());
        let expert = waypoints(&m.speed, &m.yaw, 0.0);
        if classify_trajectory(&expert, &ego, &cfg.thresholds) != tag || expert.max_step() > MAX_SPEED * STEP_SECONDS {
            continue;
        }
        let lane = route_lane(&m);
        let mut agents = Vec::with_capacity(cfg.agents);
        if cfg.agents > 0 {
            agents.push(key_agent(tag, &m, &mut rng));
        }
        let mut scene = Scene::new(seed, tag, ego, agents.clone(), lane.clone(), expert, cfg.grid);
        if !expert_is_clear(&scene) {
            continue;
        }
        let mut ok = true;
        while agents.len() < cfg.agents && ok {
            ok = false;
            for _ in 0..20 {
                let mut trial = agents.clone();
                trial.push(background_agent(&cfg.grid, &mut rng));
                let candidate = Scene::new(seed, tag, ego, trial.clone(), lane.clone(), expert, cfg.grid);
                if expert_is_clear(&candidate) {
                    agents = trial;
                    scene = candidate;
                    ok = true;
                    break;
                }
            }
        }
        if ok {
            return Ok(scene);
        }
    }
    Err(SimError::Infeasible {
        tag,
        attempts: MAX_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_without_agents_is_constant_velocity() {
        let cfg = SceneConfig {
            agents: 0,
            tag: Some(DecisionCategory::Forward),
            ego_speed: Some(5.0),
            ..SceneConfig::default()
        };
        let s = generate_scene(11, &cfg).unwrap();
        let xs: Vec<[f64; 2]> = s.expert.0.to_vec();
        assert_eq!(
            xs,
            vec![
                [2.5, 0.0],
                [5.0, 0.0],
                [7.5, 0.0],
                [10.0, 0.0],
                [12.5, 0.0],
                [15.0, 0.0]
            ]
        );
        assert!(s.occupancy.iter().all(OccupancyGrid::is_empty));
        assert_eq!(generate_scene(11, &cfg).unwrap(), s);
    }

    #[test]
    fn every_tag_is_realizable() {
        for (i, tag) in DecisionCategory::ALL.into_iter().enumerate() {
            for seed in 0..25u64 {
                let cfg = SceneConfig {
                    agents: 4,
                    tag: Some(tag),
                    ..SceneConfig::default()
                };
                let s = generate_scene(seed * 31 + i as u64, &cfg).unwrap_or_else(|e| panic!("{tag} seed {seed}: {e}"));
                assert_eq!(classify_trajectory(&s.expert, &s.ego, &cfg.thresholds), tag);
                assert_eq!(s.agents.len(), 4);
                assert!(expert_is_clear(&s));
                s.validate().unwrap();
            }
        }
    }

    #[test]
    fn lattice_checks() {
        assert_eq!(Scene::lattice_index(1.5).unwrap(), 3);
        assert!(matches!(Scene::lattice_index(0.7), Err(SimError::OffLattice(_))));
        assert!(Scene::lattice_index(3.5).is_err());
        let cfg = SceneConfig {
            agents: 9,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(0, &cfg), Err(SimError::Config(_))));
    }

    #[test]
    fn moving_agent_occupancy_advances() {
        let a = Agent {
            position: [3.0, 0.0],
            velocity: [2.0, 0.0],
            half_extents: [0.5, 0.5],
            role: AgentRole::Background,
        };
        let spec = GridSpec::default();
        let g0 = rasterize_agents(&spec, &[a], 0.0);
        let g1 = rasterize_agents(&spec, &[a], 1.0);
        let cells = |g: &OccupancyGrid| -> Vec<(usize, usize)> {
            (0..32)
                .flat_map(|r| (0..32).map(move |c| (r, c)))
                .filter(|&(r, c)| g.get(r, c))
                .collect()
        };
        assert_eq!(cells(&g0), vec![(18, 15), (18, 16), (19, 15), (19, 16)]);
        assert_eq!(cells(&g1), vec![(20, 15), (20, 16), (21, 15), (21, 16)]);
    }
}
