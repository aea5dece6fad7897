//! Privileged scripted demonstrator.
//!
//! A small state machine over true poses: approach the target's front face
//! along a planned corridor, back off along the contact reaction whenever a
//! warning fraction reaches the retreat trigger, and after suction engages
//! carry the target straight out to the drop region.
//!
//! The corridor comes from one of several [`Strategy`] variants. Before an
//! episode the expert can rehearse them on copies of the world and commit to
//! the first whose rehearsal succeeds.

use crate::data::EpisodeLog;
use crate::geom::{wrap_angle, ActionCommand, Twist2D, Vec2};
use crate::rollout::{derive_seed, rollout, RolloutOptions, RolloutResult};
use crate::safety::{HomeRegion, MonitorState, Verdict};
use crate::scene::{generate, SceneSchematic, ShelfSpec};
use crate::sim::SimParams;
use crate::sim::{Body, ProbeFace, WorldState};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertConfig {
    /// Proportional gain toward the current waypoint, 1/s.
    pub attract_gain: f64,
    /// Warning fraction at which the expert retreats.
    pub retreat_trigger: f64,
    /// Seconds spent retreating after each trigger.
    pub retreat_duration: f64,
    pub retreat_speed: f64,
    pub waypoint_tolerance: f64,
    /// Cruise speed while approaching, m/s.
    pub approach_speed: f64,
    pub extract_speed: f64,
    pub heading_gain: f64,
    /// Force at which the approach speed has halved, N.
    pub soft_force: f64,
    /// Seconds without progress toward the current waypoint before replanning.
    pub stuck_time: f64,
    pub progress_step: f64,
    /// Clearance added on each side of the probe when planning a corridor.
    pub corridor_margin: f64,
    /// How far in front of the target face an obstacle counts as blocking it.
    pub blocker_depth: f64,
    /// Sweep height below the blocker's back edge.
    pub sweep_inset: f64,
    /// How far inside the face end the final tool point sits.
    pub face_inset: f64,
    /// Final distance from the target face.
    pub standoff: f64,
    /// Corridor cost per meter of sideways sweep.
    pub sweep_cost: f64,
    /// Below this tool-to-opening distance the probe translates instead of pivoting.
    pub pivot_min_lever: f64,
    /// Heading deviation tolerated before it is actively corrected, rad.
    pub max_tilt: f64,
    /// Strategies rehearsed before committing; 0 runs the first one blind.
    pub rehearsals: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            attract_gain: 2.0,
            retreat_trigger: 0.8,
            retreat_duration: 0.5,
            retreat_speed: 0.05,
            waypoint_tolerance: 0.004,
            approach_speed: 0.03,
            extract_speed: 0.06,
            heading_gain: 2.0,
            soft_force: 8.0,
            stuck_time: 6.0,
            progress_step: 0.005,
            corridor_margin: 0.003,
            blocker_depth: 0.09,
            sweep_inset: 0.008,
            face_inset: 0.004,
            standoff: 0.002,
            sweep_cost: 0.5,
            pivot_min_lever: 0.05,
            max_tilt: 0.35,
            rehearsals: STRATEGIES.len(),
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            self.attract_gain,
            self.retreat_duration,
            self.retreat_speed,
            self.waypoint_tolerance,
            self.approach_speed,
            self.extract_speed,
            self.soft_force,
            self.stuck_time,
        ];
        if !(self.retreat_trigger > 0.0 && self.retreat_trigger < 1.0) {
            return Err(Error::InvalidConfig("retreat_trigger must lie in (0, 1)".into()));
        }
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("expert gains must be positive".into()));
        }
        Ok(())
    }
}

/// How lateral tool-point motion is produced inside the shelf.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pivot {
    /// Pure translation.
    Translate,
    /// Rotation about the point where the probe crosses the shelf opening.
    Opening,
    /// Like `Opening`, but about the nearest loaded shank contact on the side
    /// the probe moves toward when that is closer.
    Contact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Straight corridors near the target face, ranked by how much obstacle
    /// footprint they cross. A stuck probe moves on to the next corridor.
    Lane { first_rank: usize, pivot: Pivot },
    /// Pass beside the obstacle covering the target face, sweep it aside, then
    /// approach the near end of the face. `side` is -1 (left), +1 (right), or
    /// 0 to pick the cheaper side. A stuck probe tries the other side.
    Sweep { side: f64, pivot: Pivot },
}

/// Rehearsal order.
pub const STRATEGIES: [Strategy; 13] = [
    Strategy::Lane { first_rank: 1, pivot: Pivot::Translate },
    Strategy::Lane { first_rank: 2, pivot: Pivot::Translate },
    Strategy::Lane { first_rank: 0, pivot: Pivot::Translate },
    Strategy::Lane { first_rank: 0, pivot: Pivot::Opening },
    Strategy::Sweep { side: 0.0, pivot: Pivot::Contact },
    Strategy::Sweep { side: 0.0, pivot: Pivot::Opening },
    Strategy::Sweep { side: -1.0, pivot: Pivot::Opening },
    Strategy::Sweep { side: 1.0, pivot: Pivot::Opening },
    Strategy::Sweep { side: 0.0, pivot: Pivot::Translate },
    Strategy::Sweep { side: 1.0, pivot: Pivot::Translate },
    Strategy::Lane { first_rank: 4, pivot: Pivot::Translate },
    Strategy::Lane { first_rank: 1, pivot: Pivot::Opening },
    Strategy::Lane { first_rank: 2, pivot: Pivot::Opening },
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpertMode {
    Approach,
    Retreat { until: f64, direction: Vec2 },
    Extract,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub config: ExpertConfig,
    pub strategy: Strategy,
    pub mode: ExpertMode,
    pub home: HomeRegion,
    /// Remaining tool-point waypoints of the approach.
    plan: Vec<Vec2>,
    /// Which side of the blocking obstacle the corridor passes: +1 right, -1 left.
    side: f64,
    /// Lane rank currently followed.
    rank: usize,
    best_dist: f64,
    last_progress: f64,
}

/// Outward normal and center of the target face that looks toward the opening.
pub fn front_face(target: &Body) -> (Vec2, Vec2) {
    let (n, d, _) = front_face_extent(target);
    (n, target.pose.position() + n * d)
}

/// Outward normal, center distance and half-length of the front face.
fn front_face_extent(target: &Body) -> (Vec2, f64, f64) {
    let h = target.half_extents;
    let faces = [
        (Vec2::new(1.0, 0.0), h.x, h.y),
        (Vec2::new(-1.0, 0.0), h.x, h.y),
        (Vec2::new(0.0, 1.0), h.y, h.x),
        (Vec2::new(0.0, -1.0), h.y, h.x),
    ];
    faces
        .iter()
        .map(|&(n, d, half)| (n.rotate(target.pose.theta), d, half))
        .min_by(|a, b| a.0.y.total_cmp(&b.0.y))
        .expect("four faces")
}

/// Width of obstacle footprint inside the vertical strip `[x - half, x + half]`
/// between `y0` and `y1`.
fn strip_blockage(world: &WorldState, x: f64, half: f64, y0: f64, y1: f64) -> f64 {
    world
        .bodies
        .iter()
        .filter(|b| !b.fallen && !b.is_target)
        .map(|b| b.obb().aabb())
        .filter(|a| a.max.y > y0 && a.min.y < y1)
        .map(|a| (a.max.x.min(x + half) - a.min.x.max(x - half)).max(0.0))
        .sum()
}

/// Corridor x positions near the target face, least blocked first.
pub fn rank_lanes(world: &WorldState, target: &Body) -> Vec<f64> {
    let (_, face) = front_face(target);
    let pitch = world.spec.pitch().x;
    let half = world.probe.width / 2.0;
    let mut lanes: Vec<(f64, f64)> = [-0.5, -0.25, 0.0, 0.25, 0.5]
        .iter()
        .map(|k| face.x + k * pitch)
        .filter(|x| *x > 2.0 * half && *x < world.spec.width - 2.0 * half)
        .map(|x| (strip_blockage(world, x, half, 0.0, face.y) + 0.2 * (x - face.x).abs(), x))
        .collect();
    lanes.sort_by(|a, b| a.0.total_cmp(&b.0));
    lanes.into_iter().map(|(_, x)| x).collect()
}

impl Expert {
    pub fn new(config: ExpertConfig) -> Self {
        Self::with_strategy(config, STRATEGIES[0])
    }

    pub fn with_strategy(config: ExpertConfig, strategy: Strategy) -> Self {
        let (side, rank) = match strategy {
            Strategy::Lane { first_rank, .. } => (0.0, first_rank),
            Strategy::Sweep { side, .. } => (side, 0),
        };
        Self {
            config,
            strategy,
            mode: ExpertMode::Approach,
            home: HomeRegion::default(),
            plan: Vec::new(),
            side,
            rank,
            best_dist: f64::INFINITY,
            last_progress: 0.0,
        }
    }

    /// Rehearses up to `config.rehearsals` strategies on copies of `world` and
    /// returns an expert committed to the first that succeeds, together with
    /// that rehearsal. Without a success the first strategy is returned with
    /// its rehearsal, if it ran to a verdict.
    pub fn rehearse(
        config: ExpertConfig,
        world: &WorldState,
        opts: &RolloutOptions,
    ) -> Result<(Expert, Option<RolloutResult>), Error> {
        let quiet = RolloutOptions {
            record_frames: false,
            ..*opts
        };
        let mut first = None;
        for (k, strategy) in STRATEGIES.iter().take(config.rehearsals).enumerate() {
            let mut trial = world.clone();
            let mut expert = Expert::with_strategy(config, *strategy);
            // A rehearsal that destabilizes the solver counts as a failed plan.
            let Ok(result) = rollout(&mut trial, &mut expert, &quiet) else {
                continue;
            };
            if result.outcome.verdict == Verdict::Success {
                return Ok((Expert::with_strategy(config, *strategy), Some(result)));
            }
            if k == 0 {
                first = Some(result);
            }
        }
        Ok((Expert::new(config), first))
    }

    fn pivot(&self) -> Pivot {
        match self.strategy {
            Strategy::Lane { pivot, .. } | Strategy::Sweep { pivot, .. } => pivot,
        }
    }

    fn make_plan(&mut self, world: &WorldState, target: &Body) {
        match self.strategy {
            Strategy::Lane { .. } => self.make_lane_plan(world, target),
            Strategy::Sweep { .. } => self.make_sweep_plan(world, target),
        }
        self.best_dist = f64::INFINITY;
        self.last_progress = world.time;
    }

    fn make_lane_plan(&mut self, world: &WorldState, target: &Body) {
        let (n, face) = front_face(target);
        let lanes = rank_lanes(world, target);
        let lane = if lanes.is_empty() {
            face.x
        } else {
            lanes[self.rank % lanes.len()]
        };
        let mut plan = vec![
            Vec2::new(lane, -0.01),
            Vec2::new(lane, face.y - 0.03),
            face + n * self.config.standoff,
        ];
        if world.probe.pose.y > 0.0 {
            plan.remove(0);
        }
        self.plan = plan;
    }

    /// Waypoints to the target face. When an obstacle covers the target face,
    /// the corridor runs beside it and the probe sweeps it aside before the
    /// final approach.
    fn make_sweep_plan(&mut self, world: &WorldState, target: &Body) {
        let cfg = self.config;
        let (n, d, half_face) = front_face_extent(target);
        let face = target.pose.position() + n * d;
        let corridor = world.probe.width / 2.0 + cfg.corridor_margin;
        let tip = world.probe.pose.position();
        let floor_y = tip.y.min(0.0);

        let blocker = |x: f64| {
            world
                .bodies
                .iter()
                .filter(|b| !b.fallen && !b.is_target)
                .map(|b| (b, b.obb().aabb()))
                .filter(|(_, a)| {
                    a.max.x > x - corridor
                        && a.min.x < x + corridor
                        && a.max.y > face.y - cfg.blocker_depth
                        && a.min.y < face.y
                })
                .max_by(|a, b| a.1.max.y.total_cmp(&b.1.max.y))
                .map(|(_, a)| a)
        };

        let mut best: Option<(f64, f64, Vec<Vec2>)> = None;
        for side in [-1.0, 1.0] {
            let final_x = face.x + side * (half_face - cfg.face_inset).max(0.0);
            let final_pt = Vec2::new(final_x, face.y) + n * cfg.standoff;
            let (lane_x, mut plan) = match blocker(final_x) {
                None => (final_x, vec![final_pt]),
                Some(a) => {
                    let lane_x = if side > 0.0 {
                        a.max.x + corridor
                    } else {
                        a.min.x - corridor
                    };
                    let sweep_y = (a.max.y - cfg.sweep_inset).min(face.y - corridor);
                    (
                        lane_x,
                        vec![
                            Vec2::new(lane_x, sweep_y),
                            Vec2::new(final_x, sweep_y),
                            final_pt,
                        ],
                    )
                }
            };
            if lane_x < corridor || lane_x > world.spec.width - corridor {
                continue;
            }
            plan.insert(0, Vec2::new(lane_x, floor_y.min(-0.01)));
            let cost = strip_blockage(world, lane_x, corridor, 0.0, plan[1].y)
                + cfg.sweep_cost * (lane_x - final_x).abs();
            // A chosen side wins whenever it is feasible.
            let cost = if side == self.side { cost - 1e3 } else { cost };
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, side, plan));
            }
        }
        let (_, side, plan) = best.unwrap_or((0.0, 1.0, vec![face + n * cfg.standoff]));
        // Skip the entry waypoint once inside the shelf.
        let plan = if tip.y > 0.0 && plan.len() > 1 { plan[1..].to_vec() } else { plan };
        self.side = side;
        self.plan = plan;
    }

    /// Remaining approach waypoints.
    pub fn plan(&self) -> &[Vec2] {
        &self.plan
    }

    /// One control decision from privileged state and the monitor's warnings.
    pub fn act(&mut self, world: &WorldState, monitor: &MonitorState) -> ActionCommand {
        let cfg = self.config;
        let probe = &world.probe;
        let tip = probe.pose.position();
        let t = world.time;

        if world.is_attached() && !matches!(self.mode, ExpertMode::Extract) {
            self.mode = ExpertMode::Extract;
        }
        let warn = monitor.warn_net.max(monitor.warn_peak);
        if warn >= cfg.retreat_trigger {
            let direction = retreat_direction(world, monitor);
            if matches!(self.mode, ExpertMode::Extract) {
                // Keep the target; comply sideways and keep backing out.
                let v = (direction - probe.pose.heading()).normalized() * cfg.retreat_speed;
                return self.command(world, v);
            }
            self.mode = ExpertMode::Retreat {
                until: t + cfg.retreat_duration,
                direction,
            };
        }

        match self.mode {
            ExpertMode::Retreat { until, direction } => {
                if t + 1e-9 >= until {
                    self.mode = ExpertMode::Approach;
                    return self.act(world, monitor);
                }
                self.command(world, direction * cfg.retreat_speed)
            }
            ExpertMode::Extract => {
                let goal = Vec2::new(
                    (self.home.min.x + self.home.max.x) / 2.0,
                    (self.home.min.y + self.home.max.y) / 2.0,
                );
                // Back straight out of the shelf, then slide to the drop region.
                let v = if tip.y > 0.0 {
                    Vec2::new(0.0, -1.0)
                } else {
                    (goal - tip).normalized()
                };
                let speed = cfg.extract_speed * self.force_scale(monitor);
                self.command(world, v * speed)
            }
            ExpertMode::Approach => {
                let Some(target) = world.target() else {
                    return ActionCommand::hold();
                };
                if self.plan.is_empty() {
                    self.make_plan(world, target);
                }
                while self.plan.len() > 1 && (self.plan[0] - tip).norm() < cfg.waypoint_tolerance {
                    self.plan.remove(0);
                    self.best_dist = f64::INFINITY;
                    self.last_progress = t;
                }
                let wp = self.plan[0];
                let dist = (wp - tip).norm();
                if dist < self.best_dist - cfg.progress_step {
                    self.best_dist = dist;
                    self.last_progress = t;
                } else if t - self.last_progress > cfg.stuck_time {
                    match self.strategy {
                        Strategy::Lane { .. } => self.rank += 1,
                        Strategy::Sweep { .. } => self.side = -self.side,
                    }
                    self.make_plan(world, target);
                    return self.command(world, Vec2::new(0.0, -cfg.retreat_speed));
                }
                let delta = wp - tip;
                let v = if tip.y < 0.0 && (delta.x).abs() > cfg.waypoint_tolerance {
                    // Line up outside the shelf before entering.
                    Vec2::new(delta.x, 0.0)
                } else {
                    delta
                };
                let dist = v.norm();
                let speed = (cfg.attract_gain * dist).min(cfg.approach_speed) * self.force_scale(monitor);
                let v = if dist > 1e-9 { v * (speed / dist) } else { Vec2::ZERO };
                self.command(world, v)
            }
        }
    }

    fn force_scale(&self, monitor: &MonitorState) -> f64 {
        let f = monitor.f_net.max(monitor.f_peak * monitor.config.net_force_threshold / monitor.config.peak_force_threshold);
        1.0 / (1.0 + f / self.config.soft_force)
    }

    /// World-frame tool-point velocity to a normalized tool twist, with lateral
    /// motion produced as the strategy's [`Pivot`] prescribes.
    fn command(&self, world: &WorldState, v_world: Vec2) -> ActionCommand {
        let cfg = self.config;
        let pose = world.probe.pose;
        let v = v_world.rotate(-pose.theta);
        let heading_err = wrap_angle(std::f64::consts::FRAC_PI_2 - pose.theta);
        // Distance from the tool point back to the opening along the probe axis.
        let mut lever = if pose.heading().y > 0.1 {
            pose.y / pose.heading().y
        } else {
            0.0
        };
        let face = if v.y > 0.0 { ProbeFace::Left } else { ProbeFace::Right };
        let contact_lever = world
            .contacts
            .iter()
            .filter(|c| c.probe_face == Some(face) && c.normal_force > 0.0)
            .map(|c| c.probe_offset)
            .filter(|s| *s > cfg.pivot_min_lever)
            .min_by(f64::total_cmp);
        if let (Pivot::Contact, Some(s)) = (self.pivot(), contact_lever) {
            lever = lever.min(s);
        }
        let pivoting = self.pivot() != Pivot::Translate && lever > cfg.pivot_min_lever;
        let mut omega = if pivoting { -v.y / lever } else { 0.0 };
        if heading_err.abs() > cfg.max_tilt || !pivoting {
            omega += cfg.heading_gain * heading_err;
        }
        let raw = Twist2D::new(v.x, v.y, omega);
        let mut n = world.params.limits.normalize(raw);
        let norm = (n.vx * n.vx + n.vy * n.vy + n.omega * n.omega).sqrt();
        if norm > 1.0 {
            n = Twist2D::new(n.vx / norm, n.vy / norm, n.omega / norm);
        }
        ActionCommand::new(n, false)
    }
}

/// Successful demonstrations and the number of scenes tried to get them.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub episodes: Vec<EpisodeLog>,
    pub attempts: usize,
}

/// Records one expert episode with frames on an instantiated scene.
pub fn record_demo(
    world: &WorldState,
    schematic: &SceneSchematic,
    scene_seed: u64,
    config: ExpertConfig,
) -> Result<EpisodeLog, Error> {
    let opts = RolloutOptions {
        sensor_seed: derive_seed(scene_seed, 1, 0),
        ..RolloutOptions::default()
    };
    let (mut expert, _) = Expert::rehearse(config, world, &opts)?;
    let mut run = world.clone();
    let result = rollout(&mut run, &mut expert, &RolloutOptions { record_frames: true, ..opts })?;
    Ok(EpisodeLog::from_rollout(scene_seed, schematic.clone(), &result))
}

/// Scene seed of attempt `attempt` under `seed`.
pub fn demo_scene_seed(seed: u64, attempt: usize) -> u64 {
    derive_seed(seed, 0x6465_6d6f, attempt as u64)
}

/// Runs the expert on generated scenes until `n` episodes succeed. A failed
/// scene is replaced by a freshly generated one from the next substream.
pub fn generate_demos(n: usize, seed: u64, config: ExpertConfig) -> Result<DemoSet, Error> {
    config.validate()?;
    let spec = ShelfSpec::default();
    let mut episodes = Vec::with_capacity(n);
    let mut attempts = 0;
    while episodes.len() < n {
        if attempts >= 5 * n {
            return Err(Error::ExpertInsufficiency {
                wanted: n,
                attempts,
            });
        }
        let scene_seed = demo_scene_seed(seed, attempts);
        attempts += 1;
        let schematic = generate(scene_seed, &spec)?;
        let world = WorldState::from_schematic(&schematic, spec, SimParams::default())?;
        match record_demo(&world, &schematic, scene_seed, config) {
            Ok(log) if log.outcome.verdict == Verdict::Success => episodes.push(log),
            Ok(_) | Err(Error::NumericalDivergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(DemoSet { episodes, attempts })
}

/// Unit world direction that relieves the strongest warning: along the net
/// reaction when it dominates, otherwise away from the loaded probe side.
pub fn retreat_direction(world: &WorldState, monitor: &MonitorState) -> Vec2 {
    let pose = world.probe.pose;
    let back = -pose.heading();
    let reaction = crate::sim::net_probe_reaction(&world.contacts, pose.position()).force();
    if monitor.warn_net >= monitor.warn_peak && reaction.norm() > 1e-6 {
        return reaction.normalized();
    }
    // Left taxels carry contacts on the probe's left face; move right.
    let left = pose.heading().perp();
    let lateral = if monitor.warn_peak_left >= monitor.warn_peak_right {
        -left
    } else {
        left
    };
    (lateral + back * 0.5).normalized()
}
