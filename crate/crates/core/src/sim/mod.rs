//! Fixed-step planar quasi-static physics.
//!
//! Free bodies are first-order: their velocity is the net applied force over a
//! viscous drag, which makes pushed objects slide and jam instead of coast.
//! Contacts are penalty springs with damping and regularized Coulomb friction.
//! The probe is kinematic; it stalls and then yields when the reaction against
//! it exceeds the stall limits. Damping and friction are integrated implicitly in each body's
//! own velocity and explicitly (previous substep) in its neighbors'; bodies in
//! deep contact are under-relaxed against their previous velocity.

pub mod collide;

use crate::geom::{ActionCommand, Pose2D, Twist2D, TwistLimits, Vec2, Wrench2D};
use crate::scene::{self, ObjectClass, SceneSchematic, ShelfSpec};
use crate::Error;
use collide::{collide, Aabb, Obb};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub dt_control: f64,
    pub substeps: usize,
    /// Penalty stiffness, N/m per manifold point.
    pub contact_stiffness: f64,
    /// Penalty damping on penetration rate, N*s/m per manifold point.
    pub contact_damping: f64,
    pub friction: f64,
    /// Viscosity of the sticking branch of the friction law, N*s/m.
    pub stick_damping: f64,
    /// Weight of the fresh per-body solve against the previous substep's
    /// velocity, for bodies with a contact deeper than `relaxation_depth`.
    pub velocity_relaxation: f64,
    pub relaxation_depth: f64,
    pub linear_drag: f64,
    pub angular_drag: f64,
    pub stall_force: f64,
    pub stall_torque: f64,
    /// Admittance of the stalled probe: excess reaction over this gives the
    /// back-off speed, N*s/m and N*m*s/rad.
    pub stall_yield: f64,
    pub stall_yield_angular: f64,
    pub max_body_speed: f64,
    pub limits: TwistLimits,
    pub probe_length: f64,
    pub probe_width: f64,
    pub suction_range: f64,
    pub suction_max_angle: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt_control: 0.1,
            substeps: 100,
            contact_stiffness: 60_000.0,
            contact_damping: 50.0,
            friction: 0.4,
            stick_damping: 200.0,
            velocity_relaxation: 0.5,
            relaxation_depth: 0.0012,
            linear_drag: 40.0,
            angular_drag: 0.05,
            stall_force: 60.0,
            stall_torque: 3.0,
            stall_yield: 600.0,
            stall_yield_angular: 24.0,
            max_body_speed: 5.0,
            limits: TwistLimits::default(),
            probe_length: 0.30,
            probe_width: 0.03,
            suction_range: 0.01,
            suction_max_angle: 30f64.to_radians(),
        }
    }
}

impl SimParams {
    pub fn dt(&self) -> f64 {
        self.dt_control / self.substeps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub id: usize,
    pub pose: Pose2D,
    pub half_extents: Vec2,
    pub mass: f64,
    pub class: ObjectClass,
    pub is_target: bool,
    /// World-frame velocity over the last substep.
    pub velocity: Twist2D,
    /// Pushed past the open front edge; no longer simulated or rendered.
    pub fallen: bool,
}

impl Body {
    pub fn new(id: usize, pose: Pose2D, class: ObjectClass) -> Self {
        Self {
            id,
            pose,
            half_extents: class.footprint() * 0.5,
            mass: class.mass(),
            class,
            is_target: class.is_target(),
            velocity: Twist2D::ZERO,
            fallen: false,
        }
    }

    pub fn obb(&self) -> Obb {
        Obb::from_pose(&self.pose, self.half_extents)
    }
}

/// Kinematic probe. `pose` is the tool point at the suction tip, heading along the probe.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub pose: Pose2D,
    pub length: f64,
    pub width: f64,
    pub attached_target: Option<usize>,
    /// Pose of the attached target in the tool frame.
    pub attach_offset: Pose2D,
    /// World-frame velocity applied over the last substep.
    pub velocity: Twist2D,
}

impl Probe {
    pub fn new(pose: Pose2D, params: &SimParams) -> Self {
        Self {
            pose,
            length: params.probe_length,
            width: params.probe_width,
            attached_target: None,
            attach_offset: Pose2D::default(),
            velocity: Twist2D::ZERO,
        }
    }

    /// Starting pose: centered in front of the opening, pointing into the shelf.
    pub fn home_pose(spec: &ShelfSpec) -> Pose2D {
        Pose2D::new(spec.width / 2.0, -0.03, std::f64::consts::FRAC_PI_2)
    }

    pub fn obb(&self) -> Obb {
        let center = self.pose.transform_point(Vec2::new(-self.length / 2.0, 0.0));
        Obb::new(
            center,
            Vec2::new(self.length / 2.0, self.width / 2.0),
            self.pose.theta,
        )
    }

    /// Velocity of a point rigidly attached to the probe.
    pub fn point_velocity(&self, p: Vec2) -> Vec2 {
        let r = p - self.pose.position();
        Vec2::new(self.velocity.vx, self.velocity.vy) + r.perp() * self.velocity.omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entity {
    Probe,
    Body(usize),
    Wall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbeFace {
    Left,
    Right,
    Tip,
    Back,
}

/// One manifold point. `normal` points from the first entity toward the
/// second; the first entity exerts `normal_force * normal + tangent_force *
/// normal.perp()` on the second. Contacts involving the probe or its attached
/// target always list that member first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub body_pair: (Entity, Entity),
    pub point: Vec2,
    pub normal: Vec2,
    pub depth: f64,
    pub normal_force: f64,
    pub tangent_force: f64,
    pub probe_face: Option<ProbeFace>,
    /// Distance from the tip along the probe, for probe-face contacts.
    pub probe_offset: f64,
    /// True when the first entity is part of the probe assembly.
    pub on_probe: bool,
}

impl Contact {
    /// Force the first entity applies to the second, world frame.
    pub fn force_on_second(&self) -> Vec2 {
        self.normal * self.normal_force + self.normal.perp() * self.tangent_force
    }
}

/// Net reaction on the probe assembly (world force, torque about `tool_point`).
pub fn net_probe_reaction(contacts: &[Contact], tool_point: Vec2) -> Wrench2D {
    let mut f = Vec2::ZERO;
    let mut tau = 0.0;
    for c in contacts.iter().filter(|c| c.on_probe) {
        let r = -c.force_on_second();
        f += r;
        tau += (c.point - tool_point).cross(r);
    }
    Wrench2D::new(f.x, f.y, tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub spec: ShelfSpec,
    pub params: SimParams,
    pub bodies: Vec<Body>,
    pub walls: Vec<Obb>,
    pub probe: Probe,
    pub time: f64,
    pub tick: u64,
    /// Set once suction has engaged the target at least once.
    pub target_acquired: bool,
    /// Contacts of the last substep.
    pub contacts: Vec<Contact>,
}

struct PairContact {
    a: Entity,
    b: Entity,
    normal: Vec2,
    point: Vec2,
    depth: f64,
}

impl WorldState {
    pub fn new(bodies: Vec<Body>, spec: ShelfSpec, params: SimParams) -> Self {
        let probe = Probe::new(Probe::home_pose(&spec), &params);
        Self {
            walls: scene::walls(&spec),
            spec,
            params,
            bodies,
            probe,
            time: 0.0,
            tick: 0,
            target_acquired: false,
            contacts: Vec::new(),
        }
    }

    pub fn from_schematic(
        schematic: &SceneSchematic,
        spec: ShelfSpec,
        params: SimParams,
    ) -> Result<Self, Error> {
        let bodies = scene::instantiate(schematic, &spec, &scene::InstantiateOptions::default())?;
        Ok(Self::new(bodies, spec, params))
    }

    pub fn target(&self) -> Option<&Body> {
        self.bodies.iter().find(|b| b.is_target)
    }

    pub fn is_attached(&self) -> bool {
        self.probe.attached_target.is_some()
    }

    fn is_probe_assembly(&self, e: Entity) -> bool {
        match e {
            Entity::Probe => true,
            Entity::Body(i) => self.probe.attached_target == Some(i),
            Entity::Wall(_) => false,
        }
    }

    fn is_free(&self, i: usize) -> bool {
        !self.bodies[i].fallen && self.probe.attached_target != Some(i)
    }

    fn point_velocity(&self, e: Entity, p: Vec2) -> Vec2 {
        match e {
            Entity::Wall(_) => Vec2::ZERO,
            _ if self.is_probe_assembly(e) => self.probe.point_velocity(p),
            Entity::Body(i) => {
                let b = &self.bodies[i];
                let r = p - b.pose.position();
                Vec2::new(b.velocity.vx, b.velocity.vy) + r.perp() * b.velocity.omega
            }
            Entity::Probe => unreachable!(),
        }
    }

    fn detect(&self) -> Vec<PairContact> {
        let mut shapes: Vec<(Entity, Obb, Aabb)> = Vec::with_capacity(self.bodies.len() + 4);
        let probe = self.probe.obb();
        shapes.push((Entity::Probe, probe, probe.aabb()));
        for b in self.bodies.iter().filter(|b| !b.fallen) {
            let o = b.obb();
            shapes.push((Entity::Body(b.id), o, o.aabb()));
        }
        for (k, w) in self.walls.iter().enumerate() {
            shapes.push((Entity::Wall(k), *w, w.aabb()));
        }
        let assembly: Vec<bool> = shapes.iter().map(|s| self.is_probe_assembly(s.0)).collect();
        let wall: Vec<bool> = shapes.iter().map(|s| matches!(s.0, Entity::Wall(_))).collect();

        // Sweep along x for overlapping bounds, then restore list order.
        let mut order: Vec<usize> = (0..shapes.len()).collect();
        order.sort_unstable_by(|&i, &j| shapes[i].2.min.x.total_cmp(&shapes[j].2.min.x));
        let mut pairs = Vec::new();
        for (a, &i) in order.iter().enumerate() {
            for &j in &order[a + 1..] {
                if shapes[j].2.min.x > shapes[i].2.max.x {
                    break;
                }
                if (assembly[i] && assembly[j]) || (wall[i] && wall[j]) || !shapes[i].2.overlaps(&shapes[j].2, 0.0) {
                    continue;
                }
                pairs.push((i.min(j), i.max(j)));
            }
        }
        pairs.sort_unstable();

        let mut out = Vec::new();
        for (i, j) in pairs {
            let (ea, oa, _) = &shapes[i];
            let (eb, ob, _) = &shapes[j];
            // Probe-assembly member first; otherwise keep list order.
            let (ea, oa, eb, ob) = if assembly[j] { (eb, ob, ea, oa) } else { (ea, oa, eb, ob) };
            if let Some(m) = collide(oa, ob) {
                for p in m.points {
                    out.push(PairContact {
                        a: *ea,
                        b: *eb,
                        normal: m.normal,
                        point: p.point,
                        depth: p.depth,
                    });
                }
            }
        }
        out
    }

    /// Implicit velocity solve for one free body. `pc` lists (contact index, sign)
    /// where sign = +1 if the body is the second entity.
    fn solve_body(
        &self,
        i: usize,
        pcs: &[PairContact],
        mine: &[(usize, f64)],
        mode: &mut Vec<ContactMode>,
    ) -> Twist2D {
        let p = &self.params;
        let body = &self.bodies[i];
        let c = body.pose.position();
        let k = p.contact_stiffness;
        // Penetration is taken at the end of the substep, which adds k*dt to
        // the normal damping.
        let cn = p.contact_damping + k * p.dt();
        let eta = p.stick_damping;
        let mu = p.friction;

        // Pass 0 classifies contacts; pass 1 re-solves with separating contacts
        // dropped and sliding contacts given their Coulomb force explicitly.
        mode.clear();
        mode.resize(mine.len(), ContactMode::Stick);
        let mut u = Twist2D::ZERO;
        for pass in 0..2 {
            let mut a = [[0.0; 3]; 3];
            a[0][0] = p.linear_drag;
            a[1][1] = p.linear_drag;
            a[2][2] = p.angular_drag;
            let mut rhs = [0.0; 3];
            for (m, &(ci, sign)) in mine.iter().enumerate() {
                let pc = &pcs[ci];
                let n = pc.normal * sign;
                let t = n.perp();
                let other = if sign > 0.0 { pc.a } else { pc.b };
                let vo = self.point_velocity(other, pc.point);
                let r = pc.point - c;
                let jn = [n.x, n.y, r.cross(n)];
                let jt = [t.x, t.y, r.cross(t)];
                match mode[m] {
                    ContactMode::Off => continue,
                    ContactMode::Stick => {
                        add_outer(&mut a, &jt, eta);
                        add_scaled(&mut rhs, &jt, eta * vo.dot(t));
                    }
                    ContactMode::Slide(ft) => add_scaled(&mut rhs, &jt, ft),
                }
                add_outer(&mut a, &jn, cn);
                add_scaled(&mut rhs, &jn, k * pc.depth + cn * vo.dot(n));
            }
            u = solve3(a, rhs);
            if pass == 1 {
                break;
            }
            let mut changed = false;
            for (m, &(ci, sign)) in mine.iter().enumerate() {
                let pc = &pcs[ci];
                let n = pc.normal * sign;
                let t = n.perp();
                let other = if sign > 0.0 { pc.a } else { pc.b };
                let vo = self.point_velocity(other, pc.point);
                let r = pc.point - c;
                let vi = Vec2::new(u.vx, u.vy) + r.perp() * u.omega;
                let fn_ = k * pc.depth + cn * (vo - vi).dot(n);
                if fn_ <= 0.0 {
                    mode[m] = ContactMode::Off;
                    changed = true;
                    continue;
                }
                let ft = eta * (vo - vi).dot(t);
                if ft.abs() > mu * fn_ {
                    mode[m] = ContactMode::Slide(mu * fn_ * ft.signum());
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        u
    }

    fn pair_forces(&self, pc: &PairContact) -> (f64, f64) {
        let p = &self.params;
        let va = self.point_velocity(pc.a, pc.point);
        let vb = self.point_velocity(pc.b, pc.point);
        let rel = va - vb;
        let cn = p.contact_damping + p.contact_stiffness * p.dt();
        let fn_ = (p.contact_stiffness * pc.depth + cn * rel.dot(pc.normal)).max(0.0);
        let limit = p.friction * fn_;
        let ft = (p.stick_damping * rel.dot(pc.normal.perp())).clamp(-limit, limit);
        (fn_, ft)
    }

    fn probe_face(&self, pc: &PairContact) -> (Option<ProbeFace>, f64) {
        if pc.a != Entity::Probe {
            return (None, 0.0);
        }
        let local_n = pc.normal.rotate(-self.probe.pose.theta);
        let local_p = self.probe.pose.inverse_transform_point(pc.point);
        let face = if local_n.y.abs() >= local_n.x.abs() {
            if local_n.y > 0.0 {
                ProbeFace::Left
            } else {
                ProbeFace::Right
            }
        } else if local_n.x > 0.0 {
            ProbeFace::Tip
        } else {
            ProbeFace::Back
        };
        (Some(face), (-local_p.x).clamp(0.0, self.probe.length))
    }

    fn substep(&mut self, cmd: Twist2D, full: bool) -> Result<(), Error> {
        let dt = self.params.dt();

        // Kinematic probe command in world frame, projected when stalled.
        let p = &self.params;
        let mut v = Vec2::new(cmd.vx, cmd.vy).rotate(self.probe.pose.theta);
        let mut w = cmd.omega;
        let tool = self.probe.pose.position();
        let reaction = net_probe_reaction(&self.contacts, tool);
        let rf = reaction.force();
        if rf.norm() > p.stall_force {
            let n = rf.normalized();
            let vn = v.dot(n);
            if vn < 0.0 {
                v = v - n * vn;
            }
        }
        if reaction.tau.abs() > p.stall_torque && reaction.tau * w < 0.0 {
            w = 0.0;
        }
        // Past the stall limits the probe yields along the reaction.
        let excess = rf.norm() - p.stall_force;
        if excess > 0.0 {
            v += rf.normalized() * (excess / p.stall_yield);
        }
        let excess_tau = reaction.tau.abs() - p.stall_torque;
        if excess_tau > 0.0 {
            w += reaction.tau.signum() * excess_tau / p.stall_yield_angular;
        }
        let rate = |j: &[f64; 3], v: Vec2, w: f64| j[0] * v.x + j[1] * v.y + j[2] * w;
        let unload = |j: &[f64; 3], v: &mut Vec2, w: &mut f64| {
            let r = rate(j, *v, *w);
            if r > 0.0 {
                let s = r / (j[0] * j[0] + j[1] * j[1] + j[2] * j[2]);
                *v = *v - Vec2::new(j[0], j[1]) * s;
                *w -= j[2] * s;
            }
        };
        if rf.norm() > p.stall_force {
            unload(&[-reaction.fx, -reaction.fy, -reaction.tau], &mut v, &mut w);
        }
        // A single manifold point at the stall force is jammed: the probe may
        // not drive that point further in, whatever the net reaction says.
        let jammed: Vec<[f64; 3]> = self
            .contacts
            .iter()
            .filter(|c| c.on_probe && c.normal_force >= p.stall_force)
            .map(|c| [c.normal.x, c.normal.y, (c.point - tool).cross(c.normal)])
            .collect();
        for _ in 0..4 {
            for j in &jammed {
                unload(j, &mut v, &mut w);
            }
        }
        if jammed.iter().any(|j| rate(j, v, w) > 1e-9) {
            v = Vec2::ZERO;
            w = 0.0;
        }
        self.probe.velocity = Twist2D::new(v.x, v.y, w);

        let pcs = self.detect();

        // (body, contact index, sign), grouped by body in contact order.
        let mut links: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * pcs.len());
        for (ci, pc) in pcs.iter().enumerate() {
            if let Entity::Body(i) = pc.a {
                if self.is_free(i) {
                    links.push((i, ci, -1.0));
                }
            }
            if let Entity::Body(i) = pc.b {
                if self.is_free(i) {
                    links.push((i, ci, 1.0));
                }
            }
        }
        links.sort_by_key(|l| l.0);
        let mut mine: Vec<(usize, f64)> = Vec::new();
        let mut modes: Vec<ContactMode> = Vec::new();
        let mut new_vel = vec![Twist2D::ZERO; self.bodies.len()];
        let mut at = 0;
        for (i, u) in new_vel.iter_mut().enumerate() {
            mine.clear();
            while at < links.len() && links[at].0 == i {
                mine.push((links[at].1, links[at].2));
                at += 1;
            }
            if self.is_free(i) && !mine.is_empty() {
                let s = self.solve_body(i, &pcs, &mine, &mut modes);
                let o = self.bodies[i].velocity;
                // Under-relax bodies in deep contact, where the explicit
                // neighbor coupling can oscillate.
                let deep = mine.iter().any(|&(ci, _)| pcs[ci].depth > self.params.relaxation_depth);
                let r = if deep { self.params.velocity_relaxation } else { 1.0 };
                *u = Twist2D::new(
                    r * s.vx + (1.0 - r) * o.vx,
                    r * s.vy + (1.0 - r) * o.vy,
                    r * s.omega + (1.0 - r) * o.omega,
                );
            }
        }
        for (b, u) in self.bodies.iter_mut().zip(&new_vel) {
            let speed = u.vx.hypot(u.vy);
            if !speed.is_finite() || speed > self.params.max_body_speed {
                return Err(Error::NumericalDivergence { body: b.id, speed });
            }
            b.velocity = *u;
        }

        // Between substeps only the probe reaction is read.
        self.contacts = pcs
            .iter()
            .filter(|pc| full || self.is_probe_assembly(pc.a))
            .map(|pc| {
                let (normal_force, tangent_force) = self.pair_forces(pc);
                let (probe_face, probe_offset) = self.probe_face(pc);
                Contact {
                    body_pair: (pc.a, pc.b),
                    point: pc.point,
                    normal: pc.normal,
                    depth: pc.depth,
                    normal_force,
                    tangent_force,
                    probe_face,
                    probe_offset,
                    on_probe: self.is_probe_assembly(pc.a),
                }
            })
            .collect();

        // Integrate.
        let pose = &mut self.probe.pose;
        *pose = Pose2D::new(pose.x + v.x * dt, pose.y + v.y * dt, pose.theta + w * dt);
        let probe_pose = self.probe.pose;
        let offset = self.probe.attach_offset;
        let attached = self.probe.attached_target;
        for b in self.bodies.iter_mut() {
            if b.fallen {
                continue;
            }
            if attached == Some(b.id) {
                b.pose = probe_pose.compose(&offset);
                continue;
            }
            let u = b.velocity;
            b.pose = Pose2D::new(
                b.pose.x + u.vx * dt,
                b.pose.y + u.vy * dt,
                b.pose.theta + u.omega * dt,
            );
            if b.pose.y < 0.0 {
                b.fallen = true;
                b.velocity = Twist2D::ZERO;
            }
        }
        Ok(())
    }

    /// Advances one control period under a normalized command.
    pub fn step(&mut self, cmd: &ActionCommand) -> Result<&[Contact], Error> {
        let twist = self.params.limits.denormalize(cmd.twist);
        if cmd.suction_release && self.probe.attached_target.is_some() {
            self.probe.attached_target = None;
        }
        for k in 0..self.params.substeps {
            self.substep(twist, k + 1 == self.params.substeps)?;
        }
        self.tick += 1;
        self.time = self.tick as f64 * self.params.dt_control;
        if !cmd.suction_release {
            self.try_suction();
        }
        Ok(&self.contacts)
    }

    /// Suction acquisition check: engages iff the tool point is within
    /// `suction_range` of the target's nearest face and the heading is within
    /// `suction_max_angle` of that face's inward normal. When the tool point is
    /// equally near two faces (it sits off a corner), the face whose normal
    /// best matches the heading counts as nearest.
    pub fn suction_condition(&self) -> Option<usize> {
        if self.probe.attached_target.is_some() {
            return None;
        }
        let target = self.bodies.iter().find(|b| b.is_target && !b.fallen)?;
        let local = target.pose.inverse_transform_point(self.probe.pose.position());
        let h = target.half_extents;
        // (outward normal, distance to face segment)
        let faces = [
            (Vec2::new(1.0, 0.0), seg_dist(local, Vec2::new(h.x, -h.y), Vec2::new(h.x, h.y))),
            (Vec2::new(-1.0, 0.0), seg_dist(local, Vec2::new(-h.x, -h.y), Vec2::new(-h.x, h.y))),
            (Vec2::new(0.0, 1.0), seg_dist(local, Vec2::new(-h.x, h.y), Vec2::new(h.x, h.y))),
            (Vec2::new(0.0, -1.0), seg_dist(local, Vec2::new(-h.x, -h.y), Vec2::new(h.x, -h.y))),
        ];
        let nearest = faces.iter().map(|f| f.1).fold(f64::INFINITY, f64::min);
        if nearest > self.params.suction_range {
            return None;
        }
        let heading = self.probe.pose.heading();
        let best_cos = faces
            .iter()
            .filter(|f| f.1 <= nearest + 1e-9)
            .map(|f| (-f.0).rotate(target.pose.theta).dot(heading))
            .fold(f64::NEG_INFINITY, f64::max);
        (best_cos >= self.params.suction_max_angle.cos() - 1e-12).then_some(target.id)
    }

    pub fn try_suction(&mut self) -> bool {
        match self.suction_condition() {
            Some(id) => {
                let rel = self.probe.pose.relative(&self.bodies[id].pose);
                self.probe.attached_target = Some(id);
                self.probe.attach_offset = rel;
                self.target_acquired = true;
                self.bodies[id].velocity = Twist2D::ZERO;
                true
            }
            None => false,
        }
    }

    /// Deepest body-body or body-wall penetration in the current configuration.
    pub fn max_penetration(&self) -> f64 {
        let live: Vec<Obb> = self
            .bodies
            .iter()
            .filter(|b| !b.fallen)
            .map(|b| b.obb())
            .collect();
        let mut worst: f64 = 0.0;
        for i in 0..live.len() {
            for j in (i + 1)..live.len() {
                if live[i].aabb().overlaps(&live[j].aabb(), 0.0) {
                    worst = worst.max(collide::penetration(&live[i], &live[j]));
                }
            }
            for w in &self.walls {
                worst = worst.max(collide::penetration(&live[i], w));
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ContactMode {
    Stick,
    Slide(f64),
    Off,
}

fn seg_dist(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn add_outer(a: &mut [[f64; 3]; 3], j: &[f64; 3], s: f64) {
    for r in 0..3 {
        for c in 0..3 {
            a[r][c] += s * j[r] * j[c];
        }
    }
}

fn add_scaled(v: &mut [f64; 3], j: &[f64; 3], s: f64) {
    for r in 0..3 {
        v[r] += s * j[r];
    }
}

/// Solves a 3x3 symmetric positive-definite system by Cramer's rule.
fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Twist2D {
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(&a);
    let mut x = [0.0; 3];
    for (col, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][col] = b[r];
        }
        *xc = det3(&m) / d;
    }
    Twist2D::new(x[0], x[1], x[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn empty_world() -> WorldState {
        WorldState::new(Vec::new(), ShelfSpec::default(), SimParams::default())
    }

    #[test]
    fn free_space_probe_advances_exactly() {
        let mut w = empty_world();
        let start = w.probe.pose;
        // 0.1 m/s forward is 2/3 of the 0.15 m/s limit.
        w.step(&ActionCommand::new(Twist2D::new(0.1 / 0.15, 0.0, 0.0), false))
            .unwrap();
        assert_abs_diff_eq!(w.probe.pose.y - start.y, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(w.probe.pose.x, start.x, epsilon = 1e-12);
    }

    #[test]
    fn zero_command_is_a_fixed_point() {
        let spec = ShelfSpec::default();
        let body = Body::new(0, Pose2D::new(0.19, 0.2, 0.0), ObjectClass::Blue);
        let mut w = WorldState::new(vec![body], spec, SimParams::default());
        let before = w.clone();
        w.step(&ActionCommand::hold()).unwrap();
        assert_eq!(w.bodies, before.bodies);
        assert_eq!(w.probe.pose, before.probe.pose);
        assert!(w.contacts.is_empty());
    }

    #[test]
    fn net_reaction_examples() {
        assert_eq!(net_probe_reaction(&[], Vec2::ZERO), Wrench2D::ZERO);
        let c = Contact {
            body_pair: (Entity::Probe, Entity::Body(0)),
            point: Vec2::new(1.0, 2.0),
            normal: Vec2::new(1.0, 0.0),
            depth: 0.0,
            normal_force: 5.0,
            tangent_force: 0.0,
            probe_face: Some(ProbeFace::Tip),
            probe_offset: 0.0,
            on_probe: true,
        };
        let r = net_probe_reaction(&[c], Vec2::new(1.0, 2.0));
        assert_eq!(r, Wrench2D::new(-5.0, 0.0, 0.0));
    }

    #[test]
    fn suction_predicate() {
        let spec = ShelfSpec::default();
        let params = SimParams::default();
        let target = Body::new(0, Pose2D::new(0.19, 0.49, 0.0), ObjectClass::TargetCanA);
        let face_y = 0.49 - 0.0285;
        let mut w = WorldState::new(vec![target], spec, params);

        w.probe.pose = Pose2D::new(0.19, face_y, FRAC_PI_2);
        assert_eq!(w.suction_condition(), Some(0));

        w.probe.pose = Pose2D::new(0.19, face_y - 0.05, FRAC_PI_2);
        assert_eq!(w.suction_condition(), None);

        w.probe.pose = Pose2D::new(0.19, face_y - 0.009, FRAC_PI_2 - 25f64.to_radians());
        assert_eq!(w.suction_condition(), Some(0));
        w.probe.pose = Pose2D::new(0.19, face_y - 0.009, FRAC_PI_2 - 35f64.to_radians());
        assert_eq!(w.suction_condition(), None);

        w.probe.pose = Pose2D::new(0.19, face_y, FRAC_PI_2);
        assert!(w.try_suction());
        assert_eq!(w.probe.attached_target, Some(0));
    }
}
