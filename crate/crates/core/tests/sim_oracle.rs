use gentle_reach::geom::{ActionCommand, Pose2D, Twist2D};
use gentle_reach::scene::{generate, ObjectClass, ShelfSpec};
use gentle_reach::sim::{net_probe_reaction, Body, Entity, SimParams, WorldState};

fn pinned_box() -> WorldState {
    let spec = ShelfSpec::default();
    let params = SimParams::default();
    let mut body = Body::new(0, Pose2D::new(0.19, 0.0, 0.0), ObjectClass::Blue);
    body.pose.y = spec.depth - body.half_extents.y;
    WorldState::new(vec![body], spec, params)
}

#[test]
fn box_pressed_into_the_back_wall_settles_at_the_stall_force() {
    let mut w = pinned_box();
    let forward = ActionCommand::new(Twist2D::new(1.0, 0.0, 0.0), false);
    for _ in 0..80 {
        w.step(&forward).unwrap();
    }
    let k = w.params.contact_stiffness;
    let reaction = net_probe_reaction(&w.contacts, w.probe.pose.position()).force();
    let stall = w.params.stall_force;
    assert!(reaction.norm() > stall * 0.95 && reaction.norm() < stall * 1.2, "{}", reaction.norm());
    assert!(reaction.y < 0.0 && reaction.x.abs() < 1e-6 * stall);

    let side = |probe: bool| -> (f64, f64) {
        w.contacts
            .iter()
            .filter(|c| c.on_probe == probe && matches!(c.body_pair.1, Entity::Body(0) | Entity::Wall(_)))
            .fold((0.0, 0.0), |(f, d), c| (f + c.normal_force, d + c.depth))
    };
    let (f_probe, d_probe) = side(true);
    let (f_wall, d_wall) = side(false);
    // A resting box passes the push straight through to the wall.
    assert!((f_probe - f_wall).abs() < 0.02 * f_probe, "{f_probe} vs {f_wall}");
    assert!((f_wall - k * d_wall).abs() < 0.02 * f_wall, "{f_wall} vs {}", k * d_wall);
    assert!((f_probe - k * d_probe).abs() < 0.05 * f_probe, "{f_probe} vs {}", k * d_probe);
    let v = w.bodies[0].velocity;
    assert!(v.vx.hypot(v.vy) < 1e-4, "{v:?}");
}

#[test]
fn releasing_the_push_unloads_the_contact() {
    let mut w = pinned_box();
    let forward = ActionCommand::new(Twist2D::new(1.0, 0.0, 0.0), false);
    for _ in 0..80 {
        w.step(&forward).unwrap();
    }
    let back = ActionCommand::new(Twist2D::new(-1.0, 0.0, 0.0), false);
    for _ in 0..3 {
        w.step(&back).unwrap();
    }
    assert_eq!(net_probe_reaction(&w.contacts, w.probe.pose.position()).force().norm(), 0.0);
}

#[test]
fn identical_commands_replay_identically() {
    let spec = ShelfSpec::default();
    let schematic = generate(42, &spec).unwrap();
    let run = || {
        let mut w = WorldState::from_schematic(&schematic, spec, SimParams::default()).unwrap();
        for k in 0..150 {
            let s = (k as f64 * 0.37).sin();
            w.step(&ActionCommand::new(Twist2D::new(0.8, 0.6 * s, 0.3 * s), false)).unwrap();
        }
        w
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.max_penetration() <= 0.002, "{}", a.max_penetration());
}

#[test]
fn probe_sliding_along_a_wall_stays_shallow() {
    let spec = ShelfSpec::default();
    let mut w = WorldState::new(Vec::new(), spec, SimParams::default());
    w.probe.pose = Pose2D::new(0.03, 0.15, std::f64::consts::FRAC_PI_2 + 0.3);
    // Forward, to the left and turning left: the tip is dragged into the side wall.
    let cmd = ActionCommand::new(Twist2D::new(1.0, 1.0, 1.0), false);
    let mut touched = false;
    for _ in 0..40 {
        w.step(&cmd).unwrap();
        for c in w.contacts.iter().filter(|c| c.on_probe) {
            touched = true;
            assert!(c.depth <= 0.002, "{} mm", c.depth * 1e3);
        }
        let reaction = net_probe_reaction(&w.contacts, w.probe.pose.position()).force();
        assert!(reaction.norm() < 1.5 * w.params.stall_force, "{}", reaction.norm());
    }
    assert!(touched);
}
