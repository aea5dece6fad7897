//! Simulated sensing: taxel arrays and tactile images, the tool-frame wrench
//! estimate, suction pressure, and the egocentric camera.

pub mod camera;
pub mod tactile;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::{world_to_tool, Pose2D, SensorFloors, TaxelGrid, Wrench2D};
use crate::sim::{net_probe_reaction, Probe, WorldState};

pub use camera::{render_egocentric, CameraImage, CAMERA_SIZE};
pub use tactile::{decode_tactile, encode_tactile, sample_taxels, TactileImage};

/// Gauge pressure below which the suction cup counts as sealed, kPa.
pub const ACQUIRE_THRESHOLD_KPA: f64 = -6.9;
pub const ENGAGED_PRESSURE_KPA: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureSignal {
    pub gauge_pressure: f64,
    pub acquired: bool,
}

impl PressureSignal {
    pub fn from_gauge(kpa: f64) -> Self {
        Self {
            gauge_pressure: kpa,
            acquired: kpa < ACQUIRE_THRESHOLD_KPA,
        }
    }
}

pub fn sample_pressure(probe: &Probe) -> PressureSignal {
    let kpa = if probe.attached_target.is_some() {
        ENGAGED_PRESSURE_KPA
    } else {
        0.0
    };
    PressureSignal::from_gauge(kpa)
}

/// Rotates the world-frame probe reaction into the tool frame and, with `rng`
/// set, adds Gaussian noise with sigma = floor / 3 to both force axes.
/// Torque passes through without noise.
pub fn estimate_wrench<R: Rng + ?Sized>(
    reaction: Wrench2D,
    probe_pose: &Pose2D,
    floors: &SensorFloors,
    rng: Option<&mut R>,
) -> Wrench2D {
    let mut w = world_to_tool(reaction, probe_pose);
    if let Some(rng) = rng {
        let noise = Normal::new(0.0, floors.wrench_floor / 3.0).expect("positive sigma");
        w.fx += noise.sample(rng);
        w.fy += noise.sample(rng);
    }
    w
}

/// Noise-free force readings: what the safety monitor consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceTruth {
    /// Tool-frame wrench.
    pub wrench: Wrench2D,
    pub taxels: TaxelGrid,
}

pub fn force_truth(world: &WorldState) -> ForceTruth {
    let pose = world.probe.pose;
    let reaction = net_probe_reaction(&world.contacts, pose.position());
    ForceTruth {
        wrench: world_to_tool(reaction, &pose),
        taxels: sample_taxels::<rand_chacha::ChaCha8Rng>(
            &world.contacts,
            pose.theta,
            world.probe.length,
            &SensorFloors::default(),
            None,
        ),
    }
}

/// One synchronized sensor sample as the policy sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorReading {
    pub camera: CameraImage,
    pub tactile: TactileImage,
    pub pose: Pose2D,
    pub wrench: Wrench2D,
    pub pressure: PressureSignal,
}

/// Samples every modality from the current world; noise is drawn from `rng` when given.
pub fn read_sensors<R: Rng + ?Sized>(
    world: &WorldState,
    floors: &SensorFloors,
    mut rng: Option<&mut R>,
) -> SensorReading {
    let pose = world.probe.pose;
    let reaction = net_probe_reaction(&world.contacts, pose.position());
    let wrench = estimate_wrench(reaction, &pose, floors, rng.as_deref_mut());
    let taxels = sample_taxels(
        &world.contacts,
        pose.theta,
        world.probe.length,
        floors,
        rng.as_deref_mut(),
    );
    SensorReading {
        camera: render_egocentric(world, &pose),
        tactile: encode_tactile(&taxels),
        pose,
        wrench,
        pressure: sample_pressure(&world.probe),
    }
}
