//! Closed-loop episodes: sense, act, step, monitor, classify.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expert::Expert;
use crate::geom::{ActionCommand, Pose2D, SensorFloors, Twist2D, Wrench2D};
use crate::safety::{classify_outcome, HomeRegion, MonitorState, Outcome, SafetyConfig, Verdict};
use crate::sensors::{force_truth, read_sensors, SensorReading};
use crate::sim::WorldState;
use crate::Error;

/// Independent seed number `index` of substream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Anything that turns the current situation into a command.
pub trait Controller {
    /// Whether `act` needs a sensor reading each tick.
    fn needs_observations(&self) -> bool;
    fn act(
        &mut self,
        world: &WorldState,
        monitor: &MonitorState,
        reading: Option<&SensorReading>,
    ) -> Result<ActionCommand, Error>;
}

impl Controller for Expert {
    fn needs_observations(&self) -> bool {
        false
    }

    fn act(
        &mut self,
        world: &WorldState,
        monitor: &MonitorState,
        _reading: Option<&SensorReading>,
    ) -> Result<ActionCommand, Error> {
        Ok(Expert::act(self, world, monitor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub safety: SafetyConfig,
    pub home: HomeRegion,
    pub floors: SensorFloors,
    /// Seed of the sensor-noise stream.
    pub sensor_seed: u64,
    /// Keep the full observation of every tick.
    pub record_frames: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            safety: SafetyConfig::default(),
            home: HomeRegion::default(),
            floors: SensorFloors::default(),
            sensor_seed: 0,
            record_frames: false,
        }
    }
}

/// One control tick: the observation at `t`, the command applied from `t`,
/// and the noise-free forces and verdict at `t + dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub reading: Option<SensorReading>,
    pub action: ActionCommand,
    pub f_net: f64,
    pub f_peak: f64,
    pub verdict: Verdict,
}

/// Lightweight per-tick trace for force/motion analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    /// Time of the sample (end of the tick).
    pub t: f64,
    pub pose: Pose2D,
    /// Tool-frame wrench, noise-free.
    pub wrench: Wrench2D,
    pub f_net: f64,
    pub f_peak: f64,
    /// Commanded tool twist in physical units.
    pub commanded: Twist2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub outcome: Outcome,
    pub records: Vec<TickRecord>,
    pub trace: Vec<TraceSample>,
}

/// An episode advanced one control tick at a time.
pub struct Episode {
    pub world: WorldState,
    pub monitor: MonitorState,
    pub opts: RolloutOptions,
    pub outcome: Outcome,
    pub records: Vec<TickRecord>,
    pub trace: Vec<TraceSample>,
    rng: ChaCha8Rng,
}

impl Episode {
    pub fn new(world: WorldState, opts: &RolloutOptions) -> Self {
        Self {
            outcome: Outcome {
                verdict: Verdict::Running,
                elapsed: world.time,
                acquired_target: world.target_acquired,
            },
            world,
            monitor: MonitorState::new(opts.safety),
            opts: *opts,
            records: Vec::new(),
            trace: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(opts.sensor_seed),
        }
    }

    /// Samples every modality, drawing noise from the episode's sensor stream.
    pub fn observe(&mut self) -> SensorReading {
        read_sensors(&self.world, &self.opts.floors, Some(&mut self.rng))
    }

    pub fn is_over(&self) -> bool {
        self.outcome.verdict.is_terminal()
    }

    /// Applies `action` (quantized) for one tick observed as `reading`. Does
    /// nothing once the verdict is terminal.
    pub fn step(&mut self, action: ActionCommand, reading: Option<SensorReading>) -> Result<Outcome, Error> {
        if self.is_over() {
            return Ok(self.outcome);
        }
        let action = action.quantized();
        let t = self.world.time;
        self.world.step(&action)?;
        let truth = force_truth(&self.world);
        self.monitor.update(self.world.time, &truth.wrench, &truth.taxels)?;
        self.outcome = classify_outcome(&self.world, &mut self.monitor, &self.opts.home);
        self.trace.push(TraceSample {
            t: self.world.time,
            pose: self.world.probe.pose,
            wrench: truth.wrench,
            f_net: self.monitor.f_net,
            f_peak: self.monitor.f_peak,
            commanded: self.world.params.limits.denormalize(action.twist),
        });
        self.records.push(TickRecord {
            t,
            reading: if self.opts.record_frames { reading } else { None },
            action,
            f_net: self.monitor.f_net,
            f_peak: self.monitor.f_peak,
            verdict: self.monitor.verdict,
        });
        Ok(self.outcome)
    }

    /// The episode so far as a rollout result.
    pub fn result(&self) -> RolloutResult {
        RolloutResult {
            outcome: self.outcome,
            records: self.records.clone(),
            trace: self.trace.clone(),
        }
    }

    pub fn finish(self) -> (WorldState, RolloutResult) {
        let result = RolloutResult {
            outcome: self.outcome,
            records: self.records,
            trace: self.trace,
        };
        (self.world, result)
    }
}

/// Runs `controller` in `world` until a terminal verdict.
pub fn rollout<C: Controller + ?Sized>(
    world: &mut WorldState,
    controller: &mut C,
    opts: &RolloutOptions,
) -> Result<RolloutResult, Error> {
    let observe = controller.needs_observations() || opts.record_frames;
    let mut ep = Episode::new(world.clone(), opts);
    while !ep.is_over() {
        let reading = observe.then(|| ep.observe());
        let action = controller.act(&ep.world, &ep.monitor, reading.as_ref())?;
        ep.step(action, reading)?;
    }
    let (end, result) = ep.finish();
    *world = end;
    Ok(result)
}
