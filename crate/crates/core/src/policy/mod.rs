//! Observation encoding, modality masking, and a small diffusion action head.
//!
//! Each observation frame is encoded by two convolutional encoders (camera and
//! tactile image) and concatenated with normalized pose, wrench and pressure.
//! A fully connected denoiser predicts the noise added to a 16-step action
//! chunk; inference runs a deterministic 10-step reverse sampler.

pub mod nn;

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, FieldStats, ObservationFrame, STORED_CAMERA_SIZE};
use crate::geom::{ActionCommand, Twist2D};
use crate::rollout::Controller;
use crate::safety::MonitorState;
use crate::sensors::tactile::{TACTILE_HEIGHT, TACTILE_WIDTH};
use crate::sensors::{SensorReading, TactileImage};
use crate::sim::WorldState;
use crate::Error;
use nn::{silu, silu_grad, Adam, Conv3, ConvEncoder, Linear, ParamStore, Trace};

/// Which force modalities the policy may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Baseline,
    WrenchInformed,
    TactileInformed,
    ForceInformed,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::WrenchInformed,
        Variant::TactileInformed,
        Variant::ForceInformed,
    ];

    pub fn uses_wrench(self) -> bool {
        matches!(self, Variant::WrenchInformed | Variant::ForceInformed)
    }

    pub fn uses_tactile(self) -> bool {
        matches!(self, Variant::TactileInformed | Variant::ForceInformed)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::WrenchInformed => "wrench",
            Variant::TactileInformed => "tactile",
            Variant::ForceInformed => "force",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "wrench" | "wrench_informed" => Ok(Variant::WrenchInformed),
            "tactile" | "tactile_informed" => Ok(Variant::TactileInformed),
            "force" | "force_informed" => Ok(Variant::ForceInformed),
            _ => Err(Error::Parse(format!("unknown variant {s:?}"))),
        }
    }
}

/// Replaces the modalities `variant` may not see with zero readings.
pub fn mask_observation(frame: &ObservationFrame, variant: Variant) -> ObservationFrame {
    let mut out = frame.clone();
    if !variant.uses_wrench() {
        out.wrench = [0.0; 3];
    }
    if !variant.uses_tactile() {
        out.tactile = TactileImage::zero_force();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub variant: Variant,
    pub n_obs: usize,
    pub n_act: usize,
    pub pred_horizon: usize,
    pub control_hz: f64,
    pub diffusion_train_steps: usize,
    pub diffusion_infer_steps: usize,
    pub epochs: usize,
    pub camera_embed: usize,
    pub tactile_embed: usize,
    pub hidden: usize,
    pub batch_size: usize,
    /// Minibatches drawn per epoch.
    pub batches_per_epoch: usize,
    pub learning_rate: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            variant: Variant::ForceInformed,
            n_obs: 2,
            n_act: 8,
            pred_horizon: 16,
            control_hz: 10.0,
            diffusion_train_steps: 100,
            diffusion_infer_steps: 10,
            epochs: 200,
            camera_embed: 64,
            tactile_embed: 32,
            hidden: 256,
            batch_size: 32,
            batches_per_epoch: 16,
            learning_rate: 1e-3,
        }
    }
}

impl PolicyConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_obs == 0 || self.n_act == 0 || self.n_act > self.pred_horizon {
            return bad("need 0 < n_act <= pred_horizon and n_obs > 0");
        }
        if self.diffusion_infer_steps == 0 || self.diffusion_infer_steps > self.diffusion_train_steps {
            return bad("need 0 < inference steps <= training steps");
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 || !(self.learning_rate > 0.0) {
            return bad("batch size, batches per epoch and learning rate must be positive");
        }
        Ok(())
    }

    pub fn action_dim(&self) -> usize {
        self.pred_horizon * 3
    }
}

pub const TIME_EMBED: usize = 32;
const LOW_DIM: usize = 8;
const CAMERA_INPUT: usize = 3 * STORED_CAMERA_SIZE * STORED_CAMERA_SIZE;
const TACTILE_INPUT: usize = 3 * TACTILE_HEIGHT * TACTILE_WIDTH;

/// Cumulative signal fractions of the cosine noise schedule, one per step.
pub fn cosine_alpha_bars(steps: usize) -> Vec<f64> {
    let s = 0.008;
    let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let mut out = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for t in 0..steps {
        let beta = (1.0 - f(t as f64 + 1.0) / f(t as f64)).min(0.999);
        prod *= 1.0 - beta;
        out.push(prod);
    }
    out
}

/// Timesteps visited by the reverse sampler, noisiest first.
pub fn sampler_timesteps(train_steps: usize, infer_steps: usize) -> Vec<usize> {
    let stride = train_steps / infer_steps;
    (0..infer_steps).map(|k| train_steps - 1 - k * stride).collect()
}

pub fn time_embedding<T: Float>(t: usize) -> Vec<T> {
    let half = TIME_EMBED / 2;
    let mut out = Vec::with_capacity(TIME_EMBED);
    for k in 0..half {
        let freq = (-(1000f64).ln() * k as f64 / half as f64).exp();
        out.push(T::from((t as f64 * freq).sin()).unwrap());
    }
    for k in 0..half {
        let freq = (-(1000f64).ln() * k as f64 / half as f64).exp();
        out.push(T::from((t as f64 * freq).cos()).unwrap());
    }
    out
}

/// Network inputs of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput<T> {
    pub camera: Vec<T>,
    pub tactile: Vec<T>,
    pub low: Vec<T>,
}

/// Normalized network inputs of an already masked frame.
pub fn frame_input<T: Float>(frame: &ObservationFrame, pose: &FieldStats, wrench: &FieldStats) -> FrameInput<T> {
    let scale = |v: u8| T::from(v as f64 / 255.0).unwrap();
    let planes = |bytes: &[u8], n: usize| -> Vec<T> {
        (0..3).flat_map(|ch| (0..n).map(move |i| scale(bytes[i * 3 + ch]))).collect()
    };
    let mut low: Vec<T> = pose
        .normalize(&frame.pose_features())
        .into_iter()
        .chain(wrench.normalize(&frame.wrench_features()))
        .map(|v| T::from(v).unwrap())
        .collect();
    low.push(if frame.pressure { T::one() } else { T::zero() });
    FrameInput {
        camera: planes(&frame.camera, STORED_CAMERA_SIZE * STORED_CAMERA_SIZE),
        tactile: planes(&frame.tactile.data, TACTILE_HEIGHT * TACTILE_WIDTH),
        low,
    }
}

/// Camera encoder, tactile encoder, and a three-layer noise predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet<T> {
    pub params: ParamStore<T>,
    pub camera: ConvEncoder,
    pub tactile: ConvEncoder,
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
    pub n_obs: usize,
    pub action_dim: usize,
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    cams: Vec<Trace<T>>,
    tacs: Vec<Trace<T>>,
    h0: Vec<T>,
    z1: Vec<T>,
    h1: Vec<T>,
    z2: Vec<T>,
    h2: Vec<T>,
}

impl<T: Float> DenoiserNet<T> {
    pub fn new(cfg: &PolicyConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::default();
        let s = STORED_CAMERA_SIZE;
        let c1 = Conv3::new(&mut p, "camera.conv1", 3, 8, 2, s, s, &mut rng);
        let c2 = Conv3::new(&mut p, "camera.conv2", 8, 16, 2, c1.h_out(), c1.w_out(), &mut rng);
        let c3 = Conv3::new(&mut p, "camera.conv3", 16, 32, 2, c2.h_out(), c2.w_out(), &mut rng);
        let c4 = Conv3::new(&mut p, "camera.conv4", 32, 32, 2, c3.h_out(), c3.w_out(), &mut rng);
        let ch = Linear::new(&mut p, "camera.head", c4.out_len(), cfg.camera_embed, &mut rng);
        let t1 = Conv3::new(&mut p, "tactile.conv1", 3, 8, 1, TACTILE_HEIGHT, TACTILE_WIDTH, &mut rng);
        let t2 = Conv3::new(&mut p, "tactile.conv2", 8, 16, 2, t1.h_out(), t1.w_out(), &mut rng);
        let th = Linear::new(&mut p, "tactile.head", t2.out_len(), cfg.tactile_embed, &mut rng);
        let action_dim = cfg.action_dim();
        let cond = cfg.n_obs * (cfg.camera_embed + cfg.tactile_embed + LOW_DIM);
        let l1 = Linear::new(&mut p, "denoiser.fc1", action_dim + cond + TIME_EMBED, cfg.hidden, &mut rng);
        let l2 = Linear::new(&mut p, "denoiser.fc2", cfg.hidden, cfg.hidden, &mut rng);
        let l3 = Linear::new(&mut p, "denoiser.fc3", cfg.hidden, action_dim, &mut rng);
        Self {
            params: p,
            camera: ConvEncoder {
                convs: vec![c1, c2, c3, c4],
                head: ch,
            },
            tactile: ConvEncoder {
                convs: vec![t1, t2],
                head: th,
            },
            l1,
            l2,
            l3,
            n_obs: cfg.n_obs,
            action_dim,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Float>(&self) -> DenoiserNet<U> {
        DenoiserNet {
            params: self.params.cast(),
            camera: self.camera.clone(),
            tactile: self.tactile.clone(),
            l1: self.l1,
            l2: self.l2,
            l3: self.l3,
            n_obs: self.n_obs,
            action_dim: self.action_dim,
        }
    }

    fn check(&self, frames: &[FrameInput<T>]) -> Result<(), Error> {
        if frames.len() != self.n_obs {
            return Err(Error::ShapeMismatch(format!("expected {} frames, got {}", self.n_obs, frames.len())));
        }
        for f in frames {
            if f.camera.len() != CAMERA_INPUT || f.tactile.len() != TACTILE_INPUT || f.low.len() != LOW_DIM {
                return Err(Error::ShapeMismatch("frame input sizes".into()));
            }
        }
        Ok(())
    }

    /// Conditioning vector, optionally keeping encoder activations.
    fn encode(&self, frames: &[FrameInput<T>], mut traces: Option<(&mut Vec<Trace<T>>, &mut Vec<Trace<T>>)>) -> Vec<T> {
        let p = &self.params.data;
        let mut cond = Vec::new();
        for f in frames {
            let (cam, tac) = match traces.as_mut() {
                Some((c, t)) => {
                    let mut tc = Trace::default();
                    let mut tt = Trace::default();
                    let a = self.camera.forward(p, &f.camera, Some(&mut tc));
                    let b = self.tactile.forward(p, &f.tactile, Some(&mut tt));
                    c.push(tc);
                    t.push(tt);
                    (a, b)
                }
                None => (self.camera.forward(p, &f.camera, None), self.tactile.forward(p, &f.tactile, None)),
            };
            cond.extend(cam);
            cond.extend(tac);
            cond.extend_from_slice(&f.low);
        }
        cond
    }

    fn head(&self, x_t: &[T], cond: &[T], t: usize) -> (Vec<T>, [Vec<T>; 5]) {
        let p = &self.params.data;
        let mut h0 = x_t.to_vec();
        h0.extend_from_slice(cond);
        h0.extend(time_embedding::<T>(t));
        let z1 = self.l1.forward(p, &h0);
        let h1: Vec<T> = z1.iter().map(|v| silu(*v)).collect();
        let z2 = self.l2.forward(p, &h1);
        let h2: Vec<T> = z2.iter().map(|v| silu(*v)).collect();
        let out = self.l3.forward(p, &h2);
        (out, [h0, z1, h1, z2, h2])
    }

    /// Predicted noise for noisy actions `x_t` at step `t`.
    pub fn forward(&self, x_t: &[T], frames: &[FrameInput<T>], t: usize) -> Result<Vec<T>, Error> {
        self.check(frames)?;
        if x_t.len() != self.action_dim {
            return Err(Error::ShapeMismatch("action chunk length".into()));
        }
        let cond = self.encode(frames, None);
        Ok(self.head(x_t, &cond, t).0)
    }

    fn forward_traced(&self, x_t: &[T], frames: &[FrameInput<T>], t: usize) -> (Vec<T>, ForwardTrace<T>) {
        let mut cams = Vec::new();
        let mut tacs = Vec::new();
        let cond = self.encode(frames, Some((&mut cams, &mut tacs)));
        let (out, [h0, z1, h1, z2, h2]) = self.head(x_t, &cond, t);
        (
            out,
            ForwardTrace {
                cams,
                tacs,
                h0,
                z1,
                h1,
                z2,
                h2,
            },
        )
    }

    fn backward(&self, tr: &ForwardTrace<T>, dout: &[T], g: &mut [T]) {
        let p = &self.params.data;
        let d = self.l3.backward(p, g, &tr.h2, dout);
        let d: Vec<T> = d.iter().zip(&tr.z2).map(|(d, z)| *d * silu_grad(*z)).collect();
        let d = self.l2.backward(p, g, &tr.h1, &d);
        let d: Vec<T> = d.iter().zip(&tr.z1).map(|(d, z)| *d * silu_grad(*z)).collect();
        let dh0 = self.l1.backward(p, g, &tr.h0, &d);
        let cam = self.camera.head.n_out;
        let tac = self.tactile.head.n_out;
        let mut off = self.action_dim;
        for k in 0..self.n_obs {
            self.camera.backward(p, g, &tr.cams[k], &dh0[off..off + cam]);
            off += cam;
            self.tactile.backward(p, g, &tr.tacs[k], &dh0[off..off + tac]);
            off += tac + LOW_DIM;
        }
    }

    /// Mean squared noise-prediction error over a batch; accumulates the
    /// gradient of that mean into `grad` when given.
    pub fn loss(&self, batch: &[TrainingExample<T>], mut grad: Option<&mut [T]>) -> T {
        let n = T::from(batch.len() * self.action_dim).unwrap();
        let two = T::from(2.0).unwrap();
        let mut total = T::zero();
        for ex in batch {
            let (out, tr) = self.forward_traced(&ex.x_t, &ex.frames, ex.t);
            let diff: Vec<T> = out.iter().zip(&ex.noise).map(|(a, b)| *a - *b).collect();
            total = total + diff.iter().fold(T::zero(), |acc, d| acc + *d * *d);
            if let Some(g) = grad.as_deref_mut() {
                let dout: Vec<T> = diff.iter().map(|d| two * *d / n).collect();
                self.backward(&tr, &dout, g);
            }
        }
        total / n
    }
}

/// One noised action chunk with its conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample<T> {
    pub frames: Vec<FrameInput<T>>,
    pub x_t: Vec<T>,
    pub noise: Vec<T>,
    pub t: usize,
}

impl<T: Float> TrainingExample<T> {
    /// Noises `actions` to step `t` with `noise`.
    pub fn new(frames: Vec<FrameInput<T>>, actions: &[f64], noise: Vec<f64>, t: usize, alpha_bars: &[f64]) -> Self {
        let ab = alpha_bars[t];
        let x_t = actions
            .iter()
            .zip(&noise)
            .map(|(a, e)| T::from(ab.sqrt() * a + (1.0 - ab).sqrt() * e).unwrap())
            .collect();
        Self {
            frames,
            x_t,
            noise: noise.into_iter().map(|v| T::from(v).unwrap()).collect(),
            t,
        }
    }
}

/// Trained weights with the statistics and configuration needed to run them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyWeights {
    pub config: PolicyConfig,
    pub pose_stats: FieldStats,
    pub wrench_stats: FieldStats,
    pub net: DenoiserNet<f32>,
}

impl PolicyWeights {
    /// Freshly initialized weights with identity normalization.
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        Ok(Self {
            config,
            pose_stats: FieldStats::identity(4),
            wrench_stats: FieldStats::identity(3),
            net: DenoiserNet::new(&config, seed),
        })
    }

    /// Network inputs for a frame, masked for this policy's variant.
    pub fn input<T: Float>(&self, frame: &ObservationFrame) -> FrameInput<T> {
        frame_input(&mask_observation(frame, self.config.variant), &self.pose_stats, &self.wrench_stats)
    }

    pub fn save(&self, dir: &Path) -> Result<(), Error> {
        use std::fmt::Write as _;
        fs::create_dir_all(dir)?;
        let c = &self.config;
        let p = &self.net.params;
        let mut m = String::new();
        writeln!(m, "{WEIGHTS_MAGIC}").unwrap();
        writeln!(m, "format_version {WEIGHTS_FORMAT_VERSION}").unwrap();
        writeln!(m, "variant {}", c.variant).unwrap();
        for (k, v) in [
            ("n_obs", c.n_obs),
            ("n_act", c.n_act),
            ("pred_horizon", c.pred_horizon),
            ("diffusion_train_steps", c.diffusion_train_steps),
            ("diffusion_infer_steps", c.diffusion_infer_steps),
            ("epochs", c.epochs),
            ("camera_embed", c.camera_embed),
            ("tactile_embed", c.tactile_embed),
            ("hidden", c.hidden),
            ("batch_size", c.batch_size),
            ("batches_per_epoch", c.batches_per_epoch),
        ] {
            writeln!(m, "{k} {v}").unwrap();
        }
        writeln!(m, "control_hz {:?}", c.control_hz).unwrap();
        writeln!(m, "learning_rate {:?}", c.learning_rate).unwrap();
        for (name, s) in [("pose", &self.pose_stats), ("wrench", &self.wrench_stats)] {
            let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
            writeln!(m, "mean {name} {}", join(&s.mean)).unwrap();
            writeln!(m, "std {name} {}", join(&s.std)).unwrap();
        }
        for (name, shape) in p.names.iter().zip(&p.shapes) {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            writeln!(m, "tensor {name} {}", dims.join(" ")).unwrap();
        }
        let bytes: Vec<u8> = p.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join("tensors.bin"), bytes)?;
        fs::write(dir.join("manifest.txt"), m)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, Error> {
        let mpath = dir.join("manifest.txt");
        let text = fs::read_to_string(&mpath)?;
        let corrupt = |r: String| Error::CorruptFile {
            path: mpath.display().to_string(),
            reason: r,
        };
        let mut lines = text.lines();
        if lines.next() != Some(WEIGHTS_MAGIC) {
            return Err(corrupt("bad magic".into()));
        }
        let mut c = PolicyConfig::default();
        let mut stats: [FieldStats; 2] = [FieldStats::identity(4), FieldStats::identity(3)];
        let mut tensors: Vec<(String, Vec<usize>)> = Vec::new();
        let mut version = 0u32;
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| corrupt(format!("bad number in {line:?}")));
            let flt = |s: &str| s.parse::<f64>().map_err(|_| corrupt(format!("bad number in {line:?}")));
            match parts.as_slice() {
                [] => {}
                ["format_version", v] => version = num(v)? as u32,
                ["variant", v] => c.variant = v.parse()?,
                ["n_obs", v] => c.n_obs = num(v)?,
                ["n_act", v] => c.n_act = num(v)?,
                ["pred_horizon", v] => c.pred_horizon = num(v)?,
                ["diffusion_train_steps", v] => c.diffusion_train_steps = num(v)?,
                ["diffusion_infer_steps", v] => c.diffusion_infer_steps = num(v)?,
                ["epochs", v] => c.epochs = num(v)?,
                ["camera_embed", v] => c.camera_embed = num(v)?,
                ["tactile_embed", v] => c.tactile_embed = num(v)?,
                ["hidden", v] => c.hidden = num(v)?,
                ["batch_size", v] => c.batch_size = num(v)?,
                ["batches_per_epoch", v] => c.batches_per_epoch = num(v)?,
                ["control_hz", v] => c.control_hz = flt(v)?,
                ["learning_rate", v] => c.learning_rate = flt(v)?,
                [kind @ ("mean" | "std"), name, rest @ ..] => {
                    let i = match *name {
                        "pose" => 0,
                        "wrench" => 1,
                        _ => return Err(corrupt(format!("unknown statistics {name}"))),
                    };
                    let v = rest.iter().map(|s| flt(s)).collect::<Result<Vec<_>, _>>()?;
                    if *kind == "mean" {
                        stats[i].mean = v;
                    } else {
                        stats[i].std = v;
                    }
                }
                ["tensor", name, dims @ ..] => {
                    tensors.push((name.to_string(), dims.iter().map(|d| num(d)).collect::<Result<_, _>>()?));
                }
                _ => return Err(corrupt(format!("unrecognized line {line:?}"))),
            }
        }
        if version != WEIGHTS_FORMAT_VERSION {
            return Err(corrupt(format!("unknown format_version {version}")));
        }
        c.validate()?;
        if stats[0].mean.len() != 4 || stats[0].std.len() != 4 || stats[1].mean.len() != 3 || stats[1].std.len() != 3 {
            return Err(corrupt("normalization statistics have the wrong length".into()));
        }
        let mut net = DenoiserNet::<f32>::new(&c, 0);
        let expected: Vec<(String, Vec<usize>)> = net
            .params
            .names
            .iter()
            .cloned()
            .zip(net.params.shapes.iter().cloned())
            .collect();
        if tensors != expected {
            return Err(Error::ShapeMismatch("tensor list does not match the architecture".into()));
        }
        let bpath = dir.join("tensors.bin");
        let bytes = fs::read(&bpath)?;
        if bytes.len() != net.params.len() * 4 {
            return Err(Error::CorruptFile {
                path: bpath.display().to_string(),
                reason: format!("{} bytes, expected {}", bytes.len(), net.params.len() * 4),
            });
        }
        net.params.data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let [pose_stats, wrench_stats] = stats;
        Ok(Self {
            config: c,
            pose_stats,
            wrench_stats,
            net,
        })
    }
}

const WEIGHTS_MAGIC: &str = "gentle-reach-weights";
const WEIGHTS_FORMAT_VERSION: u32 = 1;

fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws one noised example from a dataset window.
fn draw_example<R: Rng + ?Sized>(
    w: &PolicyWeights,
    ds: &Dataset,
    window: usize,
    alpha_bars: &[f64],
    rng: &mut R,
) -> TrainingExample<f32> {
    let win = &ds.windows[window];
    let frames = win.obs.iter().map(|&i| w.input(ds.frame(win.episode, i))).collect();
    let actions: Vec<f64> = win
        .actions
        .iter()
        .flat_map(|&i| ds.action(win.episode, i))
        .map(|v| v as f64)
        .collect();
    let t = rng.random_range(0..alpha_bars.len());
    let noise = gaussian(rng, actions.len());
    TrainingExample::new(frames, &actions, noise, t, alpha_bars)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingResult {
    pub weights: PolicyWeights,
    /// Mean minibatch loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Fits the noise predictor to the dataset's action chunks. An epoch is
/// `batches_per_epoch` minibatches drawn uniformly with replacement.
pub fn train(ds: &Dataset, config: PolicyConfig, seed: u64) -> Result<TrainingResult, Error> {
    config.validate()?;
    if ds.windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.config.n_obs != config.n_obs || ds.config.pred_horizon != config.pred_horizon {
        return Err(Error::ShapeMismatch("dataset windows do not match the policy shape".into()));
    }
    let mut w = PolicyWeights::init(config, seed)?;
    w.pose_stats = ds.stats("pose").clone();
    w.wrench_stats = ds.stats("wrench").clone();
    let alpha_bars = cosine_alpha_bars(config.diffusion_train_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e);
    let mut opt = Adam::new(w.net.params.len(), config.learning_rate);
    let mut grad = vec![0f32; w.net.params.len()];
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut sum = 0.0;
        for step in 0..config.batches_per_epoch {
            let batch: Vec<TrainingExample<f32>> = (0..config.batch_size)
                .map(|_| {
                    let i = rng.random_range(0..ds.windows.len());
                    draw_example(&w, ds, i, &alpha_bars, &mut rng)
                })
                .collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = w.net.loss(&batch, Some(&mut grad)) as f64;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NaNLoss {
                    epoch,
                    step,
                    detail: format!("loss {loss}, last finite epoch loss {:?}", curve.last()),
                });
            }
            opt.step(&mut w.net.params.data, &grad);
            sum += loss;
        }
        curve.push(sum / config.batches_per_epoch as f64);
    }
    Ok(TrainingResult {
        weights: w,
        loss_curve: curve,
    })
}

/// Samples an action chunk and returns its first `n_act` commands.
pub fn infer<R: Rng + ?Sized>(
    w: &PolicyWeights,
    frames: &[ObservationFrame],
    rng: &mut R,
) -> Result<Vec<ActionCommand>, Error> {
    let c = &w.config;
    if frames.len() != c.n_obs {
        return Err(Error::ShapeMismatch(format!("expected {} frames, got {}", c.n_obs, frames.len())));
    }
    for f in frames {
        if f.camera.len() != crate::data::STORED_CAMERA_LEN {
            return Err(Error::ShapeMismatch("camera frame must be 32x32x3".into()));
        }
    }
    let inputs: Vec<FrameInput<f32>> = frames.iter().map(|f| w.input(f)).collect();
    w.net.check(&inputs)?;
    let cond = w.net.encode(&inputs, None);
    let alpha_bars = cosine_alpha_bars(c.diffusion_train_steps);
    let steps = sampler_timesteps(c.diffusion_train_steps, c.diffusion_infer_steps);
    let mut x: Vec<f64> = gaussian(rng, c.action_dim());
    for (k, &t) in steps.iter().enumerate() {
        let xf: Vec<f32> = x.iter().map(|v| *v as f32).collect();
        let eps: Vec<f64> = w.net.head(&xf, &cond, t).0.into_iter().map(|v| v as f64).collect();
        let ab = alpha_bars[t];
        let ab_prev = steps.get(k + 1).map_or(1.0, |&tp| alpha_bars[tp]);
        for (xi, e) in x.iter_mut().zip(&eps) {
            let x0 = ((*xi - (1.0 - ab).sqrt() * e) / ab.sqrt()).clamp(-1.0, 1.0);
            *xi = ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * e;
        }
    }
    Ok(x.chunks_exact(3)
        .take(c.n_act)
        .map(|a| {
            let q = |v: f64| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
            ActionCommand::new(Twist2D::new(q(a[0]), q(a[1]), q(a[2])), false).quantized()
        })
        .collect())
}

/// Largest relative difference between analytic and central-difference
/// parameter gradients of the batch loss, over `samples` random parameters.
pub fn gradient_check(net: &DenoiserNet<f64>, batch: &[TrainingExample<f64>], samples: usize, seed: u64) -> f64 {
    let h = 1e-4;
    let mut grad = vec![0.0; net.params.len()];
    net.loss(batch, Some(&mut grad));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..net.params.len());
        let orig = probe.params.data[i];
        probe.params.data[i] = orig + h;
        let up = probe.loss(batch, None);
        probe.params.data[i] = orig - h;
        let down = probe.loss(batch, None);
        probe.params.data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad[i] - numeric).abs() / scale);
    }
    worst
}

/// Closed-loop controller running a trained policy at the control rate.
#[derive(Debug, Clone)]
pub struct PolicyController {
    pub weights: PolicyWeights,
    history: VecDeque<ObservationFrame>,
    queue: VecDeque<ActionCommand>,
    rng: ChaCha8Rng,
}

impl PolicyController {
    pub fn new(weights: PolicyWeights, seed: u64) -> Self {
        Self {
            weights,
            history: VecDeque::new(),
            queue: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for PolicyController {
    fn needs_observations(&self) -> bool {
        true
    }

    fn act(
        &mut self,
        _world: &WorldState,
        _monitor: &MonitorState,
        reading: Option<&SensorReading>,
    ) -> Result<ActionCommand, Error> {
        let reading = reading.ok_or_else(|| Error::ShapeMismatch("policy needs a sensor reading".into()))?;
        let n_obs = self.weights.config.n_obs;
        let frame = ObservationFrame::from_reading(reading);
        while self.history.len() < n_obs - 1 {
            self.history.push_back(frame.clone());
        }
        self.history.push_back(frame);
        while self.history.len() > n_obs {
            self.history.pop_front();
        }
        if self.queue.is_empty() {
            let frames: Vec<ObservationFrame> = self.history.iter().cloned().collect();
            self.queue.extend(infer(&self.weights, &frames, &mut self.rng)?);
        }
        Ok(self.queue.pop_front().unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::STORED_CAMERA_LEN;

    fn frame(k: u8) -> ObservationFrame {
        let mut tactile = TactileImage::zero_force();
        tactile.data[7] = 200 - k;
        ObservationFrame {
            camera: (0..STORED_CAMERA_LEN).map(|i| (i as u8).wrapping_mul(k)).collect(),
            tactile,
            pose: [0.19, 0.1 + k as f32 * 0.01, 1.5],
            wrench: [3.0, -(k as f32), 0.02],
            pressure: false,
        }
    }

    fn small(variant: Variant) -> PolicyConfig {
        PolicyConfig {
            variant,
            hidden: 32,
            camera_embed: 8,
            tactile_embed: 4,
            ..PolicyConfig::default()
        }
    }

    #[test]
    fn masking_rules() {
        let f = frame(3);
        assert_eq!(mask_observation(&f, Variant::ForceInformed), f);
        let b = mask_observation(&f, Variant::Baseline);
        assert_eq!(b.wrench, [0.0; 3]);
        assert_eq!(b.tactile, TactileImage::zero_force());
        assert_eq!(b.tactile.pixel(0, 0), [0, 127, 127]);
        assert_eq!(mask_observation(&f, Variant::WrenchInformed).wrench, f.wrench);
        assert_eq!(mask_observation(&f, Variant::TactileInformed).tactile, f.tactile);
        for v in Variant::ALL {
            let once = mask_observation(&f, v);
            assert_eq!(mask_observation(&once, v), once);
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn schedule_shapes() {
        let ab = cosine_alpha_bars(100);
        assert_eq!(ab.len(), 100);
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
        assert!(ab[0] < 1.0 && ab[0] > 0.99 && ab[99] < 1e-3);
        let steps = sampler_timesteps(100, 10);
        assert_eq!(steps, vec![99, 89, 79, 69, 59, 49, 39, 29, 19, 9]);
    }

    #[test]
    fn parameter_budget() {
        let net = DenoiserNet::<f32>::new(&PolicyConfig::default(), 0);
        assert!(net.parameter_count() < 500_000, "{}", net.parameter_count());
    }

    #[test]
    fn untrained_inference_is_bounded_and_repeatable() {
        let w = PolicyWeights::init(small(Variant::ForceInformed), 4).unwrap();
        let frames = [frame(1), frame(2)];
        let a = infer(&w, &frames, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = infer(&w, &frames, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        for c in &a {
            for v in c.twist.to_array() {
                assert!(v.is_finite() && (-1.0..=1.0).contains(&v));
            }
        }
        assert!(matches!(
            infer(&w, &frames[..1], &mut ChaCha8Rng::seed_from_u64(9)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn baseline_ignores_force_inputs() {
        let w = PolicyWeights::init(small(Variant::Baseline), 5).unwrap();
        let frames = [frame(1), frame(2)];
        let mut other = frames.clone();
        for f in &mut other {
            f.wrench = [40.0, -12.0, 0.5];
            f.tactile.data.iter_mut().for_each(|p| *p = p.wrapping_add(90));
        }
        let a = infer(&w, &frames, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = infer(&w, &other, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = small(Variant::ForceInformed);
        let net = DenoiserNet::<f64>::new(&cfg, 3);
        let w = PolicyWeights::init(cfg, 3).unwrap();
        let ab = cosine_alpha_bars(100);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch: Vec<TrainingExample<f64>> = (0..2)
            .map(|k| {
                let frames = vec![w.input(&frame(k)), w.input(&frame(k + 1))];
                let actions: Vec<f64> = (0..48).map(|i| ((i * 5 + k as usize) % 7) as f64 / 4.0 - 0.8).collect();
                TrainingExample::new(frames, &actions, gaussian(&mut rng, 48), 17 + 40 * k as usize, &ab)
            })
            .collect();
        let err = gradient_check(&net, &batch, 200, 11);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = PolicyWeights::init(small(Variant::TactileInformed), 6).unwrap();
        w.pose_stats.mean[1] = 0.25;
        w.wrench_stats.std[2] = 0.125;
        w.save(dir.path()).unwrap();
        let back = PolicyWeights::load(dir.path()).unwrap();
        assert_eq!(back, w);
        let bin = dir.path().join("tensors.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(PolicyWeights::load(dir.path()), Err(Error::CorruptFile { .. })));
    }
}
