//! Episode recording format, dataset assembly and normalization.
//!
//! An episode is a directory holding `manifest.txt`, `schematic.toml` and
//! one little-endian blob per array stream. Frames are stored unmasked; the
//! four ablation views are derived when a dataset is loaded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::geom::{ActionCommand, Twist2D};
use crate::rollout::RolloutResult;
use crate::safety::{Outcome, Verdict};
use crate::scene::SceneSchematic;
use crate::sensors::{CameraImage, SensorReading, TactileImage, CAMERA_SIZE};
use crate::Error;

pub const EPISODE_FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT_VERSION: u32 = 1;
const EPISODE_MAGIC: &str = "gentle-reach-episode";
const DATASET_MAGIC: &str = "gentle-reach-dataset";

/// Side of the stored camera image after box downsampling.
pub const STORED_CAMERA_SIZE: usize = 32;
pub const STORED_CAMERA_LEN: usize = STORED_CAMERA_SIZE * STORED_CAMERA_SIZE * 3;
pub const TACTILE_LEN: usize = crate::sensors::tactile::TACTILE_HEIGHT * crate::sensors::tactile::TACTILE_WIDTH * 3;

/// One synchronized, unmasked sample as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    /// 32x32 RGB, row-major.
    pub camera: Vec<u8>,
    pub tactile: TactileImage,
    /// x, y, theta.
    pub pose: [f32; 3],
    /// Tool-frame fx, fy, tau.
    pub wrench: [f32; 3],
    pub pressure: bool,
}

impl ObservationFrame {
    pub fn from_reading(r: &SensorReading) -> Self {
        Self {
            camera: downsample(&r.camera, CAMERA_SIZE / STORED_CAMERA_SIZE),
            tactile: r.tactile,
            pose: [r.pose.x as f32, r.pose.y as f32, r.pose.theta as f32],
            wrench: [r.wrench.fx as f32, r.wrench.fy as f32, r.wrench.tau as f32],
            pressure: r.pressure.acquired,
        }
    }

    /// Pose as (x, y, cos theta, sin theta).
    pub fn pose_features(&self) -> [f64; 4] {
        let th = self.pose[2] as f64;
        [self.pose[0] as f64, self.pose[1] as f64, th.cos(), th.sin()]
    }

    pub fn wrench_features(&self) -> [f64; 3] {
        self.wrench.map(|v| v as f64)
    }
}

/// Box-filter downsampling to 8-bit RGB, rounding to nearest.
pub fn downsample(img: &CameraImage, factor: usize) -> Vec<u8> {
    let s = CAMERA_SIZE / factor;
    let mut acc = vec![0u32; s * s * 3];
    for y in 0..CAMERA_SIZE {
        for x in 0..CAMERA_SIZE {
            let p = img.pixel(y, x);
            let o = ((y / factor) * s + x / factor) * 3;
            for ch in 0..3 {
                acc[o + ch] += p[ch] as u32;
            }
        }
    }
    let n = (factor * factor) as u32;
    acc.into_iter().map(|v| ((v + n / 2) / n) as u8).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeHeader {
    pub scene_seed: u64,
    pub schematic: SceneSchematic,
    /// Whether every tick carries an observation frame.
    pub raw_frames: bool,
    pub format_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTick {
    pub t: f32,
    pub frame: Option<ObservationFrame>,
    /// Normalized twist.
    pub action: [f32; 3],
    pub suction_release: bool,
    pub f_net: f32,
    pub f_peak: f32,
    pub verdict: Verdict,
}

impl EpisodeTick {
    pub fn command(&self) -> ActionCommand {
        let a = self.action.map(|v| v as f64);
        ActionCommand::new(Twist2D::from_array(a), self.suction_release)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub ticks: Vec<EpisodeTick>,
    pub outcome: Outcome,
}

impl EpisodeLog {
    /// Converts a finished rollout. Frames are kept only if every record has one.
    pub fn from_rollout(scene_seed: u64, schematic: SceneSchematic, result: &RolloutResult) -> Self {
        let raw_frames = !result.records.is_empty() && result.records.iter().all(|r| r.reading.is_some());
        let ticks = result
            .records
            .iter()
            .map(|r| EpisodeTick {
                t: r.t as f32,
                frame: if raw_frames {
                    r.reading.as_ref().map(ObservationFrame::from_reading)
                } else {
                    None
                },
                action: r.action.twist.to_array().map(|v| v as f32),
                suction_release: r.action.suction_release,
                f_net: r.f_net as f32,
                f_peak: r.f_peak as f32,
                verdict: r.verdict,
            })
            .collect();
        Self {
            header: EpisodeHeader {
                scene_seed,
                schematic,
                raw_frames,
                format_version: EPISODE_FORMAT_VERSION,
            },
            ticks,
            outcome: result.outcome,
        }
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }
}

/// A named blob: element type, values per tick, and its bytes.
struct Stream {
    name: &'static str,
    kind: &'static str,
    width: usize,
    bytes: Vec<u8>,
}

impl Stream {
    fn f32s(name: &'static str, width: usize, values: impl Iterator<Item = f32>) -> Self {
        Self {
            name,
            kind: "f32",
            width,
            bytes: values.flat_map(f32::to_le_bytes).collect(),
        }
    }

    fn u8s(name: &'static str, width: usize, values: impl Iterator<Item = u8>) -> Self {
        Self {
            name,
            kind: "u8",
            width,
            bytes: values.collect(),
        }
    }

    fn elem_size(kind: &str) -> usize {
        if kind == "f32" {
            4
        } else {
            1
        }
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Writes `log` into directory `path`, creating it if needed.
pub fn write_episode(log: &EpisodeLog, path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path)?;
    let ticks = &log.ticks;
    let mut streams = vec![
        Stream::f32s("time", 1, ticks.iter().map(|k| k.t)),
        Stream::f32s("action", 3, ticks.iter().flat_map(|k| k.action)),
        Stream::u8s("release", 1, ticks.iter().map(|k| k.suction_release as u8)),
        Stream::f32s("forces", 2, ticks.iter().flat_map(|k| [k.f_net, k.f_peak])),
        Stream::u8s("verdict", 1, ticks.iter().map(|k| k.verdict.code())),
    ];
    if log.header.raw_frames {
        let frames: Vec<&ObservationFrame> = ticks
            .iter()
            .map(|k| k.frame.as_ref())
            .collect::<Option<_>>()
            .ok_or_else(|| corrupt(path, "raw_frames set but a tick has no frame"))?;
        if frames.iter().any(|f| f.camera.len() != STORED_CAMERA_LEN) {
            return Err(Error::ShapeMismatch("stored camera must be 32x32x3".into()));
        }
        streams.extend([
            Stream::f32s("pose", 3, frames.iter().flat_map(|f| f.pose)),
            Stream::f32s("wrench", 3, frames.iter().flat_map(|f| f.wrench)),
            Stream::u8s("pressure", 1, frames.iter().map(|f| f.pressure as u8)),
            Stream::u8s("camera", STORED_CAMERA_LEN, frames.iter().flat_map(|f| f.camera.iter().copied())),
            Stream::u8s("tactile", TACTILE_LEN, frames.iter().flat_map(|f| f.tactile.data)),
        ]);
    }

    let h = &log.header;
    let o = &log.outcome;
    let mut m = String::new();
    writeln!(m, "{EPISODE_MAGIC}").unwrap();
    writeln!(m, "format_version {}", h.format_version).unwrap();
    writeln!(m, "scene_seed {}", h.scene_seed).unwrap();
    writeln!(m, "raw_frames {}", h.raw_frames as u8).unwrap();
    writeln!(m, "ticks {}", ticks.len()).unwrap();
    writeln!(m, "camera_shape {STORED_CAMERA_SIZE} {STORED_CAMERA_SIZE} 3").unwrap();
    writeln!(m, "outcome {} {:?} {}", o.verdict, o.elapsed, o.acquired_target as u8).unwrap();
    for s in &streams {
        writeln!(m, "stream {} {} {} {}", s.name, s.kind, s.width, s.bytes.len()).unwrap();
        fs::write(path.join(format!("{}.bin", s.name)), &s.bytes)?;
    }
    fs::write(path.join("schematic.toml"), h.schematic.to_text())?;
    fs::write(path.join("manifest.txt"), m)?;
    Ok(())
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str, v: Option<&str>) -> Result<T, Error> {
    v.and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt(path, format!("bad {field}")))
}

/// Reads an episode directory written by [`write_episode`].
pub fn read_episode(path: &Path) -> Result<EpisodeLog, Error> {
    let manifest_path = path.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)?;
    let mut lines = text.lines();
    if lines.next() != Some(EPISODE_MAGIC) {
        return Err(corrupt(&manifest_path, "bad magic"));
    }
    let mut fields: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut streams: BTreeMap<String, (String, usize, usize)> = BTreeMap::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        if key == "stream" {
            if rest.len() != 4 {
                return Err(corrupt(&manifest_path, "bad stream line"));
            }
            let width = parse(&manifest_path, "stream width", Some(rest[2]))?;
            let len = parse(&manifest_path, "stream length", Some(rest[3]))?;
            streams.insert(rest[0].to_string(), (rest[1].to_string(), width, len));
        } else {
            fields.insert(key, rest);
        }
    }
    let field = |k: &str, i: usize| fields.get(k).and_then(|v| v.get(i).copied());
    let version: u32 = parse(&manifest_path, "format_version", field("format_version", 0))?;
    if version != EPISODE_FORMAT_VERSION {
        return Err(corrupt(&manifest_path, format!("unknown format_version {version}")));
    }
    let scene_seed: u64 = parse(&manifest_path, "scene_seed", field("scene_seed", 0))?;
    let raw_frames = parse::<u8>(&manifest_path, "raw_frames", field("raw_frames", 0))? == 1;
    let n: usize = parse(&manifest_path, "ticks", field("ticks", 0))?;
    let verdict: Verdict = parse(&manifest_path, "outcome verdict", field("outcome", 0))?;
    let elapsed: f64 = parse(&manifest_path, "outcome elapsed", field("outcome", 1))?;
    let acquired = parse::<u8>(&manifest_path, "outcome acquired", field("outcome", 2))? == 1;
    let schematic = SceneSchematic::from_text(&fs::read_to_string(path.join("schematic.toml"))?)?;

    let load = |name: &str, kind: &str, width: usize| -> Result<Vec<u8>, Error> {
        let blob = path.join(format!("{name}.bin"));
        let (k, w, len) = streams
            .get(name)
            .ok_or_else(|| corrupt(&manifest_path, format!("missing stream {name}")))?;
        if k != kind || *w != width || *len != n * width * Stream::elem_size(kind) {
            return Err(corrupt(&manifest_path, format!("stream {name} declaration")));
        }
        let bytes = fs::read(&blob)?;
        if bytes.len() != *len {
            return Err(corrupt(
                &blob,
                format!("length {} but manifest declares {len}", bytes.len()),
            ));
        }
        Ok(bytes)
    };
    let floats = |name: &str, width: usize| -> Result<Vec<f32>, Error> {
        Ok(load(name, "f32", width)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    let time = floats("time", 1)?;
    let action = floats("action", 3)?;
    let release = load("release", "u8", 1)?;
    let forces = floats("forces", 2)?;
    let verdicts = load("verdict", "u8", 1)?;
    let frames = if raw_frames {
        let pose = floats("pose", 3)?;
        let wrench = floats("wrench", 3)?;
        let pressure = load("pressure", "u8", 1)?;
        let camera = load("camera", "u8", STORED_CAMERA_LEN)?;
        let tactile = load("tactile", "u8", TACTILE_LEN)?;
        (0..n)
            .map(|i| ObservationFrame {
                camera: camera[i * STORED_CAMERA_LEN..][..STORED_CAMERA_LEN].to_vec(),
                tactile: TactileImage::from_bytes(&tactile[i * TACTILE_LEN..][..TACTILE_LEN]).unwrap(),
                pose: pose[i * 3..][..3].try_into().unwrap(),
                wrench: wrench[i * 3..][..3].try_into().unwrap(),
                pressure: pressure[i] != 0,
            })
            .map(Some)
            .collect()
    } else {
        vec![None; n]
    };

    let mut ticks = Vec::with_capacity(n);
    for (i, frame) in frames.into_iter().enumerate() {
        ticks.push(EpisodeTick {
            t: time[i],
            frame,
            action: action[i * 3..][..3].try_into().unwrap(),
            suction_release: release[i] != 0,
            f_net: forces[2 * i],
            f_peak: forces[2 * i + 1],
            verdict: Verdict::from_code(verdicts[i])
                .ok_or_else(|| corrupt(&path.join("verdict.bin"), "unknown verdict code"))?,
        });
    }
    Ok(EpisodeLog {
        header: EpisodeHeader {
            scene_seed,
            schematic,
            raw_frames,
            format_version: version,
        },
        ticks,
        outcome: Outcome {
            verdict,
            elapsed,
            acquired_target: acquired,
        },
    })
}

/// Mean and standard deviation per component.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl FieldStats {
    /// Population statistics; std is clamped to [`STD_FLOOR`].
    pub fn from_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let rows: Vec<&[f64]> = rows.collect();
        for r in &rows {
            n += 1;
            for (s, v) in sum.iter_mut().zip(r.iter()) {
                *s += v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n.max(1) as f64).collect();
        for r in &rows {
            for ((q, v), m) in sq.iter_mut().zip(r.iter()).zip(&mean) {
                *q += (v - m) * (v - m);
            }
        }
        let std = sq
            .iter()
            .map(|q| (q / n.max(1) as f64).sqrt().max(STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetConfig {
    pub n_obs: usize,
    pub pred_horizon: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_obs: 2,
            pred_horizon: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub episodes: Vec<String>,
    /// Keyed by field name: "pose" (x, y, cos, sin) and "wrench" (fx, fy, tau).
    pub stats: BTreeMap<String, FieldStats>,
    pub shapes: BTreeMap<String, Vec<usize>>,
    pub format_version: u32,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut m = String::new();
        writeln!(m, "{DATASET_MAGIC}").unwrap();
        writeln!(m, "format_version {}", self.format_version).unwrap();
        for e in &self.episodes {
            writeln!(m, "episode {e}").unwrap();
        }
        for (k, s) in &self.stats {
            let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
            writeln!(m, "mean {k} {}", join(&s.mean)).unwrap();
            writeln!(m, "std {k} {}", join(&s.std)).unwrap();
        }
        for (k, s) in &self.shapes {
            let dims: Vec<String> = s.iter().map(|d| d.to_string()).collect();
            writeln!(m, "shape {k} {}", dims.join(" ")).unwrap();
        }
        m
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        let bad = |r: &str| Error::Parse(format!("dataset manifest: {r}"));
        let mut lines = text.lines();
        if lines.next() != Some(DATASET_MAGIC) {
            return Err(bad("bad magic"));
        }
        let mut out = DatasetManifest {
            episodes: Vec::new(),
            stats: BTreeMap::new(),
            shapes: BTreeMap::new(),
            format_version: 0,
        };
        let nums = |v: &[&str]| -> Result<Vec<f64>, Error> {
            v.iter().map(|s| s.parse().map_err(|_| bad("number"))).collect()
        };
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [] => {}
                ["format_version", v] => out.format_version = v.parse().map_err(|_| bad("version"))?,
                ["episode", e] => out.episodes.push(e.to_string()),
                ["mean", k, rest @ ..] => {
                    out.stats.entry(k.to_string()).or_insert_with(|| FieldStats::identity(0)).mean = nums(rest)?
                }
                ["std", k, rest @ ..] => {
                    out.stats.entry(k.to_string()).or_insert_with(|| FieldStats::identity(0)).std = nums(rest)?
                }
                ["shape", k, rest @ ..] => {
                    let dims = rest
                        .iter()
                        .map(|s| s.parse().map_err(|_| bad("shape")))
                        .collect::<Result<_, _>>()?;
                    out.shapes.insert(k.to_string(), dims);
                }
                _ => return Err(bad(&format!("unrecognized line {line:?}"))),
            }
        }
        if out.format_version != DATASET_FORMAT_VERSION {
            return Err(bad("unknown format_version"));
        }
        if out.stats.values().any(|s| s.mean.len() != s.std.len()) {
            return Err(bad("mean/std length mismatch"));
        }
        Ok(out)
    }
}

/// One training sample: indices of `n_obs` observation ticks and
/// `pred_horizon` action ticks inside one episode, edge-replicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub episode: usize,
    pub obs: Vec<usize>,
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub config: DatasetConfig,
    pub episodes: Vec<EpisodeLog>,
    pub windows: Vec<Window>,
}

impl Dataset {
    pub fn frame(&self, episode: usize, tick: usize) -> &ObservationFrame {
        self.episodes[episode].ticks[tick]
            .frame
            .as_ref()
            .expect("dataset episodes carry frames")
    }

    pub fn action(&self, episode: usize, tick: usize) -> [f32; 3] {
        self.episodes[episode].ticks[tick].action
    }

    pub fn stats(&self, field: &str) -> &FieldStats {
        &self.manifest.stats[field]
    }
}

/// Windows for an episode of `len` ticks: one per tick.
pub fn episode_windows(episode: usize, len: usize, config: &DatasetConfig) -> Vec<Window> {
    (0..len)
        .map(|i| Window {
            episode,
            obs: (0..config.n_obs)
                .map(|k| (i + k + 1).saturating_sub(config.n_obs))
                .collect(),
            actions: (0..config.pred_horizon).map(|k| (i + k).min(len - 1)).collect(),
        })
        .collect()
}

/// Assembles sliding windows and normalization statistics over every frame.
/// Episodes must carry frames; names default to their index.
pub fn build_dataset(
    episodes: Vec<EpisodeLog>,
    names: Option<Vec<String>>,
    config: DatasetConfig,
) -> Result<Dataset, Error> {
    if episodes.iter().all(|e| e.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    if config.n_obs == 0 || config.pred_horizon == 0 {
        return Err(Error::InvalidConfig("n_obs and pred_horizon must be positive".into()));
    }
    let mut poses = Vec::new();
    let mut wrenches = Vec::new();
    for (i, e) in episodes.iter().enumerate() {
        for k in &e.ticks {
            let f = k.frame.as_ref().ok_or_else(|| {
                Error::ShapeMismatch(format!("episode {i} was recorded without frames"))
            })?;
            poses.push(f.pose_features());
            wrenches.push(f.wrench_features());
        }
    }
    let mut stats = BTreeMap::new();
    stats.insert("pose".into(), FieldStats::from_rows(poses.iter().map(|r| &r[..]), 4));
    stats.insert("wrench".into(), FieldStats::from_rows(wrenches.iter().map(|r| &r[..]), 3));
    let mut shapes = BTreeMap::new();
    shapes.insert("camera".into(), vec![STORED_CAMERA_SIZE, STORED_CAMERA_SIZE, 3]);
    shapes.insert(
        "tactile".into(),
        vec![crate::sensors::tactile::TACTILE_HEIGHT, crate::sensors::tactile::TACTILE_WIDTH, 3],
    );
    shapes.insert("pose".into(), vec![4]);
    shapes.insert("wrench".into(), vec![3]);
    shapes.insert("pressure".into(), vec![1]);
    shapes.insert("action".into(), vec![config.pred_horizon, 3]);
    let names = names.unwrap_or_else(|| (0..episodes.len()).map(|i| format!("episode_{i:04}")).collect());
    let windows = episodes
        .iter()
        .enumerate()
        .flat_map(|(i, e)| episode_windows(i, e.len(), &config))
        .collect();
    Ok(Dataset {
        manifest: DatasetManifest {
            episodes: names,
            stats,
            shapes,
            format_version: DATASET_FORMAT_VERSION,
        },
        config,
        episodes,
        windows,
    })
}

/// Writes episodes as `episode_NNNN` subdirectories plus `manifest.txt`.
pub fn write_dataset(dir: &Path, episodes: &[EpisodeLog], config: DatasetConfig) -> Result<DatasetManifest, Error> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (i, e) in episodes.iter().enumerate() {
        let name = format!("episode_{i:04}");
        write_episode(e, &dir.join(&name))?;
        names.push(name);
    }
    let ds = build_dataset(episodes.to_vec(), Some(names), config)?;
    fs::write(dir.join("manifest.txt"), ds.manifest.to_text())?;
    Ok(ds.manifest)
}

/// Loads every episode listed in a dataset directory's manifest.
pub fn read_dataset(dir: &Path, config: DatasetConfig) -> Result<Dataset, Error> {
    let manifest = DatasetManifest::from_text(&fs::read_to_string(dir.join("manifest.txt"))?)?;
    let episodes = manifest
        .episodes
        .iter()
        .map(|e| read_episode(&dir.join(e)))
        .collect::<Result<Vec<_>, _>>()?;
    build_dataset(episodes, Some(manifest.episodes), config)
}

/// Episode directories directly under `dir`, sorted by name.
pub fn list_episode_dirs(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.txt").is_file() && p.join("schematic.toml").is_file())
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate, ShelfSpec};

    fn frame(i: usize) -> ObservationFrame {
        ObservationFrame {
            camera: (0..STORED_CAMERA_LEN).map(|k| (k + i) as u8).collect(),
            tactile: TactileImage::zero_force(),
            pose: [0.1 * i as f32, 0.2, 1.5],
            wrench: [i as f32, -0.5, 0.01],
            pressure: i % 2 == 0,
        }
    }

    pub(crate) fn synthetic(len: usize, frames: bool) -> EpisodeLog {
        let schematic = generate(5, &ShelfSpec::default()).unwrap();
        EpisodeLog {
            header: EpisodeHeader {
                scene_seed: 5,
                schematic,
                raw_frames: frames,
                format_version: EPISODE_FORMAT_VERSION,
            },
            ticks: (0..len)
                .map(|i| EpisodeTick {
                    t: 0.1 * i as f32,
                    frame: frames.then(|| frame(i)),
                    action: [0.5, -0.25, i as f32 / 100.0],
                    suction_release: false,
                    f_net: 1.5 * i as f32,
                    f_peak: 0.1,
                    verdict: if i + 1 == len { Verdict::Success } else { Verdict::Running },
                })
                .collect(),
            outcome: Outcome {
                verdict: Verdict::Success,
                elapsed: 0.1 * len as f64,
                acquired_target: true,
            },
        }
    }

    #[test]
    fn window_count_and_padding() {
        let w = episode_windows(0, 20, &DatasetConfig::default());
        assert_eq!(w.len(), 20);
        assert_eq!(w[0].obs, vec![0, 0]);
        assert_eq!(w[5].obs, vec![4, 5]);
        assert_eq!(w[19].actions, vec![19; 16]);
        assert_eq!(w[10].actions[..3], [10, 11, 12]);
    }

    #[test]
    fn constant_field_is_clamped() {
        let rows = [[2.0, 1.0], [2.0, 3.0]];
        let s = FieldStats::from_rows(rows.iter().map(|r| &r[..]), 2);
        assert_eq!(s.std[0], STD_FLOOR);
        assert_eq!(s.normalize(&[2.0, 1.0])[0], 0.0);
        assert!((s.std[1] - 1.0).abs() < 1e-12);
        let back = s.denormalize(&s.normalize(&[2.0, 7.5]));
        assert!((back[1] - 7.5).abs() < 1e-12);
    }

    #[test]
    fn windows_stay_inside_episodes() {
        let ds = build_dataset(vec![synthetic(7, true), synthetic(12, true)], None, DatasetConfig::default()).unwrap();
        assert_eq!(ds.windows.len(), 19);
        for w in &ds.windows {
            let len = ds.episodes[w.episode].len();
            assert!(w.obs.iter().chain(&w.actions).all(|&i| i < len));
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(
            build_dataset(vec![synthetic(0, true)], None, DatasetConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let ds = build_dataset(vec![synthetic(9, true)], None, DatasetConfig::default()).unwrap();
        let back = DatasetManifest::from_text(&ds.manifest.to_text()).unwrap();
        assert_eq!(back, ds.manifest);
    }

    #[test]
    fn downsample_rounds_block_means() {
        let mut data = vec![0u8; CAMERA_SIZE * CAMERA_SIZE * 3];
        data[0] = 255;
        data[3] = 1;
        let small = downsample(&CameraImage::from_bytes(data).unwrap(), 4);
        assert_eq!(small.len(), STORED_CAMERA_LEN);
        assert_eq!(small[0], 16);
    }
}
