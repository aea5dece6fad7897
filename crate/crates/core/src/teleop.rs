//! WebSocket bridge between the live simulator and a browser demonstrator.
//!
//! Every message is a JSON text envelope carrying `version` and `type`. A
//! `frame` envelope lists its image attachments and is followed by one binary
//! message holding their bytes back to back, in the listed order.
//!
//! Client to server: `command {twist, release}`, `start_episode {seed}`,
//! `save_episode`, `discard_episode`. Server to client: `episode_started`,
//! `frame`, `episode_ended`, `saved`, `save_refused`, `discarded`, `error`.
//! A malformed message gets an `error` envelope and the connection closes.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tungstenite::{Message, WebSocket};

use crate::data::{write_episode, EpisodeLog};
use crate::geom::{ActionCommand, Twist2D};
use crate::rollout::{derive_seed, Episode, RolloutOptions};
use crate::safety::{MonitorState, Verdict};
use crate::scene::{generate, SceneSchematic, ShelfSpec};
use crate::sensors::camera::CAMERA_SIZE;
use crate::sensors::tactile::{TACTILE_HEIGHT, TACTILE_WIDTH};
use crate::sensors::SensorReading;
use crate::sim::{SimParams, WorldState};
use crate::Error;

pub const PROTOCOL_VERSION: u32 = 1;
/// Wall-clock period of one simulated tick.
pub const TICK_PERIOD: Duration = Duration::from_millis(100);
/// A command older than this is treated as missing.
pub const COMMAND_HOLD: Duration = Duration::from_millis(250);
/// Upscale factor of the display copy of the tactile image.
pub const TACTILE_VIEW_SCALE: usize = 10;

const POLL_INTERVAL: Duration = Duration::from_millis(5);

/// Warning fractions for the force panel: net force over its threshold and
/// each side's largest taxel force over the peak threshold.
pub fn warn_levels(monitor: &MonitorState) -> (f64, f64, f64) {
    (monitor.warn_net, monitor.warn_peak_left, monitor.warn_peak_right)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TeleopCommandMsg {
    Command { twist: [f64; 3], release: bool },
    StartEpisode { seed: u64 },
    SaveEpisode,
    DiscardEpisode,
}

impl TeleopCommandMsg {
    pub fn to_text(&self) -> String {
        envelope(self)
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        let value = open_envelope(text)?;
        serde_json::from_value(value).map_err(|e| Error::ProtocolViolation(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    EpisodeStarted { seed: u64 },
    EpisodeEnded { verdict: String, elapsed: f64 },
    Saved { path: String },
    SaveRefused { reason: String },
    Discarded,
    Error { message: String },
}

impl ServerEvent {
    pub fn to_text(&self) -> String {
        envelope(self)
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        let value = open_envelope(text)?;
        serde_json::from_value(value).map_err(|e| Error::ProtocolViolation(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopFrameMsg {
    pub tick: u64,
    pub elapsed: f64,
    pub warn_net: f64,
    pub warn_peak_left: f64,
    pub warn_peak_right: f64,
    pub pressure_acquired: bool,
    pub verdict: String,
    /// Tool-point pose (x, y, theta), for display.
    pub pose: [f64; 3],
    /// 128x128 RGB.
    #[serde(skip)]
    pub camera: Vec<u8>,
    /// 20x5 RGB.
    #[serde(skip)]
    pub tactile: Vec<u8>,
    /// 200x50 RGB.
    #[serde(skip)]
    pub tactile_view: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct FrameHeader {
    #[serde(flatten)]
    frame: TeleopFrameMsg,
    attachments: Vec<Attachment>,
}

fn frame_attachments() -> Vec<Attachment> {
    let image = |name: &str, width, height| Attachment {
        name: name.into(),
        width,
        height,
        channels: 3,
        bytes: width * height * 3,
    };
    vec![
        image("camera", CAMERA_SIZE, CAMERA_SIZE),
        image("tactile", TACTILE_WIDTH, TACTILE_HEIGHT),
        image(
            "tactile_view",
            TACTILE_WIDTH * TACTILE_VIEW_SCALE,
            TACTILE_HEIGHT * TACTILE_VIEW_SCALE,
        ),
    ]
}

impl TeleopFrameMsg {
    /// Text envelope and the binary attachment message.
    pub fn encode(&self) -> (String, Vec<u8>) {
        let header = FrameHeader {
            frame: self.clone(),
            attachments: frame_attachments(),
        };
        let mut value = serde_json::to_value(&header).expect("frame header serializes");
        value["type"] = "frame".into();
        value["version"] = PROTOCOL_VERSION.into();
        let mut bin = Vec::with_capacity(self.camera.len() + self.tactile.len() + self.tactile_view.len());
        bin.extend_from_slice(&self.camera);
        bin.extend_from_slice(&self.tactile);
        bin.extend_from_slice(&self.tactile_view);
        (value.to_string(), bin)
    }

    pub fn decode(text: &str, bin: &[u8]) -> Result<Self, Error> {
        let value = open_envelope(text)?;
        if value["type"] != "frame" {
            return Err(Error::ProtocolViolation(format!("expected a frame, got {}", value["type"])));
        }
        let header: FrameHeader =
            serde_json::from_value(value).map_err(|e| Error::ProtocolViolation(e.to_string()))?;
        let total: usize = header.attachments.iter().map(|a| a.bytes).sum();
        if total != bin.len() {
            return Err(Error::ProtocolViolation(format!(
                "attachments declare {total} bytes, got {}",
                bin.len()
            )));
        }
        let mut frame = header.frame;
        let mut at = 0;
        for a in &header.attachments {
            let bytes = bin[at..at + a.bytes].to_vec();
            at += a.bytes;
            match a.name.as_str() {
                "camera" => frame.camera = bytes,
                "tactile" => frame.tactile = bytes,
                "tactile_view" => frame.tactile_view = bytes,
                _ => {}
            }
        }
        Ok(frame)
    }
}

fn envelope<T: Serialize>(msg: &T) -> String {
    let mut value = serde_json::to_value(msg).expect("message serializes");
    value["version"] = PROTOCOL_VERSION.into();
    value.to_string()
}

fn open_envelope(text: &str) -> Result<Value, Error> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| Error::ProtocolViolation(format!("not JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::ProtocolViolation("envelope must be an object".into()))?;
    match obj.remove("version").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => Ok(value),
        Some(v) => Err(Error::ProtocolViolation(format!("unsupported version {v}"))),
        None => Err(Error::ProtocolViolation("missing version".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub spec: ShelfSpec,
    pub params: SimParams,
    pub rollout: RolloutOptions,
    /// Directory saved episodes are written to.
    pub out_dir: PathBuf,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            spec: ShelfSpec::default(),
            params: SimParams::default(),
            rollout: RolloutOptions::default(),
            out_dir: PathBuf::from("teleop_episodes"),
        }
    }
}

struct Live {
    seed: u64,
    schematic: SceneSchematic,
    episode: Episode,
    /// Observation shown to the operator, recorded with the next command.
    reading: SensorReading,
}

/// One operator's episode lifecycle, independent of the transport.
pub struct Session {
    pub config: SessionConfig,
    live: Option<Live>,
    saved: usize,
}

impl Session {
    pub fn new(config: SessionConfig) -> Self {
        Self {
            config,
            live: None,
            saved: 0,
        }
    }

    pub fn is_running(&self) -> bool {
        self.live.as_ref().is_some_and(|l| !l.episode.is_over())
    }

    pub fn verdict(&self) -> Option<Verdict> {
        self.live.as_ref().map(|l| l.episode.outcome.verdict)
    }

    pub fn world(&self) -> Option<&WorldState> {
        self.live.as_ref().map(|l| &l.episode.world)
    }

    /// Generates the scene for `seed` and returns its first frame.
    pub fn start(&mut self, seed: u64) -> Result<TeleopFrameMsg, Error> {
        let schematic = generate(seed, &self.config.spec)?;
        let world = WorldState::from_schematic(&schematic, self.config.spec, self.config.params)?;
        let opts = RolloutOptions {
            sensor_seed: derive_seed(seed, 1, 0),
            record_frames: true,
            ..self.config.rollout
        };
        let mut episode = Episode::new(world, &opts);
        let reading = episode.observe();
        self.live = Some(Live {
            seed,
            schematic,
            episode,
            reading,
        });
        Ok(self.frame().expect("episode is live"))
    }

    /// Advances one tick under `cmd`. A finished episode stays frozen.
    pub fn tick(&mut self, cmd: ActionCommand) -> Result<Option<TeleopFrameMsg>, Error> {
        let Some(live) = self.live.as_mut() else {
            return Ok(None);
        };
        if !live.episode.is_over() {
            live.episode.step(cmd, Some(live.reading.clone()))?;
            live.reading = live.episode.observe();
        }
        Ok(self.frame())
    }

    pub fn frame(&self) -> Option<TeleopFrameMsg> {
        let live = self.live.as_ref()?;
        let ep = &live.episode;
        let (warn_net, warn_peak_left, warn_peak_right) = warn_levels(&ep.monitor);
        let pose = ep.world.probe.pose;
        Some(TeleopFrameMsg {
            tick: ep.world.tick,
            elapsed: if ep.is_over() { ep.outcome.elapsed } else { ep.world.time },
            warn_net,
            warn_peak_left,
            warn_peak_right,
            pressure_acquired: live.reading.pressure.acquired,
            verdict: ep.outcome.verdict.name().into(),
            pose: [pose.x, pose.y, pose.theta],
            camera: live.reading.camera.data.clone(),
            tactile: live.reading.tactile.data.to_vec(),
            tactile_view: live.reading.tactile.upscale(TACTILE_VIEW_SCALE),
        })
    }

    /// The episode so far as a log.
    pub fn log(&self) -> Option<EpisodeLog> {
        let live = self.live.as_ref()?;
        Some(EpisodeLog::from_rollout(live.seed, live.schematic.clone(), &live.episode.result()))
    }

    /// Writes the episode if it succeeded; otherwise says why not.
    pub fn save(&mut self) -> Result<Result<PathBuf, String>, Error> {
        let Some(live) = self.live.as_ref() else {
            return Ok(Err("no episode".into()));
        };
        let verdict = live.episode.outcome.verdict;
        if verdict != Verdict::Success {
            return Ok(Err(format!("episode verdict is {verdict}; only successes are saved")));
        }
        let log = self.log().expect("episode is live");
        let path = self
            .config
            .out_dir
            .join(format!("teleop_{:016x}_{:03}", live.seed, self.saved));
        write_episode(&log, &path)?;
        self.saved += 1;
        self.live = None;
        Ok(Ok(path))
    }

    pub fn discard(&mut self) {
        self.live = None;
    }
}

/// Listening teleop server; each connection gets its own [`Session`].
pub struct Server {
    listener: TcpListener,
    config: SessionConfig,
}

impl Server {
    pub fn bind(port: u16, config: SessionConfig) -> Result<Self, Error> {
        let listener = TcpListener::bind(("127.0.0.1", port)).map_err(|e| match e.kind() {
            ErrorKind::AddrInUse => Error::PortInUse(port),
            _ => Error::Io(e),
        })?;
        Ok(Self { listener, config })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, Error> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections until the listener fails.
    pub fn run(self) -> Result<(), Error> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let config = self.config.clone();
            thread::spawn(move || {
                if let Err(e) = handle_connection(stream, config) {
                    eprintln!("teleop session ended: {e}");
                }
            });
        }
        Ok(())
    }
}

/// Binds `port` and serves until shutdown.
pub fn serve(port: u16, config: SessionConfig) -> Result<(), Error> {
    Server::bind(port, config)?.run()
}

fn ws_err(e: tungstenite::Error) -> Error {
    match e {
        tungstenite::Error::Io(e) => Error::Io(e),
        other => Error::ProtocolViolation(other.to_string()),
    }
}

fn send_text(ws: &mut WebSocket<TcpStream>, text: String) -> Result<(), Error> {
    ws.send(Message::text(text)).map_err(ws_err)
}

fn send_frame(ws: &mut WebSocket<TcpStream>, frame: &TeleopFrameMsg) -> Result<(), Error> {
    let (text, bin) = frame.encode();
    send_text(ws, text)?;
    ws.send(Message::binary(bin)).map_err(ws_err)
}

fn handle_connection(stream: TcpStream, config: SessionConfig) -> Result<(), Error> {
    let mut ws = tungstenite::accept(stream).map_err(|e| Error::ProtocolViolation(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(POLL_INTERVAL))?;
    let mut session = Session::new(config);
    let mut latest: Option<(ActionCommand, Instant)> = None;
    let mut next_tick = Instant::now() + TICK_PERIOD;

    loop {
        match ws.read() {
            Ok(Message::Text(text)) => match TeleopCommandMsg::from_text(&text) {
                Ok(TeleopCommandMsg::Command { twist, release }) => {
                    let cmd = ActionCommand::new(Twist2D::from_array(twist), release).quantized();
                    latest = Some((cmd, Instant::now()));
                }
                Ok(TeleopCommandMsg::StartEpisode { seed }) => {
                    let frame = session.start(seed)?;
                    latest = None;
                    send_text(&mut ws, ServerEvent::EpisodeStarted { seed }.to_text())?;
                    send_frame(&mut ws, &frame)?;
                    next_tick = Instant::now() + TICK_PERIOD;
                }
                Ok(TeleopCommandMsg::SaveEpisode) => {
                    let event = match session.save()? {
                        Ok(path) => ServerEvent::Saved {
                            path: path.display().to_string(),
                        },
                        Err(reason) => ServerEvent::SaveRefused { reason },
                    };
                    send_text(&mut ws, event.to_text())?;
                }
                Ok(TeleopCommandMsg::DiscardEpisode) => {
                    session.discard();
                    send_text(&mut ws, ServerEvent::Discarded.to_text())?;
                }
                Err(e) => return reject(&mut ws, e),
            },
            Ok(Message::Binary(_)) => {
                return reject(&mut ws, Error::ProtocolViolation("unexpected binary message".into()))
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(ws_err(e)),
        }

        let now = Instant::now();
        if now < next_tick {
            continue;
        }
        // Never catch up with a burst: the next tick is a full period away.
        next_tick = now + TICK_PERIOD;
        if !session.is_running() {
            continue;
        }
        let cmd = match latest {
            Some((cmd, at)) if now.duration_since(at) <= COMMAND_HOLD => cmd,
            _ => ActionCommand::hold(),
        };
        if let Some(frame) = session.tick(cmd)? {
            send_frame(&mut ws, &frame)?;
            if !session.is_running() {
                let event = ServerEvent::EpisodeEnded {
                    verdict: frame.verdict.clone(),
                    elapsed: frame.elapsed,
                };
                send_text(&mut ws, event.to_text())?;
            }
        }
    }
}

fn reject(ws: &mut WebSocket<TcpStream>, e: Error) -> Result<(), Error> {
    let event = ServerEvent::Error {
        message: e.to_string(),
    };
    send_text(ws, event.to_text())?;
    let _ = ws.close(None);
    let _ = ws.flush();
    Err(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Side, TaxelGrid, Wrench2D};
    use crate::safety::SafetyConfig;

    #[test]
    fn warn_levels_examples() {
        let mut m = MonitorState::new(SafetyConfig::default());
        assert_eq!(warn_levels(&m), (0.0, 0.0, 0.0));
        let mut grid = TaxelGrid::zeros();
        grid.left[3][2] = [0.0, 0.0, -6.0];
        m.update(0.1, &Wrench2D::new(13.0, 0.0, 0.0), &grid).unwrap();
        let (net, left, right) = warn_levels(&m);
        assert!((net - 0.5).abs() < 1e-12);
        assert!((left - 1.0).abs() < 1e-12, "{left} {}", grid.side_peak(Side::Left));
        assert_eq!(right, 0.0);
    }

    #[test]
    fn command_round_trip() {
        for msg in [
            TeleopCommandMsg::Command {
                twist: [0.5, -1.0, 0.25],
                release: true,
            },
            TeleopCommandMsg::StartEpisode { seed: 42 },
            TeleopCommandMsg::SaveEpisode,
            TeleopCommandMsg::DiscardEpisode,
        ] {
            let text = msg.to_text();
            assert!(text.contains("\"version\":1"));
            assert_eq!(TeleopCommandMsg::from_text(&text).unwrap(), msg);
        }
    }

    #[test]
    fn envelope_requires_version() {
        for bad in [
            r#"{"type":"save_episode"}"#,
            r#"{"type":"save_episode","version":9}"#,
            r#"{"type":"fly","version":1}"#,
            r#"{"type":"command","version":1,"twist":[1,2]}"#,
            "[1,2]",
            "not json",
        ] {
            assert!(
                matches!(TeleopCommandMsg::from_text(bad), Err(Error::ProtocolViolation(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn frame_round_trip() {
        let mut session = Session::new(SessionConfig::default());
        let frame = session.start(7).unwrap();
        assert_eq!(frame.camera.len(), 128 * 128 * 3);
        assert_eq!(frame.tactile.len(), 20 * 5 * 3);
        assert_eq!(frame.tactile_view.len(), 200 * 50 * 3);
        let (text, bin) = frame.encode();
        assert_eq!(TeleopFrameMsg::decode(&text, &bin).unwrap(), frame);
        assert!(TeleopFrameMsg::decode(&text, &bin[1..]).is_err());
    }

    #[test]
    fn zero_hold_keeps_pose() {
        let mut session = Session::new(SessionConfig::default());
        let first = session.start(3).unwrap();
        let mut last = first.clone();
        for _ in 0..10 {
            last = session.tick(ActionCommand::hold()).unwrap().unwrap();
        }
        assert_eq!(last.pose, first.pose);
        assert_eq!(last.tick, 10);
    }

    #[test]
    fn full_forward_advances_one_and_a_half_centimeters_per_tick() {
        let mut session = Session::new(SessionConfig::default());
        let first = session.start(3).unwrap();
        let cmd = ActionCommand::new(Twist2D::new(1.0, 0.0, 0.0), false);
        let next = session.tick(cmd).unwrap().unwrap();
        let d = (next.pose[0] - first.pose[0]).hypot(next.pose[1] - first.pose[1]);
        assert!((d - 0.015).abs() < 1e-9, "{d}");
    }

    #[test]
    fn failed_episode_is_not_saved() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = SessionConfig {
            out_dir: dir.path().to_path_buf(),
            ..SessionConfig::default()
        };
        // Any contact at all counts as excessive.
        config.rollout.safety.net_force_threshold = 0.0;
        let mut session = Session::new(config);
        session.start(5).unwrap();
        let mut frame = None;
        for _ in 0..20 {
            frame = session.tick(ActionCommand::hold()).unwrap();
        }
        let frame = frame.unwrap();
        assert_eq!(frame.verdict, "excessive_net");
        let frozen = session.tick(ActionCommand::new(Twist2D::new(1.0, 0.0, 0.0), false)).unwrap().unwrap();
        assert_eq!(frozen.pose, frame.pose);
        assert_eq!(frozen.tick, frame.tick);
        assert!(session.save().unwrap().is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
