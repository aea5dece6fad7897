use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message, WebSocket};

use gentle_reach::data::read_episode;
use gentle_reach::eval::eval_scene_seeds;
use gentle_reach::expert::{Expert, ExpertConfig};
use gentle_reach::geom::ActionCommand;
use gentle_reach::rollout::{derive_seed, rollout, Controller, RolloutOptions};
use gentle_reach::safety::{MonitorState, Verdict};
use gentle_reach::scene::{generate, ShelfSpec};
use gentle_reach::sensors::SensorReading;
use gentle_reach::sim::{SimParams, WorldState};
use gentle_reach::teleop::{Server, ServerEvent, Session, SessionConfig, TeleopCommandMsg, TeleopFrameMsg};
use gentle_reach::Error;

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn start_server(out_dir: &std::path::Path) -> String {
    let config = SessionConfig {
        out_dir: out_dir.to_path_buf(),
        ..SessionConfig::default()
    };
    let server = Server::bind(0, config).unwrap();
    let addr = server.local_addr().unwrap();
    thread::spawn(move || server.run());
    format!("ws://{addr}")
}

fn send(ws: &mut Client, msg: TeleopCommandMsg) {
    ws.send(Message::text(msg.to_text())).unwrap();
}

enum Incoming {
    Frame(TeleopFrameMsg),
    Event(ServerEvent),
}

fn next(ws: &mut Client) -> Incoming {
    loop {
        match ws.read().unwrap() {
            Message::Text(text) => {
                if text.contains("\"frame\"") {
                    let bin = match ws.read().unwrap() {
                        Message::Binary(b) => b,
                        other => panic!("expected attachments, got {other:?}"),
                    };
                    return Incoming::Frame(TeleopFrameMsg::decode(&text, &bin).unwrap());
                }
                return Incoming::Event(ServerEvent::from_text(&text).unwrap());
            }
            Message::Ping(_) | Message::Pong(_) => {}
            other => panic!("unexpected message {other:?}"),
        }
    }
}

#[test]
fn episode_streams_frames_at_the_control_rate() {
    let dir = tempfile::tempdir().unwrap();
    let (mut ws, _) = connect(start_server(dir.path())).unwrap();
    send(&mut ws, TeleopCommandMsg::StartEpisode { seed: 5 });
    assert!(matches!(next(&mut ws), Incoming::Event(ServerEvent::EpisodeStarted { seed: 5 })));
    let Incoming::Frame(first) = next(&mut ws) else {
        panic!("expected the initial frame");
    };
    assert_eq!(first.tick, 0);
    assert_eq!(first.camera.len(), 128 * 128 * 3);
    assert_eq!(first.tactile.len(), 20 * 5 * 3);
    assert_eq!(first.tactile_view.len(), 200 * 50 * 3);

    let start = Instant::now();
    let mut frames = Vec::new();
    while start.elapsed() < Duration::from_millis(1500) {
        send(
            &mut ws,
            TeleopCommandMsg::Command {
                twist: [0.5, 0.0, 0.0],
                release: false,
            },
        );
        if let Incoming::Frame(f) = next(&mut ws) {
            frames.push((Instant::now(), f));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(frames.len() as f64 <= elapsed / 0.1 + 1.0, "{} frames in {elapsed:.2} s", frames.len());
    assert!(frames.len() >= 5, "{} frames", frames.len());
    for w in frames.windows(2) {
        assert_eq!(w[1].1.tick, w[0].1.tick + 1);
        assert!(w[1].0 - w[0].0 >= Duration::from_millis(80));
    }
    let last = &frames.last().unwrap().1;
    // 0.5 of the 0.15 m/s limit for every tick so far, along +y from home.
    assert!(last.pose[1] - first.pose[1] > 0.0);
    assert_eq!(last.verdict, "running");

    send(&mut ws, TeleopCommandMsg::SaveEpisode);
    loop {
        match next(&mut ws) {
            Incoming::Event(ServerEvent::SaveRefused { reason }) => {
                assert!(reason.contains("running"), "{reason}");
                break;
            }
            Incoming::Frame(_) => {}
            Incoming::Event(e) => panic!("unexpected {e:?}"),
        }
    }
    send(&mut ws, TeleopCommandMsg::DiscardEpisode);
    loop {
        match next(&mut ws) {
            Incoming::Event(ServerEvent::Discarded) => break,
            Incoming::Frame(_) => {}
            Incoming::Event(e) => panic!("unexpected {e:?}"),
        }
    }
    assert!(std::fs::read_dir(dir.path()).map_or(true, |d| d.count() == 0));
}

#[test]
fn idle_operator_holds_the_probe() {
    let dir = tempfile::tempdir().unwrap();
    let (mut ws, _) = connect(start_server(dir.path())).unwrap();
    send(&mut ws, TeleopCommandMsg::StartEpisode { seed: 9 });
    next(&mut ws);
    let Incoming::Frame(first) = next(&mut ws) else {
        panic!("expected the initial frame");
    };
    let mut last = first.clone();
    for _ in 0..4 {
        if let Incoming::Frame(f) = next(&mut ws) {
            last = f;
        }
    }
    assert!(last.tick >= 4);
    assert_eq!(last.pose, first.pose);
}

#[test]
fn malformed_message_gets_an_error_then_close() {
    let dir = tempfile::tempdir().unwrap();
    let (mut ws, _) = connect(start_server(dir.path())).unwrap();
    ws.send(Message::text(r#"{"type":"command","twist":[0,0,0],"release":false}"#))
        .unwrap();
    match next(&mut ws) {
        Incoming::Event(ServerEvent::Error { message }) => assert!(message.contains("version"), "{message}"),
        _ => panic!("expected an error envelope"),
    }
    let closed = loop {
        match ws.read() {
            Ok(Message::Close(_)) => break true,
            Ok(_) => {}
            Err(_) => break true,
        }
    };
    assert!(closed);
}

#[test]
fn busy_port_is_reported() {
    let holder = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port();
    assert!(matches!(
        Server::bind(port, SessionConfig::default()),
        Err(Error::PortInUse(p)) if p == port
    ));
}

struct Replay {
    commands: Vec<ActionCommand>,
    next: usize,
}

impl Controller for Replay {
    fn needs_observations(&self) -> bool {
        false
    }

    fn act(&mut self, _: &WorldState, _: &MonitorState, _: Option<&SensorReading>) -> Result<ActionCommand, Error> {
        let cmd = self.commands.get(self.next).copied().unwrap_or_default();
        self.next += 1;
        Ok(cmd)
    }
}

#[test]
fn saved_teleop_episode_replays_to_the_same_verdict() {
    let seed = eval_scene_seeds(1, 5)[4];
    let spec = ShelfSpec::default();
    let schematic = generate(seed, &spec).unwrap();
    let mut world = WorldState::from_schematic(&schematic, spec, SimParams::default()).unwrap();
    let opts = RolloutOptions {
        sensor_seed: derive_seed(seed, 1, 0),
        ..RolloutOptions::default()
    };
    let (mut expert, _) = Expert::rehearse(ExpertConfig::default(), &world, &opts).unwrap();
    let scripted = rollout(&mut world, &mut expert, &opts).unwrap();
    assert_eq!(scripted.outcome.verdict, Verdict::Success);

    // An operator who types exactly the expert's commands.
    let dir = tempfile::tempdir().unwrap();
    let mut session = Session::new(SessionConfig {
        out_dir: dir.path().to_path_buf(),
        ..SessionConfig::default()
    });
    session.start(seed).unwrap();
    for r in &scripted.records {
        session.tick(r.action).unwrap();
    }
    assert_eq!(session.verdict(), Some(Verdict::Success));
    let path = session.save().unwrap().unwrap();
    let log = read_episode(&path).unwrap();
    assert_eq!(log.outcome.verdict, Verdict::Success);
    assert!(log.header.raw_frames);
    assert_eq!(log.len(), scripted.records.len());

    let mut replay = Replay {
        commands: log.ticks.iter().map(|t| t.command()).collect(),
        next: 0,
    };
    let mut fresh = WorldState::from_schematic(&log.header.schematic, spec, SimParams::default()).unwrap();
    let replayed = rollout(&mut fresh, &mut replay, &opts).unwrap();
    assert_eq!(replayed.outcome.verdict, log.outcome.verdict);
    assert_eq!(replayed.records.len(), log.len());
}
