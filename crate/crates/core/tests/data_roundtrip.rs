use std::fs;

use gentle_reach::data::{build_dataset, read_dataset, read_episode, write_dataset, write_episode, DatasetConfig, EpisodeLog};
use gentle_reach::geom::{ActionCommand, Twist2D};
use gentle_reach::rollout::{Episode, RolloutOptions};
use gentle_reach::scene::{generate, ShelfSpec};
use gentle_reach::sim::{SimParams, WorldState};
use gentle_reach::Error;

fn short_log(seed: u64, ticks: usize) -> EpisodeLog {
    let spec = ShelfSpec::default();
    let schematic = generate(seed, &spec).unwrap();
    let world = WorldState::from_schematic(&schematic, spec, SimParams::default()).unwrap();
    let opts = RolloutOptions {
        record_frames: true,
        sensor_seed: seed,
        ..RolloutOptions::default()
    };
    let mut ep = Episode::new(world, &opts);
    for k in 0..ticks {
        let reading = ep.observe();
        let cmd = ActionCommand::new(Twist2D::new(0.7, 0.1 * (k % 3) as f64, 0.0), false);
        ep.step(cmd, Some(reading)).unwrap();
    }
    EpisodeLog::from_rollout(seed, schematic, &ep.result())
}

#[test]
fn episode_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let log = short_log(3, 12);
    assert!(log.header.raw_frames);
    write_episode(&log, &dir.path().join("ep")).unwrap();
    assert_eq!(read_episode(&dir.path().join("ep")).unwrap(), log);
}

#[test]
fn truncated_stream_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep");
    write_episode(&short_log(4, 6), &path).unwrap();
    let camera = path.join("camera.bin");
    let bytes = fs::read(&camera).unwrap();
    fs::write(&camera, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(read_episode(&path), Err(Error::CorruptFile { .. })));
}

#[test]
fn dataset_round_trips_with_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let logs = vec![short_log(5, 10), short_log(6, 7)];
    let manifest = write_dataset(dir.path(), &logs, DatasetConfig::default()).unwrap();
    let ds = read_dataset(dir.path(), DatasetConfig::default()).unwrap();
    assert_eq!(ds.manifest, manifest);
    assert_eq!(ds.episodes, logs);
    let direct = build_dataset(logs, None, DatasetConfig::default()).unwrap();
    assert_eq!(ds.windows.len(), direct.windows.len());
    assert_eq!(ds.stats("pose"), direct.stats("pose"));
    assert_eq!(ds.windows.len(), 17);
}
