use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gentle-reach"))
}

#[test]
fn gen_scene_writes_a_schematic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scene.toml");
    let status = bin().args(["gen-scene", "--seed", "7", "--out"]).arg(&out).output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let s = gentle_reach::scene::SceneSchematic::from_text(&text).unwrap();
    assert_eq!(s, gentle_reach::scene::generate(7, &Default::default()).unwrap());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["gen-scene"]).output().unwrap().status.code(), Some(1));
    assert_eq!(
        bin().args(["train", "--variant", "sonar", "--demos", "x", "--out", "y"]).output().unwrap().status.code(),
        Some(1)
    );
    assert_eq!(bin().args(["--help"]).output().unwrap().status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = bin()
        .args(["train", "--variant", "baseline", "--demos"])
        .arg(&missing)
        .arg("--out")
        .arg(dir.path().join("w"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().arg("report").arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn busy_port_exits_two() {
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port().to_string();
    let out = bin().args(["serve", "--port", &port]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&port));
}
