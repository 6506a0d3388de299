//! End-to-end tests of the command-line interface: exit codes, trace
//! determinism, benchmark CSV, inspection output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dynnav::sim::{AgentScript, CameraModel, EgoConfig, ScenarioConfig, Waypoint, YawMode};
use dynnav::Vec3;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dynnav"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary failed to start");
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_camera() -> CameraModel {
    CameraModel {
        width: 80,
        height: 60,
        fov_h_deg: 87.0,
        fov_v_deg: 58.0,
        max_range: 4.0,
        rate_hz: 30.0,
    }
}

fn base_scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig {
        scenario_version: 1,
        name: name.into(),
        seed: 5,
        bounds_min: Vec3::new(-5.0, -5.0, 0.0),
        bounds_max: Vec3::new(5.0, 5.0, 3.0),
        horizon: 2.0,
        sensor_sigma: 0.0,
        ego: EgoConfig {
            start: Vec3::new(0.0, 0.0, 1.5),
            goal: Vec3::new(0.0, 0.0, 1.5),
            radius: 0.2,
            script: None,
            yaw: YawMode::Fixed { value: 0.0 },
        },
        camera: small_camera(),
        statics: vec![],
        agents: vec![],
    }
}

/// A hovering scripted observer with one agent crossing its view.
fn watcher_scenario() -> ScenarioConfig {
    let mut sc = base_scenario("watcher");
    sc.sensor_sigma = 0.01;
    sc.horizon = 1.5;
    sc.ego.script = Some(vec![Waypoint {
        t: 0.0,
        pos: Vec3::new(0.0, 0.0, 1.5),
    }]);
    sc.agents = vec![AgentScript {
        id: 1,
        half_axes: Vec3::new(0.3, 0.3, 0.4),
        waypoints: vec![
            Waypoint {
                t: 0.0,
                pos: Vec3::new(2.5, -1.5, 1.5),
            },
            Waypoint {
                t: 3.0,
                pos: Vec3::new(2.5, 1.5, 1.5),
            },
        ],
    }];
    sc
}

fn save(sc: &ScenarioConfig, dir: &Path, file: &str) -> PathBuf {
    let path = dir.join(file);
    sc.save(&path).unwrap();
    path
}

#[test]
fn run_exits_zero_on_success() {
    let dir = tempfile::tempdir().unwrap();
    let path = save(&base_scenario("instant"), dir.path(), "instant.toml");
    let out = run_ok(bin().arg("run").arg(&path));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("goal_reached"), "stdout: {stdout}");
}

#[test]
fn run_exits_two_when_planning_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = base_scenario("sealed");
    sc.bounds_min = Vec3::new(-0.5, -0.5, 1.0);
    sc.bounds_max = Vec3::new(2.5, 0.5, 2.0);
    sc.ego.radius = 0.1;
    sc.ego.goal = Vec3::new(2.2, 0.0, 1.5);
    sc.horizon = 8.0;
    sc.statics = vec![dynnav::sim::StaticPrimitive::Box {
        center: Vec3::new(1.0, 0.0, 1.5),
        dimensions: Vec3::new(0.2, 1.2, 1.2),
    }];
    let path = save(&sc, dir.path(), "sealed.toml");
    let cfg = dir.path().join("fast.toml");
    std::fs::write(&cfg, "[planner.search]\nmax_nodes = 4000\n").unwrap();
    let out = bin()
        .arg("run")
        .arg(&path)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn run_exits_three_on_collision() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = watcher_scenario();
    sc.name = "rammed".into();
    sc.horizon = 2.0;
    // The agent drives straight through the hovering vehicle.
    sc.agents[0].waypoints = vec![
        Waypoint {
            t: 0.0,
            pos: Vec3::new(2.0, 0.0, 1.5),
        },
        Waypoint {
            t: 2.0,
            pos: Vec3::new(-2.0, 0.0, 1.5),
        },
    ];
    let path = save(&sc, dir.path(), "rammed.toml");
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn seeded_runs_write_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let path = save(&watcher_scenario(), dir.path(), "watcher.toml");
    for run in ["a", "b"] {
        run_ok(
            bin()
                .arg("run")
                .arg(&path)
                .arg("--seed")
                .arg("9")
                .arg("--trace")
                .arg(dir.path().join(run)),
        );
    }
    for name in [
        "frames.csv",
        "ego.csv",
        "tracks.csv",
        "plans.csv",
        "splines.txt",
        "grid_final.txt",
        "meta.json",
    ] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between seeded runs");
    }
    let meta = std::fs::read_to_string(dir.path().join("a/meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 9"), "seed override ignored: {meta}");
}

#[test]
fn bench_prints_identical_rows_for_repeats() {
    let dir = tempfile::tempdir().unwrap();
    save(&base_scenario("trivial"), dir.path(), "trivial.toml");
    let suite = dir.path().join("suite.toml");
    std::fs::write(&suite, "[[run]]\nscenario = \"trivial.toml\"\nrepeats = 2\n").unwrap();
    let out = run_ok(bin().arg("bench").arg(&suite));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = stdout.lines().filter(|l| l.starts_with("run,")).collect();
    assert_eq!(rows.len(), 2, "csv:\n{stdout}");
    assert_eq!(rows[0], rows[1]);
    assert!(stdout.lines().any(|l| l.starts_with("mean,trivial")));

    let json_file = dir.path().join("report.json");
    run_ok(
        bin()
            .arg("bench")
            .arg(&suite)
            .arg("--json")
            .arg("--out")
            .arg(&json_file),
    );
    let json = std::fs::read_to_string(&json_file).unwrap();
    assert!(json.contains("\"aggregates\""));
}

#[test]
fn inspect_renders_tables_and_sample_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = save(&watcher_scenario(), dir.path(), "watcher.toml");
    let trace = dir.path().join("trace");
    run_ok(bin().arg("run").arg(&path).arg("--trace").arg(&trace));

    let tracks = dir.path().join("tracks_table.csv");
    let samples = dir.path().join("samples.csv");
    let out = run_ok(
        bin()
            .arg("inspect")
            .arg(&trace)
            .arg("--tracks")
            .arg(&tracks)
            .arg("--samples")
            .arg(&samples),
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("scenario watcher"), "stdout: {stdout}");
    assert!(stdout.contains("tracks:"), "stdout: {stdout}");

    let table = std::fs::read_to_string(&tracks).unwrap();
    assert!(table.starts_with("frame,t,id,class,status,"));
    assert!(table.lines().count() > 10, "track table too small");
    let samples = std::fs::read_to_string(&samples).unwrap();
    assert!(samples.starts_with("source,t,"));
    assert!(samples.lines().skip(1).all(|l| l.is_empty() || l.starts_with("ego,")),
        "a scripted run plans nothing, so samples must be ego rows only");
}

#[test]
fn inspect_of_an_empty_directory_reports_empty_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(bin().arg("inspect").arg(dir.path()));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("empty trace"), "stdout: {stdout}");
}

#[test]
fn gen_writes_a_loadable_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("swarm.toml");
    run_ok(
        bin()
            .arg("gen")
            .arg(&path)
            .arg("--agents")
            .arg("3")
            .arg("--speed")
            .arg("1.5")
            .arg("--seed")
            .arg("11"),
    );
    let sc = ScenarioConfig::load(&path).unwrap();
    assert_eq!(sc.agents.len(), 3);
    assert_eq!(sc.seed, 11);
    sc.validate().unwrap();
}
