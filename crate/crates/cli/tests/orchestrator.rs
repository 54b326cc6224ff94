//! Run lifecycle: startup order, teardown, forced stops and multi-process mode.

use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use swarmfield::orchestrator::{read_manifest, EXIT_REPORT_FILE};
use swarmfield::{launch, launch_with, run_simulated, shutdown, ExitReport, LaunchError, LaunchOptions};
use swarmfield_core::bus::{Bus, BusExt, TopicKey};
use swarmfield_core::config::{parse_config, ExperimentConfig};
use swarmfield_core::model::FieldMap;
use swarmfield_core::process::{AppProcess, ExitStatus, ProcessError, Role};

fn experiment(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments").join(name);
    parse_config(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn opts(dir: &Path) -> LaunchOptions {
    LaunchOptions {
        output_dir: Some(dir.to_owned()),
        child_exe: Some(PathBuf::from(env!("CARGO_BIN_EXE_swarmfield"))),
        ..LaunchOptions::default()
    }
}

/// Live OS processes whose parent is this test binary.
#[cfg(target_os = "linux")]
fn child_processes() -> Vec<u32> {
    let me = std::process::id();
    let mut out = Vec::new();
    for entry in std::fs::read_dir("/proc").unwrap().flatten() {
        let Ok(pid) = entry.file_name().to_string_lossy().parse::<u32>() else { continue };
        let Ok(stat) = std::fs::read_to_string(entry.path().join("stat")) else { continue };
        // Fields after the parenthesized command name: state, ppid, ...
        let Some(rest) = stat.rsplit_once(')').map(|(_, r)| r) else { continue };
        let mut fields = rest.split_whitespace();
        let _state = fields.next();
        if fields.next().and_then(|p| p.parse::<u32>().ok()) == Some(me) {
            let cmdline = std::fs::read_to_string(entry.path().join("cmdline")).unwrap_or_default();
            if cmdline.contains("swarmfield") {
                out.push(pid);
            }
        }
    }
    out
}

#[test]
fn hello_world_wiring_starts_three_children() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = launch(&experiment("hello_world.json"), &opts(dir.path())).unwrap();
    assert_eq!(h.child_names(), vec!["environment", "logger[0]:hello_world", "A"]);
    assert_eq!(h.live_children(), 3);
    thread::sleep(Duration::from_millis(350));
    let report = shutdown(&mut h, Duration::from_secs(2));
    assert!(report.all_clean(), "{report:?}");
    assert_eq!(h.live_children(), 0);
    let text = std::fs::read_to_string(report.run_dir.join("hello.txt")).unwrap();
    assert!(text.lines().count() >= 2, "{text}");
}

#[test]
fn circle_starts_environment_logger_and_five_agents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment("circle_around_center.json");
    let mut h = launch(&cfg, &LaunchOptions { seed: Some(7), ..opts(dir.path()) }).unwrap();
    let names = h.child_names();
    assert_eq!(names[0], "environment");
    assert_eq!(&names[names.len() - 5..], ["A", "B", "C", "D", "X"]);
    assert!(h.run_id.ends_with("-seed7"), "{}", h.run_id);
    let manifest = read_manifest(&h.run_dir).unwrap();
    assert_eq!(manifest.seed, 7);
    assert_eq!(manifest.initial_positions, cfg.resolve_initial_positions(7));
    thread::sleep(Duration::from_millis(300));

    // Cooperative children all finish within twice the largest delay.
    let t = Instant::now();
    let report = shutdown(&mut h, Duration::from_millis(200));
    assert!(report.all_clean(), "{report:?}");
    assert!(t.elapsed() < Duration::from_millis(400), "{:?}", t.elapsed());
    assert!(report.run_dir.join(EXIT_REPORT_FILE).exists());
}

struct Hung;

impl AppProcess for Hung {
    fn name(&self) -> &str {
        "hung"
    }
    fn role(&self) -> Role {
        Role::Logger
    }
    fn delay_ms(&self) -> u64 {
        10
    }
    fn step(&mut self, _bus: &dyn Bus, _now: u64) -> Result<(), ProcessError> {
        thread::sleep(Duration::from_secs(3600));
        Ok(())
    }
    fn ticks(&self) -> u64 {
        0
    }
}

#[test]
fn hung_child_is_forced_and_second_shutdown_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = launch_with(&experiment("hello_world.json"), &opts(dir.path()), vec![Box::new(Hung)]).unwrap();
    thread::sleep(Duration::from_millis(100));
    let t = Instant::now();
    let first = shutdown(&mut h, Duration::from_millis(300));
    assert!(t.elapsed() < Duration::from_secs(2));
    assert_eq!(first.child("hung").unwrap().status, ExitStatus::Forced);
    assert!(first.child("A").unwrap().is_clean());
    assert!(!first.all_clean());
    let second = shutdown(&mut h, Duration::from_millis(300));
    assert_eq!(first, second);
    let on_disk: ExitReport =
        serde_json::from_str(&std::fs::read_to_string(first.run_dir.join(EXIT_REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk, first);
}

#[test]
fn occupied_bus_port_fails_cleanly() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut cfg = experiment("circle_around_center.json");
    cfg.bus = swarmfield_core::config::BusSpec::Tcp { address: Some(taken.local_addr().unwrap().to_string()) };
    let dir = tempfile::tempdir().unwrap();
    let err = launch(&cfg, &opts(dir.path())).unwrap_err();
    assert!(matches!(err, LaunchError::BusBind { .. }), "{err}");
    assert!(!err.is_config_error());
}

#[cfg(target_os = "linux")]
#[test]
fn occupied_gateway_port_tears_down_started_processes() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut cfg = experiment("circle_live.json");
    cfg.gateway.as_mut().unwrap().listen = taken.local_addr().unwrap().to_string();
    let dir = tempfile::tempdir().unwrap();
    let err = launch(&cfg, &LaunchOptions { processes: true, ..opts(dir.path()) }).unwrap_err();
    assert!(matches!(err, LaunchError::Gateway(_)), "{err}");
    // Environment and loggers had been started as processes before the gateway.
    let report: ExitReport = {
        let run = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
        serde_json::from_str(&std::fs::read_to_string(run.join(EXIT_REPORT_FILE)).unwrap()).unwrap()
    };
    assert_eq!(report.children.len(), 3);
    assert!(child_processes().is_empty(), "orphans: {:?}", child_processes());
}

#[cfg(target_os = "linux")]
#[test]
fn process_mode_runs_and_leaves_no_orphans() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = launch(&experiment("hello_world.json"), &LaunchOptions { processes: true, ..opts(dir.path()) }).unwrap();
    assert!(h.bus_address().is_some());
    assert_eq!(h.live_children(), 3);
    thread::sleep(Duration::from_millis(600));
    let report = shutdown(&mut h, Duration::from_secs(3));
    assert!(report.all_clean(), "{report:?}");
    assert!(report.children.iter().all(|c| c.ticks >= 3), "{report:?}");
    assert_eq!(h.live_children(), 0);
    assert!(child_processes().is_empty());
    let text = std::fs::read_to_string(report.run_dir.join("hello.txt")).unwrap();
    assert!(text.contains("[HelloWorldAgent says hello 1]"), "{text}");
}

#[test]
fn first_field_already_sees_the_points_of_interest() {
    // One slow agent sitting on a POI publishes exactly one field during the test.
    let cfg = parse_config(
        r#"{"environment": {"kind": "field_modulation", "delay_ms": 50,
              "limits": {"x_min": -2, "x_max": 2, "y_min": -2, "y_max": 2},
              "modulation_points": [[0, 0]], "rotation_center": [0, 0], "theta_degrees": 0},
            "agents": [{"kind": "virtual_drone_2d", "agent_id": "A", "delay_ms": 60000,
              "initial_position": [0, 0], "controller": {"kind": "hill_climbing"}}]}"#,
    )
    .unwrap();
    for processes in [false, true] {
        let dir = tempfile::tempdir().unwrap();
        let mut h = launch(&cfg, &LaunchOptions { processes, ..opts(dir.path()) }).unwrap();
        let key = TopicKey::agent_field("A").unwrap();
        let deadline = Instant::now() + Duration::from_secs(5);
        let env = loop {
            if let Some(env) = h.bus().read(&key).unwrap() {
                break env;
            }
            assert!(Instant::now() < deadline, "no field published");
            thread::sleep(Duration::from_millis(5));
        };
        assert_eq!(env.seq, 1);
        let field: FieldMap = env.decode().unwrap();
        assert_eq!(field.max(), 1.0, "processes={processes}");
        let _ = h.bus().read_as::<serde_json::Value>(&TopicKey::env_state()).unwrap().unwrap();
        let report = shutdown(&mut h, Duration::from_secs(3));
        assert!(report.all_clean(), "{report:?}");
    }
}

#[test]
fn simulated_runs_tick_exactly_floor_of_duration_over_delay() {
    let cfg = parse_config(
        r#"{"environment": {"kind": "hello_world", "delay_ms": 100},
            "agents": [{"kind": "hello_world", "agent_id": "A", "delay_ms": 70},
                       {"kind": "hello_world", "agent_id": "B", "delay_ms": 1000}],
            "loggers": [{"kind": "hello_world", "delay_ms": 30, "output": "hello.txt"}]}"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_simulated(&cfg, &LaunchOptions { duration_ms: Some(2_100), ..opts(dir.path()) }).unwrap();
    let ticks = |n: &str| report.child(n).unwrap().ticks;
    assert_eq!(ticks("environment"), 21);
    assert_eq!(ticks("A"), 30);
    assert_eq!(ticks("B"), 2);
    assert_eq!(ticks("hello_world_logger"), 70);
    assert!(report.all_clean());
}

#[test]
fn simulated_run_needs_a_duration() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_simulated(&experiment("hello_world.json"), &opts(dir.path())).unwrap_err();
    assert!(err.is_config_error());
}

#[test]
fn simulated_run_over_tcp_matches_in_process() {
    let mut cfg = experiment("circle_spin.json");
    let dir = tempfile::tempdir().unwrap();
    let o = |id: &str| LaunchOptions { duration_ms: Some(10_000), run_id: Some(id.into()), ..opts(dir.path()) };
    let a = run_simulated(&cfg, &o("memory")).unwrap();
    cfg.bus = swarmfield_core::config::BusSpec::Tcp { address: Some("127.0.0.1:0".into()) };
    let b = run_simulated(&cfg, &o("tcp")).unwrap();
    let read = |r: &ExitReport| std::fs::read(r.run_dir.join("trajectory.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
}
