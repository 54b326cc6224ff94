use std::path::PathBuf;

use proptest::prelude::*;

use swarmfield_core::config::{
    parse_config, serialize_config, AgentConfig, BusSpec, DroneConfig, EnvironmentConfig, ExperimentConfig,
    FieldEnvironmentConfig, FieldLoggerConfig, GatewayConfig, HelloAgentConfig, InitialPosition, LoggerConfig,
    PositionLoggerConfig, ProximityLoggerConfig, RandomKeyword,
};
use swarmfield_core::controllers::ControllerSpec;
use swarmfield_core::model::{Position2D, SpaceLimits};

fn point() -> impl Strategy<Value = Position2D> {
    (-10.0f64..10.0, -10.0f64..10.0).prop_map(|(x, y)| Position2D::new(x, y))
}

fn limits() -> impl Strategy<Value = SpaceLimits> {
    (-5.0f64..0.0, 0.1f64..6.0, -5.0f64..0.0, 0.1f64..6.0).prop_map(|(x, w, y, h)| SpaceLimits {
        x_min: x,
        x_max: x + w,
        y_min: y,
        y_max: y + h,
    })
}

fn initial() -> impl Strategy<Value = InitialPosition> {
    prop_oneof![
        point().prop_map(InitialPosition::At),
        limits().prop_map(|random_in| InitialPosition::RandomIn { random_in }),
        Just(InitialPosition::Random(RandomKeyword::Random)),
    ]
}

fn controller() -> impl Strategy<Value = ControllerSpec> {
    prop_oneof![
        Just(ControllerSpec::hill_climbing()),
        (point(), proptest::option::of(0.0f64..0.1)).prop_map(|(t, eps)| ControllerSpec {
            epsilon: eps,
            ..ControllerSpec::go_to(t)
        }),
        (0u64..2000).prop_map(|s| ControllerSpec { staleness_ms: s, ..ControllerSpec::remote() }),
    ]
}

fn drone(id: String) -> impl Strategy<Value = AgentConfig> {
    (initial(), controller(), 1u64..500, 1usize..40, 1.0f64..3.0, 0.05f64..2.0, 0.0f64..1.0, any::<bool>()).prop_map(
        move |(init, ctrl, delay, third, clip, vicinity, velocity, clamp)| {
            let mut d = DroneConfig::new(id.clone(), init, ctrl);
            d.delay_ms = delay;
            d.field_size = third * 3;
            d.clip_factor = clip;
            d.vicinity = vicinity;
            d.velocity = velocity;
            d.safety_clamp = clamp;
            AgentConfig::VirtualDrone2D(d)
        },
    )
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    let env = (1u64..500, limits(), prop::collection::vec(point(), 0..6), point(), -10.0f64..10.0).prop_map(
        |(delay_ms, limits, modulation_points, rotation_center, theta_degrees)| {
            EnvironmentConfig::FieldModulation(FieldEnvironmentConfig {
                delay_ms,
                limits,
                modulation_points,
                rotation_center,
                theta_degrees,
            })
        },
    );
    let agents = (0usize..5).prop_flat_map(|n| {
        (0..n)
            .map(|i| {
                let id = format!("d{i}");
                prop_oneof![
                    drone(id.clone()),
                    (1u64..500).prop_map(move |delay_ms| AgentConfig::HelloWorld(HelloAgentConfig {
                        agent_id: id.clone(),
                        delay_ms
                    })),
                ]
                .boxed()
            })
            .collect::<Vec<_>>()
    });
    (any::<u64>(), env, agents, 1u64..500, any::<bool>(), proptest::option::of("[a-z]{1,8}"))
        .prop_map(|(seed, env, agents, delay_ms, tcp, name)| {
            let mut loggers = vec![
                LoggerConfig::Position(PositionLoggerConfig { delay_ms, output: PathBuf::from("t.jsonl") }),
                LoggerConfig::Proximity(ProximityLoggerConfig { delay_ms, output: PathBuf::from("p.json"), from_ms: delay_ms * 3 }),
            ];
            let first_drone = agents.iter().find_map(AgentConfig::as_drone).map(|d| d.agent_id.clone());
            if let Some(target) = &first_drone {
                loggers.push(LoggerConfig::Field(FieldLoggerConfig {
                    delay_ms,
                    target: target.clone(),
                    output: PathBuf::from("f.jsonl"),
                }));
            }
            ExperimentConfig {
                name,
                seed,
                bus: if tcp { BusSpec::Tcp { address: Some("127.0.0.1:0".into()) } } else { BusSpec::Memory },
                environment: Some(env),
                agents,
                loggers,
                gateway: Some(GatewayConfig {
                    listen: "127.0.0.1:0".into(),
                    snapshot_hz: 5.0,
                    field_agent: first_drone,
                    static_dir: None,
                }),
                output_dir: PathBuf::from("out"),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn serialize_then_parse_is_identity(cfg in config()) {
        prop_assert!(cfg.validate().is_ok(), "{:?}", cfg.validate());
        let text = serialize_config(&cfg);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(serialize_config(&back), text);
    }
}

#[test]
fn shipped_experiments_validate() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            swarmfield_core::config::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
