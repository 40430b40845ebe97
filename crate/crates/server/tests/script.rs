//! Scripted operator against the demo scene.

use std::path::PathBuf;

use teleop_server::config::ServerConfig;
use teleop_server::engine::{Engine, Mode};
use teleop_server::load_world;
use teleop_server::script::{self, Report, RunOptions, StepOutcome};
use teleop_server::session::Indicator;

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)
}

fn run(script_name: &str, seed: Option<u64>) -> Report {
    let cfg = ServerConfig::default();
    let mut world = load_world(&asset("demo.scene"), &cfg).unwrap();
    if let Some(s) = seed {
        world.reseed(s);
    }
    let steps = script::parse(&std::fs::read_to_string(asset(script_name)).unwrap()).unwrap();
    let opts = RunOptions {
        seed: world.seed,
        max_time: 60.0,
    };
    let mut engine = Engine::new(world, cfg, Mode::Lockstep);
    script::run(&mut engine, script_name, &steps, &opts)
}

#[test]
fn pick_place_drops_the_cube_into_the_bin() {
    let r = run("pick_place.script", None);
    assert!(r.success(), "{}", r.render());
    let cube = r.objects.iter().find(|o| o.id == "cube").unwrap();
    assert!(cube.inside_target);
    assert!(r.sim_time < 60.0);
    // Every plan showed blue then green.
    let greens = r.indicators.iter().filter(|i| **i == Indicator::Green).count();
    assert_eq!(greens, 4);
}

#[test]
fn same_seed_gives_identical_reports() {
    let a = run("pick_place.script", Some(11));
    let b = run("pick_place.script", Some(11));
    assert_eq!(a.render(), b.render());
    assert!(a.success());
}

#[test]
fn planning_into_the_desk_shows_red_and_stops() {
    let r = run("desk_collision.script", None);
    assert!(!r.success());
    assert_eq!(r.indicators, vec![Indicator::None, Indicator::Blue, Indicator::Red]);
    let failed = r.steps.iter().position(|s| matches!(s.outcome, StepOutcome::Failed(_))).unwrap();
    assert!(r.steps[failed].step.text.contains("await-state green"));
    assert!(r.steps[failed + 1..].iter().all(|s| s.outcome == StepOutcome::Skipped));
    let text = r.render();
    assert!(text.contains("indicator red"), "{text}");
    assert!(text.ends_with("result failure\n"));
}

#[test]
fn run_time_limit_cuts_off_long_waits() {
    let cfg = ServerConfig::default();
    let world = load_world(&asset("demo.scene"), &cfg).unwrap();
    let steps = script::parse("0 wait 100\n0 expect-inside cube\n").unwrap();
    let mut engine = Engine::new(world, cfg, Mode::Lockstep);
    let r = script::run(&mut engine, "x", &steps, &RunOptions { seed: 0, max_time: 2.0 });
    assert!(!r.success());
    assert!(r.sim_time <= 2.05);
}

#[test]
fn later_timestamps_delay_the_step() {
    let cfg = ServerConfig::default();
    let world = load_world(&asset("demo.scene"), &cfg).unwrap();
    let steps = script::parse("1.5 gripper close\n").unwrap();
    let mut engine = Engine::new(world, cfg, Mode::Lockstep);
    let r = script::run(&mut engine, "x", &steps, &RunOptions { seed: 0, max_time: 10.0 });
    assert!(r.success());
    assert!((r.steps[0].started - 1.5).abs() < 1e-9);
}
