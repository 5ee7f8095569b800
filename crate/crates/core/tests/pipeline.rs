//! End-to-end: simulator → scan files → odometry → evaluation.

use cfear_core::evaluation::{evaluate, SHORT_SEGMENT_LENGTHS};
use cfear_core::odometry::run_sequence;
use cfear_core::presets::{format_config, parse_config, preset, PRESET_NAMES};
use cfear_core::radar_io::{read_scan, read_trajectory, write_scan, write_trajectory};
use cfear_core::simulator::{generate_sequence, urban_world, SimConfig, SimPath, SimTrajectory, SpeedProfile};
use cfear_core::Point2;

fn short_run() -> SimTrajectory {
    SimTrajectory::Moving {
        path: SimPath::line(Point2::new(-40.0, -54.5), 0.0, 60.0),
        speed: SpeedProfile::Sinusoidal { mean: 5.0, amplitude: 1.5, period: 20.0 },
    }
}

#[test]
fn files_and_memory_give_the_same_trajectory() {
    let world = urban_world(3);
    let sim = SimConfig { nr: 800, seed: 3, ..SimConfig::default() };
    let (scans, gt) = generate_sequence(&world, &short_run(), &sim).unwrap();
    assert_eq!(scans.len(), gt.len());

    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = (0..scans.len()).map(|i| dir.path().join(format!("{i:04}.cfrad"))).collect();
    for (scan, path) in scans.iter().zip(&paths) {
        write_scan(scan, path).unwrap();
    }
    let cfg = preset("cfear-2").unwrap();
    let from_files = run_sequence(paths.iter().map(read_scan), &cfg).unwrap();
    let in_memory = run_sequence(scans.into_iter().map(Ok), &cfg).unwrap();
    assert_eq!(from_files.trajectory, in_memory.trajectory);

    let traj_path = dir.path().join("est.traj");
    write_trajectory(&in_memory.trajectory, &traj_path).unwrap();
    let reread = read_trajectory(&traj_path).unwrap();
    assert_eq!(reread.pose_list(), in_memory.trajectory.pose_list());

    let est = in_memory.trajectory.transformed(&gt.poses[0].pose);
    let ev = evaluate(&est, &gt, &SHORT_SEGMENT_LENGTHS[..2], 1).unwrap();
    assert!(!ev.drift.is_empty());
    assert!(ev.drift.translation_error < 3.0, "{}", ev.drift.translation_error);
    assert!(ev.rpe.rpe_mean < 0.1);
    assert_eq!(in_memory.divergences(), 0);
}

#[test]
fn every_preset_runs_and_round_trips() {
    let world = urban_world(2);
    let sim = SimConfig { nr: 800, seed: 2, ..SimConfig::default() };
    let (scans, _) = generate_sequence(&world, &short_run(), &sim).unwrap();
    for name in PRESET_NAMES {
        let cfg = preset(name).unwrap();
        assert_eq!(parse_config(&format_config(&cfg), name).unwrap(), cfg, "{name}");
        let out = run_sequence(scans.iter().cloned().map(Ok), &cfg).unwrap();
        assert_eq!(out.trajectory.len(), scans.len(), "{name}");
        assert!(out.reports.iter().skip(1).all(|r| r.surface_points > 0), "{name}");
    }
}
