mod common;

use radarslam::odometry::{Odometry, OdometryConfig, SensingConfig};
use radarslam::pipeline::kitti_rel;
use radarslam::pipeline::run::run_odometry;
use radarslam::pipeline::PipelineConfig;
use radarslam::simworld::{generate_sequence, raytrace_scan, Extent, RadarParams, RevisitPattern, Structure, TrajectorySpec, WorldBuilder};
use radarslam::{Pose2, Twist2};

fn corridor_world(seed: u64, line: Vec<[f64; 2]>) -> radarslam::simworld::World {
    WorldBuilder::new(seed, 3000, Extent::new([-40.0, -40.0], [60.0, 40.0]), Structure::UrbanWalls).keep_clear(line, 6.0).build()
}

#[test]
fn stationary_sensor_keeps_the_initial_keyframe_only() {
    let world = corridor_world(1, vec![[0.0, 0.0], [1.0, 0.0]]);
    let mut odo = Odometry::new(SensingConfig::default(), OdometryConfig::default());
    let pose = Pose2::new(0.0, 0.0, 0.3);
    let mut constraints = 0;
    for k in 0..100u64 {
        let scan = raytrace_scan(&world, &pose, &Twist2::zero(), &RadarParams::noisy(k), k, k as f64 * 0.25);
        constraints += odo.step(&scan).constraint.is_some() as usize;
    }
    assert_eq!(odo.keyframes().len(), 1);
    assert_eq!(constraints, 0);
}

#[test]
fn straight_path_keyframe_count_follows_spacing() {
    // 0.11 m per sweep: a keyframe every 14 sweeps (1.54 m) over 15.4 m
    let spec = TrajectorySpec {
        waypoints: vec![Pose2::identity(), Pose2::new(15.5, 0.0, 0.0)],
        speed: 0.44,
        revisit_pattern: RevisitPattern::SameDirection,
        revisits: 0,
    };
    let world = corridor_world(2, vec![[0.0, 0.0], [15.5, 0.0]]);
    let frames = generate_sequence(&world, &spec, &RadarParams::default()).unwrap();
    let spacing = OdometryConfig::default().keyframe_spacing;
    let mut expected = 0;
    let mut last = frames[0].gt_pose;
    for f in &frames {
        if last.between(&f.gt_pose).translation_norm() > spacing {
            expected += 1;
            last = f.gt_pose;
        }
    }
    assert_eq!(expected, 10);
    let run = run_odometry(&common::scans(&frames), &PipelineConfig::default()).unwrap();
    assert_eq!(run.keyframes.len() - 1, expected);
    assert_eq!(run.constraints.len(), expected);
}

#[test]
fn noise_free_course_drifts_below_one_percent_and_chains_compose() {
    let frames = common::frames(5, [60.0, 40.0], RevisitPattern::SameDirection, 0, false);
    let run = run_odometry(&common::scans(&frames), &PipelineConfig::default()).unwrap();
    let rel = kitti_rel(&run.poses(), &common::gt_rows(&frames)).unwrap();
    assert!(rel.translation_pct < 1.0, "{rel:?}");

    let mut pose = run.keyframes[0].pose;
    for (c, kf) in run.constraints.iter().zip(&run.keyframes[1..]) {
        assert_eq!((c.from_id + 1, c.to_id), (kf.id, kf.id));
        pose = pose.compose(&c.relative);
        assert!((pose.x - kf.pose.x).abs() < 1e-9 && (pose.y - kf.pose.y).abs() < 1e-9);
        assert!(radarslam::geometry::wrap_angle(pose.theta - kf.pose.theta).abs() < 1e-9);
    }
}
