use aerovac_core::world::{simulate_depth_scan, step_drone, Aabb, DroneParams, DroneState, Environment, SensorConfig};
use aerovac_core::{Error, Vec3};
use proptest::prelude::*;

fn room(obstacles: Vec<Aabb>) -> Environment {
    Environment {
        bounds: Aabb::new(Vec3::new(-10.0, -10.0, -10.0), Vec3::new(10.0, 10.0, 10.0)),
        obstacles,
        drone_radius: 0.2,
    }
}

fn wall_at(x: f64) -> Aabb {
    Aabb::new(Vec3::new(x, -9.0, -9.0), Vec3::new(x + 0.5, 9.0, 9.0))
}

#[test]
fn nothing_in_view_gives_an_empty_scan() {
    let cloud = simulate_depth_scan(&room(vec![]), &DroneState::at_rest(Vec3::zeros(), 0.0), &SensorConfig::default());
    assert!(cloud.is_empty());
    // a box behind the drone is not seen either
    let behind = room(vec![wall_at(-3.0)]);
    assert!(simulate_depth_scan(&behind, &DroneState::at_rest(Vec3::zeros(), 0.0), &SensorConfig::default()).is_empty());
}

#[test]
fn scan_of_a_facing_wall_lies_on_its_plane() {
    let env = room(vec![wall_at(2.0)]);
    let cfg = SensorConfig { max_range: 5.0, ..SensorConfig::default() };
    let cloud = simulate_depth_scan(&env, &DroneState::at_rest(Vec3::zeros(), 0.0), &cfg);
    assert_eq!(cloud.len(), (cfg.rays_h * cfg.rays_v) as usize);
    for p in &cloud {
        assert!((p.x - 2.0).abs() < 1e-9, "{p:?}");
        assert!(p.norm() <= cfg.max_range + 1e-9);
    }
}

#[test]
fn walls_beyond_range_are_invisible() {
    let env = room(vec![wall_at(6.0)]);
    let cfg = SensorConfig { max_range: 5.0, ..SensorConfig::default() };
    assert!(simulate_depth_scan(&env, &DroneState::at_rest(Vec3::zeros(), 0.0), &cfg).is_empty());
}

#[test]
fn scan_follows_yaw() {
    let env = room(vec![Aabb::new(Vec3::new(-1.0, 3.0, -1.0), Vec3::new(1.0, 3.4, 1.0))]);
    let cfg = SensorConfig::default();
    let facing = simulate_depth_scan(&env, &DroneState::at_rest(Vec3::zeros(), std::f64::consts::FRAC_PI_2), &cfg);
    assert!(!facing.is_empty());
    assert!(facing.iter().all(|p| (p.y - 3.0).abs() < 1e-9));
    assert!(simulate_depth_scan(&env, &DroneState::at_rest(Vec3::zeros(), 0.0), &cfg).is_empty());
}

#[test]
fn nearest_box_occludes_the_one_behind() {
    let near = Aabb::new(Vec3::new(1.0, -5.0, -5.0), Vec3::new(1.2, 5.0, 5.0));
    let env = room(vec![wall_at(3.0), near]);
    let cloud = simulate_depth_scan(&env, &DroneState::at_rest(Vec3::zeros(), 0.0), &SensorConfig::default());
    assert!(!cloud.is_empty());
    assert!(cloud.iter().all(|p| (p.x - 1.0).abs() < 1e-9));
}

#[test]
fn equilibrium_is_kept() {
    let s = DroneState { p: Vec3::new(1.0, 2.0, 0.8), v: Vec3::zeros(), yaw: 0.3 };
    let next = step_drone(&s, &s.p, 0.01, &DroneParams::default()).unwrap();
    assert_eq!(next, s);
}

#[test]
fn one_metre_step_settles_within_five_seconds() {
    let params = DroneParams::default();
    let target = Vec3::new(1.0, 0.0, 0.0);
    let mut s = DroneState::at_rest(Vec3::zeros(), 0.0);
    for _ in 0..500 {
        s = step_drone(&s, &target, 0.01, &params).unwrap();
        assert!(s.v.norm() <= params.max_speed + 1e-12);
    }
    assert!((s.p.x - 1.0).abs() < 0.01, "{}", s.p.x);
    assert!(s.yaw.abs() < 1e-12);
}

#[test]
fn bad_steps_are_refused() {
    let s = DroneState::at_rest(Vec3::zeros(), 0.0);
    let params = DroneParams::default();
    assert!(matches!(step_drone(&s, &Vec3::x(), 0.0, &params), Err(Error::NonPositiveDt(_))));
    assert!(step_drone(&s, &Vec3::x(), -0.01, &params).is_err());
    assert!(step_drone(&s, &Vec3::new(f64::NAN, 0.0, 0.0), 0.01, &params).is_err());
    assert!(step_drone(&s, &Vec3::new(f64::INFINITY, 0.0, 0.0), 0.01, &params).is_err());
}

#[test]
fn yaw_faces_motion_and_holds_when_slow() {
    let params = DroneParams::default();
    let mut s = DroneState::at_rest(Vec3::zeros(), 1.0);
    let target = Vec3::new(0.0, -2.0, 0.0);
    for _ in 0..50 {
        s = step_drone(&s, &target, 0.01, &params).unwrap();
    }
    assert!((s.yaw + std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    // vertical motion alone leaves yaw untouched
    let mut up = DroneState::at_rest(Vec3::zeros(), 1.0);
    for _ in 0..50 {
        up = step_drone(&up, &Vec3::new(0.0, 0.0, 1.0), 0.01, &params).unwrap();
    }
    assert_eq!(up.yaw, 1.0);
}

#[test]
fn tracking_energy_does_not_grow_after_the_transient() {
    let params = DroneParams::default();
    let target = Vec3::new(0.3, -0.2, 0.1);
    let energy = |s: &DroneState| 0.5 * s.v.norm_squared() + 0.5 * params.kp * (s.p - target).norm_squared();
    let mut s = DroneState::at_rest(Vec3::zeros(), 0.0);
    for _ in 0..100 {
        s = step_drone(&s, &target, 0.01, &params).unwrap();
    }
    let mut e = energy(&s);
    for _ in 0..1000 {
        s = step_drone(&s, &target, 0.01, &params).unwrap();
        let next = energy(&s);
        assert!(next <= e + 1e-12, "{next} > {e}");
        e = next;
    }
}

#[test]
fn environments_validate() {
    assert!(room(vec![wall_at(2.0)]).validate().is_ok());
    assert!(room(vec![wall_at(9.8)]).validate().is_err());
    let mut env = room(vec![]);
    env.drone_radius = 0.0;
    assert!(env.validate().is_err());
    assert!(SensorConfig { rays_h: 0, ..SensorConfig::default() }.validate().is_err());
    assert!(SensorConfig { fov_h: 4.0, ..SensorConfig::default() }.validate().is_err());
    assert!(SensorConfig { max_range: 0.0, ..SensorConfig::default() }.validate().is_err());
}

fn arb_box() -> impl Strategy<Value = Aabb> {
    (-6.0..6.0f64, -6.0..6.0f64, -3.0..3.0f64, 0.1..2.0f64, 0.1..2.0f64, 0.1..2.0f64).prop_map(|(x, y, z, a, b, c)| {
        Aabb::new(Vec3::new(x, y, z), Vec3::new(x + a, y + b, z + c))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scan_points_lie_on_obstacle_surfaces(
        boxes in prop::collection::vec(arb_box(), 1..6),
        yaw in -3.2..3.2f64,
        z in -1.0..1.0f64,
    ) {
        let env = room(boxes);
        let pose = DroneState::at_rest(Vec3::new(0.0, 0.0, z), yaw);
        prop_assume!(!env.is_inside_obstacle(&pose.p));
        let cfg = SensorConfig { rays_h: 16, rays_v: 8, ..SensorConfig::default() };
        let cloud = simulate_depth_scan(&env, &pose, &cfg);
        for p in &cloud {
            prop_assert!(env.distance_to_surface(p) < 1e-6);
            prop_assert!((p - pose.p).norm() <= cfg.max_range + 1e-9);
        }
        prop_assert_eq!(&cloud, &simulate_depth_scan(&env, &pose, &cfg));
    }

    #[test]
    fn drone_steps_are_deterministic_and_speed_bounded(
        p in prop::array::uniform3(-5.0..5.0f64),
        v in prop::array::uniform3(-1.0..1.0f64),
        c in prop::array::uniform3(-5.0..5.0f64),
        dt in 0.001..0.05f64,
    ) {
        let params = DroneParams::default();
        let s = DroneState { p: Vec3::from(p), v: Vec3::from(v), yaw: 0.0 };
        let a = step_drone(&s, &Vec3::from(c), dt, &params).unwrap();
        let b = step_drone(&s, &Vec3::from(c), dt, &params).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.v.norm() <= params.max_speed + 1e-12);
    }
}
