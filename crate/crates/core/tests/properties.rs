//! Property tests over randomly generated inputs.

use nalgebra::UnitQuaternion;
use proptest::prelude::*;

use skewreg::calibration::{
    angular_sigma_from_residual, bucket_stats, fit_linear_model, linear_sigma_from_residual,
    residual_from_angular_sigma, residual_from_linear_sigma, ResidualSample, SurfaceClass,
};
use skewreg::cloud::{voxel_downsample, PointCloud, TimedPoint};
use skewreg::deskew::{deskew, skew};
use skewreg::geometry::{rotate, Pose, Vec3};
use skewreg::knn::NeighborIndex;
use skewreg::registration::{gauss_newton_step, minimize_point_to_plane, point_to_plane_cost, Match};
use skewreg::simulator::{simulate_scan, LidarModel, PlanarEnvironment, TrajectorySpec};
use skewreg::trajectory::{madgwick_update, TrajectoryEstimate, Twist};
use skewreg::weighting::{
    apply_model, sigma_gvtw, sigma_tw, sigma_vtw, weight_from_sigma, ModelConstants, PerturbationParams,
    WeightingInputs, WeightingModel,
};

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit_vec() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter("non-zero", |v| v.norm() > 1e-3).prop_map(|v| v.normalize())
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(3.0), vec3(10.0)).prop_map(|(rho, t)| Pose::from_vectors(&rho, &t))
}

fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
    (a.translation - b.translation).norm() < tol && a.inverse().compose(b).rotation_angle() < tol
}

fn room() -> PlanarEnvironment {
    PlanarEnvironment::square_room(4.0, -1.0, 2.0)
}

fn small_lidar() -> LidarModel {
    LidarModel {
        firings_per_revolution: 40,
        ..LidarModel::default()
    }
}

/// Points on a few planes with timestamps spread over one 0.1 s scan.
fn planar_cloud(n: usize) -> PointCloud {
    let points = (0..n)
        .map(|i| {
            let u = (i as f64 * 0.618_034).fract() * 4.0 - 2.0;
            let v = (i as f64 * 0.414_214).fract() * 2.0 - 1.0;
            let position = match i % 3 {
                0 => Vec3::new(4.0, u, v),
                1 => Vec3::new(u, -3.0, v),
                _ => Vec3::new(u, v, -1.0),
            };
            TimedPoint::new(position, 0.1 * i as f64 / n as f64)
        })
        .collect();
    PointCloud::new(points, "scan_start")
}

fn constant_traj(v: Vec3, w: Vec3) -> TrajectoryEstimate {
    let twists: Vec<Twist> = (0..=10).map(|k| Twist::new(k as f64 * 0.01, v, w)).collect();
    TrajectoryEstimate::from_body_twists(Pose::identity(), &twists).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pose_group_axioms(a in pose(), b in pose(), c in pose(), p in vec3(10.0)) {
        prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-9));
        prop_assert!(close(&a.compose(&a.inverse()), &Pose::identity(), 1e-9));
        prop_assert!(close(&a.inverse().compose(&a), &Pose::identity(), 1e-9));
        prop_assert!(close(&a.compose(&Pose::identity()), &a, 1e-12));
        let lhs = a.compose(&b).transform_point(&p);
        let rhs = a.transform_point(&b.transform_point(&p));
        prop_assert!((lhs - rhs).norm() < 1e-9);
        let q = a.compose(&b).rotation;
        prop_assert!((q.into_inner().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn knn_matches_brute_force(points in prop::collection::vec(vec3(5.0), 1..200), query in vec3(6.0), k in 1usize..12) {
        let index = NeighborIndex::from_positions(points.clone());
        let got = index.knn(&query, k);
        let mut brute: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, (p - query).norm())).collect();
        brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        brute.truncate(k);
        prop_assert_eq!(got.len(), brute.len());
        // Same distances; indices agree except between exact ties.
        for (g, b) in got.iter().zip(&brute) {
            prop_assert!((g.1 - b.1).abs() < 1e-12);
        }
        let worst = brute.last().unwrap().1;
        let strict: Vec<usize> = brute.iter().filter(|(_, d)| *d < worst).map(|(i, _)| *i).collect();
        for i in strict {
            prop_assert!(got.iter().any(|(j, _)| *j == i));
        }
    }

    #[test]
    fn voxel_downsample_is_idempotent(points in prop::collection::vec(vec3(2.0), 1..300), cell in 0.05f64..1.0) {
        let cloud = PointCloud::from_positions(points, "t");
        let once = voxel_downsample(&cloud, cell).unwrap();
        let twice = voxel_downsample(&once, cell).unwrap();
        prop_assert_eq!(once.len(), twice.len());
        for (a, b) in once.points.iter().zip(&twice.points) {
            prop_assert!((a.position - b.position).norm() < 1e-9);
        }
    }

    #[test]
    fn weights_decrease_with_uncertainty(a in 0.0f64..5.0, b in 0.0f64..5.0, n in 0.001f64..0.5) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(weight_from_sigma(lo, n).unwrap() > weight_from_sigma(hi, n).unwrap());
    }

    #[test]
    fn vtw_is_symmetric_and_non_negative(p in vec3(10.0), tau in vec3(0.1), rho in vec3(0.3)) {
        let c = ModelConstants::default();
        let s = sigma_vtw(&p, &PerturbationParams { translation: tau, rotation: rho }, &c);
        let m = sigma_vtw(&p, &PerturbationParams { translation: -tau, rotation: -rho }, &c);
        prop_assert!(s >= 0.0);
        prop_assert!((s - m).abs() <= 1e-12 * (1.0 + s));
    }

    #[test]
    fn vtw_equals_pairwise_candidate_oracle(p in vec3(10.0), tau in vec3(0.1), rho in vec3(0.3)) {
        let c = ModelConstants::default();
        let candidates: Vec<Vec3> = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
            .iter()
            .map(|&(sr, st)| rotate(&p, &(rho * sr)) + tau * st)
            .collect();
        let mut widest: f64 = 0.0;
        for a in &candidates {
            for b in &candidates {
                widest = widest.max((a - b).norm());
            }
        }
        let s = sigma_vtw(&p, &PerturbationParams { translation: tau, rotation: rho }, &c);
        prop_assert!((s - 0.5 * c.c2 * widest).abs() < 1e-12 * (1.0 + s));
    }

    #[test]
    fn gvtw_slides_along_planes(n in unit_vec(), along in vec3(0.1), dir in unit_vec(), range in 0.5f64..20.0) {
        prop_assume!(dir.dot(&n).abs() > 0.05);
        let tau = along - n * along.dot(&n);
        let params = PerturbationParams { translation: tau, rotation: Vec3::zeros() };
        prop_assert!(sigma_gvtw(&(dir * range), &n, &params, &ModelConstants::default()).abs() < 1e-9);
    }

    #[test]
    fn gvtw_head_on_bound(n in unit_vec(), delta in -0.2f64..0.2, range in 0.5f64..20.0) {
        let c = ModelConstants::default();
        let p = -n * range;
        let params = PerturbationParams { translation: n * delta, rotation: Vec3::zeros() };
        prop_assert!((sigma_gvtw(&p, &n, &params, &c) - c.c3 * delta.abs()).abs() < 1e-9);
    }

    #[test]
    fn zero_parameters_give_zero_uncertainty(p in vec3(10.0), n in unit_vec()) {
        let c = ModelConstants::default();
        let zero = PerturbationParams::default();
        prop_assume!(p.norm() > 1e-3 && p.normalize().dot(&n).abs() > 1e-3);
        prop_assert_eq!(sigma_vtw(&p, &zero, &c), 0.0);
        prop_assert!(sigma_gvtw(&p, &n, &zero, &c).abs() < 1e-12);
        prop_assert_eq!(sigma_tw(0.0, &c), 0.0);
    }

    #[test]
    fn calibration_inversions_round_trip(sigma in 0.0f64..5.0, tau in 0.01f64..0.5, d in 0.1f64..30.0) {
        let r = residual_from_linear_sigma(sigma, tau);
        prop_assert!((linear_sigma_from_residual(r, tau) - sigma).abs() < 1e-9);
        let r = residual_from_angular_sigma(sigma, tau, d);
        prop_assert!((angular_sigma_from_residual(r, tau, d) - sigma).abs() < 1e-9);
    }

    #[test]
    fn madgwick_keeps_unit_norm(rho in vec3(3.0), gyro in vec3(20.0), accel in vec3(50.0), dt in 0.0001f64..0.05, gain in 0.0f64..2.0) {
        let q = UnitQuaternion::from_scaled_axis(rho);
        let next = madgwick_update(&q, &gyro, &accel, dt, gain);
        prop_assert!((next.into_inner().norm() - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stationary_scans_are_unskewed_and_deterministic(p in pose(), seed in any::<u64>()) {
        let initial = Pose::new(p.rotation, p.translation * 0.2);
        let spec = TrajectorySpec::stationary(initial, 0.5);
        let a = simulate_scan(&room(), &spec, &small_lidar(), 0.1, seed).unwrap();
        let b = simulate_scan(&room(), &spec, &small_lidar(), 0.1, seed).unwrap();
        prop_assert_eq!(&a.skewed.points, &a.unskewed.points);
        prop_assert_eq!(&a.skewed.points, &b.skewed.points);
    }

    #[test]
    fn simulated_points_lie_on_surfaces(v in vec3(2.0), w in vec3(4.0), seed in any::<u64>()) {
        let env = room();
        let lidar = small_lidar();
        let spec = TrajectorySpec::constant_twist(Pose::identity(), v, w, 0.5);
        let scan = simulate_scan(&env, &spec, &lidar, 0.2, seed).unwrap();
        let bound = 3.0 * lidar.range_noise + 1e-9;
        for q in &scan.unskewed.points {
            let world = scan.start_pose.transform_point(&q.position);
            prop_assert!(env.distance(&world) <= bound);
        }
    }

    #[test]
    fn deskew_preserves_cardinality_and_round_trips(v in vec3(3.0), w in vec3(6.0)) {
        let cloud = planar_cloud(300);
        let traj = constant_traj(v, w);
        let skewed = skew(&cloud, &traj).cloud;
        let back = deskew(&skewed, &traj).cloud;
        prop_assert_eq!(back.len(), cloud.len());
        for (a, b) in back.points.iter().zip(&cloud.points) {
            prop_assert!((a.position - b.position).norm() < 1e-9);
            prop_assert_eq!(a.timestamp, b.timestamp);
        }
        let same = deskew(&cloud, &TrajectoryEstimate::identity(0.1)).cloud;
        prop_assert_eq!(&same.points, &cloud.points);
    }

    #[test]
    fn linear_error_displaces_by_eps_t(v in vec3(3.0), eps in vec3(1.0)) {
        let cloud = planar_cloud(200);
        let exact = deskew(&cloud, &constant_traj(v, Vec3::zeros())).cloud;
        let off = deskew(&cloud, &constant_traj(v + eps, Vec3::zeros())).cloud;
        for (a, b) in off.points.iter().zip(&exact.points) {
            prop_assert!(((a.position - b.position) - eps * a.timestamp).norm() < 1e-6);
        }
    }

    #[test]
    fn skew_equivalence(v in vec3(3.0), eps in vec3(1.0)) {
        // De-skewing with a velocity error eps matches the scan of a lidar
        // moving at v - eps de-skewed with the estimate v (at v = 0: an
        // uncorrected scan taken at -eps).
        let truth = planar_cloud(200);
        let moving = skew(&truth, &constant_traj(v, Vec3::zeros())).cloud;
        let a = deskew(&moving, &constant_traj(v + eps, Vec3::zeros())).cloud;
        let other = skew(&truth, &constant_traj(v - eps, Vec3::zeros())).cloud;
        let b = deskew(&other, &constant_traj(v, Vec3::zeros())).cloud;
        for (p, q) in a.points.iter().zip(&b.points) {
            prop_assert!((p.position - q.position).norm() < 1e-6);
        }
    }

    #[test]
    fn interpolation_is_continuous(v in vec3(3.0), w in vec3(6.0), t in 0.0f64..0.1) {
        let traj = constant_traj(v, w);
        let a = traj.interpolate(t).pose;
        let b = traj.interpolate(t + 1e-6).pose;
        prop_assert!(close(&a, &b, 1e-4));
    }

    #[test]
    fn weights_ignore_point_order(v in vec3(2.0), w in vec3(5.0), shift in 1usize..299) {
        let cloud = planar_cloud(300);
        let twists = constant_traj(v, w).twists;
        let inputs = WeightingInputs { twists: &twists, scan_period: 0.1, ..Default::default() };
        let mut rotated = cloud.clone();
        rotated.points.rotate_left(shift);
        for model in [WeightingModel::Tw, WeightingModel::Vtw] {
            let a = apply_model(&cloud, model, &inputs).unwrap();
            let mut b = apply_model(&rotated, model, &inputs).unwrap();
            b.points.rotate_right(shift);
            prop_assert_eq!(&a.points, &b.points);
        }
    }

    #[test]
    fn point_to_plane_step_properties(truth in (vec3(0.05), vec3(0.1)), seed in any::<u64>()) {
        let matches = synthetic_matches(&Pose::from_vectors(&truth.0, &truth.1), seed, 1.0);
        let start = Pose::identity();
        // Non-increasing cost under the damped solver.
        let (pose, trace) = minimize_point_to_plane(&matches, &start, 20, 0.0, 12).unwrap();
        let mut last = point_to_plane_cost(&matches, &start);
        for c in &trace {
            prop_assert!(*c <= last + 1e-15);
            last = *c;
        }
        // Uniform weight scaling does not move the minimiser.
        let halved = synthetic_matches(&Pose::from_vectors(&truth.0, &truth.1), seed, 0.5);
        let (other, _) = minimize_point_to_plane(&halved, &start, 20, 0.0, 12).unwrap();
        prop_assert!(close(&pose, &other, 1e-9));
        prop_assert!(gauss_newton_step(&matches, &start).unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn third_quartile_fit_covers_medians(seed in any::<u64>()) {
        let samples = synthetic_residuals(seed);
        let fit = fit_linear_model(&samples, 0.25).unwrap();
        let m = skewreg::weighting::UncertaintyModel { shape: fit.shape, scale: fit.scale, gain: fit.gain, ..Default::default() };
        let mut above = 0;
        for b in &fit.buckets {
            let curve = skewreg::weighting::sigma_v(b.speed, &m).unwrap();
            prop_assert!(curve >= 0.0);
            if curve >= b.median - 1e-12 {
                above += 1;
            }
        }
        prop_assert!(above as f64 >= 0.9 * fit.buckets.len() as f64);
        let pairs: Vec<(f64, f64)> = samples.iter().map(|s| (s.speed, s.residual)).collect();
        prop_assert!(!bucket_stats(&pairs, 0.25).unwrap().is_empty());
    }
}

/// Point-to-plane matches on three orthogonal planes whose reading points
/// are the targets moved by `truth^-1`, so `truth` zeroes every residual.
fn synthetic_matches(truth: &Pose, seed: u64, weight: f64) -> Vec<Match> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normals = [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 1.0, 0.0).normalize()];
    let inverse = truth.inverse();
    (0..60)
        .map(|i| {
            let n = normals[i % normals.len()];
            let target = n * 3.0 + (Vec3::new(rng.random(), rng.random(), rng.random()) * 4.0 - Vec3::repeat(2.0)).cross(&n);
            let point = inverse.transform_point(&target);
            Match {
                reading: i,
                reference: i,
                point,
                target,
                error: target - point,
                normal: n,
                weight,
            }
        })
        .collect()
}

/// Residual samples whose spread follows a log-normal-shaped scale in speed.
fn synthetic_residuals(seed: u64) -> Vec<ResidualSample> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let model = skewreg::weighting::UncertaintyModel::default();
    let mut out = Vec::new();
    for bucket in 1..13 {
        let speed = 0.25 * bucket as f64 + 0.125;
        let sigma = skewreg::weighting::sigma_v(speed, &model).unwrap();
        for _ in 0..60 {
            let factor: f64 = rng.random_range(0.2..1.6);
            out.push(ResidualSample {
                speed,
                residual: residual_from_linear_sigma(sigma * factor, 0.1),
                class: SurfaceClass::Perpendicular,
                scan_period: 0.1,
                mean_distance: 4.0,
            });
        }
    }
    out
}
