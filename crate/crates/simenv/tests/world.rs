use keynav_simenv::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scene(rng: &mut ChaCha8Rng, max_side: usize, fill: f64) -> VoxelScene {
    let dims = [0; 3].map(|_| rng.gen_range(2..=max_side));
    let mut s = VoxelScene::empty(dims, 0.1, [0.0, -0.5, 0.0]).unwrap();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if rng.gen_bool(fill) {
                    s.set(i, j, k, true);
                }
            }
        }
    }
    s
}

fn assert_esdf_exact(scene: &VoxelScene, d_max: f64) {
    let e = build_esdf(scene, d_max);
    let [nx, ny, nz] = scene.dims();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let truth =
                    nearest_occupied(scene, scene.center(i, j, k)).map_or(d_max, |d| d.min(d_max));
                let got = e.at(i, j, k);
                assert!(
                    (got - truth).abs() <= 1e-9,
                    "({i},{j},{k}): {got} vs {truth}"
                );
            }
        }
    }
}

#[test]
fn corridor_is_deterministic() {
    let p = SceneParams {
        corridor_width: 2.0,
        ..SceneParams::default()
    };
    let a = generate_scene(7, Template::Corridor, &p).unwrap();
    let b = generate_scene(7, Template::Corridor, &p).unwrap();
    assert_eq!(a.occupancy(), b.occupancy());
    assert!(a.occupied_count() > 0);
    let c = generate_scene(8, Template::Corridor, &p).unwrap();
    assert_ne!(a.occupancy(), c.occupancy());
}

#[test]
fn every_template_is_deterministic_and_keeps_a_free_voxel() {
    let p = SceneParams::default();
    for t in Template::ALL {
        for seed in 0..5 {
            let a = generate_scene(seed, t, &p).unwrap();
            assert_eq!(a, generate_scene(seed, t, &p).unwrap(), "{t} seed {seed}");
            assert!(a.occupied_count() < a.len());
        }
    }
}

#[test]
fn zero_density_boxes_are_empty() {
    let p = SceneParams {
        box_density: 0.0,
        ..SceneParams::default()
    };
    for seed in [0, 1, 99] {
        assert_eq!(
            generate_scene(seed, Template::RandomBoxes, &p)
                .unwrap()
                .occupied_count(),
            0
        );
    }
}

#[test]
fn wall_gap_matches_hand_count() {
    let p = SceneParams {
        wall_x: Some(5.0),
        gap_height: 1.0,
        gap_width: 1.2,
        wall_thickness: 0.2,
        ..SceneParams::default()
    };
    let s = generate_scene(3, Template::WallGap, &p).unwrap();
    let [nx, ny, nz] = s.dims();
    let (t_vox, gw, gh) = (2, 12, 10);
    let mut slab = 0;
    let mut other = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if s.occupied(i, j, k) {
                    if (50..52).contains(&i) {
                        slab += 1;
                    } else {
                        assert!(j == 0 || j == ny - 1, "stray voxel at ({i},{j},{k})");
                        other += 1;
                    }
                }
            }
        }
    }
    assert_eq!(slab, t_vox * (ny * nz - gw * gh));
    assert_eq!(other, 2 * (nx - t_vox) * nz);
    // the gap opens at ground level
    let row: Vec<bool> = (0..ny).map(|j| s.occupied(50, j, 0)).collect();
    assert_eq!(row.iter().filter(|&&o| !o).count(), gw);
    assert!((0..ny).all(|j| s.occupied(50, j, gh)));
}

#[test]
fn degenerate_params_are_rejected() {
    let p = SceneParams {
        extents: [0, 10, 10],
        ..SceneParams::default()
    };
    assert!(matches!(
        generate_scene(0, Template::Corridor, &p),
        Err(SimError::DegenerateParams(_))
    ));
    let p = SceneParams {
        voxel_size: 0.0,
        ..SceneParams::default()
    };
    assert!(generate_scene(0, Template::WallGap, &p).is_err());
}

#[test]
fn scene_file_round_trip() {
    let s = generate_scene(11, Template::RoomCluster, &SceneParams::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    s.save(&path).unwrap();
    let back = VoxelScene::load(&path).unwrap();
    assert_eq!(s, back);
    let mut f = s.to_file();
    f.occupancy.pop();
    f.occupancy.pop();
    f.occupancy.pop();
    f.occupancy.pop();
    assert!(VoxelScene::from_file(&f).is_err());
}

#[test]
fn empty_esdf_is_d_max() {
    let s = VoxelScene::empty([6, 5, 4], 0.1, [0.0; 3]).unwrap();
    let e = build_esdf(&s, 5.0);
    assert!(e.distances().iter().all(|&d| d == 5.0));
}

#[test]
fn esdf_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 0..20 {
        let fill = [0.001, 0.01, 0.05, 0.3][n % 4];
        let s = random_scene(&mut rng, 24, fill);
        assert_esdf_exact(&s, 5.0);
    }
    // small clamp bites
    let s = random_scene(&mut rng, 16, 0.002);
    assert_esdf_exact(&s, 0.35);
}

#[test]
fn esdf_sampling_nodes_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_scene(&mut rng, 16, 0.02);
    let e = build_esdf(&s, 5.0);
    let [nx, ny, nz] = s.dims();
    for (i, j, k) in [
        (0, 0, 0),
        (nx - 1, ny - 1, nz - 1),
        (nx / 2, ny / 2, nz / 2),
    ] {
        let smp = e.sample(s.center(i, j, k)).unwrap();
        assert!((smp.distance - e.at(i, j, k)).abs() < 1e-12);
    }
    let (lo, hi) = s.bounds();
    let h = 1e-6;
    let mut checked = 0;
    while checked < 200 {
        let p = [0, 1, 2].map(|a| rng.gen_range(lo[a] + 0.05..hi[a] - 0.05));
        // stay away from cell boundaries where the interpolant has kinks
        let frac_ok = (0..3).all(|a| {
            let u = (p[a] - lo[a]) / 0.1 - 0.5;
            let f = u - u.floor();
            f > 0.01 && f < 0.99
        });
        if !frac_ok {
            continue;
        }
        let g = e.sample(p).unwrap().gradient;
        for a in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[a] += h;
            pm[a] -= h;
            let fd = (e.sample(pp).unwrap().distance - e.sample(pm).unwrap().distance) / (2.0 * h);
            let rel = (g[a] - fd).abs() / fd.abs().max(1e-3);
            assert!(rel <= 1e-6, "axis {a} at {p:?}: {} vs {fd}", g[a]);
        }
        checked += 1;
    }
}

#[test]
fn esdf_sampling_clamps_and_rejects_nan() {
    let mut s = VoxelScene::empty([4, 4, 4], 0.5, [0.0; 3]).unwrap();
    s.set(0, 0, 0, true);
    let e = build_esdf(&s, 5.0);
    let inside = e.sample(s.center(3, 3, 3)).unwrap();
    let outside = e.sample([10.0, 10.0, 10.0]).unwrap();
    assert!(outside.clamped && !inside.clamped);
    assert_eq!(outside.distance, inside.distance);
    assert_eq!(outside.gradient, [0.0; 3]);
    assert!(matches!(
        e.sample([f64::NAN, 0.0, 0.0]),
        Err(SimError::NonFinite(_))
    ));
}

#[test]
fn empty_scene_renders_max_range() {
    let s = VoxelScene::empty([40, 40, 20], 0.1, [0.0, -2.0, 0.0]).unwrap();
    let cam = Camera::default().at([0.5, 0.0, 0.3], 0.0);
    let img = render_depth(&s, &cam).unwrap();
    assert_eq!((img.width, img.height), (64, 64));
    assert!(img.data.iter().all(|&d| d == cam.max_range));
}

#[test]
fn wall_two_meters_ahead() {
    let mut s = VoxelScene::empty([60, 40, 30], 0.1, [0.0, -2.0, 0.0]).unwrap();
    s.fill_box([3.0, -2.0, 0.0], [3.2, 2.0, 3.0]);
    let cam = Camera::default().at([1.0, 0.0, 1.0], 0.0);
    let img = render_depth(&s, &cam).unwrap();
    let c = img.get(img.height / 2, img.width / 2);
    assert!((c - 2.0).abs() <= 0.05, "center depth {c}");
    // each pixel agrees with the analytic ray-plane range
    for row in 0..img.height {
        for col in 0..img.width {
            let d = cam.ray(row, col);
            let expect = 2.0 / d[0];
            let z_hit = 1.0 + d[2] * expect;
            let y_hit = d[1] * expect;
            if expect < cam.max_range && (0.05..2.95).contains(&z_hit) && y_hit.abs() < 1.95 {
                assert!(
                    (img.get(row, col) - expect).abs() < 1e-9,
                    "pixel ({row},{col})"
                );
            }
        }
    }
    assert_eq!(img, render_depth(&s, &cam).unwrap());
}

#[test]
fn camera_inside_obstacle_is_an_error() {
    let mut s = VoxelScene::empty([10, 10, 10], 0.1, [0.0; 3]).unwrap();
    s.set(5, 5, 5, true);
    let cam = Camera::default().at([0.55, 0.55, 0.55], 0.0);
    assert!(matches!(
        render_depth(&s, &cam),
        Err(SimError::CameraInObstacle(_))
    ));
    let bad = Camera {
        width: 4,
        ..Camera::default()
    };
    assert!(matches!(
        render_depth(&s, &bad),
        Err(SimError::InvalidCamera(_))
    ));
}

#[test]
fn depth_is_consistent_with_occupancy() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..4 {
        let s = generate_scene(seed, Template::RandomBoxes, &SceneParams::default()).unwrap();
        let cam = Camera {
            width: 24,
            height: 24,
            ..Camera::default()
        }
        .at(
            [0.5, rng.gen_range(-1.0..1.0), 0.3],
            rng.gen_range(-0.6..0.6),
        );
        let img = render_depth(&s, &cam).unwrap();
        let vs = s.voxel_size();
        for row in 0..img.height {
            for col in 0..img.width {
                let d = img.get(row, col);
                if d >= cam.max_range {
                    continue;
                }
                let ray = cam.ray(row, col);
                let at = |t: f64| [0, 1, 2].map(|a| cam.position[a] + ray[a] * t);
                assert!(!s.is_occupied_at(at(d - vs)), "free before hit");
                let hit = (1..=20).any(|q| s.is_occupied_at(at(d + vs * q as f64 / 20.0)));
                assert!(hit, "occupied after hit at pixel ({row},{col})");
            }
        }
    }
}

#[test]
fn depth_pgm_export() {
    let s = VoxelScene::empty([10, 10, 10], 0.1, [0.0; 3]).unwrap();
    let img = render_depth(&s, &Camera::default().at([0.05, 0.5, 0.5], 0.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pgm");
    img.save_pgm(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n64 64\n65535\n"));
    assert_eq!(bytes.len(), 15 + 64 * 64 * 2);
}

#[test]
fn goal_modes() {
    let s = generate_scene(4, Template::Corridor, &SceneParams::default()).unwrap();
    let cfg = GoalConfig::default();
    for seed in 0..50 {
        let g = sample_goal(&s, seed, GoalMode::Land, &cfg).unwrap();
        assert_eq!(g.position[2], cfg.h_r);
        assert!(g.land);
        let a = sample_goal(&s, seed, GoalMode::Air, &cfg).unwrap();
        assert!((0.8..=2.5).contains(&a.position[2]) && !a.land);
        for goal in [g, a] {
            assert!(!point_collides(&s, goal.position, cfg.safety_radius));
            assert!(nearest_occupied(&s, goal.position).is_none_or(|d| d >= cfg.safety_radius));
        }
    }
}

#[test]
fn mixed_goals_split_evenly() {
    let s = VoxelScene::empty([40, 40, 30], 0.1, [0.0, -2.0, 0.0]).unwrap();
    let cfg = GoalConfig::default();
    let land = (0..1000)
        .filter(|&seed| sample_goal(&s, seed, GoalMode::Mixed, &cfg).unwrap().land)
        .count();
    let frac = land as f64 / 1000.0;
    assert!((frac - 0.5).abs() <= 0.05, "land fraction {frac}");
}

#[test]
fn goal_sampling_gives_up_on_full_scene() {
    let mut s = VoxelScene::empty([10, 10, 10], 0.1, [0.0; 3]).unwrap();
    s.fill_box([0.0; 3], [1.0; 3]);
    let cfg = GoalConfig {
        max_tries: 30,
        ..GoalConfig::default()
    };
    assert!(matches!(
        sample_goal(&s, 0, GoalMode::Land, &cfg),
        Err(SimError::NoValidGoal(30))
    ));
}

#[test]
fn collision_basics() {
    let empty = VoxelScene::empty([10, 10, 10], 0.1, [0.0; 3]).unwrap();
    let traj = [[0.1, 0.1, 0.1], [0.5, 0.5, 0.5]];
    assert_eq!(
        check_collision(&empty, &traj, 0.2),
        Collision {
            collides: false,
            first_index: None
        }
    );
    let mut s = empty.clone();
    s.set(5, 5, 5, true);
    let traj = [
        [0.05, 0.05, 0.05],
        [0.2, 0.2, 0.2],
        [0.55, 0.52, 0.51],
        [0.55, 0.55, 0.55],
    ];
    assert_eq!(check_collision(&s, &traj, 0.0).first_index, Some(2));
    assert_eq!(check_collision(&s, &traj, 0.2).first_index, Some(2));
}

#[test]
fn collision_agrees_with_sampled_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let radius = 0.2;
    let mut disagreements = 0;
    for _ in 0..100 {
        let dims = [16, 16, 16];
        let mut s = VoxelScene::empty(dims, 0.1, [0.0; 3]).unwrap();
        for _ in 0..rng.gen_range(1..6) {
            let lo = [0; 3].map(|_| rng.gen_range(0.0..1.4));
            let hi = lo.map(|l| l + rng.gen_range(0.1..0.4));
            s.fill_box(lo, hi);
        }
        let e = build_esdf(&s, 5.0);
        let a = [0; 3].map(|_| rng.gen_range(0.0..1.6));
        let b = [0; 3].map(|_| rng.gen_range(0.0..1.6));
        let traj: Vec<Point3> = (0..20)
            .map(|i| {
                let t = i as f64 / 19.0;
                [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
            })
            .collect();
        let oracle = check_collision(&s, &traj, radius);
        let sampled = traj
            .iter()
            .position(|&p| e.sample(p).unwrap().distance < radius);
        if oracle.first_index != sampled {
            disagreements += 1;
            // points that flip lie within one voxel diagonal of the threshold
            let diag = 0.1 * 3f64.sqrt();
            for (idx, &p) in traj.iter().enumerate() {
                let o = check_collision(&s, &[p], radius).collides;
                let d = e.sample(p).unwrap().distance;
                if o != (d < radius) {
                    assert!((d - radius).abs() <= diag, "point {idx}: sampled {d}");
                }
            }
        }
    }
    assert!(disagreements < 50);
}

#[test]
fn wall_gap_is_land_reachable() {
    let p = SceneParams {
        wall_x: Some(5.0),
        gap_center_y: Some(0.0),
        ..SceneParams::default()
    };
    let s = generate_scene(1, Template::WallGap, &p).unwrap();
    let e = build_esdf(&s, 5.0);
    assert!(e.land_reachable([0.5, 0.0, 0.3], [8.0, 0.0, 0.3], 0.3, 0.25));
    let closed = SceneParams {
        gap_height: 0.2,
        ..p
    };
    let s = generate_scene(1, Template::WallGap, &closed).unwrap();
    let e = build_esdf(&s, 5.0);
    assert!(!e.land_reachable([0.5, 0.0, 0.3], [8.0, 0.0, 0.3], 0.3, 0.25));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn esdf_invariants(seed in any::<u64>(), fill in 0.0f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_scene(&mut rng, 10, fill);
        let e = build_esdf(&s, 5.0);
        let [nx, ny, nz] = s.dims();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let d = e.at(i, j, k);
                    prop_assert!(d >= 0.0);
                    prop_assert_eq!(d == 0.0, s.occupied(i, j, k));
                    for (di, dj, dk) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                        if i + di < nx && j + dj < ny && k + dk < nz {
                            prop_assert!((d - e.at(i + di, j + dj, k + dk)).abs() <= 0.1 + 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn scenes_are_seed_determined(seed in any::<u64>(), t in 0usize..4) {
        let p = SceneParams { extents: [30, 20, 10], ..SceneParams::default() };
        let a = generate_scene(seed, Template::ALL[t], &p).unwrap();
        let b = generate_scene(seed, Template::ALL[t], &p).unwrap();
        prop_assert_eq!(a.to_file(), b.to_file());
    }
}
