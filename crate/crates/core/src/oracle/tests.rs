use super::*;
use rand::Rng;

fn quick_config() -> OracleConfig {
    OracleConfig {
        nx: 8,
        ny: 8,
        ..OracleConfig::default()
    }
}

#[test]
fn lhc_single_point_lies_in_the_box() {
    let p = lhc_sample(1, [R_DOME_RANGE, R_FILLET_RANGE], 3).unwrap();
    assert_eq!(p.len(), 1);
    assert!(p[0].validate().is_ok());
}

#[test]
fn lhc_has_one_point_per_decile() {
    let p = lhc_sample(10, [R_DOME_RANGE, R_FILLET_RANGE], 11).unwrap();
    let mut dome: Vec<usize> = p.iter().map(|d| ((d.r_dome - 60.0) / 6.0).floor() as usize).collect();
    let mut fillet: Vec<usize> = p.iter().map(|d| (d.r_fillet - 10.0).floor() as usize).collect();
    dome.sort_unstable();
    fillet.sort_unstable();
    assert_eq!(dome, (0..10).collect::<Vec<_>>());
    assert_eq!(fillet, (0..10).collect::<Vec<_>>());
}

#[test]
fn lhc_is_seeded() {
    let a = lhc_sample(10, [R_DOME_RANGE, R_FILLET_RANGE], 5).unwrap();
    assert_eq!(a, lhc_sample(10, [R_DOME_RANGE, R_FILLET_RANGE], 5).unwrap());
    assert_ne!(a, lhc_sample(10, [R_DOME_RANGE, R_FILLET_RANGE], 6).unwrap());
    assert!(lhc_sample(0, [R_DOME_RANGE, R_FILLET_RANGE], 5).is_err());
}

#[test]
fn params_outside_the_design_box_are_rejected() {
    assert!(DomeParams::new(59.9, 15.0).is_err());
    assert!(DomeParams::new(90.0, 20.5).is_err());
    assert!(DomeParams::new(Real::NAN, 15.0).is_err());
    assert!(DomeParams::new(120.0, 10.0).is_ok());
}

#[test]
fn profile_is_continuous_and_tangent() {
    for (r, rf) in [(60.0, 10.0), (90.0, 15.0), (120.0, 20.0)] {
        let p = DomeProfile::punch(DomeParams::new(r, rf).unwrap(), 65.0).unwrap();
        let expected_depth = r + rf - ((r + rf) * (r + rf) - 65.0 * 65.0).sqrt();
        assert!((p.depth() - expected_depth).abs() < 1e-12);
        assert_eq!(p.flange_z(), 0.0);
        for knot in [p.tangent_radius(), p.footprint()] {
            let h = 1e-7;
            let (lo, hi) = (p.height(knot - h), p.height(knot + h));
            assert!((hi - lo).abs() < 1e-5, "jump at r = {knot}");
            let slope_l = (p.height(knot - h) - p.height(knot - 2.0 * h)) / h;
            let slope_r = (p.height(knot + 2.0 * h) - p.height(knot + h)) / h;
            assert!((slope_l - slope_r).abs() < 1e-3, "kink at r = {knot}");
        }
        // Height increases from apex to flange.
        let mut prev = p.height(0.0);
        for k in 1..=200 {
            let z = p.height(k as Real * 0.5);
            assert!(z >= prev - 1e-12);
            prev = z;
        }
    }
}

#[test]
fn die_is_the_punch_offset_by_the_gap() {
    let punch = DomeProfile::punch(DomeParams::new(80.0, 12.0).unwrap(), 65.0).unwrap();
    let die = punch.offset(2.0).unwrap();
    assert!((die.apex_z() - (punch.apex_z() - 2.0)).abs() < 1e-12);
    assert!((die.flange_z() + 2.0).abs() < 1e-12);
    // Normal distance from die points to the punch profile is the gap.
    for k in 0..50 {
        let r = k as Real * 80.0 / 49.0;
        let (x, z) = (r, die.height(r));
        let dist = (0..20001)
            .map(|m| {
                let s = m as Real * 100.0 / 20000.0;
                ((s - x).powi(2) + (punch.height(s) - z).powi(2)).sqrt()
            })
            .fold(Real::INFINITY, Real::min);
        assert!((dist - 2.0).abs() < 1e-3, "r = {r}: distance {dist}");
    }
}

#[test]
fn cap_vertices_lie_on_the_dome_sphere() {
    let params = DomeParams::new(75.0, 14.0).unwrap();
    let spec = ToolMeshSpec {
        sectors: 20,
        cap_rings: 25,
        fillet_rings: 15,
        flange_rings: 10,
        outer_radius: 300.0,
    };
    assert!((spec.triangle_count() as i64 - 2000).abs() <= 50);
    let tool = build_dome_tool(params, 65.0, &spec).unwrap();
    assert_eq!(tool.surface.len(), spec.triangle_count());
    let profile = DomeProfile::punch(params, 65.0).unwrap();
    let c = profile.cap_center();
    let mut cap: Vec<Point> = tool
        .surface
        .triangles()
        .iter()
        .flatten()
        .filter(|v| v[0].hypot(v[1]) <= profile.tangent_radius() + 1e-9)
        .copied()
        .collect();
    cap.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cap.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let v = cap[rng.random_range(0..cap.len())];
        let d = ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + (v[2] - c[2]).powi(2)).sqrt();
        assert!((d - 75.0).abs() / 75.0 < 1e-3);
    }
    // Apex vertex on the sphere, facet normals around it nearly vertical.
    let apex = tool.surface.triangles()[0][0];
    assert_eq!(apex[0..2], [0.0, 0.0]);
    assert!((apex[2] - profile.apex_z()).abs() < 1e-12);
    for k in 0..spec.sectors {
        let n = tool.surface.normals()[k];
        assert!(n[2].abs() > 0.999, "apex facet normal {n:?}");
    }
}

#[test]
fn height_field_matches_containing_triangle() {
    let tool = build_dome_tool(DomeParams::new(70.0, 18.0).unwrap(), 65.0, &ToolMeshSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..300 {
        let (x, y) = (rng.random_range(0.0..210.0), rng.random_range(0.0..210.0));
        let h = tool.field.height_at(x, y).unwrap();
        let (w, z) = tool
            .surface
            .triangles()
            .iter()
            .map(|t| barycentric_height(t, x, y))
            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .unwrap();
        assert!(w >= -1e-12);
        assert!((h - z).abs() < 1e-9, "({x}, {y}): {h} vs {z}");
    }
    assert_eq!(tool.field.height_at(-30.0, 40.0), tool.field.height_at(30.0, 40.0));
    assert!(tool.field.height_at(300.0, 10.0).is_none());
}

#[test]
fn zero_stroke_leaves_the_blank_unchanged() {
    let cfg = OracleConfig {
        stroke: 0.0,
        ..quick_config()
    };
    let sim = simulate_forming(&cfg, DomeParams::new(90.0, 15.0).unwrap(), 0, "s").unwrap();
    assert_eq!(sim.sample.positions.len(), 11);
    for p in &sim.sample.positions {
        assert_eq!(p, &sim.sample.blank.positions);
    }
}

#[test]
fn simulation_respects_constraints_and_never_raises_energy() {
    let cfg = quick_config();
    let sim = simulate_forming(&cfg, DomeParams::new(70.0, 12.0).unwrap(), 0, "s").unwrap();
    let s = &sim.sample;
    assert_eq!(s.intervals(), 10);
    assert!(sim.max_penetration <= 1e-6 * cfg.extent, "penetration {}", sim.max_penetration);
    for st in &sim.stats {
        assert!(st.max_energy_increase <= 0.0);
        assert!(st.energy_end <= st.energy_start);
    }
    let x0 = &s.blank.positions;
    for x in &s.positions {
        assert!(x.is_finite());
        for (n, flags) in s.blank.boundary.iter().enumerate() {
            for a in 0..3 {
                if flags[a] {
                    assert!((x.get(n, a) - x0.get(n, a)).abs() <= 1e-9);
                }
            }
        }
    }
    // The centre node follows the punch apex at the end of the stroke.
    let profile = DomeProfile::punch(s.params, cfg.footprint).unwrap();
    let apex = cfg.punch_start - cfg.stroke + profile.apex_z();
    assert!((s.positions[10].get(0, 2) - apex).abs() < 1e-6 * cfg.extent);
    // Poses: punch descends stroke / T per increment, die is fixed.
    for t in 0..=10 {
        let expected = cfg.punch_start - cfg.stroke * t as Real / 10.0;
        assert!((s.poses[t][0].translation[2] - expected).abs() < 1e-12);
        assert_eq!(s.poses[t][1], s.poses[0][1]);
    }
}

#[test]
fn larger_dome_radius_gives_smaller_apex_displacement() {
    let cfg = quick_config();
    let mut prev = Real::INFINITY;
    for r in [60.0, 75.0, 90.0, 105.0, 120.0] {
        let sim = simulate_forming(&cfg, DomeParams::new(r, 15.0).unwrap(), 0, "s").unwrap();
        let disp = -sim.sample.positions[10].get(0, 2);
        assert!(disp < prev, "R = {r}: {disp} >= {prev}");
        prev = disp;
    }
}

#[test]
fn simulation_is_deterministic() {
    let cfg = quick_config();
    let p = DomeParams::new(100.0, 11.0).unwrap();
    let a = simulate_forming(&cfg, p, 1, "s").unwrap();
    let b = simulate_forming(&cfg, p, 1, "s").unwrap();
    for (x, y) in a.sample.positions.iter().zip(&b.sample.positions) {
        assert!(x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn preset_split_sizes() {
    let cfg = DatasetConfig::default();
    assert_eq!([cfg.train, cfg.val, cfg.test], [50, 20, 20]);
    assert_eq!(cfg.oracle.intervals, 10);
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let cfg = DatasetConfig {
        oracle: OracleConfig {
            nx: 5,
            ny: 5,
            ..OracleConfig::default()
        },
        train: 2,
        val: 1,
        test: 1,
        seed: 4,
        ..DatasetConfig::default()
    };
    let ds = generate_dataset(&cfg).unwrap();
    assert_ne!(ds.train[0].params, ds.train[1].params);
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(back.config_hash, ds.config_hash);
    for split in Split::ALL {
        for (a, b) in ds.split(split).iter().zip(back.split(split)) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.params, b.params);
            assert_eq!(a.poses, b.poses);
            assert_eq!(a.blank, b.blank);
            assert_eq!(a.tools, b.tools);
            for (x, y) in a.positions.iter().zip(&b.positions) {
                assert!(x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
            }
            assert_eq!(a.dt.to_bits(), b.dt.to_bits());
        }
    }
    // Same seed, same bytes.
    let dir2 = tempfile::tempdir().unwrap();
    export_dataset(&generate_dataset(&cfg).unwrap(), dir2.path()).unwrap();
    for rel in ["dataset.json", "train/001/manifest.json", "test/000/positions/t10.txt", "val/000/punch.mesh"] {
        assert_eq!(
            std::fs::read(dir.path().join(rel)).unwrap(),
            std::fs::read(dir2.path().join(rel)).unwrap(),
            "{rel}"
        );
    }
}

#[test]
fn sample_hash_changes_with_any_parameter() {
    let cfg = OracleConfig::default();
    let p = DomeParams::new(90.0, 15.0).unwrap();
    let base = sample_hash(&cfg, p, 0).unwrap();
    assert_ne!(base, sample_hash(&cfg, DomeParams::new(90.5, 15.0).unwrap(), 0).unwrap());
    assert_ne!(base, sample_hash(&cfg, p, 1).unwrap());
    let other = OracleConfig {
        stroke: 43.0,
        ..cfg.clone()
    };
    assert_ne!(base, sample_hash(&other, p, 0).unwrap());
    let solver = OracleConfig {
        solver: SolverSettings {
            tol: 1e-8,
            ..cfg.solver
        },
        ..cfg
    };
    assert_ne!(base, sample_hash(&solver, p, 0).unwrap());
}

#[test]
fn missing_files_are_named_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    let cfg = quick_config();
    let sim = simulate_forming(&cfg, DomeParams::new(90.0, 15.0).unwrap(), 0, "s").unwrap();
    export_sample(&sim.sample, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("die.mesh")).unwrap();
    match load_sample(dir.path()) {
        Err(Error::Io { path, .. }) => assert!(path.ends_with("die.mesh")),
        other => panic!("{other:?}"),
    }
}
