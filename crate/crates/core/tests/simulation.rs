use comag::geometry::FieldVector;
use comag::measurement::{NvSensor, RbSensor};
use comag::simulation::{
    angular_error_map, marginal_improvement, orthogonality_map, ratio_db, run_grid_simulation, scalar_vs_vector_demo,
    AngularMapConfig, MarginalConfig, NoiseModel, ScalarDemoConfig, SimConfig, SpectralSensors,
};
use comag::stats::{mean, median};

type V = FieldVector<f64>;

fn far_median_gain(cfg: &SimConfig) -> f64 {
    let map = run_grid_simulation(cfg).unwrap();
    let g: Vec<f64> = map
        .valid_cells()
        .filter(|c| c.field().magnitude() >= 1.0)
        .filter_map(|c| c.gain_mag_db())
        .collect();
    median(&g)
}

#[test]
fn shielded_gain_follows_noise_ratio() {
    // Far from the origin the NV magnitude error is ~σ_nv and the combined
    // one ~σ_rb, so the gain is 20·log10(σ_nv/σ_rb).
    for ratio in [10.0, 100.0, 1000.0] {
        let cfg = SimConfig {
            grid_points: 21,
            n_reps: 200,
            sigma_ratio: ratio,
            ..SimConfig::default()
        };
        let g = far_median_gain(&cfg);
        let expected = 20.0 * f64::log10(ratio);
        assert!((g - expected).abs() < 1.0, "ratio {ratio}: {g} dB vs {expected} dB");
    }
}

#[test]
fn equal_noise_gives_no_magnitude_gain() {
    let cfg = SimConfig {
        grid_points: 21,
        n_reps: 400,
        sigma_ratio: 1.0,
        ..SimConfig::default()
    };
    let g = far_median_gain(&cfg);
    assert!(g.abs() < 0.5, "{g} dB");
}

#[test]
fn shielded_direction_is_untouched() {
    let cfg = SimConfig {
        grid_points: 21,
        ..SimConfig::default()
    };
    let map = run_grid_simulation(&cfg).unwrap();
    for c in map.valid_cells().filter(|c| c.field().magnitude() > 0.0) {
        // With B0 = 0 the correction is along b_nv and never rotates it.
        assert!(c.gain_dir_db().unwrap().abs() < 1e-9);
    }
}

#[test]
fn unshielded_map_is_mirror_symmetric() {
    let cfg = SimConfig {
        grid_points: 21,
        n_reps: 200,
        b_0_true: V::new(0.5, 0.0, 0.0),
        b_0_cal_error: 0.015,
        ..SimConfig::default()
    };
    let orth = orthogonality_map(&cfg).unwrap();
    let map = run_grid_simulation(&cfg).unwrap();
    let n = map.axis.len();
    let mut diffs = Vec::new();
    for iy in 0..n {
        for ix in 0..n {
            match (orth.get(ix, iy), orth.get(ix, n - 1 - iy)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (a, b) => assert_eq!(a, b),
            }
            if let (Some(a), Some(b)) = (map.get(ix, iy).gain_mag_db(), map.get(ix, n - 1 - iy).gain_mag_db()) {
                diffs.push(a - b);
            }
        }
    }
    // Mirror cells differ only by Monte-Carlo scatter.
    assert!(mean(&diffs).abs() < 0.3, "mean mirror difference {}", mean(&diffs));
}

#[test]
fn gain_is_positive_where_correction_is_mostly_radial() {
    let cfg = SimConfig {
        grid_points: 31,
        b_0_true: V::new(0.5, 0.0, 0.0),
        b_0_cal_error: 0.015,
        ..SimConfig::default()
    };
    let map = run_grid_simulation(&cfg).unwrap();
    let mut checked = 0;
    for c in map.valid_cells() {
        if c.orthogonality.is_some_and(|o| o > 0.9) && c.field().magnitude() > 0.5 {
            assert!(c.gain_mag_db().unwrap() > 3.0, "cell ({}, {})", c.bx, c.by);
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn grid_is_reproducible_and_seed_dependent() {
    let cfg = SimConfig {
        grid_points: 7,
        b_0_true: V::new(0.2, 0.1, 0.0),
        ..SimConfig::default()
    };
    let a = run_grid_simulation(&cfg).unwrap();
    assert_eq!(a, run_grid_simulation(&cfg).unwrap());
    let b = run_grid_simulation(&SimConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a, b);
}

#[test]
fn marginal_profile_agrees_with_grid_row() {
    let sim = SimConfig {
        grid_points: 31,
        n_reps: 400,
        b_0_true: V::new(0.5, 0.0, 0.0),
        b_0_cal_error: 0.015,
        ..SimConfig::default()
    };
    let map = run_grid_simulation(&sim).unwrap();
    let profile = marginal_improvement(&MarginalConfig {
        sim: SimConfig { seed: 99, ..sim.clone() },
        direction: V::new(0.0, 1.0, 0.0),
        field_min: -1.5,
        field_max: 1.5,
        n_points: 31,
    })
    .unwrap();
    // The bx = 0 column of the grid is the same sweep along ŷ.
    for (iy, p) in profile.points.iter().enumerate() {
        let cell = map.get(15, iy);
        assert!((p.field - cell.by).abs() < 1e-12);
        assert_eq!(p.orthogonality, cell.orthogonality);
        if let (Some(a), Some(b)) = (p.gain_mag_db(), cell.gain_mag_db()) {
            assert!((a - b).abs() < 1.5, "field {}: {a} vs {b} dB", p.field);
        }
    }
}

#[test]
fn spectral_noise_model_runs_end_to_end() {
    let cfg = SimConfig {
        grid_min: 0.5,
        grid_max: 1.0,
        grid_points: 2,
        n_reps: 2,
        b_0_true: V::new(0.3, 0.0, 0.0),
        noise_model: NoiseModel::Spectral(Box::new(SpectralSensors {
            nv: NvSensor::default(),
            rb: RbSensor::default(),
        })),
        ..SimConfig::default()
    };
    let map = run_grid_simulation(&cfg).unwrap();
    assert_eq!(map.cells.len(), 4);
    let (mut nv, mut combined) = (0.0, 0.0);
    for c in &map.cells {
        let stats = c.stats.expect("spectral repetition failed");
        nv += stats.mse_mag_nv;
        combined += stats.mse_mag_combined;
    }
    assert!(combined.is_finite() && combined < nv, "{combined} vs {nv}");
}

#[test]
fn angular_map_follows_inverse_magnitude() {
    let cfg = AngularMapConfig {
        grid_points: 21,
        ..AngularMapConfig::default()
    };
    let map = angular_error_map(&cfg).unwrap();
    let n = map.axis.len();
    assert!(map.get(n / 2, n / 2).uncertainty.is_none());
    for c in map.cells.iter().filter(|c| c.uncertainty.is_some()) {
        let r = c.bx.hypot(c.by);
        if r > 3.0 * cfg.sigma {
            // dθ = dφ = σ/|B| in the plane, so total = √2 σ/|B|.
            let expected_db = 20.0 * (2f64.sqrt() * cfg.sigma / r).log10();
            assert!((c.total_db().unwrap() - expected_db).abs() < 1e-9);
        }
    }
}

#[test]
fn scalar_demo_reversal_only_moves_naive_curve() {
    let r = scalar_vs_vector_demo(&ScalarDemoConfig {
        n_reps: 100,
        ..ScalarDemoConfig::default()
    })
    .unwrap();
    let (c, n) = r.max_reversal_shift();
    assert!(n > 0.5 && c < 0.1 * n);
    // The combined curve tracks the true magnitude once the field clears the
    // NV noise floor.
    for row in r.rows.iter().filter(|r| r.field > 1.0) {
        assert!((row.combined - row.true_magnitude).abs() < 0.1);
    }
}

#[test]
fn ratio_db_conventions() {
    assert_eq!(ratio_db(0.0, 0.0), 0.0);
    assert_eq!(ratio_db(2.0, 2.0), 0.0);
    assert!((ratio_db(100.0, 1.0) - 20.0).abs() < 1e-12);
}
