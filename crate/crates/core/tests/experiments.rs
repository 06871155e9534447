use subsample_core::adaptive::{optimization_experiment, AdaptiveConfig};
use subsample_core::design::Protocol;
use subsample_core::harness::{run_partition_experiment, run_point_experiment, ExperimentConfig, RasterSource};
use subsample_core::legend::Legend;
use subsample_core::raster::{generate_patch_mosaic, CategoricalRaster};
use subsample_core::report::{read_optimization_rows, read_optimization_summary, write_optimization_report};

fn forest(t: f64) -> Legend {
    Legend::binary(vec![1], t)
}

/// A raster made of side×side units laid out in a row, unit `i` holding
/// `forest_cells[i]` class-1 cells in row-major order from its corner.
fn row_of_units(side: usize, forest_cells: &[usize]) -> CategoricalRaster {
    let w = side * forest_cells.len();
    let mut values = vec![0u16; w * side];
    for (u, &f) in forest_cells.iter().enumerate() {
        for j in 0..f {
            let (r, c) = (j / side, j % side);
            values[r * w + u * side + c] = 1;
        }
    }
    CategoricalRaster::new(w, side, 1.0, 2, values).unwrap()
}

#[test]
fn point_error_does_not_grow_with_n() {
    let mut cfg = ExperimentConfig::new(RasterSource::SmoothedBinary {
        width: 1980,
        height: 1980,
        smoothing_radius: 45,
        cover_fraction: 0.4,
        seed: 5,
    });
    cfg.designs.partition_ks.clear();
    cfg.master_seed = Some(5);
    let raster = cfg.raster.load().unwrap();
    let rep = run_point_experiment(&cfg, &raster).unwrap();
    for legend in &cfg.legends {
        let name = legend.to_string();
        let rows: Vec<_> = cfg
            .designs
            .point_counts
            .iter()
            .map(|&n| rep.design(&name, "points", "none", n).unwrap())
            .collect();
        for pair in rows.windows(2) {
            let slack = 2.0 * (pair[0].stderr.powi(2) + pair[1].stderr.powi(2)).sqrt();
            assert!(
                pair[1].overall_error <= pair[0].overall_error + slack,
                "{name}: {:?}",
                rows
            );
        }
        let first = rows.first().unwrap().overall_error;
        let last = rows.last().unwrap().overall_error;
        assert!(last < first, "{name}: {first} -> {last}");
    }
}

/// Square forest patches aligned with nothing in particular, small enough
/// that most units hold well under half forest.
fn compact_patches(width: usize, seed: u64) -> CategoricalRaster {
    use rand::Rng;
    let mut rng = subsample_core::seed::rng(seed);
    let mut values = vec![0u16; width * width];
    for _ in 0..(width * width / 40_000) {
        let s = rng.gen_range(30..80);
        let r0 = rng.gen_range(0..width - s);
        let c0 = rng.gen_range(0..width - s);
        for r in r0..r0 + s {
            values[r * width + c0..r * width + c0 + s].fill(1);
        }
    }
    CategoricalRaster::new(width, width, 1.0, 2, values).unwrap()
}

#[test]
fn ttm_omits_compact_patches_at_low_threshold() {
    let raster = compact_patches(1080, 17);
    let mut cfg = ExperimentConfig::new(RasterSource::File {
        path: "unused".into(),
    });
    cfg.legends = vec![forest(0.1)];
    cfg.designs.point_counts.clear();
    cfg.designs.protocols = vec![Protocol::Ttm, Protocol::Mtt];
    let rep = run_partition_experiment(&cfg, &raster).unwrap();
    for &k in &cfg.designs.partition_ks {
        let ttm = rep.design("binary_t0.1_c1", "partition_TTM", "TTM", k).unwrap();
        let mtt = rep.design("binary_t0.1_c1", "partition_MTT", "MTT", k).unwrap();
        assert!(
            ttm.overall_error > mtt.overall_error,
            "k={k}: TTM {} vs MTT {}",
            ttm.overall_error,
            mtt.overall_error
        );
    }
}

#[test]
fn ttm_and_mtt_agree_at_one_half() {
    // Odd k and odd cell sides leave no exact halves at either stage.
    let raster = generate_patch_mosaic(720, 720, 3, 30.0, &[1.0, 1.0, 1.0], 4).unwrap();
    let mut cfg = ExperimentConfig::new(RasterSource::File { path: "unused".into() });
    cfg.unit_side = 45;
    cfg.shifts = vec![0, 11, 22];
    cfg.legends = vec![forest(0.5)];
    cfg.designs.point_counts.clear();
    cfg.designs.partition_ks = vec![3, 5, 9, 15];
    let rep = run_partition_experiment(&cfg, &raster).unwrap();
    for &k in &cfg.designs.partition_ks {
        let ttm = rep.design("binary_t0.5_c1", "partition_TTM", "TTM", k).unwrap();
        let mtt = rep.design("binary_t0.5_c1", "partition_MTT", "MTT", k).unwrap();
        assert_eq!(ttm.overall_error, mtt.overall_error, "k={k}");
    }
    let ttm: Vec<_> = rep.units.iter().filter(|u| u.design == "partition_TTM").collect();
    let mtt: Vec<_> = rep.units.iter().filter(|u| u.design == "partition_MTT").collect();
    assert_eq!(ttm.len(), mtt.len());
    assert!(ttm.iter().zip(&mtt).all(|(a, b)| a.error_rate == b.error_rate));
    assert!(ttm.iter().any(|u| u.error_rate > 0.0));
}

#[test]
fn effort_grows_toward_the_threshold() {
    let side = 60;
    let cells = side * side;
    let pis: Vec<f64> = (1..=19).map(|i| i as f64 * 0.05).collect();
    let forest_cells: Vec<usize> = pis.iter().map(|p| (p * cells as f64).round() as usize).collect();
    let raster = row_of_units(side, &forest_cells);
    let cfg = AdaptiveConfig::new(0.001, forest(0.5));
    let rep = optimization_experiment(&raster, side, &cfg, 200, 3).unwrap();
    // Average the two units at equal distance from t, then walk outward.
    let mut by_distance: Vec<(f64, f64)> = Vec::new();
    for step in 0..=9 {
        let below = rep.units.iter().find(|u| (u.metric - (0.5 - 0.05 * step as f64)).abs() < 1e-9);
        let above = rep.units.iter().find(|u| (u.metric - (0.5 + 0.05 * step as f64)).abs() < 1e-9);
        let efforts: Vec<f64> = below.into_iter().chain(above).map(|u| u.mean_n).collect();
        assert!(!efforts.is_empty());
        by_distance.push((0.05 * step as f64, efforts.iter().sum::<f64>() / efforts.len() as f64));
    }
    for pair in by_distance.windows(2) {
        assert!(pair[1].1 <= pair[0].1, "{by_distance:?}");
    }
    assert_eq!(by_distance[0].1, 144.0);
}

#[test]
fn effort_ordering_on_fragmented_mosaics() {
    for seed in 1..=3 {
        let raster = generate_patch_mosaic(1080, 1080, 4, 5.0, &[1.0; 4], seed).unwrap();
        let effort = |legend: Legend| {
            optimization_experiment(&raster, 180, &AdaptiveConfig::new(0.001, legend), 10, seed)
                .unwrap()
                .summary
                .mean_n
        };
        let (maj, low, half) = (effort(Legend::Majority), effort(forest(0.1)), effort(forest(0.5)));
        assert!(maj > low && low > half, "seed {seed}: {maj} {low} {half}");
    }
}

#[test]
fn looser_confidence_needs_fewer_points() {
    for seed in 0..3 {
        let raster = generate_patch_mosaic(720, 720, 3, 2.0, &[1.0; 3], seed).unwrap();
        for legend in [Legend::Majority, forest(0.3)] {
            let run = |alpha| {
                optimization_experiment(&raster, 180, &AdaptiveConfig::new(alpha, legend.clone()), 10, seed)
                    .unwrap()
                    .summary
                    .mean_n
            };
            assert!(run(0.1) <= run(0.001));
        }
    }
}

#[test]
fn optimization_report_round_trip() {
    let raster = generate_patch_mosaic(360, 360, 2, 2.0, &[1.0, 1.0], 8).unwrap();
    let rep = optimization_experiment(&raster, 180, &AdaptiveConfig::new(0.01, forest(0.5)), 4, 8).unwrap();
    assert_eq!(rep.units.len(), 4);
    for u in &rep.units {
        assert!((0.0..=1.0).contains(&u.error_rate) && (0.0..=1.0).contains(&u.cap_hit_fraction));
    }
    let dir = tempfile::tempdir().unwrap();
    write_optimization_report(&rep, dir.path()).unwrap();
    let header = std::fs::read_to_string(dir.path().join("optimization.csv")).unwrap();
    assert!(header.starts_with("unit_row,unit_col,metric,mean_n,error_rate,cap_hit_fraction\n"));
    let rows = read_optimization_rows(dir.path()).unwrap();
    assert_eq!(rows.len(), rep.units.len());
    for (row, u) in rows.iter().zip(&rep.units) {
        assert_eq!((row.unit_row, row.unit_col, row.mean_n), (u.unit_row, u.unit_col, u.mean_n));
    }
    let summary = read_optimization_summary(dir.path()).unwrap();
    assert_eq!(summary.mean_n, rep.summary.mean_n);
    assert_eq!(summary.legend, "binary_t0.5_c1");
}
