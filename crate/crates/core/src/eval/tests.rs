use proptest::prelude::*;

use super::*;
use crate::net::DICE_EPS;
use crate::geometry::ImageGeometry;
use crate::grid::Grid;
use crate::phantom::ScanPlan;

fn fmap(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> FeatureMap {
    FeatureMap::new(Grid::from_fn(rows, cols, f)).unwrap()
}

fn binary_label() -> FeatureMap {
    fmap(8, 8, |r, c| if (2..5).contains(&r) && c > 1 { 1.0 } else { 0.0 })
}

#[test]
fn identical_maps_score_one() {
    let g = fmap(8, 8, |r, c| ((r * 8 + c) % 5) as f64 / 4.0);
    assert!(weighted_dice_score(&g, &g, None).unwrap() >= 1.0 - 1e-6);
}

#[test]
fn disjoint_supports_score_zero() {
    let p = fmap(8, 8, |r, _| if r < 4 { 1.0 } else { 0.0 });
    let g = fmap(8, 8, |r, _| if r >= 4 { 0.7 } else { 0.0 });
    assert!(weighted_dice_score(&p, &g, None).unwrap() <= 1e-6);
}

#[test]
fn half_prediction_scores_point_eight() {
    let g = binary_label();
    let p = fmap(8, 8, |r, c| 0.5 * g.data.get(r, c));
    // 2 * 0.5n / (0.25n + n) with n = 18 labelled pixels, plus eps
    let n = 18.0;
    let expect = (n + DICE_EPS) / (1.25 * n + DICE_EPS);
    let s = weighted_dice_score(&p, &g, None).unwrap();
    assert!((s - expect).abs() < 1e-12);
    assert!((s - 0.8).abs() < 1e-7);
}

#[test]
fn scale_sensitivity() {
    let g = binary_label();
    for a in [0.5, 1.0, 2.0] {
        // a = 2 leaves [0, 1], so this one goes through the tensor route
        let p = Tensor::from_vec(1, 8, 8, g.data.data().iter().map(|v| a * v).collect()).unwrap();
        let gt = map_tensor(&g);
        let s = weighted_dice_tensor(&p, &gt, None).unwrap();
        assert!((s - 2.0 * a / (a * a + 1.0)).abs() < 1e-6, "a={a}: {s}");
    }
}

#[test]
fn mask_restricts_scored_pixels() {
    let g = binary_label();
    let p = fmap(8, 8, |r, c| if c < 4 { g.data.get(r, c) } else { 1.0 - g.data.get(r, c) });
    let mask: Vec<bool> = (0..64).map(|i| i % 8 < 4).collect();
    assert!(weighted_dice_score(&p, &g, Some(&mask)).unwrap() >= 1.0 - 1e-6);
    assert!(weighted_dice_score(&p, &g, None).unwrap() < 0.5);
}

#[test]
fn dimension_mismatch_is_an_error() {
    let a = fmap(4, 4, |_, _| 0.5);
    let b = fmap(4, 5, |_, _| 0.5);
    assert!(matches!(weighted_dice_score(&a, &b, None), Err(Error::Dimension(_))));
}

fn map_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(0.0..1.0f64, 36), prop::collection::vec(0.0..1.0f64, 36))
}

proptest! {
    #[test]
    fn score_is_symmetric_and_dual_to_loss((p, g) in map_strategy()) {
        let pm = FeatureMap::new(Grid::from_vec(6, 6, p).unwrap()).unwrap();
        let gm = FeatureMap::new(Grid::from_vec(6, 6, g).unwrap()).unwrap();
        let s = weighted_dice_score(&pm, &gm, None).unwrap();
        let loss = w_dice_loss(&map_tensor(&pm), &map_tensor(&gm), None).unwrap().0;
        prop_assert!((s + loss - 1.0).abs() < 1e-12);
        prop_assert!((s - weighted_dice_score(&gm, &pm, None).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&s));
    }
}

#[test]
fn grid_rows_are_valid_and_distinct() {
    let grid = standard_grid(16);
    assert_eq!(grid.len(), 6);
    for cfg in &grid {
        cfg.validate().unwrap();
    }
    assert_eq!(grid[0].reset_label(), "fixed_length(16)");
    assert_eq!(grid[2].network, NetworkKind::Cnn);
    assert_eq!(grid[5].input_channels, InputChannels::BmodeOnly);
}

#[test]
fn inconsistent_configs_rejected() {
    let mut cfg = standard_grid(16)[2].clone();
    cfg.reset = ResetKind::AlignWithScan;
    assert!(cfg.validate().is_err());
    let mut cfg = standard_grid(16)[0].clone();
    cfg.reset = ResetKind::None;
    assert!(cfg.validate().is_err());
    cfg.reset = ResetKind::FixedLength { k: 0 };
    assert!(cfg.validate().is_err());
}

#[test]
fn config_round_trips_through_toml() {
    for cfg in standard_grid(8) {
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }
    assert!(toml::from_str::<ExperimentConfig>("experiment_id = 'x'\nbogus = 1").is_err());
}

fn tiny_spec() -> BenchmarkSpec {
    let mut spec = BenchmarkSpec {
        geometry: ImageGeometry {
            n_rays: 16,
            n_samples: 16,
            ..ImageGeometry::default()
        },
        plan: ScanPlan {
            n_sweeps: 4,
            sweep_angles_rad: vec![-0.2, -0.05, 0.05, 0.2],
            carriage_range_m: [-0.006, 0.006],
            frames_per_sweep: 4,
            alternate_direction: true,
        },
        train_fraction: 0.5,
        ..BenchmarkSpec::default()
    };
    spec.net.base_channels = 2;
    spec.train.epochs = 2;
    spec
}

fn tiny_data(spec: &BenchmarkSpec) -> AblationData {
    let (seen, unseen) = build_benchmark(spec).unwrap();
    AblationData::from_datasets(spec, &seen, Some(&unseen)).unwrap()
}

#[test]
fn ablation_is_deterministic_and_writes_one_row_per_config() {
    let spec = tiny_spec();
    let data = tiny_data(&spec);
    let grid = vec![standard_grid(spec.default_fixed_length())[0].clone()];
    let a = run_ablation(&grid, &spec, &data, 5).unwrap();
    let b = run_ablation(&grid, &spec, &data, 5).unwrap();
    assert_eq!(a[0].per_frame_dice, b[0].per_frame_dice);
    let csv = results_csv(&a, false);
    assert_eq!(csv, results_csv(&b, false));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].starts_with("exp1,w_dice,rnn,fixed_length(4),unseen_image,bmode_plus_feature,"));
    assert!(lines[1].ends_with(",NA,5"));
    let r = &a[0];
    assert!(r.error.is_none());
    let mean = r.per_frame_dice.iter().sum::<f64>() / r.per_frame_dice.len() as f64;
    assert!((mean - r.avg_dice).abs() < 1e-9);
}

#[test]
fn failing_row_does_not_stop_the_grid() {
    let spec = tiny_spec();
    let data = AblationData {
        unseen: None,
        ..tiny_data(&spec)
    };
    let grid = standard_grid(4);
    let grid = vec![grid[4].clone(), grid[3].clone()];
    let out = run_ablation(&grid, &spec, &data, 1).unwrap();
    assert!(out[0].error.is_some());
    assert!(out[1].error.is_none());
    let csv = results_csv(&out, false);
    assert!(csv.lines().nth(1).unwrap().contains(",failed,"));
    assert!(run_ablation(&[], &spec, &data, 1).is_err());
}

#[test]
fn bmode_only_zeroes_the_feature_channel() {
    let spec = tiny_spec();
    let data = tiny_data(&spec);
    let x = inputs(&data.seen, &[0, 1], InputChannels::BmodeOnly);
    assert_eq!(x[0].c, 2);
    assert!(x.iter().all(|t| t.channel(1).iter().all(|&v| v == 0.0)));
    assert_eq!(x[1].channel(0), data.seen.bmode[1].channel(0));
}
