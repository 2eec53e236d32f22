//! Seeded end-to-end run: simulate, feature maps, annotation registration
//! and labels, training, inference, compounding and surface extraction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use spinesurf::eval::weighted_dice_tensor;
use spinesurf::features::FeatureMap;
use spinesurf::geometry::Pose;
use spinesurf::io::write_points_ply;
use spinesurf::labelgen::{generate_sequence_labels, icp_register_indexed, MeshIndex, Point, PointCloud};
use spinesurf::net::{predict_sequence, train, Sample, Tensor, UNet};
use spinesurf::phantom::{build_scene, frame_rng, simulate_scan, split_train_test, PhantomSpec, PlacedShape};
use spinesurf::volume::{compound, export_nrrd, extract_surface_points, import_nrrd, GridSpec};
use spinesurf::Grid;

use crate::commands::{compute_features, network_inputs};
use crate::config::RunConfig;
use crate::CliError;

/// Feature peaks this close to the label peak (in samples) count as found.
pub const LOCALIZATION_TOL_SAMPLES: usize = 2;
/// Salt for the annotation sampling stream.
const ANNOTATION_SALT: u64 = 0xA770;

#[derive(Clone, Debug, PartialEq)]
pub struct DemoReport {
    pub frames: usize,
    pub localization_rate: f64,
    pub registration_rmse_m: f64,
    pub registration_rotation_error_deg: f64,
    pub registration_translation_error_m: f64,
    pub train_frames: usize,
    pub test_frames: usize,
    pub final_train_loss: f64,
    pub test_w_dice: f64,
    pub voxel_spacing_m: f64,
    pub surface_points: usize,
    pub surface_mean_distance_m: f64,
    pub surface_median_distance_m: f64,
    pub surface_p95_distance_m: f64,
    pub surface_max_distance_m: f64,
    /// Share of surface points within two voxel spacings of the true scene.
    pub within_two_voxels: f64,
    pub nrrd_reimport_identical: bool,
}

impl DemoReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("frames", self.frames.to_string());
        kv("localization_rate", format!("{:.6}", self.localization_rate));
        kv("registration_rmse_m", format!("{:.9}", self.registration_rmse_m));
        kv("registration_rotation_error_deg", format!("{:.9}", self.registration_rotation_error_deg));
        kv("registration_translation_error_m", format!("{:.9}", self.registration_translation_error_m));
        kv("train_frames", self.train_frames.to_string());
        kv("test_frames", self.test_frames.to_string());
        kv("final_train_loss", format!("{:.6}", self.final_train_loss));
        kv("test_w_dice", format!("{:.6}", self.test_w_dice));
        kv("voxel_spacing_m", format!("{}", self.voxel_spacing_m));
        kv("surface_points", self.surface_points.to_string());
        kv("surface_mean_distance_m", format!("{:.9}", self.surface_mean_distance_m));
        kv("surface_median_distance_m", format!("{:.9}", self.surface_median_distance_m));
        kv("surface_p95_distance_m", format!("{:.9}", self.surface_p95_distance_m));
        kv("surface_max_distance_m", format!("{:.9}", self.surface_max_distance_m));
        kv("within_two_voxels", format!("{:.6}", self.within_two_voxels));
        kv("nrrd_reimport_identical", self.nrrd_reimport_identical.to_string());
        s
    }

    /// Every numeric field is finite.
    pub fn is_finite(&self) -> bool {
        [
            self.localization_rate,
            self.registration_rmse_m,
            self.registration_rotation_error_deg,
            self.registration_translation_error_m,
            self.final_train_loss,
            self.test_w_dice,
            self.voxel_spacing_m,
            self.surface_mean_distance_m,
            self.surface_median_distance_m,
            self.surface_p95_distance_m,
            self.surface_max_distance_m,
            self.within_two_voxels,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn grid_tensor(g: &Grid) -> Tensor {
    Tensor::from_vec(1, g.rows(), g.cols(), g.data().to_vec()).expect("grid dims match")
}

fn column_argmax(g: &Grid, col: usize) -> usize {
    (0..g.rows())
        .max_by(|&a, &b| g.get(a, col).total_cmp(&g.get(b, col)).then(b.cmp(&a)))
        .unwrap_or(0)
}

/// Share of labelled rays whose feature peak lies within the tolerance of
/// the label peak.
pub fn localization_rate(features: &[Grid], labels: &[Grid]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (f, l) in features.iter().zip(labels) {
        for c in 0..l.cols() {
            let peak = column_argmax(l, c);
            if l.get(peak, c) < 0.5 {
                continue;
            }
            total += 1;
            if column_argmax(f, c).abs_diff(peak) <= LOCALIZATION_TOL_SAMPLES {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Distance from `p` to the nearest shape of the scene: closed form for
/// cylinders, exact closest point on the (planar-faced) mesh otherwise.
pub fn scene_distance(scene: &[(PlacedShape, MeshIndex)], p: &Point) -> f64 {
    scene
        .iter()
        .map(|(s, index)| {
            s.analytic_distance(p)
                .unwrap_or_else(|| index.closest_point(p).map_or(f64::INFINITY, |(q, _)| (q - p).norm()))
        })
        .fold(f64::INFINITY, f64::min)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

/// Runs the whole chain on the configured scene and writes `report.txt`,
/// `volume.nrrd`/`volume.raw` and `surface.ply` into `out`.
pub fn demo_end_to_end(cfg: &RunConfig, out: &Path) -> Result<DemoReport, CliError> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mesh = build_scene(&cfg.phantom.scene)?;
    let spec = PhantomSpec {
        mesh: mesh.clone(),
        params: cfg.phantom.params,
        label: cfg.labelgen,
    };
    let geo = cfg.geometry;
    let scan = simulate_scan(&spec, &cfg.phantom.kinematics, &cfg.phantom.plan, &geo)?;
    let n = scan.frames.len();

    let features: Vec<Grid> = compute_features(&scan.images, &cfg.features)?.into_iter().map(|m| m.0).collect();
    let truth: Vec<Grid> = scan.labels.iter().map(|l| l.data.clone()).collect();
    let localization = localization_rate(&features, &truth);

    // the model sits misregistered; annotations come from the true surface
    let e = &cfg.eval;
    let axis = Point::new(1.0, 2.0, 3.0).normalize();
    let [sx, sy, sz] = e.annotation_shift_m;
    let misplacement = Pose::from_translation(Point::new(sx, sy, sz))
        .compose(&Pose::from_axis_angle(&axis, e.annotation_rotation_deg.to_radians()));
    let model = mesh.transformed(&misplacement);
    let model_index = MeshIndex::new(model.clone());
    let annotations: PointCloud = mesh.sample_surface(e.annotation_points, &mut frame_rng(e.seed ^ ANNOTATION_SALT, 0));
    let reg = icp_register_indexed(
        &annotations,
        &model_index,
        cfg.labelgen.icp_max_iter,
        cfg.labelgen.icp_tol_m,
        &Pose::identity(),
    )?;
    let residual = reg.transform.compose(&misplacement.inverse());
    let labels = generate_sequence_labels(
        &MeshIndex::new(model.transformed(&reg.transform.inverse())),
        &scan.frames,
        &geo,
        cfg.labelgen.sigma_px,
        cfg.labelgen.max_incidence_rad(),
    )?;

    let inputs = network_inputs(&scan.images, &features);
    let (train_ids, test_ids) = split_train_test(&scan.frames, e.train_fraction, e.split_seed)?;
    let samples: Vec<Sample> = train_ids
        .iter()
        .map(|&i| Sample {
            input: inputs[i].clone(),
            label: grid_tensor(&labels[i].data),
            sweep_id: scan.frames.frames[i].sweep_id,
        })
        .collect();
    let mut net = UNet::new(cfg.net, cfg.train.seed)?;
    let report = train(&mut net, &cfg.train, &samples)?;

    let sweeps: Vec<usize> = scan.frames.iter().map(|f| f.sweep_id).collect();
    let test_inputs: Vec<Tensor> = test_ids.iter().map(|&i| inputs[i].clone()).collect();
    let test_sweeps: Vec<usize> = test_ids.iter().map(|&i| sweeps[i]).collect();
    let test_preds = predict_sequence(&net, &cfg.train.reset_policy, &test_inputs, &test_sweeps)?;
    let dice = test_preds
        .iter()
        .zip(&test_ids)
        .map(|(p, &i)| weighted_dice_tensor(p, &grid_tensor(&labels[i].data), None))
        .collect::<spinesurf::Result<Vec<_>>>()?;
    let test_w_dice = dice.iter().sum::<f64>() / dice.len().max(1) as f64;

    let preds = predict_sequence(&net, &cfg.train.reset_policy, &inputs, &sweeps)?;
    let maps = preds
        .iter()
        .map(|p| FeatureMap::new(Grid::from_vec(p.h, p.w, p.data.clone())?))
        .collect::<spinesurf::Result<Vec<_>>>()?;
    let spacing = if cfg.volume.spacing_m > 0.0 {
        cfg.volume.spacing_m
    } else {
        geo.depth_step()
    };
    let grid = GridSpec::covering(&scan.frames, &geo, spacing, cfg.volume.margin_voxels)?;
    let vol = compound(&scan.frames, &maps, &geo, &grid, cfg.volume.mode, cfg.volume.splat)?;
    let nrrd = out.join("volume.nrrd");
    export_nrrd(&vol, &nrrd)?;
    let back = import_nrrd(&nrrd)?;
    let identical = back.spec == vol.spec
        && back.data.len() == vol.data.len()
        && back.data.iter().zip(&vol.data).all(|(a, b)| a.to_bits() == ((*b as f32) as f64).to_bits());

    let surface = extract_surface_points(&vol, cfg.volume.threshold)?;
    write_points_ply(&surface, &out.join("surface.ply"))?;
    let scene: Vec<(PlacedShape, MeshIndex)> = cfg
        .phantom
        .scene
        .iter()
        .map(|s| Ok((*s, MeshIndex::new(s.build()?))))
        .collect::<spinesurf::Result<_>>()?;
    let mut dist: Vec<f64> = surface.points.iter().map(|p| scene_distance(&scene, p)).collect();
    dist.sort_by(f64::total_cmp);
    let m = dist.len().max(1) as f64;

    let report = DemoReport {
        frames: n,
        localization_rate: localization,
        registration_rmse_m: reg.rmse_m,
        registration_rotation_error_deg: residual.rotation_angle().to_degrees(),
        registration_translation_error_m: residual.translation.norm(),
        train_frames: train_ids.len(),
        test_frames: test_ids.len(),
        final_train_loss: report.final_loss,
        test_w_dice,
        voxel_spacing_m: spacing,
        surface_points: dist.len(),
        surface_mean_distance_m: dist.iter().sum::<f64>() / m,
        surface_median_distance_m: quantile(&dist, 0.5),
        surface_p95_distance_m: quantile(&dist, 0.95),
        surface_max_distance_m: dist.last().copied().unwrap_or(0.0),
        within_two_voxels: dist.iter().filter(|&&d| d <= 2.0 * spacing).count() as f64 / m,
        nrrd_reimport_identical: identical,
    };
    fs::write(out.join("report.txt"), report.to_text())?;
    Ok(report)
}
