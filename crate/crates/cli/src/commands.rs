//! One function per subcommand. Each reads only the paths it is given and
//! writes only into the output path or directory it is given.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spinesurf::eval::{
    bmode_channel, build_benchmark, results_csv, run_ablation, AblationData, BenchmarkSpec, Dataset, ExperimentConfig,
};
use spinesurf::features::{polar_feature_solve, FeatureMap, FeatureParams};
use spinesurf::geometry::{FrameSequence, PolarImage, Pose};
use spinesurf::io::{
    read_frame_dir, read_map_dir, read_mesh_ply, read_pfm, read_points_ply, write_frame_dir, write_map_dir,
    write_mesh_ply, write_points_ply, FrameDir,
};
use spinesurf::labelgen::{generate_sequence_labels, icp_register_indexed, MeshIndex};
use spinesurf::net::{load_weights, predict_sequence, save_weights, train as train_net, Sample, Tensor, UNet};
use spinesurf::phantom::{build_scene, simulate_scan, PhantomSpec, ScanPlan};
use spinesurf::volume::{compound, export_nrrd, extract_surface_points, CompoundingMode, GridSpec};
use spinesurf::Grid;

use crate::config::{load_toml, RunConfig};
use crate::render::render_overlay;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn grid_tensor(g: &Grid) -> Tensor {
    Tensor::from_vec(1, g.rows(), g.cols(), g.data().to_vec()).expect("grid dims match")
}

/// Creates the parent directory of an output file.
fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn tensor_grid(t: &Tensor) -> Grid {
    Grid::from_vec(t.h, t.w, t.data.clone()).expect("single-channel tensor")
}

/// Aggregated feature maps of every frame, with confidence-solver
/// iterations and residuals. Frames are independent, so they run in
/// parallel; each result depends only on its own frame.
pub fn compute_features(images: &[PolarImage], params: &FeatureParams) -> spinesurf::Result<Vec<(Grid, usize, f64)>> {
    images
        .par_iter()
        .map(|img| polar_feature_solve(img, params).map(|(f, s)| (f.data, s.iterations, s.residual)))
        .collect()
}

/// B-mode plus feature channel per frame.
pub fn network_inputs(images: &[PolarImage], features: &[Grid]) -> Vec<Tensor> {
    images
        .iter()
        .zip(features)
        .map(|(img, f)| Tensor::concat(&[&bmode_channel(img), &grid_tensor(f)]))
        .collect()
}

pub fn simulate(cfg: &RunConfig, plan: Option<&ScanPlan>, out: &Path) -> Result<()> {
    let mesh = build_scene(&cfg.phantom.scene)?;
    let spec = PhantomSpec {
        mesh: mesh.clone(),
        params: cfg.phantom.params,
        label: cfg.labelgen,
    };
    let plan = plan.unwrap_or(&cfg.phantom.plan);
    let scan = simulate_scan(&spec, &cfg.phantom.kinematics, plan, &cfg.geometry)?;
    write_frame_dir(
        out,
        &FrameDir {
            geometry: cfg.geometry,
            frames: scan.frames,
            images: scan.images,
            labels: Some(scan.labels.into_iter().map(|l| l.data).collect()),
        },
    )?;
    write_mesh_ply(&mesh, &out.join("mesh.ply"))?;
    Ok(())
}

#[derive(Serialize)]
struct FeatureManifest<'a> {
    params: &'a FeatureParams,
    frames: Vec<FrameSolve>,
}

#[derive(Serialize)]
struct FrameSolve {
    frame_id: usize,
    solver_iterations: usize,
    solver_residual: f64,
}

pub fn features(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let data = read_frame_dir(input)?;
    let maps = compute_features(&data.images, &cfg.features)?;
    let grids: Vec<Grid> = maps.iter().map(|m| m.0.clone()).collect();
    write_map_dir(output, "feature", &data.frames, &grids)?;
    let manifest = FeatureManifest {
        params: &cfg.features,
        frames: data
            .frames
            .iter()
            .zip(&maps)
            .map(|(f, m)| FrameSolve {
                frame_id: f.frame_id,
                solver_iterations: m.1,
                solver_residual: m.2,
            })
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Input(e.to_string()))?;
    fs::write(output.join("features.toml"), text)?;
    Ok(())
}

pub fn label(cfg: &RunConfig, mesh: &Path, frames: &Path, annotations: &Path, out: &Path) -> Result<()> {
    let mesh = read_mesh_ply(mesh)?;
    let data = read_frame_dir(frames)?;
    let cloud = read_points_ply(annotations)?;
    let index = MeshIndex::new(mesh.clone());
    let reg = icp_register_indexed(
        &cloud,
        &index,
        cfg.labelgen.icp_max_iter,
        cfg.labelgen.icp_tol_m,
        &Pose::identity(),
    )?;
    // the transform maps scanner space onto the mesh; labels need the mesh
    // in scanner space
    let world = MeshIndex::new(mesh.transformed(&reg.transform.inverse()));
    let labels = generate_sequence_labels(
        &world,
        &data.frames,
        &data.geometry,
        cfg.labelgen.sigma_px,
        cfg.labelgen.max_incidence_rad(),
    )?;
    let grids: Vec<Grid> = labels.into_iter().map(|l| l.data).collect();
    write_map_dir(out, "label", &data.frames, &grids)?;
    let mut text = String::new();
    let m = reg.transform.to_row_major();
    let _ = writeln!(text, "pose_row_major = {m:?}");
    let _ = writeln!(text, "rmse_m = {}", reg.rmse_m);
    let _ = writeln!(text, "iterations = {}", reg.iterations);
    let _ = writeln!(text, "converged = {}", reg.converged);
    fs::write(out.join("registration.txt"), text)?;
    Ok(())
}

/// Feature maps from `dir` when given, else computed from the images.
fn load_or_compute_features(cfg: &RunConfig, data: &FrameDir, dir: Option<&Path>) -> Result<Vec<Grid>> {
    Ok(match dir {
        Some(d) => read_map_dir(d, "feature", &data.frames, &data.geometry)?,
        None => compute_features(&data.images, &cfg.features)?.into_iter().map(|m| m.0).collect(),
    })
}

fn sweep_ids(frames: &FrameSequence) -> Vec<usize> {
    frames.iter().map(|f| f.sweep_id).collect()
}

pub fn train(cfg: &RunConfig, frames: &Path, labels: Option<&Path>, features: Option<&Path>, out: &Path) -> Result<()> {
    let data = read_frame_dir(frames)?;
    let labels = match labels {
        Some(d) => read_map_dir(d, "label", &data.frames, &data.geometry)?,
        None => data
            .labels
            .clone()
            .ok_or_else(|| CliError::Input(format!("{} has no label files; pass --labels", frames.display())))?,
    };
    let feats = load_or_compute_features(cfg, &data, features)?;
    if cfg.net.in_channels != 2 {
        return Err(CliError::Input("the network takes two input channels (B-mode, feature)".into()));
    }
    let samples: Vec<Sample> = network_inputs(&data.images, &feats)
        .into_iter()
        .zip(&labels)
        .zip(data.frames.iter())
        .map(|((input, l), f)| Sample {
            input,
            label: grid_tensor(l),
            sweep_id: f.sweep_id,
        })
        .collect();
    let mut net = UNet::new(cfg.net, cfg.train.seed)?;
    let report = train_net(&mut net, &cfg.train, &samples)?;
    ensure_parent(out)?;
    save_weights(&net, out)?;
    let mut log = String::from("epoch,loss\n");
    for (i, l) in report.loss_trace.iter().enumerate() {
        let _ = writeln!(log, "{i},{l}");
    }
    let _ = writeln!(log, "final,{}", report.final_loss);
    let mut log_path = out.as_os_str().to_owned();
    log_path.push(".loss.csv");
    fs::write(PathBuf::from(log_path), log)?;
    Ok(())
}

pub fn infer(cfg: &RunConfig, frames: &Path, weights: &Path, features: Option<&Path>, out: &Path) -> Result<()> {
    let data = read_frame_dir(frames)?;
    let net = load_weights(weights)?;
    let feats = load_or_compute_features(cfg, &data, features)?;
    let preds = predict_sequence(
        &net,
        &cfg.train.reset_policy,
        &network_inputs(&data.images, &feats),
        &sweep_ids(&data.frames),
    )?;
    let grids: Vec<Grid> = preds.iter().map(tensor_grid).collect();
    write_map_dir(out, "pred", &data.frames, &grids)?;
    Ok(())
}

pub struct ReconstructArgs<'a> {
    pub frames: &'a Path,
    pub maps: &'a Path,
    pub prefix: &'a str,
    pub mode: Option<CompoundingMode>,
    pub spacing_m: Option<f64>,
    pub threshold: Option<f64>,
    pub out: &'a Path,
}

/// Writes the NRRD pair at `out` and `surface.ply` beside it.
pub fn reconstruct(cfg: &RunConfig, args: &ReconstructArgs) -> Result<()> {
    let data = read_frame_dir(args.frames)?;
    let maps = read_map_dir(args.maps, args.prefix, &data.frames, &data.geometry)?
        .into_iter()
        .map(FeatureMap::new)
        .collect::<spinesurf::Result<Vec<_>>>()?;
    let mut params = cfg.volume;
    params.mode = args.mode.unwrap_or(params.mode);
    params.spacing_m = args.spacing_m.unwrap_or(params.spacing_m);
    params.threshold = args.threshold.unwrap_or(params.threshold);
    params.validate()?;
    let spacing = if params.spacing_m > 0.0 {
        params.spacing_m
    } else {
        data.geometry.depth_step()
    };
    let spec = GridSpec::covering(&data.frames, &data.geometry, spacing, params.margin_voxels)?;
    let vol = compound(&data.frames, &maps, &data.geometry, &spec, params.mode, params.splat)?;
    ensure_parent(args.out)?;
    export_nrrd(&vol, args.out)?;
    let surface = extract_surface_points(&vol, params.threshold)?;
    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_points_ply(&surface, &dir.join("surface.ply"))?;
    Ok(())
}

/// Experiment list of an ablation grid file (`[[experiment]]` tables).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub experiment: Vec<ExperimentConfig>,
}

fn dataset(dir: &Path) -> Result<Dataset> {
    let d = read_frame_dir(dir)?;
    let labels = d
        .labels
        .ok_or_else(|| CliError::Input(format!("{} has no label files", dir.display())))?
        .into_iter()
        .map(FeatureMap::new)
        .collect::<spinesurf::Result<Vec<_>>>()?;
    Ok(Dataset {
        geometry: d.geometry,
        frames: d.frames,
        images: d.images,
        labels,
    })
}

pub enum EvalData<'a> {
    /// The seeded synthetic benchmark described by the eval section.
    Benchmark,
    Dirs { seen: &'a Path, unseen: Option<&'a Path> },
}

pub fn eval(cfg: &RunConfig, grid: &Path, data: EvalData, out: &Path, with_runtime: bool) -> Result<()> {
    let grid: GridFile = load_toml(grid)?;
    let (spec, ablation) = match data {
        EvalData::Benchmark => {
            let spec = cfg.eval.benchmark.clone();
            let (seen, unseen) = build_benchmark(&spec)?;
            let d = AblationData::from_datasets(&spec, &seen, Some(&unseen))?;
            (spec, d)
        }
        EvalData::Dirs { seen, unseen } => {
            let seen = dataset(seen)?;
            let unseen = unseen.map(dataset).transpose()?;
            let spec = BenchmarkSpec {
                geometry: seen.geometry,
                ..cfg.eval.benchmark.clone()
            };
            let d = AblationData::from_datasets(&spec, &seen, unseen.as_ref())?;
            (spec, d)
        }
    };
    let results = run_ablation(&grid.experiment, &spec, &ablation, cfg.eval.seed)?;
    ensure_parent(out)?;
    fs::write(out, results_csv(&results, with_runtime))?;
    Ok(())
}

pub fn render(frame: &Path, label: Option<&Path>, pred: Option<&Path>, out: &Path) -> Result<()> {
    let img = read_pfm(frame)?;
    let label = label.map(read_pfm).transpose()?;
    let pred = pred.map(read_pfm).transpose()?;
    ensure_parent(out)?;
    fs::write(out, render_overlay(&img, label.as_ref(), pred.as_ref())?)?;
    Ok(())
}
