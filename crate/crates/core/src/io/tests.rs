use super::*;
use crate::geometry::{ImageGeometry, PolarImage, ScanKinematics};
use crate::grid::Grid;
use crate::labelgen::{Point, PointCloud, TriangleMesh};
use crate::phantom::ScanPlan;

fn small_geo() -> ImageGeometry {
    ImageGeometry {
        n_rays: 5,
        n_samples: 3,
        ..ImageGeometry::default()
    }
}

#[test]
fn pfm_round_trips_f32_values_and_orientation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pfm");
    let g = Grid::from_fn(3, 5, |r, c| (r * 5 + c) as f64 * 0.25 - 1.0);
    write_pfm(&g, &path).unwrap();
    assert_eq!(read_pfm(&path).unwrap(), g);
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"Pf\n5 3\n-1.0\n"));
    // first stored scanline is the bottom row
    let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
    assert_eq!(first as f64, g.get(2, 0));
}

#[test]
fn pfm_rejects_truncated_payload() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pfm");
    std::fs::write(&path, b"Pf\n2 2\n-1.0\n\0\0\0\0").unwrap();
    assert!(matches!(read_pfm(&path), Err(crate::Error::Parse(_))));
    std::fs::write(&path, b"PF\n1 1\n-1.0\n\0\0\0\0").unwrap();
    assert!(read_pfm(&path).is_err());
}

#[test]
fn polar_image_keeps_its_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.pfm");
    let img = PolarImage::new(small_geo(), Grid::filled(3, 5, 0.5)).unwrap();
    write_polar(&img, &path).unwrap();
    assert_eq!(read_polar(&path).unwrap(), img);
    std::fs::write(meta_path(&path), "depth_min_m=0.01\n").unwrap();
    assert!(read_polar(&path).is_err());
}

#[test]
fn frame_dir_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let geo = small_geo();
    let plan = ScanPlan {
        n_sweeps: 2,
        sweep_angles_rad: vec![-0.1, 0.1],
        carriage_range_m: [-0.01, 0.01],
        frames_per_sweep: 3,
        alternate_direction: true,
    };
    let frames = plan.frames(&ScanKinematics::default()).unwrap();
    let images: Vec<PolarImage> = (0..frames.len())
        .map(|i| PolarImage::new(geo, Grid::from_fn(3, 5, |r, c| (i + r + c) as f64 / 16.0)).unwrap())
        .collect();
    let labels: Vec<Grid> = (0..frames.len()).map(|i| Grid::filled(3, 5, i as f64 / 8.0)).collect();
    let data = FrameDir {
        geometry: geo,
        frames: frames.clone(),
        images,
        labels: Some(labels),
    };
    write_frame_dir(dir.path(), &data).unwrap();
    assert!(frame_file(dir.path(), "frame", 5).is_file());
    assert!(dir.path().join("frame_000000.pfm").is_file());
    let back = read_frame_dir(dir.path()).unwrap();
    assert_eq!(back.frames.len(), frames.len());
    for (a, b) in back.frames.iter().zip(frames.iter()) {
        assert_eq!((a.frame_id, a.sweep_id, a.sweep_direction), (b.frame_id, b.sweep_id, b.sweep_direction));
        assert_eq!(a.joint_theta_rad, b.joint_theta_rad);
        assert_eq!(a.pose, b.pose);
    }
    assert_eq!(back.images, data.images);
    assert_eq!(back.labels, data.labels);
    let header = std::fs::read_to_string(dir.path().join(FRAMES_CSV)).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 17);

    std::fs::remove_file(frame_file(dir.path(), "label", 2)).unwrap();
    assert!(read_frame_dir(dir.path()).unwrap().labels.is_none());
}

#[test]
fn map_dir_checks_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let geo = small_geo();
    let plan = ScanPlan {
        n_sweeps: 1,
        sweep_angles_rad: vec![0.0],
        carriage_range_m: [0.0, 0.01],
        frames_per_sweep: 2,
        alternate_direction: false,
    };
    let frames = plan.frames(&ScanKinematics::default()).unwrap();
    write_map_dir(dir.path(), "pred", &frames, &[Grid::zeros(3, 5), Grid::zeros(3, 4)]).unwrap();
    assert!(matches!(read_map_dir(dir.path(), "pred", &frames, &geo), Err(crate::Error::Alignment(_))));
    assert!(write_map_dir(dir.path(), "pred", &frames, &[Grid::zeros(3, 5)]).is_err());
}

#[test]
fn ply_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = TriangleMesh::new(
        vec![Point::new(0.0, 0.0, 0.01), Point::new(0.1, 0.0, 0.01), Point::new(0.0, 0.1, 0.0125)],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let path = dir.path().join("m.ply");
    write_mesh_ply(&mesh, &path).unwrap();
    assert_eq!(read_mesh_ply(&path).unwrap(), mesh);
    assert_eq!(read_points_ply(&path).unwrap().points, mesh.vertices);

    let cloud = PointCloud::new(vec![Point::new(1.0 / 3.0, -2.5e-3, 7.0)]);
    write_points_ply(&cloud, &path).unwrap();
    assert_eq!(read_points_ply(&path).unwrap(), cloud);
}

#[test]
fn ply_quads_are_fanned() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.ply");
    std::fs::write(
        &path,
        "ply\nformat ascii 1.0\ncomment quad\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n\
         element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n",
    )
    .unwrap();
    let mesh = read_mesh_ply(&path).unwrap();
    assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    std::fs::write(&path, "ply\nformat binary_little_endian 1.0\nend_header\n").unwrap();
    assert!(read_mesh_ply(&path).is_err());
}
