use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinesurf::features::{confidence_map_grid, phase_symmetry_grid, polar_feature_map, ConfidenceParams, FeatureParams, LogGaborParams};
use spinesurf::geometry::{ImageGeometry, Pose, ScanKinematics};
use spinesurf::labelgen::{icp_register_indexed, MeshIndex, Point};
use spinesurf::net::{w_dice_loss, Tensor, UNet, UNetSpec};
use spinesurf::phantom::shapes::{cylinder, lumpy_blob};
use spinesurf::phantom::{simulate_scan, PhantomParams, PhantomSpec, ScanPlan};
use spinesurf::labelgen::LabelParams;
use spinesurf::volume::{compound, CompoundingMode, GridSpec, Splat};
use spinesurf::Grid;

fn phantom_scan(frames_per_sweep: usize) -> (ImageGeometry, spinesurf::phantom::SimulatedScan) {
    let geo = ImageGeometry::default();
    let spec = PhantomSpec {
        mesh: cylinder(0.03, 0.008, 0.04, 48, 12),
        params: PhantomParams::default(),
        label: LabelParams::default(),
    };
    let plan = ScanPlan {
        n_sweeps: 2,
        sweep_angles_rad: vec![-0.1, 0.1],
        frames_per_sweep,
        ..ScanPlan::default()
    };
    let scan = simulate_scan(&spec, &ScanKinematics::default(), &plan, &geo).unwrap();
    (geo, scan)
}

fn features(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = Grid::from_fn(64, 64, |_, _| rng.gen::<f64>());
    c.bench_function("confidence_map 64x64", |b| {
        b.iter(|| confidence_map_grid(black_box(&img), &ConfidenceParams::default()).unwrap())
    });
    c.bench_function("phase_symmetry 64x64", |b| {
        b.iter(|| phase_symmetry_grid(black_box(&img), &LogGaborParams::default()).unwrap())
    });
    let (_, scan) = phantom_scan(1);
    c.bench_function("polar_feature_map phantom frame", |b| {
        b.iter(|| polar_feature_map(black_box(&scan.images[0]), &FeatureParams::default()).unwrap())
    });
}

fn labelgen(c: &mut Criterion) {
    let centre = Point::new(0.0, 0.0, 0.03);
    let mesh = lumpy_blob(centre, Point::new(0.014, 0.009, 0.006), 24, 32);
    let index = MeshIndex::new(mesh.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cloud = mesh.sample_surface(400, &mut rng);
    let motion = Pose::from_translation(Point::new(0.003, -0.002, 0.001))
        .compose(&Pose::from_axis_angle(&Point::new(0.0, 0.6, 0.8), 0.15));
    let moved = cloud.transformed(&motion);
    c.bench_function("icp 400 points", |b| {
        b.iter(|| icp_register_indexed(black_box(&moved), &index, 200, 1e-12, &Pose::identity()).unwrap())
    });
    c.bench_function("phantom scan 2x4 frames", |b| b.iter(|| phantom_scan(black_box(4))));
}

fn network(c: &mut Criterion) {
    let spec = UNetSpec {
        in_channels: 2,
        base_channels: 4,
        depth: 2,
        ..UNetSpec::default()
    };
    let net = UNet::new(spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_vec(2, 64, 64, (0..2 * 64 * 64).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let y = Tensor::from_vec(1, 64, 64, (0..64 * 64).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let state = net.initial_state(64, 64);
    c.bench_function("unet forward 64x64", |b| b.iter(|| net.forward(black_box(&x), &state).unwrap()));
    c.bench_function("unet forward+backward 64x64", |b| {
        b.iter(|| {
            let (pred, _, cache) = net.forward(black_box(&x), &state).unwrap();
            let (_, d) = w_dice_loss(&pred, &y, None).unwrap();
            let mut g = net.params.zeros_like();
            net.backward(&cache, &d, None, &mut g)
        })
    });
}

fn volume(c: &mut Criterion) {
    let (geo, scan) = phantom_scan(13);
    let maps: Vec<_> = scan.labels.iter().map(|l| l.data.clone()).collect();
    let maps: Vec<_> = maps.into_iter().map(|g| spinesurf::features::FeatureMap::new(g).unwrap()).collect();
    let grid = GridSpec::covering(&scan.frames, &geo, 0.001, 2).unwrap();
    c.bench_function("compound 26 frames at 1 mm", |b| {
        b.iter(|| compound(black_box(&scan.frames), &maps, &geo, &grid, CompoundingMode::Max, Splat::Nearest).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = features, labelgen, network, volume
}
criterion_main!(benches);
