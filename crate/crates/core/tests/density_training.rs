use std::sync::Arc;
use std::time::Instant;

use uvrelight_core::body::{BodyConfig, PosedBody, ProxyMesh};
use uvrelight_core::camera::Camera;
use uvrelight_core::density::*;
use uvrelight_core::image::Image;
use uvrelight_core::math::Vec3;

const R: f64 = 0.3;

fn sphere_dataset(views: usize, res: usize) -> (Vec<Shell>, Vec<GeometryView>) {
    let c = Vec3::new(0.0, 0.0, 1.0);
    let mesh = Arc::new(ProxyMesh::build(&BodyConfig::sphere(c, R)).unwrap());
    let shell = Shell::new(Arc::new(PosedBody::rest(mesh).unwrap()));
    let truth = AnalyticField::sphere(c, R, 400.0, [0.8, 0.45, 0.2]).unwrap();
    let bounds = shell.bounds();
    let views = (0..views)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / views as f64;
            let eye = c + Vec3::new(1.6 * a.cos(), 1.6 * a.sin(), 0.3 * (k % 2) as f64);
            let camera = Camera::look_at(eye, c, Vec3::new(0.0, 0.0, 1.0), 0.6, res, res).unwrap();
            let r = render_camera(&truth, &camera, bounds, 256).unwrap();
            let mask = Image::new(res, res, 1, r.opacity.iter().map(|o| *o as f32).collect()).unwrap();
            GeometryView { pose: 0, camera, image: r.rgb, mask }
        })
        .collect();
    (vec![shell], views)
}

fn voxel_field(shells: &[Shell]) -> DensityField {
    let _ = shells;
    DensityField::Voxel(VoxelGrid::new([64; 3], VoxelGrid::DEFAULT_DENSITY_SCALE, VoxelGrid::DEFAULT_COLOR_SCALE).unwrap())
}

#[test]
fn sphere_training_reduces_l2_tenfold() {
    let (shells, views) = sphere_dataset(8, 48);
    let cfg = GeometryTrainConfig { epochs: 40, samples_per_ray: 64, seed: 3, ..Default::default() };
    let t = Instant::now();
    let data = prepare_geometry(&shells, &views, &cfg).unwrap();
    eprintln!("prepared {} rays, {} samples, {} patches in {:?}", data.rays(), data.samples(), data.patches(), t.elapsed());
    let mut field = voxel_field(&shells);
    let before = evaluate_geometry(&field, &data, &cfg).unwrap();
    let t = Instant::now();
    let log = train_geometry(&mut field, &data, &cfg, |e, s| eprintln!("epoch {e}: loss {:.5} l2 {:.6}", s.loss, s.l2)).unwrap();
    let after = evaluate_geometry(&field, &data, &cfg).unwrap();
    eprintln!("trained in {:?}: l2 {:.6} -> {:.6}", t.elapsed(), before.l2, after.l2);
    assert_eq!(log.len(), 40);
    assert!(after.l2 < 0.1 * before.l2);
    // monotone over the first 10 epochs, one exception allowed
    let ups = log[..10].windows(2).filter(|w| w[1].loss > w[0].loss).count();
    assert!(ups <= 1, "{ups} increases");
}

#[test]
fn zero_epochs_leave_field_unchanged() {
    let (shells, views) = sphere_dataset(2, 16);
    let cfg = GeometryTrainConfig { epochs: 0, samples_per_ray: 16, ..Default::default() };
    let data = prepare_geometry(&shells, &views, &cfg).unwrap();
    let mut field = voxel_field(&shells);
    let before: Vec<Vec<f32>> = field.params().unwrap().iter().map(|(_, _, t)| t.data().to_vec()).collect();
    let log = train_geometry(&mut field, &data, &cfg, |_, _| {}).unwrap();
    assert!(log.is_empty());
    let after: Vec<Vec<f32>> = field.params().unwrap().iter().map(|(_, _, t)| t.data().to_vec()).collect();
    assert_eq!(before, after);
}

#[test]
fn empty_dataset_rejected() {
    let (shells, _) = sphere_dataset(0, 8);
    assert!(prepare_geometry(&shells, &[], &GeometryTrainConfig::default()).is_err());
}
