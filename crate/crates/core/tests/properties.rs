mod common;

use drc::consistency::{
    cost_color, cost_depth, cost_mask, event_probabilities, mask_loss_closed_form, ray_loss,
    ray_loss_direct, ray_loss_grad_x, ray_loss_grad_x_naive, view_loss,
};
use drc::eval::{brute_force_ray_loss, iou_at};
use drc::fitter::all_pixel_samples;
use drc::fusion::carve_masks;
use drc::io::{read_grid, write_grid};
use drc::renderer::{render, ObservationData};
use drc::traversal::{first_hit, Hit};
use drc::{
    trace, Aabb, BinaryGrid, Camera, CostParams, Dims, ExecMode, GridGeometry, Intrinsics,
    ObservationKind, OccupancyGrid, Projection,
};
use nalgebra::{Point3, Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probs(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, len)
}

/// Emptiness vectors with some entries forced to exactly 0 or 1.
fn probs_with_endpoints(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![3 => 0.0..=1.0f64, 1 => Just(0.0), 1 => Just(1.0)],
        len,
    )
}

fn x_and_psi(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0..=1.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n + 1),
        )
    })
}

fn uniform_geometry() -> impl Strategy<Value = GridGeometry> {
    (1..7usize, 1..7usize, 1..7usize, prop::array::uniform3(-1.0..0.0f64), prop::array::uniform3(0.2..2.0f64))
        .prop_map(|(nx, ny, nz, min, ext)| {
            let max = [min[0] + ext[0], min[1] + ext[1], min[2] + ext[2]];
            GridGeometry::uniform(Dims::new(nx, ny, nz), Aabb::new(min, max)).unwrap()
        })
}

fn frustum_geometry() -> impl Strategy<Value = GridGeometry> {
    (1..7usize, 1..7usize, 1..7usize, 0.3..2.0f64, 1.2..6.0f64, 10.0..120.0f64).prop_map(
        |(nx, ny, nz, z0, ratio, fov)| {
            GridGeometry::frustum_from_fov(Dims::new(nx, ny, nz), z0, z0 * ratio, fov).unwrap()
        },
    )
}

fn any_geometry() -> impl Strategy<Value = GridGeometry> {
    prop_oneof![uniform_geometry(), frustum_geometry()]
}

fn camera(projection: Projection, seed: u64) -> Camera {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let rot = Rotation3::new(axis * rng.gen_range(0.0..3.0)).into_inner();
    let scale = match projection {
        Projection::Perspective => rng.gen_range(20.0..200.0),
        Projection::Orthographic => rng.gen_range(0.005..0.1),
    };
    Camera::new(
        projection,
        Intrinsics {
            scale: [scale, scale * rng.gen_range(0.8..1.25)],
            principal: [rng.gen_range(0.0..40.0), rng.gen_range(0.0..30.0)],
        },
        rot,
        Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
        40,
        30,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn event_probabilities_normalize(x in probs(1..=64)) {
        let p = event_probabilities(&x).unwrap();
        prop_assert_eq!(p.len(), x.len() + 1);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn telescoped_loss_matches_expectation((x, psi) in x_and_psi(40)) {
        let a = ray_loss(&x, &psi).unwrap();
        let b = ray_loss_direct(&x, &psi).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn loss_matches_exhaustive_enumeration((x, psi) in x_and_psi(10)) {
        let a = ray_loss(&x, &psi).unwrap();
        let b = brute_force_ray_loss(&x, &psi).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn linear_gradient_matches_quadratic_form((x, psi) in x_and_psi(40)) {
        let fast = ray_loss_grad_x(&x, &psi).unwrap();
        let slow = ray_loss_grad_x_naive(&x, &psi).unwrap();
        for (f, s) in fast.iter().zip(&slow) {
            prop_assert!((f - s).abs() < 1e-10, "{} vs {}", f, s);
        }
    }

    #[test]
    fn gradients_finite_at_endpoints(x in probs_with_endpoints(1..=30), d_r in 0.5..3.0f64) {
        let depths: Vec<f64> = (0..x.len()).map(|i| 0.1 * (i + 1) as f64).collect();
        let psi = cost_depth(&depths, d_r, 10.0).psi;
        let g = ray_loss_grad_x(&x, &psi).unwrap();
        prop_assert!(g.iter().all(|v| v.is_finite()));
        let naive = ray_loss_grad_x_naive(&x, &psi).unwrap();
        for (a, b) in g.iter().zip(&naive) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mask_loss_closed_form_agrees(x in probs(1..=64), s in 0u8..=1) {
        let psi = cost_mask(x.len(), s).psi;
        let a = ray_loss(&x, &psi).unwrap();
        prop_assert!((a - mask_loss_closed_form(&x, s)).abs() < 1e-12);
    }

    #[test]
    fn background_rays_only_carve(x in probs_with_endpoints(1..=40)) {
        let g = ray_loss_grad_x(&x, &cost_mask(x.len(), 1).psi).unwrap();
        prop_assert!(g.iter().all(|&v| v <= 0.0));
        let g = ray_loss_grad_x(&x, &cost_mask(x.len(), 0).psi).unwrap();
        prop_assert!(g.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn color_loss_is_nonnegative(x in probs(1..=20), c in prop::array::uniform3(0.0..=1.0f64), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<[f64; 3]> = (0..x.len()).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let loss = ray_loss(&x, &cost_color(&p, c).psi).unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn linear_index_round_trips(g in any_geometry()) {
        let d = g.dims();
        for i in 0..g.num_cells() {
            let [x, y, z] = g.coords(i);
            prop_assert!(x < d.nx && y < d.ny && z < d.nz);
            prop_assert_eq!(g.index(x, y, z), i);
        }
    }

    #[test]
    fn cell_centers_lie_inside_their_planes(g in any_geometry()) {
        for i in 0..g.num_cells() {
            let c = g.cell_center(i).unwrap();
            for plane in g.cell_bounds(i).unwrap() {
                prop_assert!(plane.signed_distance(&c) < 0.0);
            }
            prop_assert_eq!(g.locate(&c), Some(i));
        }
    }

    #[test]
    fn frustum_layers_grow_with_depth(g in frustum_geometry()) {
        let d = g.dims();
        let layer = |iz: usize| g.cell_volume(g.index(0, 0, iz)).unwrap();
        for iz in 1..d.nz {
            prop_assert!(layer(iz) > layer(iz - 1));
        }
    }

    #[test]
    fn projection_inverts_pixel_rays(seed in any::<u64>(), u in 0.0..40.0f64, v in 0.0..30.0f64, t in 0.1..5.0f64) {
        for proj in [Projection::Perspective, Projection::Orthographic] {
            let cam = camera(proj, seed);
            let r = cam.pixel_to_ray(u, v);
            let uv = cam.project(&r.at(t)).unwrap();
            prop_assert!((uv[0] - u).abs() < 1e-6 && (uv[1] - v).abs() < 1e-6, "{:?}", proj);
        }
    }

    #[test]
    fn shared_origin_or_direction(seed in any::<u64>()) {
        let persp = camera(Projection::Perspective, seed);
        let ortho = camera(Projection::Orthographic, seed);
        let a = persp.pixel_center_ray(0, 0);
        let b = persp.pixel_center_ray(39, 29);
        prop_assert!((a.origin - b.origin).norm() < 1e-12);
        let a = ortho.pixel_center_ray(0, 0);
        let b = ortho.pixel_center_ray(39, 29);
        prop_assert!((a.direction - b.direction).norm() < 1e-12);
    }

    #[test]
    fn first_hit_is_most_likely_event(g in any_geometry(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let occ: Vec<bool> = (0..g.num_cells()).map(|_| rng.gen_bool(0.3)).collect();
        let grid = BinaryGrid::new(g, occ).unwrap();
        for _ in 0..20 {
            let (ray, _, _) = common::random_ray(&g, &mut rng);
            let tr = trace(&g, &ray);
            let x: Vec<f64> = tr.indices().map(|i| if grid.is_occupied(i) { 0.0 } else { 1.0 }).collect();
            let p = event_probabilities(&x).unwrap();
            let argmax = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let expected = if argmax == x.len() {
                Hit::Escape
            } else {
                let c = tr.cells()[argmax];
                Hit::Cell { index: c.index, depth: c.depth() }
            };
            prop_assert_eq!(first_hit(&grid, &tr).unwrap(), expected);
        }
    }

    #[test]
    fn grid_files_round_trip(g in any_geometry(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..g.num_cells()).map(|_| rng.gen()).collect();
        let occ = OccupancyGrid::from_values(g, x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.grid");
        write_grid(&p, &occ, None, &[]).unwrap();
        let back = read_grid(&p).unwrap();
        prop_assert_eq!(back.occupancy, occ);
    }

    #[test]
    fn perfect_prediction_scores_one(seed in any::<u64>(), t in 0.001..=1.0f64) {
        let g = GridGeometry::uniform(Dims::new(5, 4, 3), Aabb::unit_centered()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = BinaryGrid::new(g, (0..g.num_cells()).map(|_| rng.gen_bool(0.5)).collect()).unwrap();
        prop_assert_eq!(iou_at(&gt.to_occupancy(), &gt, t).unwrap(), 1.0);
    }
}

/// Random blobby binary grid and a few perspective cameras around it.
fn scene(seed: u64) -> (BinaryGrid, Vec<Camera>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = GridGeometry::uniform(Dims::cube(8), Aabb::unit_centered()).unwrap();
    let occ = (0..g.num_cells())
        .map(|i| {
            let c = g.cell_center(i).unwrap();
            c.coords.norm() < 0.35 && rng.gen_bool(0.8)
        })
        .collect();
    let grid = BinaryGrid::new(g, occ).unwrap();
    let cams = (0..3)
        .map(|_| {
            let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let el: f64 = rng.gen_range(-0.4..0.6);
            let eye = Point3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * 2.5;
            let intr = Intrinsics { scale: [30.0, 30.0], principal: [12.0, 12.0] };
            Camera::look_at(eye, Point3::origin(), Vector3::y(), intr, 24, 24).unwrap()
        })
        .collect();
    (grid, cams)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn renders_are_self_consistent(seed in any::<u64>()) {
        let params = CostParams::default();
        let (grid, cams) = scene(seed);
        let x = grid.to_occupancy();
        for cam in &cams {
            let mask = render(&grid, None, cam, ObservationKind::Mask, &params).unwrap();
            let depth = render(&grid, None, cam, ObservationKind::Depth, &params).unwrap();
            let (ObservationData::Mask(m), ObservationData::Depth(d)) = (mask.data(), depth.data()) else {
                panic!("unexpected render kinds");
            };
            for (mi, di) in m.iter().zip(d) {
                prop_assert_eq!(*mi == 1, *di < params.depth_escape);
            }
            for obs in [&mask, &depth] {
                let samples = all_pixel_samples(obs, 5.0, &params);
                let v = view_loss(&x, None, &samples, &params, ExecMode::Deterministic).unwrap();
                prop_assert!(v.loss <= 1e-9, "loss {}", v.loss);
            }
        }
    }

    #[test]
    fn carved_hull_contains_shape(seed in any::<u64>()) {
        let params = CostParams::default();
        let (grid, cams) = scene(seed);
        let masks: Vec<_> = cams
            .iter()
            .map(|c| render(&grid, None, c, ObservationKind::Mask, &params).unwrap())
            .collect();
        let hull = carve_masks(&masks, grid.geometry()).unwrap();
        for i in 0..grid.geometry().num_cells() {
            prop_assert!(!grid.is_occupied(i) || hull.is_occupied(i));
        }
    }

    #[test]
    fn parallel_and_sequential_losses_agree(seed in any::<u64>()) {
        let params = CostParams::default();
        let (grid, cams) = scene(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = OccupancyGrid::from_values(
            *grid.geometry(),
            (0..grid.geometry().num_cells()).map(|_| rng.gen()).collect(),
        )
        .unwrap();
        let depth = render(&grid, None, &cams[0], ObservationKind::Depth, &params).unwrap();
        let samples = all_pixel_samples(&depth, 5.0, &params);
        let a = view_loss(&x, None, &samples, &params, ExecMode::Deterministic).unwrap();
        let b = view_loss(&x, None, &samples, &params, ExecMode::Parallel).unwrap();
        prop_assert!((a.loss - b.loss).abs() <= 1e-9 * a.loss.abs().max(1.0));
        for (ga, gb) in a.grad_x.iter().zip(&b.grad_x) {
            prop_assert!((ga - gb).abs() <= 1e-9);
        }
        let again = view_loss(&x, None, &samples, &params, ExecMode::Deterministic).unwrap();
        prop_assert_eq!(a, again);
    }
}
