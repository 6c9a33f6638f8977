mod common;

use common::{oracle_trace, random_ray, random_uniform_geometry, test_frustum};
use drc::{trace, Dims, GridGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(g: &GridGeometry, rng: &mut ChaCha8Rng) {
    let (ray, t_known, t_far) = random_ray(g, rng);
    let tr = trace(g, &ray);
    let oracle = oracle_trace(g, &ray, t_known, t_far);
    let got: Vec<usize> = tr.indices().collect();
    assert_eq!(got, oracle.cells, "ray {ray:?} on {g:?}");
    let chord = oracle.t_out - oracle.t_in;
    assert!((tr.chord_length() - chord).abs() < 1e-9, "chord {} vs {chord}", tr.chord_length());
    let cells = tr.cells();
    assert!((cells[0].t_enter - oracle.t_in).abs() < 1e-9);
    assert!((cells[cells.len() - 1].t_exit - oracle.t_out).abs() < 1e-9);
    for w in cells.windows(2) {
        assert_eq!(w[0].t_exit, w[1].t_enter);
    }
    for c in cells {
        assert!(c.t_exit >= c.t_enter);
    }
}

#[test]
fn uniform_grids_match_dense_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let g = random_uniform_geometry(&mut rng);
        for _ in 0..10 {
            check(&g, &mut rng);
        }
    }
}

#[test]
fn frustum_grids_match_dense_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let g = test_frustum();
    for _ in 0..700 {
        check(&g, &mut rng);
    }
    for _ in 0..30 {
        let dims = Dims::new(rng.gen_range(1..=7), rng.gen_range(1..=7), rng.gen_range(1..=7));
        let z0 = rng.gen_range(0.5..2.0);
        let g = GridGeometry::frustum_from_fov(dims, z0, z0 * rng.gen_range(1.5..5.0), rng.gen_range(20.0..100.0))
            .unwrap();
        for _ in 0..10 {
            check(&g, &mut rng);
        }
    }
}
