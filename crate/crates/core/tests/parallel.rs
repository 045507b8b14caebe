use ndarray::Array2;
use rand::{Rng, SeedableRng};

use bayesdecon::camera::{simulate_raw, uniform_camera, CameraMap};
use bayesdecon::inference::{run_chain, Model, SamplerConfig};
use bayesdecon::optics::{gaussian_psf, Psf};
use bayesdecon::parallel::{
    exchange_halos, layout_with_halo, run_layout, run_wavefront, single_chunk_layout, Board, Rect,
    Snapshot,
};
use bayesdecon::targets::{build_target, TargetKind};
use bayesdecon::ImageGrid;

const PITCH: f64 = 65.0;

fn problem(shape: (usize, usize), seed: u64) -> (ImageGrid, Psf, CameraMap) {
    let psf = gaussian_psf(1.3, 510.0, PITCH, 5).unwrap();
    let truth = build_target(TargetKind::SiemensStar, shape, &psf, 80.0).unwrap();
    let camera = uniform_camera(shape, 2.0, 100.0, 2.0).unwrap();
    let sim = simulate_raw(&truth, &psf, &camera, seed).unwrap();
    (sim.raw, psf, camera)
}

#[test]
fn halos_match_slices_of_the_serial_reference() {
    let shape = (30, 27);
    let layout = layout_with_halo(shape, 2, 10).unwrap();
    assert_eq!(layout.grid, (3, 3));
    let board = Board::new(&layout);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let rho = Array2::from_shape_fn(shape, |_| rng.random::<f64>());
    let phi = Array2::from_shape_fn(shape, |_| rng.random_range(0..50) as f64);
    for ch in &layout.chunks {
        board.publish(
            ch.id,
            Snapshot {
                tag: 4,
                rho: rho.slice(ch.interior.slice()).to_owned(),
                phi: phi.slice(ch.interior.slice()).to_owned(),
            },
        );
    }
    for ch in &layout.chunks {
        let window = ch.interior.grow(2 * layout.halo, shape);
        let strips = exchange_halos(&layout, &board, ch.id, 5).unwrap();
        let mut cover = Array2::<u32>::zeros(shape);
        cover.slice_mut(ch.interior.slice()).fill(1);
        for s in &strips {
            assert_eq!(s.tag, 4);
            assert_eq!(
                Some(s.rect),
                layout.chunks[s.source].interior.intersect(&window)
            );
            assert_eq!(s.rho, rho.slice(s.rect.slice()));
            assert_eq!(s.phi, phi.slice(s.rect.slice()));
            cover.slice_mut(s.rect.slice()).mapv_inplace(|v| v + 1);
        }
        // Interior plus strips tile the window exactly once.
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let want = u32::from(window.contains(r, c));
                assert_eq!(cover[[r, c]], want, "chunk {} pixel ({r},{c})", ch.id);
            }
        }
        // A stale tag is a scheduling error.
        assert!(exchange_halos(&layout, &board, ch.id, 4).is_err() || ch.moore.is_empty());
    }
}

#[test]
fn two_chunks_exchange_their_facing_columns() {
    let shape = (6, 12);
    let layout = layout_with_halo(shape, 1, 6).unwrap();
    assert_eq!(layout.len(), 2);
    let board = Board::new(&layout);
    let full = Array2::from_shape_fn(shape, |(r, c)| (r * 100 + c) as f64);
    for ch in &layout.chunks {
        let part = full.slice(ch.interior.slice()).to_owned();
        board.publish(
            ch.id,
            Snapshot {
                tag: 0,
                rho: part.clone(),
                phi: part,
            },
        );
    }
    let strips = exchange_halos(&layout, &board, 0, 1).unwrap();
    assert_eq!(strips.len(), 1);
    // The left chunk sees the right chunk's first 2h = 2 interior columns.
    assert_eq!(strips[0].rect, Rect::new(0, 6, 6, 8));
    assert_eq!(strips[0].rho, full.slice(ndarray::s![.., 6..8]));
}

#[test]
fn results_do_not_depend_on_the_worker_count() {
    let (raw, psf, camera) = problem((40, 36), 3);
    let config = SamplerConfig {
        n_samples: 4,
        burn_in: 6,
        thin: 2,
        chunk_side: Some(11),
        seed: 21,
        ..SamplerConfig::default()
    };
    let one = run_wavefront(&raw, &psf, &camera, &config, 1).unwrap();
    for workers in [2, 4] {
        let many = run_wavefront(&raw, &psf, &camera, &config, workers).unwrap();
        assert_eq!(one, many, "{workers} workers");
    }
}

#[test]
fn single_chunk_layout_reproduces_the_serial_chain() {
    let (raw, psf, camera) = problem((24, 20), 5);
    let config = SamplerConfig {
        n_samples: 3,
        burn_in: 4,
        thin: 2,
        seed: 2,
        ..SamplerConfig::default()
    };
    let serial = run_chain(&raw, &psf, &camera, &config).unwrap();
    let model = Model::new(raw, psf, camera).unwrap();
    let layout = single_chunk_layout(model.shape(), model.half_support());
    for workers in [1, 3] {
        assert_eq!(
            run_layout(&model, &config, &layout, workers).unwrap(),
            serial
        );
    }
}
