//! Invariants over random inputs: adjoint identities, file round trips and
//! the configuration echo.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdslab::config::RunConfig;
use sdslab::grid::Grid;
use sdslab::io::{decode_pgm, encode_pgm, load_checkpoint, save_checkpoint};
use sdslab::rng::normal_vec;
use sdslab::sds::{observe, observe_adjoint, Observation};
use sdslab::student::{project, project_adjoint, ProjectionCodec, PyramidField, Stage, ViewPose};
use sdslab::teacher::{Condition, ConditionKind, DenoiserModel};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projector_adjoint_identity(n in 2usize..40, angle in -10.0f64..10.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = Grid::from_vec(n, n, normal_vec(&mut rng, n * n)).unwrap();
        let cov = normal_vec(&mut rng, n);
        let pose = ViewPose::new(angle);
        let lhs = dot(&project(&field, pose).unwrap(), &cov);
        let rhs = dot(field.data(), project_adjoint(&cov, n, pose).unwrap().data());
        prop_assert!(close(lhs, rhs, 1e-10), "{lhs} vs {rhs}");
    }

    #[test]
    fn observation_adjoint_identity(
        doublings in 0usize..3,
        angle in 0.0f64..7.0,
        soft in proptest::collection::vec(0.0f64..=1.0, 6),
        seed in any::<u64>(),
        whole_field in any::<bool>(),
    ) {
        let res = 16 << doublings;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = PyramidField::doubling(res, Stage::One).unwrap();
        let coeffs = normal_vec(&mut rng, field.coeffs().len());
        field.coeffs_mut().copy_from_slice(&coeffs);
        let mask = &soft[..field.level_count()];
        let obs = if whole_field { Observation::Field } else { Observation::Projection(ProjectionCodec::new(8)) };
        let pose = ViewPose::new(angle);
        let x = observe(&field, mask, pose, obs).unwrap();
        let c = normal_vec(&mut rng, x.len());
        let grad = observe_adjoint(&field, mask, pose, obs, &c).unwrap();
        // observe is affine, so compare through the linear part.
        let mut zero = field.clone();
        zero.coeffs_mut().iter_mut().for_each(|v| *v = 0.0);
        let offset = observe(&zero, mask, pose, obs).unwrap();
        let linear: Vec<f64> = x.iter().zip(&offset).map(|(a, b)| a - b).collect();
        let lhs = dot(&linear, &c);
        let rhs = dot(&coeffs, &grad);
        prop_assert!(close(lhs, rhs, 1e-9), "{lhs} vs {rhs}");
    }

    #[test]
    fn upgrade_keeps_the_rendered_field(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = PyramidField::doubling(16, Stage::One).unwrap();
        let coeffs = normal_vec(&mut rng, field.coeffs().len());
        field.coeffs_mut().copy_from_slice(&coeffs);
        let before = field.render(&vec![1.0; field.level_count()]).unwrap();
        let up = field.upgrade_stage(64).unwrap();
        prop_assert_eq!(up.stage(), Stage::Two);
        let after = up.render(&vec![1.0; up.level_count()]).unwrap();
        // Both renders sample the same interpolant; every fourth fine pixel
        // lands on a coarse sample point.
        for y in 0..16 {
            for x in 0..16 {
                prop_assert!((after.get(4 * x, 4 * y) - before.get(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pgm_round_trip_within_one_gray_level(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = normal_vec(&mut rng, w * h).iter().map(|v| 0.5 + 0.3 * v).collect();
        let grid = Grid::from_vec(w, h, data).unwrap();
        let back = decode_pgm(&encode_pgm(&grid)).unwrap();
        prop_assert_eq!((back.width(), back.height()), (w, h));
        for (a, b) in grid.data().iter().zip(back.data()) {
            prop_assert!((a.clamp(0.0, 1.0) - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        prop_assert_eq!(encode_pgm(&back), encode_pgm(&grid));
    }

    #[test]
    fn downsample_preserves_the_mean(k in 1usize..5, f in 1usize..5, seed in any::<u64>()) {
        let n = k * f;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::from_vec(n, n, normal_vec(&mut rng, n * n)).unwrap();
        let small = grid.downsample(f).unwrap();
        prop_assert_eq!(small.width(), k);
        let mean = |g: &Grid| g.data().iter().sum::<f64>() / g.data().len() as f64;
        prop_assert!((mean(&grid) - mean(&small)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_round_trip_is_exact(seed in any::<u64>(), kind in 0usize..3) {
        let cond = [ConditionKind::None, ConditionKind::View, ConditionKind::Class { classes: 3 }][kind];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = DenoiserModel::new(8, &[10, 6], cond, 1000, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dtck");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        prop_assert_eq!(back.params(), model.params());
        let x = normal_vec(&mut rng, 8);
        let c = match cond {
            ConditionKind::None => Condition::None,
            ConditionKind::View => Condition::view(1.0),
            ConditionKind::Class { .. } => Condition::class(2),
        };
        prop_assert_eq!(back.forward(&x, 300, &c).unwrap(), model.forward(&x, 300, &c).unwrap());
    }

    #[test]
    fn config_echo_parses_back_to_itself(seed in any::<u64>(), lr in 1e-5f64..1.0, iters in 1usize..10_000) {
        let mut cfg = RunConfig::default();
        cfg.run.seed = seed;
        cfg.optim.lr = lr;
        cfg.run.iterations_two = iters;
        let back = RunConfig::parse(&cfg.echo()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
